#include "flowlab/cfm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace flowlab {

using nlohmann::json;

int DatasetSpec::dim() const {
    if (components.empty())
        throw std::invalid_argument("dataset has no components");
    return static_cast<int>(components[0].mean.size());
}

DatasetSpec DatasetSpec::from_json(const json& j) {
    DatasetSpec d;
    for (const auto& cj : j.at("components")) {
        MixtureComponent c;
        c.mean = cj.at("mean").get<std::vector<double>>();
        c.sigma = cj.value("sigma", 1.0);
        c.weight = cj.value("weight", 1.0);
        d.components.push_back(std::move(c));
    }
    if (d.components.empty())
        throw std::invalid_argument("dataset needs at least one component");
    const size_t dim = d.components[0].mean.size();
    for (const auto& c : d.components)
        if (c.mean.size() != dim || c.sigma <= 0.0 || c.weight <= 0.0)
            throw std::invalid_argument("dataset components must share dim and have positive sigma/weight");
    return d;
}

json DatasetSpec::to_json() const {
    json comps = json::array();
    for (const auto& c : components)
        comps.push_back(json{{"mean", c.mean}, {"sigma", c.sigma}, {"weight", c.weight}});
    return json{{"components", comps}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.linear = j.value("linear", c.linear);
    if (c.steps < 0 || c.batch_size < 1 || c.hidden < 1 || c.embed_dim < 1)
        throw std::invalid_argument("invalid training config");
    return c;
}

json TrainConfig::to_json() const {
    return json{{"steps", steps},       {"batch_size", batch_size},
                {"learning_rate", learning_rate}, {"seed", seed},
                {"hidden", hidden},     {"embed_dim", embed_dim},
                {"linear", linear}};
}

CfmModel CfmModel::init(int dim, int n_labels, const TrainConfig& cfg) {
    if (dim < 1 || n_labels < 0)
        throw std::invalid_argument("CfmModel::init: bad dimensions");
    CfmModel m;
    m.dim = dim;
    m.hidden = cfg.hidden;
    m.embed_dim = cfg.embed_dim;
    m.n_labels = n_labels;
    m.linear = cfg.linear;
    m.train_config = cfg;

    Rng rng(cfg.seed);
    const int in = dim + 1 + cfg.embed_dim;
    auto fill = [&rng](std::vector<double>& v, int count, double scale) {
        v.resize(count);
        for (double& x : v)
            x = rng.normal() * scale;
    };
    fill(m.w1, cfg.hidden * in, std::sqrt(1.0 / in));
    m.b1.assign(cfg.hidden, 0.0);
    fill(m.w2, cfg.hidden * cfg.hidden, std::sqrt(1.0 / cfg.hidden));
    m.b2.assign(cfg.hidden, 0.0);
    fill(m.w3, dim * cfg.hidden, std::sqrt(1.0 / cfg.hidden));
    m.b3.assign(dim, 0.0);
    fill(m.embedding, (n_labels + 1) * cfg.embed_dim, 0.5);
    return m;
}

namespace {

void matvec(const std::vector<double>& w, const std::vector<double>& b,
            const std::vector<double>& x, std::vector<double>& out) {
    const int rows = static_cast<int>(b.size());
    const int cols = static_cast<int>(x.size());
    out.resize(rows);
    for (int r = 0; r < rows; ++r) {
        double acc = b[r];
        const double* row = w.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c)
            acc += row[c] * x[c];
        out[r] = acc;
    }
}

void activate(std::vector<double>& v, bool linear) {
    if (linear)
        return;
    for (double& x : v)
        x = std::tanh(x);
}

struct ForwardTrace {
    std::vector<double> x;   // input
    std::vector<double> h1;  // post-activation
    std::vector<double> h2;
    std::vector<double> out;
    int embed_row = 0;       // -1 when the condition supplied a raw embedding
};

const double* embedding_row(const CfmModel& m, const Condition& c, int* row_idx) {
    switch (c.kind) {
        case Condition::Kind::Null:
            *row_idx = 0;
            return m.embedding.data();
        case Condition::Kind::Label:
            if (c.label_id < 0 || c.label_id >= m.n_labels)
                throw std::invalid_argument("label " + std::to_string(c.label_id) +
                                            " outside trained range [0, " +
                                            std::to_string(m.n_labels) + ")");
            *row_idx = c.label_id + 1;
            return m.embedding.data() + static_cast<size_t>(*row_idx) * m.embed_dim;
        case Condition::Kind::Embedding:
            if (static_cast<int>(c.embedding.size()) != m.embed_dim)
                throw std::invalid_argument("raw embedding size mismatch");
            *row_idx = -1;
            return c.embedding.data();
    }
    throw std::logic_error("bad condition kind");
}

void forward(const CfmModel& m, const std::vector<double>& z, double t, const Condition& c,
             ForwardTrace& tr) {
    if (static_cast<int>(z.size()) != m.dim)
        throw std::invalid_argument("model expects " + std::to_string(m.dim) + " values, got " +
                                    std::to_string(z.size()));
    const double* emb = embedding_row(m, c, &tr.embed_row);
    tr.x.resize(m.dim + 1 + m.embed_dim);
    for (int i = 0; i < m.dim; ++i)
        tr.x[i] = z[i];
    tr.x[m.dim] = t;
    for (int i = 0; i < m.embed_dim; ++i)
        tr.x[m.dim + 1 + i] = emb[i];
    matvec(m.w1, m.b1, tr.x, tr.h1);
    activate(tr.h1, m.linear);
    matvec(m.w2, m.b2, tr.h1, tr.h2);
    activate(tr.h2, m.linear);
    matvec(m.w3, m.b3, tr.h2, tr.out);
}

struct Grads {
    std::vector<double> w1, b1, w2, b2, w3, b3, embedding;

    explicit Grads(const CfmModel& m)
        : w1(m.w1.size(), 0.0),
          b1(m.b1.size(), 0.0),
          w2(m.w2.size(), 0.0),
          b2(m.b2.size(), 0.0),
          w3(m.w3.size(), 0.0),
          b3(m.b3.size(), 0.0),
          embedding(m.embedding.size(), 0.0) {}
};

/// Backprop for 'dL/dout = gout' through one traced forward pass.
void backward(const CfmModel& m, const ForwardTrace& tr, const std::vector<double>& gout,
              Grads& g) {
    const int in = static_cast<int>(tr.x.size());
    std::vector<double> gh2(m.hidden, 0.0);
    for (int r = 0; r < m.dim; ++r) {
        g.b3[r] += gout[r];
        double* wrow = g.w3.data() + static_cast<size_t>(r) * m.hidden;
        const double* w = m.w3.data() + static_cast<size_t>(r) * m.hidden;
        for (int c = 0; c < m.hidden; ++c) {
            wrow[c] += gout[r] * tr.h2[c];
            gh2[c] += w[c] * gout[r];
        }
    }
    if (!m.linear)
        for (int c = 0; c < m.hidden; ++c)
            gh2[c] *= 1.0 - tr.h2[c] * tr.h2[c];

    std::vector<double> gh1(m.hidden, 0.0);
    for (int r = 0; r < m.hidden; ++r) {
        g.b2[r] += gh2[r];
        double* wrow = g.w2.data() + static_cast<size_t>(r) * m.hidden;
        const double* w = m.w2.data() + static_cast<size_t>(r) * m.hidden;
        for (int c = 0; c < m.hidden; ++c) {
            wrow[c] += gh2[r] * tr.h1[c];
            gh1[c] += w[c] * gh2[r];
        }
    }
    if (!m.linear)
        for (int c = 0; c < m.hidden; ++c)
            gh1[c] *= 1.0 - tr.h1[c] * tr.h1[c];

    std::vector<double> gx(in, 0.0);
    for (int r = 0; r < m.hidden; ++r) {
        g.b1[r] += gh1[r];
        double* wrow = g.w1.data() + static_cast<size_t>(r) * in;
        const double* w = m.w1.data() + static_cast<size_t>(r) * in;
        for (int c = 0; c < in; ++c) {
            wrow[c] += gh1[r] * tr.x[c];
            gx[c] += w[c] * gh1[r];
        }
    }
    if (tr.embed_row >= 0) {
        double* erow = g.embedding.data() + static_cast<size_t>(tr.embed_row) * m.embed_dim;
        for (int i = 0; i < m.embed_dim; ++i)
            erow[i] += gx[m.dim + 1 + i];
    }
}

void check_batch(const std::vector<CfmBatchItem>& batch) {
    if (batch.empty())
        throw std::invalid_argument("cfm batch must be nonempty");
    const Layout& layout = batch[0].z0.layout;
    for (const auto& item : batch) {
        if (!(item.z0.layout == layout) || !(item.z1.layout == layout))
            throw std::invalid_argument("cfm batch layout mismatch");
        if (item.t < 0.0 || item.t > 1.0)
            throw std::invalid_argument("cfm batch time outside [0,1]");
    }
}

std::vector<double> interp_point(const CfmBatchItem& it) {
    std::vector<double> zt(it.z0.values.size());
    for (size_t i = 0; i < zt.size(); ++i)
        zt[i] = it.t * it.z1.values[i] + (1.0 - it.t) * it.z0.values[i];
    return zt;
}

}  // namespace

LatentState CfmModel::velocity(const LatentState& z, double t, const Condition& c) const {
    ForwardTrace tr;
    forward(*this, z.values, t, c, tr);
    LatentState out = z;
    out.values = tr.out;
    return out;
}

int CfmModel::param_count() const {
    return static_cast<int>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size() +
                            embedding.size());
}

namespace {

template <typename Model, typename Fn>
decltype(auto) with_param(Model& m, int idx, Fn&& fn) {
    auto pick = [&](auto& vec) -> double* {
        if (idx < static_cast<int>(vec.size()))
            return vec.data() + idx;
        idx -= static_cast<int>(vec.size());
        return nullptr;
    };
    for (auto* vec : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3, &m.embedding})
        if (double* p = pick(*vec))
            return fn(p);
    throw std::invalid_argument("parameter index out of range");
}

}  // namespace

double CfmModel::get_param(int idx) const {
    return with_param(const_cast<CfmModel&>(*this), idx, [](double* p) { return *p; });
}

void CfmModel::set_param(int idx, double v) {
    with_param(*this, idx, [v](double* p) { return *p = v; });
}

double cfm_loss(const CfmModel& model, const std::vector<CfmBatchItem>& batch) {
    check_batch(batch);
    double acc = 0.0;
    ForwardTrace tr;
    for (const auto& it : batch) {
        forward(model, interp_point(it), it.t, it.c, tr);
        for (int j = 0; j < model.dim; ++j) {
            double target = it.z1.values[j] - it.z0.values[j];
            double r = tr.out[j] - target;
            acc += r * r;
        }
    }
    return acc / batch.size();
}

std::vector<double> cfm_loss_grad(const CfmModel& model, const std::vector<CfmBatchItem>& batch,
                                  double* loss_out) {
    check_batch(batch);
    Grads g(model);
    double acc = 0.0;
    ForwardTrace tr;
    std::vector<double> gout(model.dim);
    const double inv_b = 1.0 / batch.size();
    for (const auto& it : batch) {
        forward(model, interp_point(it), it.t, it.c, tr);
        for (int j = 0; j < model.dim; ++j) {
            double target = it.z1.values[j] - it.z0.values[j];
            double r = tr.out[j] - target;
            acc += r * r;
            gout[j] = 2.0 * r * inv_b;
        }
        backward(model, tr, gout, g);
    }
    if (loss_out)
        *loss_out = acc * inv_b;

    std::vector<double> flat;
    flat.reserve(model.param_count());
    for (const auto* vec : {&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3, &g.embedding})
        flat.insert(flat.end(), vec->begin(), vec->end());
    return flat;
}

std::vector<CfmBatchItem> sample_batch(const DatasetSpec& dataset, int n, Rng& rng) {
    const int dim = dataset.dim();
    double total_weight = 0.0;
    for (const auto& c : dataset.components)
        total_weight += c.weight;

    std::vector<CfmBatchItem> batch;
    batch.reserve(n);
    for (int i = 0; i < n; ++i) {
        double pick = rng.uniform() * total_weight;
        int k = 0;
        for (; k + 1 < static_cast<int>(dataset.components.size()); ++k) {
            pick -= dataset.components[k].weight;
            if (pick < 0.0)
                break;
        }
        const auto& comp = dataset.components[k];
        std::vector<double> z0(dim), z1(dim);
        for (int j = 0; j < dim; ++j)
            z0[j] = comp.mean[j] + comp.sigma * rng.normal();
        for (int j = 0; j < dim; ++j)
            z1[j] = rng.normal();
        CfmBatchItem item{LatentState::flat(std::move(z0)), LatentState::flat(std::move(z1)),
                          Condition::label(k), rng.uniform()};
        batch.push_back(std::move(item));
    }
    return batch;
}

TrainResult cfm_train(const DatasetSpec& dataset, const TrainConfig& cfg) {
    const int dim = dataset.dim();
    CfmModel model = CfmModel::init(dim, static_cast<int>(dataset.components.size()), cfg);
    model.dataset = dataset;

    Rng data_rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
    Rng heldout_rng(cfg.seed ^ 0x0F0F0F0F12345678ULL);
    const std::vector<CfmBatchItem> heldout = sample_batch(dataset, 256, heldout_rng);

    TrainResult result;
    result.initial_heldout_loss = cfm_loss(model, heldout);

    for (int step = 0; step < cfg.steps; ++step) {
        const auto batch = sample_batch(dataset, cfg.batch_size, data_rng);
        double loss = 0.0;
        const auto grad = cfm_loss_grad(model, batch, &loss);
        if (!std::isfinite(loss))
            throw std::runtime_error("non-finite training loss at step " + std::to_string(step));
        for (int i = 0; i < model.param_count(); ++i)
            model.set_param(i, model.get_param(i) - cfg.learning_rate * grad[i]);
    }

    result.final_heldout_loss = cfm_loss(model, heldout);
    result.model = std::move(model);
    return result;
}

double cfm_grad_check(const CfmModel& model, const std::vector<CfmBatchItem>& batch,
                      int n_entries, std::uint64_t seed) {
    check_batch(batch);
    if (batch.size() > 8)
        throw std::invalid_argument("grad check batches are capped at 8 items");

    const auto analytic = cfm_loss_grad(model, batch);
    double grad_scale = 0.0;
    for (double g : analytic)
        grad_scale = std::max(grad_scale, std::abs(g));

    CfmModel probe = model;
    Rng rng(seed);
    const double h = 1e-5;
    double worst = 0.0;
    for (int k = 0; k < n_entries; ++k) {
        const int idx = rng.uniform_int(model.param_count());
        const double saved = probe.get_param(idx);
        probe.set_param(idx, saved + h);
        const double up = cfm_loss(probe, batch);
        probe.set_param(idx, saved - h);
        const double down = cfm_loss(probe, batch);
        probe.set_param(idx, saved);
        const double numeric = (up - down) / (2.0 * h);
        // near-zero entries are measured relative to the gradient's scale so
        // finite-difference rounding noise does not dominate the ratio
        const double denom = std::max({std::abs(analytic[idx]) + std::abs(numeric),
                                       1e-3 * grad_scale, 1e-12});
        worst = std::max(worst, std::abs(analytic[idx] - numeric) / denom);
    }
    return worst;
}

namespace {

class TrainedField final : public VelocityField {
public:
    explicit TrainedField(CfmModel model) : model_(std::move(model)) {}

    LatentState eval(const LatentState& z, double t, const Condition& c) const override {
        if (z.size() != model_.dim)
            throw std::invalid_argument("trained field expects " + std::to_string(model_.dim) +
                                        " values, got " + std::to_string(z.size()));
        return model_.velocity(z, t, c);
    }

    std::string descriptor() const override {
        return "trained(dim=" + std::to_string(model_.dim) +
               ",hidden=" + std::to_string(model_.hidden) + ")";
    }

    const CfmModel& model() const { return model_; }

private:
    CfmModel model_;
};

}  // namespace

FieldPtr make_trained_field(CfmModel model) {
    return std::make_shared<TrainedField>(std::move(model));
}

json cfm_to_json(const CfmModel& m) {
    std::vector<double> flat;
    for (const auto* vec : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3})
        flat.insert(flat.end(), vec->begin(), vec->end());

    std::vector<std::vector<double>> table(m.n_labels + 1);
    for (int r = 0; r <= m.n_labels; ++r)
        table[r].assign(m.embedding.begin() + static_cast<size_t>(r) * m.embed_dim,
                        m.embedding.begin() + static_cast<size_t>(r + 1) * m.embed_dim);

    const int in = m.dim + 1 + m.embed_dim;
    json shapes{{"w1", {m.hidden, in}}, {"b1", {m.hidden}}, {"w2", {m.hidden, m.hidden}},
                {"b2", {m.hidden}},     {"w3", {m.dim, m.hidden}}, {"b3", {m.dim}}};
    return json{{"dim", m.dim},
                {"hidden", m.hidden},
                {"embed_dim", m.embed_dim},
                {"n_labels", m.n_labels},
                {"linear", m.linear},
                {"shapes", shapes},
                {"params", flat},
                {"embedding", table},
                {"seed", m.train_config.seed},
                {"train", m.train_config.to_json()},
                {"dataset", m.dataset.to_json()}};
}

CfmModel cfm_from_json(const json& j) {
    TrainConfig cfg = TrainConfig::from_json(j.at("train"));
    CfmModel m = CfmModel::init(j.at("dim").get<int>(), j.at("n_labels").get<int>(), cfg);
    m.dataset = DatasetSpec::from_json(j.at("dataset"));

    const auto flat = j.at("params").get<std::vector<double>>();
    size_t pos = 0;
    for (auto* vec : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3}) {
        if (pos + vec->size() > flat.size())
            throw std::invalid_argument("checkpoint parameter array too short");
        std::copy(flat.begin() + pos, flat.begin() + pos + vec->size(), vec->begin());
        pos += vec->size();
    }
    if (pos != flat.size())
        throw std::invalid_argument("checkpoint parameter array size mismatch");

    const auto table = j.at("embedding").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(table.size()) != m.n_labels + 1)
        throw std::invalid_argument("checkpoint embedding table row count mismatch");
    for (int r = 0; r <= m.n_labels; ++r) {
        if (static_cast<int>(table[r].size()) != m.embed_dim)
            throw std::invalid_argument("checkpoint embedding row size mismatch");
        std::copy(table[r].begin(), table[r].end(),
                  m.embedding.begin() + static_cast<size_t>(r) * m.embed_dim);
    }
    return m;
}

void save_cfm_checkpoint(const CfmModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << cfm_to_json(model).dump(2) << '\n';
}

CfmModel load_cfm_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open checkpoint '" + path + "'");
    json j;
    in >> j;
    return cfm_from_json(j);
}

}  // namespace flowlab
