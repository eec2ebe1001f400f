#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowlab/core.hpp"
#include "flowlab/fields.hpp"
#include "flowlab/rng.hpp"
#include "json.hpp"

namespace flowlab {

/// Labeled Gaussian mixture for the data side pi_0; the noise side pi_1 is
/// always the standard normal. Component index doubles as the class label.
struct MixtureComponent {
    std::vector<double> mean;
    double sigma = 1.0;
    double weight = 1.0;
};

struct DatasetSpec {
    std::vector<MixtureComponent> components;

    int dim() const;
    static DatasetSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct TrainConfig {
    int steps = 5000;
    int batch_size = 64;
    double learning_rate = 0.02;
    std::uint64_t seed = 1;
    int hidden = 32;
    int embed_dim = 4;
    bool linear = false;  // identity activation instead of tanh

    static TrainConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Two-hidden-layer feed-forward map (z, t, condition embedding) -> velocity,
/// with a learned embedding row per label plus a dedicated null row (row 0).
struct CfmModel {
    int dim = 0;
    int hidden = 0;
    int embed_dim = 0;
    int n_labels = 0;
    bool linear = false;

    // Row-major [out][in] weights; biases per layer; embedding rows appended
    // to the flat parameter order w1, b1, w2, b2, w3, b3, embedding.
    std::vector<double> w1, b1, w2, b2, w3, b3;
    std::vector<double> embedding;  // (n_labels + 1) x embed_dim

    TrainConfig train_config;
    DatasetSpec dataset;

    static CfmModel init(int dim, int n_labels, const TrainConfig& cfg);

    LatentState velocity(const LatentState& z, double t, const Condition& c) const;

    int param_count() const;
    double get_param(int idx) const;
    void set_param(int idx, double v);
};

struct CfmBatchItem {
    LatentState z0;
    LatentState z1;
    Condition c;
    double t = 0.0;
};

/// Mean over the batch of ||v(Z_t, t, c) - (Z_1 - Z_0)||^2 with the linear
/// interpolation path Z_t = t*Z_1 + (1-t)*Z_0.
double cfm_loss(const CfmModel& model, const std::vector<CfmBatchItem>& batch);

/// Analytic gradient of cfm_loss in flat parameter order; also reports the loss.
std::vector<double> cfm_loss_grad(const CfmModel& model, const std::vector<CfmBatchItem>& batch,
                                  double* loss_out = nullptr);

std::vector<CfmBatchItem> sample_batch(const DatasetSpec& dataset, int n, Rng& rng);

struct TrainResult {
    CfmModel model;
    double initial_heldout_loss = 0.0;
    double final_heldout_loss = 0.0;
};

/// Plain SGD with fixed step size; deterministic given cfg.seed. Throws with
/// the step index if the loss turns non-finite.
TrainResult cfm_train(const DatasetSpec& dataset, const TrainConfig& cfg);

/// Max relative error between the analytic gradient and central finite
/// differences (h = 1e-5) over >= `n_entries` randomly chosen parameters.
double cfm_grad_check(const CfmModel& model, const std::vector<CfmBatchItem>& batch,
                      int n_entries = 64, std::uint64_t seed = 123);

FieldPtr make_trained_field(CfmModel model);

nlohmann::json cfm_to_json(const CfmModel& model);
CfmModel cfm_from_json(const nlohmann::json& j);
void save_cfm_checkpoint(const CfmModel& model, const std::string& path);
CfmModel load_cfm_checkpoint(const std::string& path);

}  // namespace flowlab
