#pragma once

#include "imts/data.hpp"
#include "imts/model.hpp"
#include "imts/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

namespace imts {

// Run configuration: architecture plus optimization settings. Defaults match
// the reference protocol (lr 0.01, batch 32, patience 20, MLP hidden 32).
struct TrainConfig {
    std::size_t d = 64;
    std::size_t d_out = 32;
    std::size_t layers = 1;
    double weight_decay = 1e-3;
    double lr = 0.01;
    std::size_t batch_size = 32;
    std::size_t patience = 20;
    std::size_t max_epochs = 500;
    std::uint64_t seed = 0;
    std::string encoder = "iscam"; // iscam | mha
    std::string decoder = "contp"; // contp | mlp
    std::size_t mlp_hidden = 32;
    bool channel_specific_encoders = false;
    std::size_t mha_heads = 4;
    std::size_t mha_time_dim = 16;
    std::size_t mlp_time_dim = 16;

    void validate() const;
    ModelConfig model_config(std::size_t channel_count) const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& doc);

    // Flat key = value text, one entry per line, '#' comments. Unknown keys
    // raise ConfigError naming the key.
    static TrainConfig parse_text(const std::string& text);
    std::string to_text() const;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_mse = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0; // 1-based; 0 when no epoch ran
    bool stopped_early = false;
    double test_mse = std::numeric_limits<double>::quiet_NaN();
    double test_mae = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    std::size_t parameter_count = 0;

    nlohmann::json to_json() const;
    static TrainReport from_json(const nlohmann::json& doc);
};

// Mean of squared / absolute errors over unmasked query slots. Throws
// ContractError when no query slot is unmasked.
Tensor masked_mse(const Tensor& pred, const Tensor& target,
                  std::span<const std::uint8_t> q_mask);
Tensor masked_mae(const Tensor& pred, const Tensor& target,
                  std::span<const std::uint8_t> q_mask);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

struct TrainOutcome {
    ModelParams params;
    TrainReport report; // test metrics unset; filled by the caller
};

// Mini-batch AdamW on masked MSE with per-epoch validation and early
// stopping; returns the parameters of the best validation epoch.
TrainOutcome train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set);

// Deterministic full-pass metrics over all unmasked queries; independent of
// the batch size used.
Metrics evaluate(const ModelParams& params, const Dataset& test_set,
                 std::size_t batch_size = 32);

// Point predictor for one (instance, channel, query time).
using Predictor = std::function<double(const ImtsInstance&, std::size_t, double)>;

// Per-channel training mean of answer values, for every query.
Predictor baseline_mean(const Dataset& train_set);
// Last observed value of the channel; falls back to the channel training
// mean when the channel is empty.
Predictor baseline_carry_forward(const Dataset& train_set);

Metrics evaluate_predictor(const Predictor& predictor, const Dataset& test_set);

// Split (60/20/20 by config.seed), normalization fit on train, training,
// and test evaluation.
struct PipelineResult {
    ModelParams params;
    NormStats stats;
    TrainReport report;
    Metrics baseline_mean_metrics;
    Metrics baseline_carry_metrics;
};

PipelineResult run_training_pipeline(const TrainConfig& config, const Dataset& raw);

// Model persistence: architecture, weights, and normalization stats.
void save_model(const std::filesystem::path& path, const ModelParams& params,
                const NormStats& stats);
struct SavedModel {
    ModelParams params;
    NormStats stats;
};
SavedModel load_model(const std::filesystem::path& path);

} // namespace imts
