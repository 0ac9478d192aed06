#pragma once

#include "imts/data.hpp"
#include "imts/decoders.hpp"
#include "imts/iscam.hpp"
#include "imts/mha_encoder.hpp"
#include "imts/mixer.hpp"
#include "imts/nn.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imts {

enum class EncoderKind { iscam, mha };
enum class DecoderKind { contp, mlp };

std::string to_string(EncoderKind kind);
std::string to_string(DecoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);
DecoderKind decoder_kind_from_string(const std::string& name);

// Architecture hyperparameters. Channel count comes from the data.
struct ModelConfig {
    std::size_t channel_count = 0;
    std::size_t d = 64;      // aggregated channel dimension
    std::size_t d_out = 32;  // feature width after the final mixer block
    std::size_t layers = 1;  // mixer blocks; 0 means a fixed projection only
    EncoderKind encoder = EncoderKind::iscam;
    DecoderKind decoder = DecoderKind::contp;
    std::size_t mlp_hidden = 32; // hidden width of every two-layer MLP
    bool channel_specific_encoders = false;
    std::size_t mha_heads = 4;
    std::size_t mha_time_dim = 16;
    std::size_t mlp_time_dim = 16;
    double rms_eps = 1e-8;

    void validate() const; // throws ConfigError
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& doc);
};

// All trainable weights, grouped by module.
struct ModelParams {
    ModelConfig config;
    std::optional<IscamParams> iscam;
    std::optional<MhaEncoderParams> mha;
    std::vector<MixerBlockParams> mixer;
    std::optional<ConTpParams> contp;
    std::optional<MlpProjParams> mlp_proj;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    // Stable-order named views of every leaf tensor (shared handles).
    ParamList parameters() const;

    std::vector<double> snapshot_values() const;
    void restore_values(std::span<const double> values);

    nlohmann::json to_json() const;
    static ModelParams from_json(const nlohmann::json& doc);
};

struct ParamCountBreakdown {
    std::size_t encoder = 0;
    std::size_t mixer = 0;
    std::size_t decoder = 0;
    std::size_t total = 0;
};

ParamCountBreakdown count_parameters_detailed(const ModelParams& params);
std::size_t count_parameters(const ModelParams& params);

// Encoder stage: [B, C, D] with the channel bias added.
Tensor encode(const ModelParams& params, const BatchedImts& batch,
              Tensor* iscam_softmax_weights = nullptr);

// Full forward pass: [B, C, K_max] forecasts; masked query slots are 0.
Tensor model_forward(const ModelParams& params, const BatchedImts& batch);

} // namespace imts
