#include "imts/model.hpp"

#include "imts/error.hpp"

#include <algorithm>

namespace imts {

using nlohmann::json;

std::string to_string(EncoderKind kind) {
    return kind == EncoderKind::iscam ? "iscam" : "mha";
}

std::string to_string(DecoderKind kind) {
    return kind == DecoderKind::contp ? "contp" : "mlp";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
    if (name == "iscam") return EncoderKind::iscam;
    if (name == "mha") return EncoderKind::mha;
    throw ConfigError("unknown encoder '" + name + "' (expected iscam or mha)");
}

DecoderKind decoder_kind_from_string(const std::string& name) {
    if (name == "contp") return DecoderKind::contp;
    if (name == "mlp") return DecoderKind::mlp;
    throw ConfigError("unknown decoder '" + name + "' (expected contp or mlp)");
}

void ModelConfig::validate() const {
    if (channel_count == 0) throw ConfigError("config: channel_count must be positive");
    if (d == 0) throw ConfigError("config: D must be positive");
    if (d_out == 0) throw ConfigError("config: D_out must be positive");
    if (mlp_hidden == 0) throw ConfigError("config: mlp_hidden must be positive");
    if (rms_eps <= 0.0) throw ConfigError("config: rms_eps must be positive");
    if (encoder == EncoderKind::mha) {
        if (mha_heads == 0 || d % mha_heads != 0) {
            throw ConfigError("config: D=" + std::to_string(d) + " must be divisible by " +
                              std::to_string(mha_heads) + " attention heads");
        }
        if (mha_time_dim == 0 || mha_time_dim % 2 != 0) {
            throw ConfigError("config: mha_time_dim must be even and positive");
        }
    }
    if (decoder == DecoderKind::mlp && (mlp_time_dim == 0 || mlp_time_dim % 2 != 0)) {
        throw ConfigError("config: mlp_time_dim must be even and positive");
    }
}

json ModelConfig::to_json() const {
    return json{{"channel_count", channel_count},
                {"D", d},
                {"D_out", d_out},
                {"L", layers},
                {"encoder", to_string(encoder)},
                {"decoder", to_string(decoder)},
                {"mlp_hidden", mlp_hidden},
                {"channel_specific_encoders", channel_specific_encoders},
                {"mha_heads", mha_heads},
                {"mha_time_dim", mha_time_dim},
                {"mlp_time_dim", mlp_time_dim},
                {"rms_eps", rms_eps}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
    ModelConfig config;
    config.channel_count = doc.at("channel_count").get<std::size_t>();
    config.d = doc.at("D").get<std::size_t>();
    config.d_out = doc.at("D_out").get<std::size_t>();
    config.layers = doc.at("L").get<std::size_t>();
    config.encoder = encoder_kind_from_string(doc.at("encoder").get<std::string>());
    config.decoder = decoder_kind_from_string(doc.at("decoder").get<std::string>());
    config.mlp_hidden = doc.at("mlp_hidden").get<std::size_t>();
    config.channel_specific_encoders = doc.at("channel_specific_encoders").get<bool>();
    config.mha_heads = doc.at("mha_heads").get<std::size_t>();
    config.mha_time_dim = doc.at("mha_time_dim").get<std::size_t>();
    config.mlp_time_dim = doc.at("mlp_time_dim").get<std::size_t>();
    config.rms_eps = doc.at("rms_eps").get<double>();
    config.validate();
    return config;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ModelParams params;
    params.config = config;
    if (config.encoder == EncoderKind::iscam) {
        params.iscam = IscamParams::init(config.channel_count, config.d, config.mlp_hidden,
                                         config.channel_specific_encoders, rng);
    } else {
        params.mha = MhaEncoderParams::init(config.channel_count, config.d, config.mha_heads,
                                            config.mha_time_dim, rng);
    }
    params.mixer = make_mixer_stack(config.channel_count, config.d, config.d_out, config.layers,
                                    config.rms_eps, rng);
    if (config.decoder == DecoderKind::contp) {
        params.contp = ConTpParams::init(config.channel_count, config.d_out, config.mlp_hidden,
                                         rng);
    } else {
        params.mlp_proj = MlpProjParams::init(config.d_out, config.mlp_time_dim,
                                              config.mlp_hidden, rng);
    }
    return params;
}

ParamList ModelParams::parameters() const {
    ParamList out;
    if (iscam) iscam->append_params(out);
    if (mha) mha->append_params(out);
    for (std::size_t l = 0; l < mixer.size(); ++l) {
        mixer[l].append_params(out, "mixer." + std::to_string(l));
    }
    if (contp) contp->append_params(out);
    if (mlp_proj) mlp_proj->append_params(out);
    return out;
}

std::vector<double> ModelParams::snapshot_values() const {
    std::vector<double> snapshot;
    for (const NamedParam& p : parameters()) {
        const auto d = p.tensor.data();
        snapshot.insert(snapshot.end(), d.begin(), d.end());
    }
    return snapshot;
}

void ModelParams::restore_values(std::span<const double> values) {
    std::size_t offset = 0;
    for (NamedParam& p : parameters()) {
        auto d = p.tensor.mutable_data();
        if (offset + d.size() > values.size()) {
            throw ShapeError("restore_values: snapshot too short");
        }
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                  values.begin() + static_cast<std::ptrdiff_t>(offset + d.size()), d.begin());
        offset += d.size();
    }
    if (offset != values.size()) {
        throw ShapeError("restore_values: snapshot size mismatch");
    }
}

json ModelParams::to_json() const {
    json weights = json::object();
    for (const NamedParam& p : parameters()) {
        weights[p.name] = {{"shape", p.tensor.shape()},
                           {"data", std::vector<double>(p.tensor.data().begin(),
                                                        p.tensor.data().end())}};
    }
    return json{{"config", config.to_json()}, {"weights", weights}};
}

ModelParams ModelParams::from_json(const json& doc) {
    ModelParams params = init(ModelConfig::from_json(doc.at("config")), /*seed=*/0);
    const json& weights = doc.at("weights");
    for (NamedParam& p : params.parameters()) {
        if (!weights.contains(p.name)) {
            throw IoError("model file is missing weights for '" + p.name + "'");
        }
        const json& entry = weights.at(p.name);
        const auto shape = entry.at("shape").get<Shape>();
        if (shape != p.tensor.shape()) {
            throw IoError("model file weight '" + p.name + "' has shape " +
                          shape_to_string(shape) + ", expected " +
                          shape_to_string(p.tensor.shape()));
        }
        const auto data = entry.at("data").get<std::vector<double>>();
        if (data.size() != p.tensor.size()) {
            throw IoError("model file weight '" + p.name + "' has wrong element count");
        }
        std::copy(data.begin(), data.end(), p.tensor.mutable_data().begin());
    }
    return params;
}

ParamCountBreakdown count_parameters_detailed(const ModelParams& params) {
    ParamCountBreakdown breakdown;
    if (params.iscam) breakdown.encoder = params.iscam->parameter_count();
    if (params.mha) breakdown.encoder = params.mha->parameter_count();
    for (const MixerBlockParams& block : params.mixer) {
        breakdown.mixer += block.parameter_count();
    }
    if (params.contp) breakdown.decoder = params.contp->parameter_count();
    if (params.mlp_proj) breakdown.decoder = params.mlp_proj->parameter_count();
    breakdown.total = breakdown.encoder + breakdown.mixer + breakdown.decoder;
    return breakdown;
}

std::size_t count_parameters(const ModelParams& params) {
    return count_parameters_detailed(params).total;
}

Tensor encode(const ModelParams& params, const BatchedImts& batch,
              Tensor* iscam_softmax_weights) {
    if (params.iscam) {
        return encode_imts(*params.iscam, batch, iscam_softmax_weights);
    }
    return mha_encode_imts(*params.mha, batch);
}

Tensor model_forward(const ModelParams& params, const BatchedImts& batch) {
    Tensor z = encode(params, batch);
    Tensor mixed = mixer_stack_forward(params.mixer, z, params.config.d_out);
    if (params.contp) {
        return contp_forecast(*params.contp, mixed, batch.q_t, batch.q_mask);
    }
    return mlp_projection_forecast(*params.mlp_proj, mixed, batch.q_t, batch.q_mask);
}

} // namespace imts
