#include "imts/decoders.hpp"

#include "imts/error.hpp"

#include <cmath>

namespace imts {

std::vector<double> sinusoidal_time_embedding(double t, std::size_t d_t) {
    if (d_t == 0 || d_t % 2 != 0) {
        throw ConfigError("sinusoidal_time_embedding: dimension must be even and positive, got " +
                          std::to_string(d_t));
    }
    std::vector<double> out(d_t);
    const std::size_t pairs = d_t / 2;
    for (std::size_t j = 0; j < pairs; ++j) {
        const double omega =
            std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(d_t));
        out[2 * j] = std::sin(omega * t);
        out[2 * j + 1] = std::cos(omega * t);
    }
    return out;
}

Tensor sinusoidal_embed_constant(const Tensor& times, std::size_t d_t) {
    if (d_t == 0 || d_t % 2 != 0) {
        throw ConfigError("sinusoidal_embed_constant: dimension must be even and positive");
    }
    const auto td = times.data();
    std::vector<double> out(td.size() * d_t);
    const std::size_t pairs = d_t / 2;
    std::vector<double> omegas(pairs);
    for (std::size_t j = 0; j < pairs; ++j) {
        omegas[j] = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(d_t));
    }
    for (std::size_t i = 0; i < td.size(); ++i) {
        double* row = out.data() + i * d_t;
        for (std::size_t j = 0; j < pairs; ++j) {
            row[2 * j] = std::sin(omegas[j] * td[i]);
            row[2 * j + 1] = std::cos(omegas[j] * td[i]);
        }
    }
    Shape shape = times.shape();
    shape.push_back(d_t);
    return Tensor::from_data(std::move(shape), std::move(out));
}

Tensor mask_constant(const Shape& shape, std::span<const std::uint8_t> mask) {
    if (shape_numel(shape) != mask.size()) {
        throw ShapeError("mask_constant: mask length does not match shape");
    }
    std::vector<double> data(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) data[i] = mask[i] ? 1.0 : 0.0;
    return Tensor::from_data(shape, std::move(data));
}

ConTpParams ConTpParams::init(std::size_t channel_count, std::size_t d_out, std::size_t hidden,
                              std::mt19937_64& rng) {
    if (channel_count == 0) {
        throw ConfigError("ConTpParams: channel count must be positive");
    }
    ConTpParams params;
    for (std::size_t c = 0; c < channel_count; ++c) {
        params.f_qu.push_back(Mlp2::init(1, hidden, d_out, rng));
    }
    params.b_out = Tensor::zeros({channel_count}, true);
    return params;
}

void ConTpParams::append_params(ParamList& out) const {
    for (std::size_t c = 0; c < f_qu.size(); ++c) {
        f_qu[c].append_params(out, "decoder.f_qu." + std::to_string(c));
    }
    out.push_back({"decoder.b_out", b_out, false});
}

std::size_t ConTpParams::parameter_count() const {
    std::size_t total = b_out.size();
    for (const Mlp2& m : f_qu) total += m.parameter_count();
    return total;
}

Tensor contp_forecast(const ConTpParams& params, const Tensor& z, const Tensor& q_t,
                      std::span<const std::uint8_t> q_mask) {
    if (z.rank() != 3 || q_t.rank() != 3) {
        throw ShapeError("contp_forecast: z must be [B, C, D] and q_t [B, C, K]");
    }
    const std::size_t b = z.extent(0);
    const std::size_t c = z.extent(1);
    const std::size_t k = q_t.extent(2);
    if (q_t.extent(0) != b || q_t.extent(1) != c || c != params.channel_count()) {
        throw ShapeError("contp_forecast: batch/channel extents disagree");
    }
    if (q_mask.size() != q_t.size()) {
        throw ShapeError("contp_forecast: q_mask length mismatch");
    }
    std::vector<Tensor> per_channel;
    per_channel.reserve(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor q_c = reshape(select_axis(q_t, 1, ch), {b, k, 1});
        Tensor weights = params.f_qu[ch].forward(q_c);        // [B, K, D_out]
        Tensor z_c = repeat_axis(select_axis(z, 1, ch), 1, k); // [B, K, D_out]
        Tensor dots = sum_axis(mul(weights, z_c), 2);          // [B, K]
        per_channel.push_back(add(dots, select_axis(params.b_out, 0, ch)));
    }
    Tensor forecasts = stack_axis(per_channel, 1); // [B, C, K]
    return mul(forecasts, mask_constant(forecasts.shape(), q_mask));
}

MlpProjParams MlpProjParams::init(std::size_t d_out, std::size_t time_dim, std::size_t hidden,
                                  std::mt19937_64& rng) {
    if (time_dim == 0 || time_dim % 2 != 0) {
        throw ConfigError("MlpProjParams: time embedding dimension must be even and positive");
    }
    MlpProjParams params;
    params.time_dim = time_dim;
    params.mlp = Mlp2::init(d_out + time_dim, hidden, 1, rng);
    return params;
}

void MlpProjParams::append_params(ParamList& out) const {
    mlp.append_params(out, "decoder.mlp");
}

Tensor mlp_projection_forecast(const MlpProjParams& params, const Tensor& z, const Tensor& q_t,
                               std::span<const std::uint8_t> q_mask) {
    if (z.rank() != 3 || q_t.rank() != 3) {
        throw ShapeError("mlp_projection_forecast: z must be [B, C, D] and q_t [B, C, K]");
    }
    const std::size_t b = z.extent(0);
    const std::size_t c = z.extent(1);
    const std::size_t k = q_t.extent(2);
    if (q_t.extent(0) != b || q_t.extent(1) != c) {
        throw ShapeError("mlp_projection_forecast: batch/channel extents disagree");
    }
    if (q_mask.size() != q_t.size()) {
        throw ShapeError("mlp_projection_forecast: q_mask length mismatch");
    }
    std::vector<Tensor> per_channel;
    per_channel.reserve(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor q_c = select_axis(q_t, 1, ch);                    // [B, K]
        Tensor embed = sinusoidal_embed_constant(q_c, params.time_dim); // [B, K, d_t]
        Tensor z_c = repeat_axis(select_axis(z, 1, ch), 1, k);   // [B, K, D_out]
        Tensor inputs = concat_last(z_c, embed);                 // [B, K, D_out + d_t]
        per_channel.push_back(reshape(params.mlp.forward(inputs), {b, k}));
    }
    Tensor forecasts = stack_axis(per_channel, 1);
    return mul(forecasts, mask_constant(forecasts.shape(), q_mask));
}

} // namespace imts
