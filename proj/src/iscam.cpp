#include "imts/iscam.hpp"

#include "imts/error.hpp"

namespace imts {

namespace {

// mask over [rows, n] -> [rows, d, n], repeating each row d times.
std::vector<std::uint8_t> tile_mask_per_dim(std::span<const std::uint8_t> mask,
                                            std::size_t rows, std::size_t n, std::size_t d) {
    std::vector<std::uint8_t> tiled(rows * d * n);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint8_t* src = mask.data() + r * n;
        for (std::size_t k = 0; k < d; ++k) {
            std::copy(src, src + n, tiled.data() + (r * d + k) * n);
        }
    }
    return tiled;
}

// Shared per-dimension softmax aggregation. tuples: [..., N, 2] built from
// [v, t]; returns [..., D] plus optionally the weights [..., N, D].
Tensor aggregate(const Mlp2& f_ote, const Mlp2& f_wa, const Tensor& tuples,
                 std::span<const std::uint8_t> mask, std::size_t rows, std::size_t n,
                 Tensor* weights_out) {
    Tensor h = f_ote.forward(tuples);                  // [..., N, D]
    Tensor a = f_wa.forward(tuples);                   // [..., N, D]
    const std::size_t d = f_ote.d_out();
    const std::size_t n_axis = h.rank() - 2;
    Tensor a_t = swap_axes(a, n_axis, n_axis + 1);     // [..., D, N]
    const auto tiled = tile_mask_per_dim(mask, rows, n, d);
    Tensor w_t = masked_softmax_lastdim(a_t, tiled, /*zero_empty_rows=*/true);
    Tensor w = swap_axes(w_t, n_axis, n_axis + 1);     // [..., N, D]
    if (weights_out) {
        *weights_out = w;
    }
    return sum_axis(mul(w, h), n_axis);                // [..., D]
}

} // namespace

IscamParams IscamParams::init(std::size_t channel_count, std::size_t dim, std::size_t hidden,
                              bool channel_specific, std::mt19937_64& rng) {
    if (channel_count == 0 || dim == 0) {
        throw ConfigError("IscamParams: channel count and dimension must be positive");
    }
    IscamParams params;
    const std::size_t copies = channel_specific ? channel_count : 1;
    for (std::size_t i = 0; i < copies; ++i) {
        params.f_ote.push_back(Mlp2::init(2, hidden, dim, rng));
    }
    for (std::size_t i = 0; i < copies; ++i) {
        params.f_wa.push_back(Mlp2::init(2, hidden, dim, rng));
    }
    params.channel_bias = Tensor::zeros({channel_count, dim}, true);
    return params;
}

void IscamParams::append_params(ParamList& out) const {
    for (std::size_t i = 0; i < f_ote.size(); ++i) {
        const std::string suffix = f_ote.size() > 1 ? "." + std::to_string(i) : "";
        f_ote[i].append_params(out, "encoder.f_ote" + suffix);
    }
    for (std::size_t i = 0; i < f_wa.size(); ++i) {
        const std::string suffix = f_wa.size() > 1 ? "." + std::to_string(i) : "";
        f_wa[i].append_params(out, "encoder.f_wa" + suffix);
    }
    out.push_back({"encoder.channel_bias", channel_bias, false});
}

std::size_t IscamParams::parameter_count() const {
    std::size_t total = channel_bias.size();
    for (const Mlp2& m : f_ote) total += m.parameter_count();
    for (const Mlp2& m : f_wa) total += m.parameter_count();
    return total;
}

Tensor encode_channel(const IscamParams& params, std::size_t channel, const Tensor& obs_t,
                      const Tensor& obs_v, std::span<const std::uint8_t> mask) {
    if (channel >= params.channel_count()) {
        throw ShapeError("encode_channel: channel index out of range");
    }
    if (obs_t.rank() != 1 || obs_v.rank() != 1 || obs_t.extent(0) != obs_v.extent(0)) {
        throw ShapeError("encode_channel: obs_t and obs_v must be equal-length vectors");
    }
    const std::size_t n = obs_t.extent(0);
    if (mask.size() != n) {
        throw ShapeError("encode_channel: mask length must match observation count");
    }
    const std::size_t idx = params.channel_specific() ? channel : 0;
    if (n == 0) {
        return Tensor::zeros({params.dim()});
    }
    Tensor tuples = concat_last(reshape(obs_v, {n, 1}), reshape(obs_t, {n, 1})); // [N, 2]
    return aggregate(params.f_ote[idx], params.f_wa[idx], tuples, mask, 1, n, nullptr);
}

Tensor encode_imts(const IscamParams& params, const BatchedImts& batch,
                   Tensor* softmax_weights) {
    const std::size_t b = batch.batch;
    const std::size_t c = batch.channel_count;
    const std::size_t n = batch.n_max;
    if (c != params.channel_count()) {
        throw ShapeError("encode_imts: batch has C=" + std::to_string(c) + ", encoder expects " +
                         std::to_string(params.channel_count()));
    }
    Tensor z;
    if (!params.channel_specific()) {
        Tensor tuples = concat_last(reshape(batch.obs_v, {b, c, n, 1}),
                                    reshape(batch.obs_t, {b, c, n, 1})); // [B, C, N, 2]
        z = aggregate(params.f_ote[0], params.f_wa[0], tuples, batch.obs_mask, b * c, n,
                      softmax_weights);
    } else {
        std::vector<Tensor> per_channel;
        std::vector<Tensor> per_channel_weights;
        per_channel.reserve(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            Tensor t_c = select_axis(batch.obs_t, 1, ch); // [B, N]
            Tensor v_c = select_axis(batch.obs_v, 1, ch);
            std::vector<std::uint8_t> mask_c(b * n);
            for (std::size_t bi = 0; bi < b; ++bi) {
                const std::uint8_t* src = batch.obs_mask.data() + (bi * c + ch) * n;
                std::copy(src, src + n, mask_c.data() + bi * n);
            }
            Tensor tuples = concat_last(reshape(v_c, {b, n, 1}), reshape(t_c, {b, n, 1}));
            Tensor w_c;
            per_channel.push_back(aggregate(params.f_ote[ch], params.f_wa[ch], tuples, mask_c,
                                            b, n, softmax_weights ? &w_c : nullptr));
            if (softmax_weights) {
                per_channel_weights.push_back(w_c);
            }
        }
        z = stack_axis(per_channel, 1); // [B, C, D]
        if (softmax_weights) {
            *softmax_weights = stack_axis(per_channel_weights, 1); // [B, C, N, D]
        }
    }
    return add(z, params.channel_bias);
}

} // namespace imts
