#include "imts/mha_encoder.hpp"

#include "imts/decoders.hpp"
#include "imts/error.hpp"

#include <cmath>

namespace imts {

namespace {

struct ChannelEncoding {
    Tensor z;         // [B, D], zeroed for empty channels
    Tensor attention; // [B, D] pooled attention stage
    Tensor weights;   // [B, H, N]
};

ChannelEncoding encode_one(const MhaEncoderParams& params, std::size_t channel,
                           const Tensor& t_c, const Tensor& v_c,
                           std::span<const std::uint8_t> mask_c, bool want_weights) {
    const std::size_t b = t_c.extent(0);
    const std::size_t n = t_c.extent(1);
    const std::size_t d = params.dim();
    const std::size_t dh = params.head_dim();
    Tensor embed = sinusoidal_embed_constant(t_c, params.time_dim); // [B, N, d_t]
    Tensor tuples = concat_last(reshape(v_c, {b, n, 1}), embed);    // [B, N, 1 + d_t]
    Tensor keys = add(matmul(tuples, params.w_key), params.b_key);
    Tensor values = add(matmul(tuples, params.w_value), params.b_value);
    Tensor q_c = select_axis(params.query, 0, channel); // [D]
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> head_outputs;
    std::vector<Tensor> head_weights;
    head_outputs.reserve(params.heads);
    for (std::size_t h = 0; h < params.heads; ++h) {
        Tensor k_h = slice_last(keys, h * dh, dh);
        Tensor v_h = slice_last(values, h * dh, dh);
        Tensor q_h = reshape(slice_last(q_c, h * dh, dh), {dh, 1});
        Tensor scores = scale(reshape(matmul(k_h, q_h), {b, n}), inv_scale);
        Tensor w = masked_softmax_lastdim(scores, mask_c, /*zero_empty_rows=*/true); // [B, N]
        head_outputs.push_back(sum_axis(mul(repeat_axis(w, 2, dh), v_h), 1));        // [B, dh]
        if (want_weights) {
            head_weights.push_back(w);
        }
    }
    Tensor attention = head_outputs[0];
    for (std::size_t h = 1; h < head_outputs.size(); ++h) {
        attention = concat_last(attention, head_outputs[h]);
    }
    Tensor z = add(attention, relu(add(matmul(attention, params.w_post), params.b_post)));
    // Force empty channels to zero; the residual bias would otherwise leak in.
    std::vector<std::uint8_t> nonempty(b * d, 0);
    for (std::size_t bi = 0; bi < b; ++bi) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask_c[bi * n + i]) {
                any = true;
                break;
            }
        }
        if (any) {
            std::fill(nonempty.begin() + static_cast<std::ptrdiff_t>(bi * d),
                      nonempty.begin() + static_cast<std::ptrdiff_t>((bi + 1) * d), 1);
        }
    }
    ChannelEncoding out;
    out.z = mul(z, mask_constant({b, d}, nonempty));
    out.attention = attention;
    if (want_weights) {
        out.weights = stack_axis(head_weights, 1); // [B, H, N]
    }
    return out;
}

} // namespace

MhaEncoderParams MhaEncoderParams::init(std::size_t channel_count, std::size_t dim,
                                        std::size_t heads, std::size_t time_dim,
                                        std::mt19937_64& rng) {
    if (channel_count == 0 || dim == 0 || heads == 0) {
        throw ConfigError("MhaEncoderParams: channel count, dimension, and heads must be positive");
    }
    if (dim % heads != 0) {
        throw ConfigError("MhaEncoderParams: dimension " + std::to_string(dim) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (time_dim == 0 || time_dim % 2 != 0) {
        throw ConfigError("MhaEncoderParams: time embedding dimension must be even and positive");
    }
    MhaEncoderParams params;
    params.heads = heads;
    params.time_dim = time_dim;
    const std::size_t tuple_dim = 1 + time_dim;
    params.query = Tensor::zeros({channel_count, dim}, true);
    init_linear_weight(params.query, dim, rng);
    params.w_key = Tensor::zeros({tuple_dim, dim}, true);
    init_linear_weight(params.w_key, tuple_dim, rng);
    params.b_key = Tensor::zeros({dim}, true);
    params.w_value = Tensor::zeros({tuple_dim, dim}, true);
    init_linear_weight(params.w_value, tuple_dim, rng);
    params.b_value = Tensor::zeros({dim}, true);
    params.w_post = Tensor::zeros({dim, dim}, true);
    init_linear_weight(params.w_post, dim, rng);
    params.b_post = Tensor::zeros({dim}, true);
    params.channel_bias = Tensor::zeros({channel_count, dim}, true);
    return params;
}

void MhaEncoderParams::append_params(ParamList& out) const {
    out.push_back({"encoder.query", query, false});
    out.push_back({"encoder.w_key", w_key, true});
    out.push_back({"encoder.b_key", b_key, false});
    out.push_back({"encoder.w_value", w_value, true});
    out.push_back({"encoder.b_value", b_value, false});
    out.push_back({"encoder.w_post", w_post, true});
    out.push_back({"encoder.b_post", b_post, false});
    out.push_back({"encoder.channel_bias", channel_bias, false});
}

std::size_t MhaEncoderParams::parameter_count() const {
    return query.size() + w_key.size() + b_key.size() + w_value.size() + b_value.size() +
           w_post.size() + b_post.size() + channel_bias.size();
}

Tensor mha_encode_channel(const MhaEncoderParams& params, std::size_t channel,
                          const Tensor& obs_t, const Tensor& obs_v,
                          std::span<const std::uint8_t> mask, Tensor* attention_out,
                          Tensor* weights_out) {
    if (channel >= params.channel_count()) {
        throw ShapeError("mha_encode_channel: channel index out of range");
    }
    if (obs_t.rank() != 1 || obs_v.rank() != 1 || obs_t.extent(0) != obs_v.extent(0)) {
        throw ShapeError("mha_encode_channel: obs_t and obs_v must be equal-length vectors");
    }
    const std::size_t n = obs_t.extent(0);
    if (mask.size() != n) {
        throw ShapeError("mha_encode_channel: mask length must match observation count");
    }
    Tensor t_c = reshape(obs_t, {1, n});
    Tensor v_c = reshape(obs_v, {1, n});
    ChannelEncoding enc = encode_one(params, channel, t_c, v_c, mask,
                                     weights_out != nullptr);
    if (attention_out) {
        *attention_out = reshape(enc.attention, {params.dim()});
    }
    if (weights_out) {
        *weights_out = reshape(enc.weights, {params.heads, n});
    }
    return reshape(enc.z, {params.dim()});
}

Tensor mha_encode_imts(const MhaEncoderParams& params, const BatchedImts& batch,
                       std::vector<Tensor>* weights_out) {
    const std::size_t b = batch.batch;
    const std::size_t c = batch.channel_count;
    const std::size_t n = batch.n_max;
    if (c != params.channel_count()) {
        throw ShapeError("mha_encode_imts: batch has C=" + std::to_string(c) +
                         ", encoder expects " + std::to_string(params.channel_count()));
    }
    if (weights_out) {
        weights_out->clear();
    }
    std::vector<Tensor> per_channel;
    per_channel.reserve(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor t_c = select_axis(batch.obs_t, 1, ch);
        Tensor v_c = select_axis(batch.obs_v, 1, ch);
        std::vector<std::uint8_t> mask_c(b * n);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const std::uint8_t* src = batch.obs_mask.data() + (bi * c + ch) * n;
            std::copy(src, src + n, mask_c.data() + bi * n);
        }
        ChannelEncoding enc = encode_one(params, ch, t_c, v_c, mask_c, weights_out != nullptr);
        per_channel.push_back(enc.z);
        if (weights_out) {
            weights_out->push_back(enc.weights);
        }
    }
    return add(stack_axis(per_channel, 1), params.channel_bias);
}

} // namespace imts
