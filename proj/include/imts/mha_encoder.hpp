#pragma once

#include "imts/data.hpp"
#include "imts/nn.hpp"
#include "imts/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace imts {

// Attention-pooling ablation encoder. A single learnable query per channel
// attends over the channel's observation tuples (scalar value concatenated
// with a sinusoidal time embedding); keys and values project from the same
// encoded tuples. The pooled vector passes through a residual ReLU linear.
// Empty channels encode to zero so the channel bias row is their encoding.
struct MhaEncoderParams {
    Tensor query;        // [C, D]
    Tensor w_key;        // [1 + d_t, D]
    Tensor b_key;        // [D]
    Tensor w_value;      // [1 + d_t, D]
    Tensor b_value;      // [D]
    Tensor w_post;       // [D, D]
    Tensor b_post;       // [D]
    Tensor channel_bias; // [C, D]
    std::size_t heads = 1;
    std::size_t time_dim = 16;

    std::size_t channel_count() const { return channel_bias.extent(0); }
    std::size_t dim() const { return channel_bias.extent(1); }
    std::size_t head_dim() const { return dim() / heads; }

    static MhaEncoderParams init(std::size_t channel_count, std::size_t dim, std::size_t heads,
                                 std::size_t time_dim, std::mt19937_64& rng);
    void append_params(ParamList& out) const;
    std::size_t parameter_count() const;
};

// Encoding of one channel, before the channel bias. Optional out-params
// expose the pooled attention stage [D] and the per-head attention weights
// [H, N].
Tensor mha_encode_channel(const MhaEncoderParams& params, std::size_t channel,
                          const Tensor& obs_t, const Tensor& obs_v,
                          std::span<const std::uint8_t> mask, Tensor* attention_out = nullptr,
                          Tensor* weights_out = nullptr);

// Batched encoding with the channel bias added: [B, C, D]. When weights_out
// is non-null it receives one tensor per channel, shaped [B, H, N].
Tensor mha_encode_imts(const MhaEncoderParams& params, const BatchedImts& batch,
                       std::vector<Tensor>* weights_out = nullptr);

} // namespace imts
