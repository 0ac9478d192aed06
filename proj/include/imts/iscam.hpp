#pragma once

#include "imts/data.hpp"
#include "imts/nn.hpp"
#include "imts/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace imts {

// Channel aggregation encoder: observation tuples [v, t] are embedded by
// f_ote, scored per embedding dimension by f_wa, and combined by a
// per-dimension softmax-weighted average. Empty channels encode to zero, so
// the added channel bias row is their entire encoding.
struct IscamParams {
    std::vector<Mlp2> f_ote; // size 1 when shared across channels, else C
    std::vector<Mlp2> f_wa;  // same sharing as f_ote
    Tensor channel_bias;     // [C, D]

    bool channel_specific() const { return f_ote.size() > 1; }
    std::size_t channel_count() const { return channel_bias.extent(0); }
    std::size_t dim() const { return channel_bias.extent(1); }

    static IscamParams init(std::size_t channel_count, std::size_t dim, std::size_t hidden,
                            bool channel_specific, std::mt19937_64& rng);
    void append_params(ParamList& out) const;
    std::size_t parameter_count() const;
};

// Aggregated encoding of one channel, before the channel bias. obs_t/obs_v
// are [N]; an empty or fully masked channel yields the zero vector.
Tensor encode_channel(const IscamParams& params, std::size_t channel, const Tensor& obs_t,
                      const Tensor& obs_v, std::span<const std::uint8_t> mask);

// Batched encoding with the channel bias added: [B, C, D]. When
// softmax_weights is non-null it receives the implicit per-dimension
// aggregation weights, shaped [B, C, N, D].
Tensor encode_imts(const IscamParams& params, const BatchedImts& batch,
                   Tensor* softmax_weights = nullptr);

} // namespace imts
