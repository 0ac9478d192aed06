#pragma once

#include "imts/nn.hpp"
#include "imts/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace imts {

// Interleaved [sin(w_j t), cos(w_j t)] pairs with w_j = 10000^(-2j/d_t).
// d_t must be even.
std::vector<double> sinusoidal_time_embedding(double t, std::size_t d_t);

// Constant (non-differentiated) tensor of embeddings, one per entry of
// `times`, with a trailing axis of extent d_t appended.
Tensor sinusoidal_embed_constant(const Tensor& times, std::size_t d_t);

// Continuous temporal projection: a per-channel MLP turns a scalar query
// time into the weight vector of a linear readout over that channel's
// mixer embedding.
struct ConTpParams {
    std::vector<Mlp2> f_qu; // C networks, 1 -> D_out
    Tensor b_out;           // [C]

    std::size_t channel_count() const { return b_out.extent(0); }

    static ConTpParams init(std::size_t channel_count, std::size_t d_out, std::size_t hidden,
                            std::mt19937_64& rng);
    void append_params(ParamList& out) const;
    std::size_t parameter_count() const;
};

// z: [B, C, D_out], q_t: [B, C, K] -> [B, C, K]. Masked query slots are 0.
Tensor contp_forecast(const ConTpParams& params, const Tensor& z, const Tensor& q_t,
                      std::span<const std::uint8_t> q_mask);

// Ablation decoder: one shared MLP over the channel embedding concatenated
// with a sinusoidal embedding of the query time.
struct MlpProjParams {
    std::size_t time_dim = 16; // d_t, even
    Mlp2 mlp;                  // (D_out + d_t) -> 1

    static MlpProjParams init(std::size_t d_out, std::size_t time_dim, std::size_t hidden,
                              std::mt19937_64& rng);
    void append_params(ParamList& out) const;
    std::size_t parameter_count() const { return mlp.parameter_count(); }
};

Tensor mlp_projection_forecast(const MlpProjParams& params, const Tensor& z, const Tensor& q_t,
                               std::span<const std::uint8_t> q_mask);

// 0/1 constant tensor built from a mask, for exact zeroing of padded slots.
Tensor mask_constant(const Shape& shape, std::span<const std::uint8_t> mask);

} // namespace imts
