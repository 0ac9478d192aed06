#pragma once

#include "imts/nn.hpp"
#include "imts/tensor.hpp"

#include <span>
#include <vector>

namespace imts {

// One mixer block: a channel-mixing and a feature-mixing linear map, each
// behind an RMSNorm + ReLU, with the double residual
//   Z' = Z + relu(Linear_chan(RMS(Z^T)))^T
//   Z_out = resid(Z) + resid(Z') + relu(Linear_dim(RMS(Z')))
// where resid is the identity at matched widths, otherwise a fixed
// truncation / zero-padding of the feature axis.
struct MixerBlockParams {
    Tensor w_chan;          // [C, C]
    Tensor b_chan;          // [C]
    RmsNormLayer norm_chan; // gain [C], over the channel axis
    Tensor w_dim;           // [D_in, D_out_block]
    Tensor b_dim;           // [D_out_block]
    RmsNormLayer norm_dim;  // gain [D_in]

    std::size_t channel_count() const { return w_chan.extent(0); }
    std::size_t d_in() const { return w_dim.extent(0); }
    std::size_t d_out_block() const { return w_dim.extent(1); }

    static MixerBlockParams init(std::size_t channel_count, std::size_t d_in,
                                 std::size_t d_out_block, double eps, std::mt19937_64& rng);
    void append_params(ParamList& out, const std::string& prefix) const;
    std::size_t parameter_count() const;
};

Tensor mixer_block_forward(const MixerBlockParams& block, const Tensor& z);

// Intermediate blocks keep width D; the last block widens/narrows to D_out.
// L = 0 yields a fixed (non-learned) projection D -> D_out.
std::vector<MixerBlockParams> make_mixer_stack(std::size_t channel_count, std::size_t d,
                                               std::size_t d_out, std::size_t layers, double eps,
                                               std::mt19937_64& rng);

// Throws ConfigError when the block chain is dimensionally inconsistent.
void validate_mixer_chain(std::span<const MixerBlockParams> blocks, std::size_t channel_count,
                          std::size_t d, std::size_t d_out);

// z: [B, C, D] -> [B, C, D_out].
Tensor mixer_stack_forward(std::span<const MixerBlockParams> blocks, const Tensor& z,
                           std::size_t d_out);

} // namespace imts
