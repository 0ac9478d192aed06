#include "imts/mixer.hpp"

#include "imts/error.hpp"

namespace imts {

MixerBlockParams MixerBlockParams::init(std::size_t channel_count, std::size_t d_in,
                                        std::size_t d_out_block, double eps,
                                        std::mt19937_64& rng) {
    if (channel_count == 0 || d_in == 0 || d_out_block == 0) {
        throw ConfigError("MixerBlockParams: extents must be positive");
    }
    MixerBlockParams block;
    block.w_chan = Tensor::zeros({channel_count, channel_count}, true);
    init_linear_weight(block.w_chan, channel_count, rng);
    block.b_chan = Tensor::zeros({channel_count}, true);
    block.norm_chan = RmsNormLayer::ones(channel_count, eps);
    block.w_dim = Tensor::zeros({d_in, d_out_block}, true);
    init_linear_weight(block.w_dim, d_in, rng);
    block.b_dim = Tensor::zeros({d_out_block}, true);
    block.norm_dim = RmsNormLayer::ones(d_in, eps);
    return block;
}

void MixerBlockParams::append_params(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w_chan", w_chan, true});
    out.push_back({prefix + ".b_chan", b_chan, false});
    out.push_back({prefix + ".gain_chan", norm_chan.gain, false});
    out.push_back({prefix + ".w_dim", w_dim, true});
    out.push_back({prefix + ".b_dim", b_dim, false});
    out.push_back({prefix + ".gain_dim", norm_dim.gain, false});
}

std::size_t MixerBlockParams::parameter_count() const {
    return w_chan.size() + b_chan.size() + norm_chan.gain.size() + w_dim.size() + b_dim.size() +
           norm_dim.gain.size();
}

Tensor mixer_block_forward(const MixerBlockParams& block, const Tensor& z) {
    if (z.rank() != 3) {
        throw ShapeError("mixer_block_forward: expected [B, C, D], got " +
                         shape_to_string(z.shape()));
    }
    if (z.extent(1) != block.channel_count() || z.extent(2) != block.d_in()) {
        throw ShapeError("mixer_block_forward: input " + shape_to_string(z.shape()) +
                         " does not match block (C=" + std::to_string(block.channel_count()) +
                         ", D_in=" + std::to_string(block.d_in()) + ")");
    }
    Tensor z_t = swap_axes(z, 1, 2); // [B, D, C]
    Tensor chan = relu(add(matmul(block.norm_chan.forward(z_t), block.w_chan), block.b_chan));
    Tensor z_prime = add(z, swap_axes(chan, 1, 2));
    Tensor feat = relu(add(matmul(block.norm_dim.forward(z_prime), block.w_dim), block.b_dim));
    Tensor z_res = resize_last(z, block.d_out_block());
    Tensor z_prime_res = resize_last(z_prime, block.d_out_block());
    return add(add(z_res, z_prime_res), feat);
}

std::vector<MixerBlockParams> make_mixer_stack(std::size_t channel_count, std::size_t d,
                                               std::size_t d_out, std::size_t layers, double eps,
                                               std::mt19937_64& rng) {
    std::vector<MixerBlockParams> blocks;
    blocks.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t out = (l + 1 == layers) ? d_out : d;
        blocks.push_back(MixerBlockParams::init(channel_count, d, out, eps, rng));
    }
    return blocks;
}

void validate_mixer_chain(std::span<const MixerBlockParams> blocks, std::size_t channel_count,
                          std::size_t d, std::size_t d_out) {
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const MixerBlockParams& block = blocks[l];
        if (block.channel_count() != channel_count) {
            throw ConfigError("mixer chain: block " + std::to_string(l) + " mixes " +
                              std::to_string(block.channel_count()) + " channels, expected " +
                              std::to_string(channel_count));
        }
        if (block.d_in() != d) {
            throw ConfigError("mixer chain: block " + std::to_string(l) + " expects D_in=" +
                              std::to_string(block.d_in()) + ", chain provides " +
                              std::to_string(d));
        }
        const std::size_t expected_out = (l + 1 == blocks.size()) ? d_out : d;
        if (block.d_out_block() != expected_out) {
            throw ConfigError("mixer chain: block " + std::to_string(l) + " produces " +
                              std::to_string(block.d_out_block()) + ", expected " +
                              std::to_string(expected_out));
        }
    }
}

Tensor mixer_stack_forward(std::span<const MixerBlockParams> blocks, const Tensor& z,
                           std::size_t d_out) {
    if (z.rank() != 3) {
        throw ShapeError("mixer_stack_forward: expected [B, C, D], got " +
                         shape_to_string(z.shape()));
    }
    if (blocks.empty()) {
        return resize_last(z, d_out); // identity when widths already match
    }
    validate_mixer_chain(blocks, z.extent(1), z.extent(2), d_out);
    Tensor out = z;
    for (const MixerBlockParams& block : blocks) {
        out = mixer_block_forward(block, out);
    }
    return out;
}

} // namespace imts
