#include <doctest.h>

#include "imts/data.hpp"
#include "imts/decoders.hpp"
#include "imts/error.hpp"
#include "imts/iscam.hpp"
#include "imts/mha_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace imts;

namespace {

Tensor vec(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor::from_data({n}, std::move(values));
}

ImtsInstance random_instance(std::mt19937_64& rng, std::size_t channels,
                             std::size_t max_obs = 6, std::size_t max_queries = 4) {
    std::uniform_real_distribution<double> obs_time(0.0, 0.5);
    std::uniform_real_distribution<double> query_time(0.5, 1.0);
    std::normal_distribution<double> value(0.0, 1.0);
    ImtsInstance inst;
    inst.channels.assign(channels, {});
    inst.queries.assign(channels, {});
    inst.answers.assign(channels, {});
    for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t n = rng() % (max_obs + 1);
        std::vector<double> times(n);
        for (double& t : times) t = obs_time(rng);
        std::sort(times.begin(), times.end());
        for (double t : times) inst.channels[c].push_back({t, value(rng)});
        const std::size_t k = 1 + rng() % max_queries;
        for (std::size_t i = 0; i < k; ++i) {
            inst.queries[c].push_back(query_time(rng));
            inst.answers[c].push_back(value(rng));
        }
    }
    return inst;
}

} // namespace

TEST_CASE("encode_channel single observation reduces to f_ote") {
    std::mt19937_64 rng(5);
    IscamParams params = IscamParams::init(2, 4, 8, false, rng);
    Tensor obs_t = vec({0.3});
    Tensor obs_v = vec({1.7});
    std::vector<std::uint8_t> mask{1};
    Tensor z = encode_channel(params, 0, obs_t, obs_v, mask);
    // the single softmax weight is 1, so Z == f_ote([v, t])
    Tensor direct = params.f_ote[0].forward(Tensor::from_data({1, 2}, {1.7, 0.3}));
    for (std::size_t d = 0; d < 4; ++d) {
        CHECK(z.data()[d] == doctest::Approx(direct.data()[d]).epsilon(1e-15));
    }
}

TEST_CASE("encode_channel empty channel is the zero vector") {
    std::mt19937_64 rng(6);
    IscamParams params = IscamParams::init(2, 4, 8, false, rng);
    Tensor z = encode_channel(params, 1, Tensor::zeros({0}), Tensor::zeros({0}), {});
    for (double v : z.data()) CHECK(v == 0.0);

    // fully masked behaves like empty
    Tensor zm = encode_channel(params, 1, vec({0.1, 0.2}), vec({1.0, 2.0}),
                               std::vector<std::uint8_t>{0, 0});
    for (double v : zm.data()) CHECK(v == 0.0);
}

TEST_CASE("encode_channel with constant scores averages the embeddings") {
    std::mt19937_64 rng(7);
    IscamParams params = IscamParams::init(1, 4, 8, false, rng);
    // zero both layers of f_wa: scores are b2 per dimension, constant over i
    for (Tensor* t : {&params.f_wa[0].w1, &params.f_wa[0].b1, &params.f_wa[0].w2}) {
        std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    }
    std::fill(params.f_wa[0].b2.mutable_data().begin(),
              params.f_wa[0].b2.mutable_data().end(), 0.37);
    Tensor obs_t = vec({0.1, 0.2, 0.3});
    Tensor obs_v = vec({1.0, -1.0, 2.0});
    std::vector<std::uint8_t> mask{1, 1, 1};
    Tensor z = encode_channel(params, 0, obs_t, obs_v, mask);
    Tensor h = params.f_ote[0].forward(
        Tensor::from_data({3, 2}, {1.0, 0.1, -1.0, 0.2, 2.0, 0.3}));
    for (std::size_t d = 0; d < 4; ++d) {
        const double mean = (h.at({0, d}) + h.at({1, d}) + h.at({2, d})) / 3.0;
        CHECK(z.data()[d] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("encode_channel is permutation invariant") {
    std::mt19937_64 rng(8);
    IscamParams params = IscamParams::init(1, 6, 8, false, rng);
    Tensor obs_t = vec({0.1, 0.25, 0.4, 0.5});
    Tensor obs_v = vec({1.0, -0.5, 0.3, 2.0});
    std::vector<std::uint8_t> mask{1, 1, 0, 1};
    Tensor z = encode_channel(params, 0, obs_t, obs_v, mask);

    Tensor perm_t = vec({0.5, 0.1, 0.4, 0.25});
    Tensor perm_v = vec({2.0, 1.0, 0.3, -0.5});
    std::vector<std::uint8_t> perm_mask{1, 1, 0, 1};
    Tensor zp = encode_channel(params, 0, perm_t, perm_v, perm_mask);
    for (std::size_t d = 0; d < 6; ++d) {
        CHECK(std::fabs(z.data()[d] - zp.data()[d]) <= 1e-12);
    }
}

TEST_CASE("encode_imts adds the channel bias and handles empty inputs") {
    std::mt19937_64 rng(9);
    IscamParams params = IscamParams::init(2, 4, 8, false, rng);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : params.channel_bias.mutable_data()) v = dist(rng);

    ImtsInstance empty;
    empty.channels = {{}, {}};
    empty.queries = {{0.5}, {0.6}};
    empty.answers = {{0.0}, {0.0}};
    std::vector<ImtsInstance> instances{empty, empty};
    BatchedImts batch = make_batch(instances, 2);
    Tensor z = encode_imts(params, batch);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t d = 0; d < 4; ++d) {
                CHECK(z.at({b, c, d}) == params.channel_bias.at({c, d}));
            }
        }
    }
}

TEST_CASE("encode_imts replication across the batch") {
    std::mt19937_64 rng(10);
    for (bool channel_specific : {false, true}) {
        CAPTURE(channel_specific);
        IscamParams params = IscamParams::init(3, 4, 8, channel_specific, rng);
        ImtsInstance inst = random_instance(rng, 3);
        std::vector<ImtsInstance> one{inst};
        std::vector<ImtsInstance> many{inst, inst, inst, inst};
        Tensor z1 = encode_imts(params, make_batch(one, 3));
        Tensor zn = encode_imts(params, make_batch(many, 3));
        for (std::size_t b = 0; b < 4; ++b) {
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t d = 0; d < 4; ++d) {
                    CHECK(zn.at({b, c, d}) == doctest::Approx(z1.at({0, c, d})).epsilon(1e-15));
                }
            }
        }
    }
}

TEST_CASE("iscam softmax weights sum to one per dimension") {
    std::mt19937_64 rng(11);
    IscamParams params = IscamParams::init(2, 5, 8, false, rng);
    ImtsInstance inst = random_instance(rng, 2, 6);
    inst.channels[1].clear(); // one empty channel
    std::vector<ImtsInstance> instances{inst};
    BatchedImts batch = make_batch(instances, 2);
    Tensor weights;
    encode_imts(params, batch, &weights);
    REQUIRE(weights.shape() == Shape{1, 2, batch.n_max, 5});
    for (std::size_t c = 0; c < 2; ++c) {
        const bool empty = inst.channels[c].empty();
        for (std::size_t d = 0; d < 5; ++d) {
            double total = 0.0;
            for (std::size_t n = 0; n < batch.n_max; ++n) {
                total += weights.at({0, c, n, d});
            }
            if (empty) {
                CHECK(total == 0.0);
            } else {
                CHECK(std::fabs(total - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("iscam locality: other channels' rows are untouched") {
    std::mt19937_64 rng(12);
    IscamParams params = IscamParams::init(3, 4, 8, false, rng);
    ImtsInstance inst = random_instance(rng, 3, 5);
    if (inst.channels[1].empty()) inst.channels[1].push_back({0.2, 0.5});
    ImtsInstance perturbed = inst;
    perturbed.channels[1][0].v += 0.75;

    std::vector<ImtsInstance> a{inst};
    std::vector<ImtsInstance> b{perturbed};
    Tensor za = encode_imts(params, make_batch(a, 3));
    Tensor zb = encode_imts(params, make_batch(b, 3));
    for (std::size_t c : {std::size_t{0}, std::size_t{2}}) {
        for (std::size_t d = 0; d < 4; ++d) {
            CHECK(za.at({0, c, d}) == zb.at({0, c, d}));
        }
    }
    bool changed = false;
    for (std::size_t d = 0; d < 4; ++d) {
        changed = changed || za.at({0, 1, d}) != zb.at({0, 1, d});
    }
    CHECK(changed);
}

TEST_CASE("mha configuration guards") {
    std::mt19937_64 rng(13);
    CHECK_THROWS_AS(MhaEncoderParams::init(2, 6, 4, 8, rng), ConfigError);
    CHECK_THROWS_AS(MhaEncoderParams::init(2, 8, 4, 5, rng), ConfigError);
}

TEST_CASE("mha single observation pools exactly that value vector") {
    std::mt19937_64 rng(14);
    MhaEncoderParams params = MhaEncoderParams::init(2, 8, 2, 4, rng);
    Tensor obs_t = vec({0.3});
    Tensor obs_v = vec({1.2});
    std::vector<std::uint8_t> mask{1};
    Tensor attention;
    Tensor weights;
    mha_encode_channel(params, 0, obs_t, obs_v, mask, &attention, &weights);
    for (std::size_t h = 0; h < 2; ++h) {
        CHECK(weights.at({h, 0}) == 1.0);
    }
    // value vector of the one tuple
    auto embed = sinusoidal_time_embedding(0.3, 4);
    std::vector<double> tuple{1.2};
    tuple.insert(tuple.end(), embed.begin(), embed.end());
    Tensor v = add(matmul(Tensor::from_data({1, 5}, tuple), params.w_value), params.b_value);
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(attention.data()[d] == doctest::Approx(v.data()[d]).epsilon(1e-15));
    }
}

TEST_CASE("mha equal keys give uniform attention") {
    std::mt19937_64 rng(15);
    MhaEncoderParams params = MhaEncoderParams::init(1, 8, 4, 4, rng);
    std::fill(params.w_key.mutable_data().begin(), params.w_key.mutable_data().end(), 0.0);
    Tensor obs_t = vec({0.1, 0.2, 0.3, 0.4});
    Tensor obs_v = vec({1.0, 2.0, 3.0, 4.0});
    std::vector<std::uint8_t> mask{1, 1, 0, 1};
    Tensor weights;
    mha_encode_channel(params, 0, obs_t, obs_v, mask, nullptr, &weights);
    for (std::size_t h = 0; h < 4; ++h) {
        CHECK(weights.at({h, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(weights.at({h, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(weights.at({h, 2}) == 0.0);
        CHECK(weights.at({h, 3}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("mha per-head weights form a distribution and are permutation invariant") {
    std::mt19937_64 rng(16);
    MhaEncoderParams params = MhaEncoderParams::init(1, 8, 2, 4, rng);
    Tensor obs_t = vec({0.1, 0.2, 0.35, 0.4});
    Tensor obs_v = vec({0.5, -1.0, 0.25, 1.5});
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    Tensor weights;
    Tensor z = mha_encode_channel(params, 0, obs_t, obs_v, mask, nullptr, &weights);
    for (std::size_t h = 0; h < 2; ++h) {
        double total = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            const double w = weights.at({h, n});
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }

    Tensor perm_t = vec({0.4, 0.35, 0.2, 0.1});
    Tensor perm_v = vec({1.5, 0.25, -1.0, 0.5});
    std::vector<std::uint8_t> perm_mask{1, 1, 0, 1};
    Tensor zp = mha_encode_channel(params, 0, perm_t, perm_v, perm_mask);
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(std::fabs(z.data()[d] - zp.data()[d]) <= 1e-12);
    }
}

TEST_CASE("mha empty channel encodes to zero before the bias") {
    std::mt19937_64 rng(17);
    MhaEncoderParams params = MhaEncoderParams::init(2, 8, 2, 4, rng);
    // nonzero post bias would leak through the residual without the guard
    std::fill(params.b_post.mutable_data().begin(), params.b_post.mutable_data().end(), 0.5);
    Tensor z = mha_encode_channel(params, 0, Tensor::zeros({0}), Tensor::zeros({0}), {});
    for (double v : z.data()) CHECK(v == 0.0);

    // batched: empty channel rows equal the channel bias exactly
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : params.channel_bias.mutable_data()) v = dist(rng);
    ImtsInstance inst = random_instance(rng, 2, 4);
    inst.channels[0].clear();
    std::vector<ImtsInstance> instances{inst};
    Tensor batched = mha_encode_imts(params, make_batch(instances, 2));
    for (std::size_t d = 0; d < 8; ++d) {
        CHECK(batched.at({0, 0, d}) == params.channel_bias.at({0, d}));
    }
}
