#include <doctest.h>

#include "imts/error.hpp"
#include "imts/nn.hpp"

#include <cmath>
#include <random>

using namespace imts;

TEST_CASE("mlp2 forward hand computations") {
    // W1=[[1]], b1=[0], W2=[[2]], b2=[1]
    Mlp2 mlp = Mlp2::zeros(1, 1, 1);
    mlp.w1.mutable_data()[0] = 1.0;
    mlp.w2.mutable_data()[0] = 2.0;
    mlp.b2.mutable_data()[0] = 1.0;
    CHECK(mlp.forward(Tensor::from_data({1}, {3.0})).value() == 7.0); // 2*relu(3)+1
    CHECK(mlp.forward(Tensor::from_data({1}, {-3.0})).value() == 1.0); // relu kills hidden
}

TEST_CASE("mlp2 zero network maps everything to zero") {
    Mlp2 mlp = Mlp2::zeros(3, 4, 2);
    Tensor y = mlp.forward(Tensor::from_data({2, 3}, {1, -2, 3, 0.5, 0, -1}));
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("mlp2 shape contract names the offending axis") {
    Mlp2 mlp = Mlp2::zeros(3, 4, 2);
    CHECK_THROWS_AS(mlp.forward(Tensor::from_data({2, 2}, {1, 2, 3, 4})), ShapeError);
    CHECK(mlp.forward(Tensor::from_data({5, 3}, std::vector<double>(15, 0.0))).shape() ==
          Shape{5, 2});
}

TEST_CASE("rms_norm matches the scalar oracle") {
    // x=[3,4], gain=1, eps=0: rms = sqrt(12.5)
    RmsNormLayer layer = RmsNormLayer::ones(2, 0.0);
    Tensor y = layer.forward(Tensor::from_data({2}, {3.0, 4.0}));
    const double rms = std::sqrt((9.0 + 16.0) / 2.0);
    CHECK(y.data()[0] == doctest::Approx(3.0 / rms).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(4.0 / rms).epsilon(1e-12));
    CHECK(y.data()[0] == doctest::Approx(0.848528137423857).epsilon(1e-9));
    CHECK(y.data()[1] == doctest::Approx(1.131370849898476).epsilon(1e-9));
}

TEST_CASE("rms_norm constant and zero rows") {
    RmsNormLayer layer = RmsNormLayer::ones(4, 0.0);
    Tensor ones = layer.forward(Tensor::full({4}, 2.5));
    for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    layer.eps = 1e-8;
    Tensor zero = layer.forward(Tensor::zeros({4}));
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("rms_norm unit-gain rows have unit rms") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist(0.0, 2.0);
    std::vector<double> data(7 * 16);
    for (double& v : data) v = dist(rng);
    Tensor x = Tensor::from_data({7, 16}, std::move(data));
    for (double eps : {0.0, 1e-12}) {
        Tensor y = rms_norm(x, Tensor::full({16}, 1.0), eps);
        for (std::size_t r = 0; r < 7; ++r) {
            double mean_sq = 0.0;
            for (std::size_t i = 0; i < 16; ++i) {
                const double v = y.at({r, i});
                mean_sq += v * v;
            }
            CHECK(std::fabs(std::sqrt(mean_sq / 16.0) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("masked_softmax spec examples") {
    SUBCASE("symmetry") {
        std::vector<std::uint8_t> mask{1, 1};
        Tensor y = masked_softmax(Tensor::from_data({2}, {0.0, 0.0}), mask);
        CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("single support ignores masked values entirely") {
        std::vector<std::uint8_t> mask{1, 0};
        Tensor y = masked_softmax(Tensor::from_data({2}, {5.0, 1e300}), mask);
        CHECK(y.data()[0] == 1.0);
        CHECK(y.data()[1] == 0.0);
    }
    SUBCASE("exp-normalize oracle") {
        std::vector<std::uint8_t> mask{1, 1, 1};
        Tensor y = masked_softmax(Tensor::from_data({3}, {1.0, 2.0, 3.0}), mask);
        const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
        const double total = e1 + e2 + e3;
        CHECK(y.data()[0] == doctest::Approx(e1 / total).epsilon(1e-12));
        CHECK(y.data()[1] == doctest::Approx(e2 / total).epsilon(1e-12));
        CHECK(y.data()[2] == doctest::Approx(e3 / total).epsilon(1e-12));
        CHECK(y.data()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
        CHECK(y.data()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-10));
        CHECK(y.data()[2] == doctest::Approx(0.66524095577482178).epsilon(1e-10));
    }
    SUBCASE("empty support raises") {
        std::vector<std::uint8_t> mask{0, 0};
        CHECK_THROWS_AS(masked_softmax(Tensor::from_data({2}, {1.0, 2.0}), mask), ContractError);
    }
}

TEST_CASE("masked_softmax sums to one over unmasked entries") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    std::bernoulli_distribution coin(0.6);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng() % 12);
        std::vector<double> values(n);
        std::vector<std::uint8_t> mask(n, 0);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            values[i] = dist(rng);
            mask[i] = coin(rng) ? 1 : 0;
            any = any || mask[i];
        }
        if (!any) mask[rng() % n] = 1;
        Tensor y = masked_softmax(Tensor::from_data({n}, values), mask);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) {
                total += y.data()[i];
            } else {
                CHECK(y.data()[i] == 0.0);
            }
        }
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("adamw single-step hand roll") {
    // p=1, g=1, lr=0.1, wd=0, betas (0.9, 0.999), eps 1e-8, step 1 -> ~0.9
    ParamList params;
    params.push_back({"p", Tensor::from_data({1}, {1.0}, true), true});
    AdamW opt(params);
    params[0].tensor.zero_grad();
    Tensor loss = mul(params[0].tensor, Tensor::from_data({1}, {1.0}));
    backward(reshape(loss, {}));
    CHECK(params[0].tensor.grad()[0] == 1.0);
    opt.step(params, 0.1, 0.0);
    CHECK(std::fabs(params[0].tensor.data()[0] - 0.9) < 1e-6);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw null update and pure decay") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({2}, {1.0, -2.0}, true), true});
    AdamW opt(params);

    params[0].tensor.zero_grad();
    opt.step(params, 0.1, 0.0); // zero grad, zero decay: unchanged
    CHECK(params[0].tensor.data()[0] == 1.0);
    CHECK(params[0].tensor.data()[1] == -2.0);

    AdamW opt2(params);
    params[0].tensor.zero_grad();
    opt2.step(params, 0.01, 0.1); // pure decoupled decay: p *= 1 - lr*wd
    CHECK(params[0].tensor.data()[0] == doctest::Approx(0.999).epsilon(1e-15));
    CHECK(params[0].tensor.data()[1] == doctest::Approx(-1.998).epsilon(1e-15));
}

TEST_CASE("adamw skips decay on no-decay groups and is element-wise") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({1}, {1.0}, true), true});
    params.push_back({"b", Tensor::from_data({1}, {1.0}, true), false});
    AdamW opt(params);
    params[0].tensor.zero_grad();
    params[1].tensor.zero_grad();
    opt.step(params, 0.01, 0.1);
    CHECK(params[0].tensor.data()[0] == doctest::Approx(0.999));
    CHECK(params[1].tensor.data()[0] == 1.0);
}

TEST_CASE("adamw update is invariant to parameter-group order") {
    auto make_params = [](bool swapped) {
        ParamList params;
        Tensor a = Tensor::from_data({2}, {1.0, -0.5}, true);
        Tensor b = Tensor::from_data({3}, {0.3, 0.9, -1.2}, true);
        backward(sum_all(mul(concat_last(a, b), concat_last(a, b))));
        if (swapped) {
            params.push_back({"b", b, true});
            params.push_back({"a", a, true});
        } else {
            params.push_back({"a", a, true});
            params.push_back({"b", b, true});
        }
        return params;
    };
    ParamList forward_order = make_params(false);
    ParamList reverse_order = make_params(true);
    AdamW opt1(forward_order);
    AdamW opt2(reverse_order);
    opt1.step(forward_order, 0.05, 0.01);
    opt2.step(reverse_order, 0.05, 0.01);
    for (const NamedParam& p : forward_order) {
        for (const NamedParam& q : reverse_order) {
            if (p.name != q.name) continue;
            for (std::size_t i = 0; i < p.tensor.size(); ++i) {
                CHECK(p.tensor.data()[i] == q.tensor.data()[i]);
            }
        }
    }
}

TEST_CASE("adamw rejects non-finite gradients naming the group") {
    ParamList params;
    params.push_back({"w", Tensor::from_data({1}, {1.0}, true), true});
    params.push_back({"encoder.bias", Tensor::from_data({1}, {1.0}, true), false});
    AdamW opt(params);
    params[0].tensor.zero_grad();
    params[1].tensor.zero_grad();
    Tensor bad = mul(params[1].tensor, Tensor::from_data({1}, {1e308}));
    backward(reshape(mul(bad, Tensor::from_data({1}, {1e308})), {}));
    try {
        opt.step(params, 0.1, 0.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("encoder.bias") != std::string::npos);
    }
    // aborted update leaves parameters untouched
    CHECK(params[0].tensor.data()[0] == 1.0);
    CHECK(params[1].tensor.data()[0] == 1.0);
    CHECK(opt.step_count() == 0);
}

TEST_CASE("finite differences on simple functions") {
    ParamList params;
    params.push_back({"p", Tensor::from_data({1}, {3.0}, true), true});
    auto square = [&] { return params[0].tensor.data()[0] * params[0].tensor.data()[0]; };
    auto grads = finite_diff_grad(square, params, 1e-5);
    CHECK(std::fabs(grads[0][0] - 6.0) < 1e-8);

    params[0].tensor.mutable_data()[0] = 1.0;
    auto relu_fn = [&] { return std::max(params[0].tensor.data()[0], 0.0); };
    grads = finite_diff_grad(relu_fn, params, 1e-5);
    CHECK(std::fabs(grads[0][0] - 1.0) < 1e-9);

    CHECK_THROWS_AS(finite_diff_grad(square, params, 0.0), ContractError);
}
