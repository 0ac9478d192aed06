#pragma once

#include "imts/tensor.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace imts {

// A trainable leaf tensor with a stable name. `decay` marks whether AdamW's
// decoupled weight decay applies (weight matrices yes, biases and gains no).
struct NamedParam {
    std::string name;
    Tensor tensor;
    bool decay = true;
};

using ParamList = std::vector<NamedParam>;

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_linear_weight(Tensor& weight, std::size_t fan_in, std::mt19937_64& rng);

// Two-layer perceptron y = W2 * relu(W1 * x + b1) + b2, applied row-wise
// over the last axis.
struct Mlp2 {
    Tensor w1; // [d_in, d_hidden]
    Tensor b1; // [d_hidden]
    Tensor w2; // [d_hidden, d_out]
    Tensor b2; // [d_out]

    static Mlp2 zeros(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                      bool requires_grad = true);
    static Mlp2 init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                     std::mt19937_64& rng);

    Tensor forward(const Tensor& x) const;

    std::size_t d_in() const { return w1.extent(0); }
    std::size_t d_hidden() const { return w1.extent(1); }
    std::size_t d_out() const { return w2.extent(1); }
    std::size_t parameter_count() const;
    void append_params(ParamList& out, const std::string& prefix) const;
};

struct RmsNormLayer {
    Tensor gain;
    double eps = 1e-8;

    static RmsNormLayer ones(std::size_t dim, double eps = 1e-8, bool requires_grad = true);

    Tensor forward(const Tensor& x) const { return rms_norm(x, gain, eps); }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Decoupled-weight-decay Adam. Moment buffers are index-aligned with the
// parameter list handed to the constructor; step() must receive the same
// parameters in the same order.
class AdamW {
public:
    AdamW(const ParamList& params, AdamWConfig config = {});

    // p <- p - lr*wd*p (decay-flagged params only), then the bias-corrected
    // adaptive step. Throws NumericError naming the parameter group if any
    // gradient is non-finite; no parameter is modified in that case.
    void step(ParamList& params, double lr, double weight_decay);

    std::uint64_t step_count() const { return step_count_; }
    const std::vector<double>& first_moment(std::size_t index) const { return m_[index]; }
    const std::vector<double>& second_moment(std::size_t index) const { return v_[index]; }

private:
    AdamWConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_count_ = 0;
};

// Central differences (f(p+h) - f(p-h)) / (2h) per coordinate. f re-evaluates
// the objective from the parameters' current values. Returns one gradient
// vector per parameter, index-aligned with `params`.
std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f,
                                                  ParamList& params, double h = 1e-5);

// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

} // namespace imts
