#include "imts/nn.hpp"

#include "imts/error.hpp"

#include <algorithm>
#include <cmath>

namespace imts {

void init_linear_weight(Tensor& weight, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : weight.mutable_data()) {
        w = dist(rng);
    }
}

Mlp2 Mlp2::zeros(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, bool requires_grad) {
    if (d_in == 0 || d_hidden == 0 || d_out == 0) {
        throw ConfigError("Mlp2: zero-width layer");
    }
    Mlp2 mlp;
    mlp.w1 = Tensor::zeros({d_in, d_hidden}, requires_grad);
    mlp.b1 = Tensor::zeros({d_hidden}, requires_grad);
    mlp.w2 = Tensor::zeros({d_hidden, d_out}, requires_grad);
    mlp.b2 = Tensor::zeros({d_out}, requires_grad);
    return mlp;
}

Mlp2 Mlp2::init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, std::mt19937_64& rng) {
    Mlp2 mlp = zeros(d_in, d_hidden, d_out);
    init_linear_weight(mlp.w1, d_in, rng);
    init_linear_weight(mlp.w2, d_hidden, rng);
    return mlp;
}

Tensor Mlp2::forward(const Tensor& x) const {
    if (x.rank() == 0 || x.shape().back() != d_in()) {
        throw ShapeError("Mlp2: last axis of input " + shape_to_string(x.shape()) +
                         " must be " + std::to_string(d_in()));
    }
    Tensor hidden = relu(add(matmul(x, w1), b1));
    return add(matmul(hidden, w2), b2);
}

std::size_t Mlp2::parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

void Mlp2::append_params(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w1", w1, true});
    out.push_back({prefix + ".b1", b1, false});
    out.push_back({prefix + ".w2", w2, true});
    out.push_back({prefix + ".b2", b2, false});
}

RmsNormLayer RmsNormLayer::ones(std::size_t dim, double eps, bool requires_grad) {
    if (dim == 0) {
        throw ConfigError("RmsNormLayer: zero dimension");
    }
    RmsNormLayer layer;
    layer.gain = Tensor::full({dim}, 1.0, requires_grad);
    layer.eps = eps;
    return layer;
}

AdamW::AdamW(const ParamList& params, AdamWConfig config) : config_(config) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const NamedParam& p : params) {
        m_.emplace_back(p.tensor.size(), 0.0);
        v_.emplace_back(p.tensor.size(), 0.0);
    }
}

void AdamW::step(ParamList& params, double lr, double weight_decay) {
    if (params.size() != m_.size()) {
        throw ContractError("AdamW: parameter list size changed");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].tensor.size() != m_[i].size()) {
            throw ShapeError("AdamW: parameter '" + params[i].name +
                             "' no longer matches its moment buffers");
        }
        for (double g : params[i].tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("AdamW: non-finite gradient in parameter group '" +
                                   params[i].name + "'");
            }
        }
    }
    step_count_ += 1;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].tensor.mutable_data();
        const auto grads = params[i].tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = params[i].decay ? weight_decay : 0.0;
        for (std::size_t j = 0; j < values.size(); ++j) {
            if (decay != 0.0) {
                values[j] -= lr * decay * values[j];
            }
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grads[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grads[j] * grads[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f,
                                                  ParamList& params, double h) {
    if (h <= 0.0) {
        throw ContractError("finite_diff_grad: h must be positive");
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (NamedParam& p : params) {
        auto values = p.tensor.mutable_data();
        std::vector<double> g(values.size());
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = f();
            values[j] = saved - h;
            const double down = f();
            values[j] = saved;
            g[j] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double relative_error(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / denom;
}

} // namespace imts
