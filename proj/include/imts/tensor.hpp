#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace imts {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the differentiation graph. Result nodes keep shared
// ownership of their inputs, so a graph stays alive exactly as long as some
// downstream tensor references it.
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;     // allocated (zeroed) only for tracked nodes
    bool requires_grad = false;   // leaf the caller wants gradients for
    bool tracked = false;         // part of the current differentiation graph
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop; // reads this->grad, accumulates into parents

    std::size_t size() const { return values.size(); }
};

} // namespace detail

// Dense row-major array of 64-bit floats participating in a reverse-mode
// differentiation graph. A Tensor is a cheap shared handle to its node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;

    std::span<const double> data() const;
    // Direct writes to leaf storage (initialization, optimizer updates).
    std::span<double> mutable_data();
    double value() const; // scalar tensors only
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool tracked() const;
    // Zeros until backward() reaches this leaf.
    std::span<const double> grad() const;
    void zero_grad();

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// While a guard is alive on this thread, new operations record no provenance
// and their results are constants. Used for evaluation passes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

// ---- elementwise and broadcast arithmetic -------------------------------

// rhs must have the same shape as lhs or a trailing-suffix shape of it
// (covers bias vectors, per-channel matrices, and scalars).
Tensor add(const Tensor& lhs, const Tensor& rhs);
Tensor sub(const Tensor& lhs, const Tensor& rhs);
Tensor mul(const Tensor& lhs, const Tensor& rhs); // same shape only
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);     // subgradient at 0 is 0
Tensor abs_val(const Tensor& x);  // subgradient at 0 is 0

// ---- linear maps and reductions ------------------------------------------

// x: [..., m], weight: [m, n] -> [..., n], applied row-wise.
Tensor matmul(const Tensor& x, const Tensor& weight);
Tensor sum_all(const Tensor& x); // -> scalar
Tensor sum_axis(const Tensor& x, std::size_t axis);

// ---- structural ops -------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_last(const Tensor& lhs, const Tensor& rhs);
// Truncates or zero-pads the last axis to `extent`.
Tensor resize_last(const Tensor& x, std::size_t extent);
Tensor select_axis(const Tensor& x, std::size_t axis, std::size_t index);
Tensor stack_axis(std::span<const Tensor> parts, std::size_t axis);
// Inserts a new axis of the given extent at `axis`, repeating values.
Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t count);

// ---- normalization and softmax --------------------------------------------

// Per row over the last axis: y_d = gain_d * x_d / sqrt(mean_k(x_k^2) + eps).
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

// Softmax over the unmasked entries of a vector; masked entries are exactly 0.
// Stabilized by subtracting the unmasked maximum. Throws ContractError when
// the mask has no true entry.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);

// Row-wise masked softmax over the last axis. mask must be materialized to
// the full shape of x. Rows with empty support become all-zero when
// zero_empty_rows is set, otherwise they raise ContractError.
Tensor masked_softmax_lastdim(const Tensor& x, std::span<const std::uint8_t> mask,
                              bool zero_empty_rows);

// ---- backward pass ---------------------------------------------------------

// Accumulates d(loss)/d(leaf) into the grad buffer of every reachable
// grad-tracked leaf. loss must be scalar.
void backward(const Tensor& loss);

} // namespace imts
