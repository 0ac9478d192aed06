#include "imts/tensor.hpp"

#include "imts/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace imts {

namespace {

thread_local bool g_grad_enabled = true;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->tracked = requires_grad;
    if (node->tracked) {
        node->grad.assign(node->values.size(), 0.0);
    }
    return node;
}

// Wraps an op result. Provenance is recorded only when grad mode is on and
// some input is tracked; otherwise the result is a plain constant.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorNode&)> backprop) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool tracked = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p && p->tracked) {
                tracked = true;
                break;
            }
        }
    }
    if (tracked) {
        node->tracked = true;
        node->grad.assign(node->values.size(), 0.0);
        node->parents = std::move(parents);
        node->backprop = std::move(backprop);
    }
    return Tensor::wrap(std::move(node));
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": undefined tensor");
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

// Splits a shape into [outer, extent-at-axis, inner] block sizes.
struct AxisBlocks {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisBlocks axis_blocks(const Shape& shape, std::size_t axis) {
    AxisBlocks b;
    for (std::size_t i = 0; i < axis; ++i) b.outer *= shape[i];
    b.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) b.inner *= shape[i];
    return b;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

// ---- Tensor handle ---------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return wrap(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return wrap(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return wrap(make_leaf(Shape{}, std::vector<double>{value}, requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const {
    check_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::size() const {
    check_defined(*this, "size");
    return node_->values.size();
}

std::size_t Tensor::extent(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("extent: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(s));
    }
    return s[axis];
}

std::span<const double> Tensor::data() const {
    check_defined(*this, "data");
    return node_->values;
}

std::span<double> Tensor::mutable_data() {
    check_defined(*this, "mutable_data");
    return node_->values;
}

double Tensor::value() const {
    check_defined(*this, "value");
    if (node_->values.size() != 1) {
        throw ContractError("value: tensor of shape " + shape_to_string(node_->shape) +
                            " is not scalar");
    }
    return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("at: rank mismatch");
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) {
            throw ShapeError("at: index out of range on axis " + std::to_string(axis));
        }
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->values[flat];
}

bool Tensor::requires_grad() const {
    check_defined(*this, "requires_grad");
    return node_->requires_grad;
}

bool Tensor::tracked() const {
    check_defined(*this, "tracked");
    return node_->tracked;
}

std::span<const double> Tensor::grad() const {
    check_defined(*this, "grad");
    if (node_->grad.size() != node_->values.size()) {
        throw ContractError("grad: tensor is not grad-tracked");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    check_defined(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

// ---- arithmetic ------------------------------------------------------------

namespace {

// rhs broadcasting rule shared by add/sub: identical shape or trailing suffix.
void check_suffix_broadcast(const Tensor& lhs, const Tensor& rhs, const char* op) {
    const Shape& a = lhs.shape();
    const Shape& b = rhs.shape();
    if (b.size() > a.size()) {
        throw ShapeError(std::string(op) + ": rhs rank exceeds lhs rank");
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] != a[a.size() - b.size() + i]) {
            throw ShapeError(std::string(op) + ": rhs " + shape_to_string(b) +
                             " is not a trailing suffix of lhs " + shape_to_string(a));
        }
    }
}

Tensor add_impl(const Tensor& lhs, const Tensor& rhs, double rhs_sign, const char* op) {
    check_defined(lhs, op);
    check_defined(rhs, op);
    check_suffix_broadcast(lhs, rhs, op);
    const auto a = lhs.data();
    const auto b = rhs.data();
    const std::size_t bn = std::max<std::size_t>(b.size(), 1);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] + rhs_sign * b[i % bn];
    }
    return make_result(lhs.shape(), std::move(out), {lhs.node_ptr(), rhs.node_ptr()},
                       [rhs_sign](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.tracked) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   pa.grad[i] += self.grad[i];
                               }
                           }
                           if (pb.tracked) {
                               const std::size_t bn = std::max<std::size_t>(pb.grad.size(), 1);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   pb.grad[i % bn] += rhs_sign * self.grad[i];
                               }
                           }
                       });
}

} // namespace

Tensor add(const Tensor& lhs, const Tensor& rhs) { return add_impl(lhs, rhs, 1.0, "add"); }
Tensor sub(const Tensor& lhs, const Tensor& rhs) { return add_impl(lhs, rhs, -1.0, "sub"); }

Tensor mul(const Tensor& lhs, const Tensor& rhs) {
    check_defined(lhs, "mul");
    check_defined(rhs, "mul");
    check_same_shape(lhs, rhs, "mul");
    const auto a = lhs.data();
    const auto b = rhs.data();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return make_result(lhs.shape(), std::move(out), {lhs.node_ptr(), rhs.node_ptr()},
                       [](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.tracked) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   pa.grad[i] += self.grad[i] * pb.values[i];
                               }
                           }
                           if (pb.tracked) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                   pb.grad[i] += self.grad[i] * pa.values[i];
                               }
                           }
                       });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
    check_defined(x, "scale");
    const auto a = x.data();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = factor * a[i];
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [factor](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            p.grad[i] += factor * self.grad[i];
        }
    });
}

Tensor relu(const Tensor& x) {
    check_defined(x, "relu");
    const auto a = x.data();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
        }
    });
}

Tensor abs_val(const Tensor& x) {
    check_defined(x, "abs_val");
    const auto a = x.data();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::fabs(a[i]);
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (p.values[i] > 0.0) {
                p.grad[i] += self.grad[i];
            } else if (p.values[i] < 0.0) {
                p.grad[i] -= self.grad[i];
            }
        }
    });
}

// ---- linear maps and reductions --------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& weight) {
    check_defined(x, "matmul");
    check_defined(weight, "matmul");
    if (weight.rank() != 2) {
        throw ShapeError("matmul: weight must be rank 2, got " + shape_to_string(weight.shape()));
    }
    if (x.rank() == 0) {
        throw ShapeError("matmul: input must have at least one axis");
    }
    const std::size_t m = weight.extent(0);
    const std::size_t n = weight.extent(1);
    if (x.shape().back() != m) {
        throw ShapeError("matmul: last axis of input is " + std::to_string(x.shape().back()) +
                         ", weight expects " + std::to_string(m));
    }
    const std::size_t rows = x.size() / m;
    const auto xd = x.data();
    const auto wd = weight.data();
    std::vector<double> out(rows * n, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * m;
        double* yr = out.data() + r * n;
        for (std::size_t k = 0; k < m; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            const double* wk = wd.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) yr[j] += xv * wk[j];
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = n;
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr(), weight.node_ptr()},
                       [rows, m, n](TensorNode& self) {
                           auto& px = *self.parents[0];
                           auto& pw = *self.parents[1];
                           if (px.tracked) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const double* gy = self.grad.data() + r * n;
                                   double* gx = px.grad.data() + r * m;
                                   for (std::size_t k = 0; k < m; ++k) {
                                       const double* wk = pw.values.data() + k * n;
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) acc += gy[j] * wk[j];
                                       gx[k] += acc;
                                   }
                               }
                           }
                           if (pw.tracked) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const double* gy = self.grad.data() + r * n;
                                   const double* xr = px.values.data() + r * m;
                                   for (std::size_t k = 0; k < m; ++k) {
                                       const double xv = xr[k];
                                       if (xv == 0.0) continue;
                                       double* gw = pw.grad.data() + k * n;
                                       for (std::size_t j = 0; j < n; ++j) gw[j] += xv * gy[j];
                                   }
                               }
                           }
                       });
}

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double total = 0.0;
    for (double v : x.data()) total += v;
    return make_result(Shape{}, {total}, {x.node_ptr()}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.tracked) return;
        const double g = self.grad[0];
        for (double& gp : p.grad) gp += g;
    });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    check_defined(x, "sum_axis");
    if (axis >= x.rank()) {
        throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
    }
    const AxisBlocks b = axis_blocks(x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(b.outer * b.inner, 0.0);
    for (std::size_t o = 0; o < b.outer; ++o) {
        for (std::size_t e = 0; e < b.extent; ++e) {
            const double* src = xd.data() + (o * b.extent + e) * b.inner;
            double* dst = out.data() + o * b.inner;
            for (std::size_t i = 0; i < b.inner; ++i) dst[i] += src[i];
        }
    }
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [b](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t o = 0; o < b.outer; ++o) {
                               const double* g = self.grad.data() + o * b.inner;
                               for (std::size_t e = 0; e < b.extent; ++e) {
                                   double* dst = p.grad.data() + (o * b.extent + e) * b.inner;
                                   for (std::size_t i = 0; i < b.inner; ++i) dst[i] += g[i];
                               }
                           }
                       });
}

// ---- structural ops ---------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x.node_ptr()}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

namespace {

// Decomposition for swapping axes a < b: shape viewed as [O, A, M, B, N].
struct SwapBlocks {
    std::size_t o, a, m, b, n;
};

SwapBlocks swap_blocks(const Shape& shape, std::size_t a, std::size_t b) {
    SwapBlocks s{1, shape[a], 1, shape[b], 1};
    for (std::size_t i = 0; i < a; ++i) s.o *= shape[i];
    for (std::size_t i = a + 1; i < b; ++i) s.m *= shape[i];
    for (std::size_t i = b + 1; i < shape.size(); ++i) s.n *= shape[i];
    return s;
}

void swap_copy(const SwapBlocks& s, const double* src, double* dst, bool accumulate) {
    // dst[o, bv, m, av, n] (+)= src[o, av, m, bv, n]
    for (std::size_t o = 0; o < s.o; ++o) {
        for (std::size_t av = 0; av < s.a; ++av) {
            for (std::size_t m = 0; m < s.m; ++m) {
                for (std::size_t bv = 0; bv < s.b; ++bv) {
                    const double* sp = src + (((o * s.a + av) * s.m + m) * s.b + bv) * s.n;
                    double* dp = dst + (((o * s.b + bv) * s.m + m) * s.a + av) * s.n;
                    if (accumulate) {
                        for (std::size_t i = 0; i < s.n; ++i) dp[i] += sp[i];
                    } else {
                        for (std::size_t i = 0; i < s.n; ++i) dp[i] = sp[i];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b) {
    check_defined(x, "swap_axes");
    if (a >= x.rank() || b >= x.rank()) {
        throw ShapeError("swap_axes: axis out of range for " + shape_to_string(x.shape()));
    }
    if (a == b) {
        return reshape(x, x.shape());
    }
    if (a > b) std::swap(a, b);
    const SwapBlocks blocks = swap_blocks(x.shape(), a, b);
    std::vector<double> out(x.size());
    swap_copy(blocks, x.data().data(), out.data(), false);
    Shape out_shape = x.shape();
    std::swap(out_shape[a], out_shape[b]);
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [blocks](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           // The inverse swap has a and b extents exchanged.
                           SwapBlocks inv = blocks;
                           std::swap(inv.a, inv.b);
                           swap_copy(inv, self.grad.data(), p.grad.data(), true);
                       });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t count) {
    check_defined(x, "slice_last");
    if (x.rank() == 0) {
        throw ShapeError("slice_last: scalar input");
    }
    const std::size_t last = x.shape().back();
    if (start + count > last) {
        throw ShapeError("slice_last: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds extent " +
                         std::to_string(last));
    }
    const std::size_t rows = x.size() / std::max<std::size_t>(last, 1);
    const auto xd = x.data();
    std::vector<double> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xd.data() + r * last + start;
        std::copy(src, src + count, out.data() + r * count);
    }
    Shape out_shape = x.shape();
    out_shape.back() = count;
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [rows, last, start, count](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* g = self.grad.data() + r * count;
                               double* dst = p.grad.data() + r * last + start;
                               for (std::size_t i = 0; i < count; ++i) dst[i] += g[i];
                           }
                       });
}

Tensor concat_last(const Tensor& lhs, const Tensor& rhs) {
    check_defined(lhs, "concat_last");
    check_defined(rhs, "concat_last");
    if (lhs.rank() == 0 || lhs.rank() != rhs.rank()) {
        throw ShapeError("concat_last: rank mismatch");
    }
    for (std::size_t i = 0; i + 1 < lhs.rank(); ++i) {
        if (lhs.extent(i) != rhs.extent(i)) {
            throw ShapeError("concat_last: leading extents differ at axis " + std::to_string(i));
        }
    }
    const std::size_t la = lhs.shape().back();
    const std::size_t lb = rhs.shape().back();
    const std::size_t rows = lhs.size() / std::max<std::size_t>(la, 1);
    const auto a = lhs.data();
    const auto b = rhs.data();
    std::vector<double> out(rows * (la + lb));
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(a.data() + r * la, a.data() + (r + 1) * la, out.data() + r * (la + lb));
        std::copy(b.data() + r * lb, b.data() + (r + 1) * lb, out.data() + r * (la + lb) + la);
    }
    Shape out_shape = lhs.shape();
    out_shape.back() = la + lb;
    return make_result(std::move(out_shape), std::move(out),
                       {lhs.node_ptr(), rhs.node_ptr()},
                       [rows, la, lb](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           const std::size_t lc = la + lb;
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* g = self.grad.data() + r * lc;
                               if (pa.tracked) {
                                   double* dst = pa.grad.data() + r * la;
                                   for (std::size_t i = 0; i < la; ++i) dst[i] += g[i];
                               }
                               if (pb.tracked) {
                                   double* dst = pb.grad.data() + r * lb;
                                   for (std::size_t i = 0; i < lb; ++i) dst[i] += g[la + i];
                               }
                           }
                       });
}

Tensor resize_last(const Tensor& x, std::size_t extent) {
    check_defined(x, "resize_last");
    if (x.rank() == 0) {
        throw ShapeError("resize_last: scalar input");
    }
    const std::size_t last = x.shape().back();
    if (extent == last) {
        return reshape(x, x.shape());
    }
    const std::size_t rows = x.size() / std::max<std::size_t>(last, 1);
    const std::size_t keep = std::min(last, extent);
    const auto xd = x.data();
    std::vector<double> out(rows * extent, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(xd.data() + r * last, xd.data() + r * last + keep, out.data() + r * extent);
    }
    Shape out_shape = x.shape();
    out_shape.back() = extent;
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [rows, last, extent, keep](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* g = self.grad.data() + r * extent;
                               double* dst = p.grad.data() + r * last;
                               for (std::size_t i = 0; i < keep; ++i) dst[i] += g[i];
                           }
                       });
}

Tensor select_axis(const Tensor& x, std::size_t axis, std::size_t index) {
    check_defined(x, "select_axis");
    if (axis >= x.rank()) {
        throw ShapeError("select_axis: axis " + std::to_string(axis) + " out of range");
    }
    if (index >= x.extent(axis)) {
        throw ShapeError("select_axis: index " + std::to_string(index) +
                         " out of range on axis " + std::to_string(axis));
    }
    const AxisBlocks b = axis_blocks(x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(b.outer * b.inner);
    for (std::size_t o = 0; o < b.outer; ++o) {
        const double* src = xd.data() + (o * b.extent + index) * b.inner;
        std::copy(src, src + b.inner, out.data() + o * b.inner);
    }
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [b, index](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t o = 0; o < b.outer; ++o) {
                               const double* g = self.grad.data() + o * b.inner;
                               double* dst = p.grad.data() + (o * b.extent + index) * b.inner;
                               for (std::size_t i = 0; i < b.inner; ++i) dst[i] += g[i];
                           }
                       });
}

Tensor stack_axis(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("stack_axis: no tensors to stack");
    }
    const Shape& base = parts[0].shape();
    if (axis > base.size()) {
        throw ShapeError("stack_axis: axis " + std::to_string(axis) + " out of range");
    }
    for (const Tensor& t : parts) {
        check_defined(t, "stack_axis");
        if (t.shape() != base) {
            throw ShapeError("stack_axis: mismatched part shapes " + shape_to_string(base) +
                             " vs " + shape_to_string(t.shape()));
        }
    }
    Shape out_shape = base;
    out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), parts.size());
    const AxisBlocks b = axis_blocks(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (std::size_t e = 0; e < parts.size(); ++e) {
        const auto pd = parts[e].data();
        for (std::size_t o = 0; o < b.outer; ++o) {
            std::copy(pd.data() + o * b.inner, pd.data() + (o + 1) * b.inner,
                      out.data() + (o * b.extent + e) * b.inner);
        }
        parents.push_back(parts[e].node_ptr());
    }
    return make_result(std::move(out_shape), std::move(out), std::move(parents),
                       [b](TensorNode& self) {
                           for (std::size_t e = 0; e < self.parents.size(); ++e) {
                               auto& p = *self.parents[e];
                               if (!p.tracked) continue;
                               for (std::size_t o = 0; o < b.outer; ++o) {
                                   const double* g =
                                       self.grad.data() + (o * b.extent + e) * b.inner;
                                   double* dst = p.grad.data() + o * b.inner;
                                   for (std::size_t i = 0; i < b.inner; ++i) dst[i] += g[i];
                               }
                           }
                       });
}

Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t count) {
    check_defined(x, "repeat_axis");
    if (axis > x.rank()) {
        throw ShapeError("repeat_axis: axis " + std::to_string(axis) + " out of range");
    }
    if (count == 0) {
        throw ShapeError("repeat_axis: count must be positive");
    }
    Shape out_shape = x.shape();
    out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
    const AxisBlocks b = axis_blocks(out_shape, axis);
    const auto xd = x.data();
    std::vector<double> out(shape_numel(out_shape));
    for (std::size_t o = 0; o < b.outer; ++o) {
        for (std::size_t e = 0; e < count; ++e) {
            std::copy(xd.data() + o * b.inner, xd.data() + (o + 1) * b.inner,
                      out.data() + (o * count + e) * b.inner);
        }
    }
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [b, count](TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t o = 0; o < b.outer; ++o) {
                               double* dst = p.grad.data() + o * b.inner;
                               for (std::size_t e = 0; e < count; ++e) {
                                   const double* g = self.grad.data() + (o * count + e) * b.inner;
                                   for (std::size_t i = 0; i < b.inner; ++i) dst[i] += g[i];
                               }
                           }
                       });
}

// ---- normalization and softmax ----------------------------------------------

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    check_defined(x, "rms_norm");
    check_defined(gain, "rms_norm");
    if (x.rank() == 0) {
        throw ShapeError("rms_norm: scalar input");
    }
    if (gain.rank() != 1 || gain.extent(0) != x.shape().back()) {
        throw ShapeError("rms_norm: gain " + shape_to_string(gain.shape()) +
                         " does not match last axis of " + shape_to_string(x.shape()));
    }
    if (eps < 0.0) {
        throw ContractError("rms_norm: negative epsilon");
    }
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    const auto xd = x.data();
    const auto gd = gain.data();
    std::vector<double> out(x.size());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mean_sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean_sq += xr[i] * xr[i];
        mean_sq /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(mean_sq + eps);
        inv_rms[r] = inv;
        double* yr = out.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) yr[i] = gd[i] * xr[i] * inv;
    }
    return make_result(x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr()},
                       [rows, d, inv_rms = std::move(inv_rms)](TensorNode& self) {
                           auto& px = *self.parents[0];
                           auto& pg = *self.parents[1];
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* xr = px.values.data() + r * d;
                               const double* gy = self.grad.data() + r * d;
                               const double inv = inv_rms[r];
                               if (px.tracked) {
                                   double weighted = 0.0;
                                   for (std::size_t i = 0; i < d; ++i) {
                                       weighted += gy[i] * pg.values[i] * xr[i];
                                   }
                                   const double shrink =
                                       weighted * inv * inv * inv / static_cast<double>(d);
                                   double* gx = px.grad.data() + r * d;
                                   for (std::size_t i = 0; i < d; ++i) {
                                       gx[i] += gy[i] * pg.values[i] * inv - xr[i] * shrink;
                                   }
                               }
                               if (pg.tracked) {
                                   for (std::size_t i = 0; i < d; ++i) {
                                       pg.grad[i] += gy[i] * xr[i] * inv;
                                   }
                               }
                           }
                       });
}

Tensor masked_softmax_lastdim(const Tensor& x, std::span<const std::uint8_t> mask,
                              bool zero_empty_rows) {
    check_defined(x, "masked_softmax");
    if (x.rank() == 0) {
        throw ShapeError("masked_softmax: scalar input");
    }
    if (mask.size() != x.size()) {
        throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " does not match tensor size " + std::to_string(x.size()));
    }
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / std::max<std::size_t>(n, 1);
    const auto xd = x.data();
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * n;
        const std::uint8_t* mr = mask.data() + r * n;
        double max_val = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (mr[i] && xr[i] > max_val) max_val = xr[i];
        }
        if (max_val == -std::numeric_limits<double>::infinity()) {
            if (!zero_empty_rows) {
                throw ContractError("masked_softmax: empty support (all entries masked)");
            }
            continue; // row stays all-zero
        }
        double denom = 0.0;
        double* yr = out.data() + r * n;
        for (std::size_t i = 0; i < n; ++i) {
            if (mr[i]) {
                yr[i] = std::exp(xr[i] - max_val);
                denom += yr[i];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (mr[i]) yr[i] /= denom;
        }
    }
    return make_result(x.shape(), std::move(out), {x.node_ptr()},
                       [rows, n, mask = std::vector<std::uint8_t>(mask.begin(), mask.end())](
                           TensorNode& self) {
                           auto& p = *self.parents[0];
                           if (!p.tracked) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* s = self.values.data() + r * n;
                               const double* gy = self.grad.data() + r * n;
                               const std::uint8_t* mr = mask.data() + r * n;
                               double dot = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                   if (mr[i]) dot += s[i] * gy[i];
                               }
                               double* gx = p.grad.data() + r * n;
                               for (std::size_t i = 0; i < n; ++i) {
                                   if (mr[i]) gx[i] += s[i] * (gy[i] - dot);
                               }
                           }
                       });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
    if (x.rank() != 1) {
        throw ShapeError("masked_softmax: expected a vector, got " + shape_to_string(x.shape()));
    }
    return masked_softmax_lastdim(x, mask, false);
}

// ---- backward pass ------------------------------------------------------------

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_to_string(loss.shape()));
    }
    TensorNode* root = loss.node();
    if (!root->tracked) {
        return; // no grad-tracked leaves reachable; all leaf grads stay zero
    }
    // Iterative post-order DFS so deep graphs cannot overflow the call stack.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        bool descended = false;
        while (next_parent < node->parents.size()) {
            TensorNode* parent = node->parents[next_parent++].get();
            if (parent && parent->tracked && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next_parent >= node->parents.size()) {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop) {
            node->backprop(*node);
        }
    }
}

} // namespace imts
