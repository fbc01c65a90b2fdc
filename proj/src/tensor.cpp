#include "dwl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace dwl {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void check_finite(const char* op, const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string("op '") + op + "' produced non-finite value " +
                               format_double(values[i]) + " at flat index " + std::to_string(i));
        }
    }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " implies " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    shape_ = std::move(shape);
    values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, {v}); }

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

std::span<const double> Tensor::values() const {
    if (!values_) return {};
    return {values_->data(), values_->size()};
}

std::size_t Tensor::rows() const {
    require_rank2("rows", *this);
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_rank2("cols", *this);
    return shape_[1];
}

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
    }
    return (*values_)[0];
}

std::span<const double> Tensor::grad() const {
    if (!node_) return {};
    return {node_->grad.data(), node_->grad.size()};
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::record(const std::shared_ptr<detail::TapeNode>& node) {
    nodes_.push_back(node);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    check_finite("leaf", *t.values_);
    t.node_ = std::make_shared<detail::TapeNode>();
    t.node_->grad.assign(t.size(), 0.0);
    t.tape_ = this;
    record(t.node_);
    return t;
}

void Tape::backward(const Tensor& root) {
    if (consumed_) throw Error("backward: tape already consumed");
    if (!root.node_ || root.tape_ != this) {
        throw Error("backward: root tensor is not recorded on this tape");
    }
    if (root.size() != 1) {
        throw ShapeError("backward: root must be scalar, got shape " + shape_str(root.shape()));
    }
    consumed_ = true;

    std::size_t root_index = nodes_.size();
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i] == root.node_) {
            root_index = i;
            break;
        }
    }
    root.node_->grad[0] = 1.0;
    // Reverse insertion order is a topological order: parents always precede.
    for (std::size_t i = root_index + 1; i-- > 0;) {
        const auto& node = nodes_[i];
        if (node->backprop) node->backprop(*node);
    }
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> values, const char* op,
                      std::vector<const Tensor*> inputs,
                      std::function<void(const detail::TapeNode&)> backprop) {
    check_finite(op, values);
    Tape* tape = nullptr;
    for (const Tensor* in : inputs) {
        if (!in->node_) continue;
        if (tape && tape != in->tape_) {
            throw Error(std::string(op) + ": operands belong to different tapes");
        }
        tape = in->tape_;
    }
    Tensor out(std::move(shape), std::move(values));
    if (!tape) return out; // pure constant computation, nothing to record

    auto node = std::make_shared<detail::TapeNode>();
    node->grad.assign(out.size(), 0.0);
    node->parents.reserve(inputs.size());
    for (const Tensor* in : inputs) node->parents.push_back(in->node_); // nullptr for constants
    node->backprop = std::move(backprop);
    out.node_ = node;
    out.tape_ = tape;
    tape->record(node);
    return out;
}

namespace {

using detail::TapeNode;

// Shares the operand's buffer with the backward closure so the forward
// values stay alive even if the operand tensor is destroyed.
std::shared_ptr<const std::vector<double>> share_values(const Tensor& t) {
    return t.shared_buffer();
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return make_op_result(a.shape(), std::move(out), "add", {&a, &b}, [](const TapeNode& self) {
        for (int k = 0; k < 2; ++k) {
            if (const auto& p = self.parents[k]) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return make_op_result(a.shape(), std::move(out), "sub", {&a, &b}, [](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
        if (const auto& p = self.parents[1]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    auto sa = share_values(a), sb = share_values(b);
    return make_op_result(a.shape(), std::move(out), "mul", {&a, &b},
                          [sa, sb](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * (*sb)[i];
        }
        if (const auto& p = self.parents[1]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * (*sa)[i];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m, 0.0);
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * vb[p * m + j];
        }
    }
    auto sa = share_values(a), sb = share_values(b);
    return make_op_result({n, m}, std::move(out), "matmul", {&a, &b},
                          [sa, sb, n, k, m](const TapeNode& self) {
        if (const auto& pa = self.parents[0]) { // dA = G * B^T
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = self.grad[i * m + j];
                    for (std::size_t p = 0; p < k; ++p) pa->grad[i * k + p] += g * (*sb)[p * m + j];
                }
        }
        if (const auto& pb = self.parents[1]) { // dB = A^T * G
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = (*sa)[i * k + p];
                    for (std::size_t j = 0; j < m; ++j) pb->grad[p * m + j] += av * self.grad[i * m + j];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] > 0.0 ? vx[i] : 0.0;
    auto sx = share_values(x);
    return make_op_result(x.shape(), std::move(out), "relu", {&x}, [sx](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if ((*sx)[i] > 0.0) p->grad[i] += self.grad[i];
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = vx[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    auto sy = std::make_shared<const std::vector<double>>(out);
    return make_op_result(x.shape(), std::move(out), "sigmoid", {&x}, [sy](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = (*sy)[i];
                p->grad[i] += self.grad[i] * y * (1.0 - y);
            }
        }
    });
}

Tensor log(const Tensor& x) {
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(vx[i]);
    auto sx = share_values(x);
    return make_op_result(x.shape(), std::move(out), "log", {&x}, [sx](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] / (*sx)[i];
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2("softmax_rows", x);
    const std::size_t n = x.rows(), m = x.cols();
    if (m == 0) throw ShapeError("softmax_rows: zero-width rows");
    std::vector<double> out(n * m);
    auto vx = x.values();
    for (std::size_t i = 0; i < n; ++i) {
        double hi = vx[i * m];
        for (std::size_t j = 1; j < m; ++j) hi = std::max(hi, vx[i * m + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] = std::exp(vx[i * m + j] - hi);
            z += out[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    auto sy = std::make_shared<const std::vector<double>>(out);
    return make_op_result(x.shape(), std::move(out), "softmax_rows", {&x},
                          [sy, n, m](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * (*sy)[i * m + j];
                for (std::size_t j = 0; j < m; ++j) {
                    p->grad[i * m + j] += (*sy)[i * m + j] * (self.grad[i * m + j] - dot);
                }
            }
        }
    });
}

Tensor affine(const Tensor& x, double a, double b) {
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * vx[i] + b;
    return make_op_result(x.shape(), std::move(out), "affine", {&x}, [a](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += a * self.grad[i];
        }
    });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo < hi)) throw Error("clamp: lo must be < hi");
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(vx[i], lo), hi);
    auto sx = share_values(x);
    return make_op_result(x.shape(), std::move(out), "clamp", {&x},
                          [sx, lo, hi](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if ((*sx)[i] > lo && (*sx)[i] < hi) p->grad[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    auto vx = x.values();
    double acc = std::accumulate(vx.begin(), vx.end(), 0.0);
    return make_op_result({}, {acc}, "sum", {&x}, [](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (double& g : p->grad) g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean: empty tensor");
    auto vx = x.values();
    double acc = std::accumulate(vx.begin(), vx.end(), 0.0) / static_cast<double>(x.size());
    const double inv = 1.0 / static_cast<double>(x.size());
    return make_op_result({}, {acc}, "mean", {&x}, [inv](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (double& g : p->grad) g += self.grad[0] * inv;
        }
    });
}

Tensor l1_norm(const Tensor& x) {
    auto vx = x.values();
    double acc = 0.0;
    for (double v : vx) acc += std::abs(v);
    auto sx = share_values(x);
    return make_op_result({}, {acc}, "l1_norm", {&x}, [sx](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < p->grad.size(); ++i) {
                const double v = (*sx)[i];
                if (v > 0.0) p->grad[i] += self.grad[0];
                else if (v < 0.0) p->grad[i] -= self.grad[0];
            }
        }
    });
}

Tensor squared_l2_norm(const Tensor& x) {
    auto vx = x.values();
    double acc = 0.0;
    for (double v : vx) acc += v * v;
    auto sx = share_values(x);
    return make_op_result({}, {acc}, "squared_l2_norm", {&x}, [sx](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < p->grad.size(); ++i)
                p->grad[i] += 2.0 * (*sx)[i] * self.grad[0];
        }
    });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op_result(std::move(shape), std::move(out), "reshape", {&x},
                          [](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

Tensor repeat_rows(const Tensor& v, std::size_t n) {
    if (v.rank() != 1) {
        throw ShapeError("repeat_rows: expected rank-1 tensor, got " + shape_str(v.shape()));
    }
    const std::size_t m = v.size();
    std::vector<double> out(n * m);
    auto vv = v.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = vv[j];
    return make_op_result({n, m}, std::move(out), "repeat_rows", {&v},
                          [n, m](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) p->grad[j] += self.grad[i * m + j];
        }
    });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw Error("dropout: rate must be in [0,1), got " + format_double(rate));
    }
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    auto vx = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = unit(rng) < rate ? 0.0 : 1.0 / keep;
        out[i] = vx[i] * (*mask)[i];
    }
    return make_op_result(x.shape(), std::move(out), "dropout", {&x},
                          [mask](const TapeNode& self) {
        if (const auto& p = self.parents[0]) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * (*mask)[i];
        }
    });
}

} // namespace dwl
