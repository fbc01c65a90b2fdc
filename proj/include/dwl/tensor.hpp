#ifndef DWL_TENSOR_HPP
#define DWL_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dwl/common.hpp"

namespace dwl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

// One recorded operation. Nodes are appended in forward-execution order,
// so reverse insertion order is a valid topological order for backprop.
struct TapeNode {
    std::vector<double> grad;                 // d(root)/d(this), filled by backward
    std::vector<std::shared_ptr<TapeNode>> parents;
    // Propagates this node's grad into the parents' grads.
    std::function<void(const TapeNode&)> backprop;
};

} // namespace detail

/// Dense row-major tensor of 64-bit reals. Values are immutable after
/// construction; copying a Tensor shares the value buffer. A tensor is
/// either a constant (no tape node) or a participant of exactly one tape.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_ ? values_->size() : 0; }
    std::span<const double> values() const;

    /// Number of rows / columns of a rank-2 tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    double at(std::size_t i) const { return (*values_)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*values_)[r * cols() + c]; }

    /// The single value of a size-1 tensor.
    double item() const;

    bool on_tape() const { return node_ != nullptr; }

    /// Gradient buffer filled by Tape::backward. Empty for constants and
    /// before backward has run.
    std::span<const double> grad() const;

    /// Shared handle to the value buffer (kept alive by backward closures).
    std::shared_ptr<const std::vector<double>> shared_buffer() const { return values_; }

private:
    friend class Tape;
    friend Tensor make_op_result(Shape shape, std::vector<double> values,
                                 const char* op,
                                 std::vector<const Tensor*> inputs,
                                 std::function<void(const detail::TapeNode&)> backprop);

    Shape shape_;
    std::shared_ptr<const std::vector<double>> values_;
    std::shared_ptr<detail::TapeNode> node_;
    Tape* tape_ = nullptr;
};

/// Explicit reverse-mode gradient tape scoped to one forward pass.
/// Not thread-safe; a tape and its tensors belong to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a differentiable leaf holding a copy of `values`.
    Tensor leaf(Shape shape, std::vector<double> values);

    /// Accumulates d(root)/d(participant) into every participant's grad.
    /// The root must be a size-1 tensor recorded on this tape. Consumes
    /// the tape: a second call is an error.
    void backward(const Tensor& root);

    bool consumed() const { return consumed_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    friend Tensor make_op_result(Shape, std::vector<double>, const char*,
                                 std::vector<const Tensor*>,
                                 std::function<void(const detail::TapeNode&)>);

    void record(const std::shared_ptr<detail::TapeNode>& node);

    std::vector<std::shared_ptr<detail::TapeNode>> nodes_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Forward ops. No implicit broadcasting anywhere: shapes must match exactly
// except where an op states otherwise. Every op validates that its result is
// finite and records itself when an operand lives on a tape.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise

/// Rank-2 only: [n x k] * [k x m] -> [n x m].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);

/// Row-wise softmax of a rank-2 tensor; each output row sums to 1.
Tensor softmax_rows(const Tensor& x);

/// a*x + b with scalar constants; covers loss scaling and 1-x.
Tensor affine(const Tensor& x, double a, double b);

/// Clamp into [lo, hi]; gradient passes through strictly inside the band.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);            // -> scalar
Tensor mean(const Tensor& x);           // -> scalar
Tensor l1_norm(const Tensor& x);        // sum |x_i| -> scalar
Tensor squared_l2_norm(const Tensor& x); // sum x_i^2 -> scalar

Tensor reshape(const Tensor& x, Shape shape);

/// Tiles a rank-1 vector [m] into [n x m]; the explicit stand-in for
/// broadcast bias addition.
Tensor repeat_rows(const Tensor& v, std::size_t n);

/// Inverted dropout: zeroes entries with probability `rate` and scales
/// the survivors by 1/(1-rate). Identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

} // namespace dwl

#endif
