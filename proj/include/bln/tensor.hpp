#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "bln/errors.hpp"

// Define-by-run tensor engine. A Tape records every operation of one forward
// pass; Tensor is a cheap handle (tape pointer + node id). The tape is
// rebuilt per forward pass and one reverse sweep produces gradients for all
// reachable leaves. Tapes are confined to one thread; independent tapes may
// run concurrently.

namespace bln {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);

class Tape;

struct Tensor {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Shape& shape() const;
    const std::vector<double>& values() const;
    std::size_t size() const;
    double scalar() const;  // requires size() == 1
};

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<std::size_t> inputs;
    // Accumulates this node's grad into its inputs' grads. Empty for leaves.
    std::function<void(Tape&, std::size_t)> backprop;
    std::vector<double> grad;  // allocated lazily during the reverse sweep
};

// Gradients of one scalar loss with respect to every node of its tape.
// Nodes never reached by the sweep report exact zeros.
class GradientMap {
  public:
    GradientMap(std::vector<std::vector<double>> grads, std::vector<std::size_t> sizes)
        : grads_(std::move(grads)), sizes_(std::move(sizes)) {}

    // Gradient of the loss wrt tensor t, always sized like t.
    std::vector<double> at(const Tensor& t) const;
    bool touched(const Tensor& t) const;

  private:
    std::vector<std::vector<double>> grads_;
    std::vector<std::size_t> sizes_;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor leaf(Shape shape, const double* values);
    Tensor scalar_leaf(double v);

    // Reverse sweep from a scalar loss. seed is the gradient of the final
    // objective wrt this loss (1 for a plain backward pass).
    GradientMap backward(const Tensor& loss, double seed = 1.0);

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    std::size_t emplace(Node n);
    Tensor make(Shape shape, std::vector<double> value,
                std::vector<std::size_t> inputs,
                std::function<void(Tape&, std::size_t)> backprop);
    std::vector<double>& grad_buffer(std::size_t id);  // allocates zeros on first use

  private:
    std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

Tensor stop_gradient(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]

// Cross-correlation with zero same-padding, odd kernel sizes.
// x: [N,C,H,W], k: [O,C,kh,kw] -> [N,O,H,W]. Bias is the caller's business.
Tensor conv2d(const Tensor& x, const Tensor& k);

// 2x2 max pooling; odd trailing row/column is dropped. Gradient goes to the
// first (row-major) maximum of each window.
Tensor maxpool2d(const Tensor& x);

Tensor isrlu(const Tensor& x, double alpha);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);   // DomainError on non-positive values
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // DomainError on negative values
Tensor reciprocal(const Tensor& x);  // DomainError on zero

// Broadcasting binary ops (numpy-style trailing alignment). The gradient of
// a broadcast operand is sum-reduced back to the operand's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // DomainError on zero divisor

Tensor scale(const Tensor& x, double c);
Tensor shift(const Tensor& x, double c);

enum class Reduce { sum, mean };
// Reduce over the given axes (removed from the shape); empty set = identity.
Tensor reduce(const Tensor& x, Reduce kind, const std::vector<std::size_t>& axes);
Tensor reduce_all(const Tensor& x, Reduce kind);  // -> scalar

Tensor reshape(const Tensor& x, Shape new_shape);

// Per-row cross-entropy of softmax(logits) against integer labels:
// [N,C] -> [N], numerically stabilized by max subtraction.
Tensor softmax_cross_entropy_per_row(const Tensor& logits,
                                     const std::vector<std::size_t>& labels);
// Mean over rows (the usual scalar loss).
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels);

// Plain-value softmax per row, no tape involvement (for evaluation).
std::vector<double> softmax_rows(const std::vector<double>& logits,
                                 std::size_t rows, std::size_t cols);

}  // namespace bln
