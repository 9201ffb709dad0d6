#pragma once

#include "clens/math/tensor.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace clens::ad {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const MatrixXd& value() const;
  MatrixXd grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Append-only record of primitive operations. Node ids are assigned in
// creation order, so inputs always precede their consumers and a reverse
// sweep over ids is a valid topological order for backpropagation.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(MatrixXd value, bool requires_grad = true);
  Var constant(MatrixXd value) { return leaf(std::move(value), false); }
  // Leaf that refers to `value` without copying; it must outlive the tape.
  Var borrow(const MatrixXd& value, bool requires_grad = true);

  // Records a node whose inputs are `inputs`; the backward rule is attached
  // only when at least one input participates in differentiation.
  Var record(MatrixXd value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(MatrixXd value, std::span<const Var> inputs, BackwardFn backward);

  // Reverse sweep from a scalar root. Gradients from earlier sweeps are
  // cleared first.
  void backward(Var root);

  const MatrixXd& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.value;
  }
  MatrixXd grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the gradient of node `id` (no-op for constants).
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad += delta;
    }
  }

  // Upstream gradient of a node during the backward sweep.
  const MatrixXd& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    MatrixXd value;
    MatrixXd grad;
    BackwardFn backward;
    bool requires_grad = false;
    const MatrixXd* borrowed = nullptr;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const MatrixXd& Var::value() const { return tape->value(id); }
inline MatrixXd Var::grad() const { return tape->grad(id); }

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Adds a 1 x n row vector to every row of `a`.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
Var mul(Var a, Var b);
// Elementwise product with a constant matrix.
Var mul_const(Var a, const MatrixXd& factors);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, double eps);
Var softmax_rows(Var x);
Var transpose(Var a);
Var gather_rows(Var table, std::span<const int> ids);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var vstack(std::span<const Var> parts);
Var sum(Var a);
Var pick(Var a, Eigen::Index row, Eigen::Index col);
// Sum over rows of -log softmax(logits)[row, target]; rows with a negative
// target are skipped.
Var cross_entropy(Var logits, std::span<const int> targets);

// Layout of a batch of equal-length sequences stacked along rows.
struct AttentionLayout {
  Eigen::Index batch = 1;
  Eigen::Index seq_len = 0;
  Eigen::Index n_heads = 1;
  Eigen::Index n_visual = 0;  // visual tokens occupy the first n_visual positions
};

// Post-softmax rescaling of the final attention row of selected heads.
struct LastRowScale {
  std::vector<double> visual_factor;  // per head; 1 leaves the head untouched
  std::vector<double> text_factor;

  bool touches(Eigen::Index head) const {
    return visual_factor[head] != 1.0 || text_factor[head] != 1.0;
  }
};

struct AttentionOutput {
  Var mixed;                           // (batch * seq_len) x d
  std::vector<MatrixXd> probabilities;  // batch * n_heads matrices, index b * n_heads + h
};

// Causally masked multi-head scaled dot-product attention over a stacked
// batch. q, k, v are (batch * seq_len) x d with heads laid out as
// contiguous column blocks. The returned probabilities are after any
// last-row rescaling.
AttentionOutput causal_attention(Var q, Var k, Var v, const AttentionLayout& layout,
                                 const LastRowScale* scale = nullptr, bool keep_probabilities = false);

}  // namespace clens::ad
