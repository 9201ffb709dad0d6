#include "clens/math/autodiff.hpp"

#include "clens/math/functions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace clens::ad {

Var Tape::leaf(MatrixXd value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), MatrixXd(), nullptr, requires_grad});
  return Var{this, nodes_.size() - 1};
}

Var Tape::borrow(const MatrixXd& value, bool requires_grad) {
  nodes_.push_back(Node{MatrixXd(), MatrixXd(), nullptr, requires_grad, &value});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(MatrixXd value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(MatrixXd value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw std::invalid_argument("autodiff: input recorded on a different tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), MatrixXd(), needs ? std::move(backward) : nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

MatrixXd Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) return MatrixXd::Zero(value(id).rows(), value(id).cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
  const MatrixXd& root_value = value(root.id);
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + std::to_string(root_value.rows()) + "x" +
                                std::to_string(root_value.cols()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  visits_ = 0;
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = MatrixXd::Ones(1, 1);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    ++visits_;
    if (n.backward) n.backward(*this, id);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  MatrixXd out = clens::matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const MatrixXd& g = t.upstream(self);
    if (t.requires_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  MatrixXd out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.upstream(self));
    t.accumulate(b.id, t.upstream(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  MatrixXd out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.upstream(self));
    t.accumulate(b.id, -t.upstream(self));
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: expected 1 x cols row vector");
  MatrixXd out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.upstream(self));
    if (t.requires_grad(row.id)) t.accumulate(row.id, t.upstream(self).colwise().sum());
  });
}

Var scale(Var a, double factor) {
  MatrixXd out = a.value() * factor;
  return a.tape->record(std::move(out), {a},
                        [a, factor](Tape& t, std::size_t self) { t.accumulate(a.id, t.upstream(self) * factor); });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  MatrixXd out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const MatrixXd& g = t.upstream(self);
    if (t.requires_grad(a.id)) t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

Var mul_const(Var a, const MatrixXd& factors) {
  if (factors.rows() != a.rows() || factors.cols() != a.cols()) throw std::invalid_argument("mul_const: shape mismatch");
  MatrixXd out = a.value().cwiseProduct(factors);
  return a.tape->record(std::move(out), {a}, [a, factors](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.upstream(self).cwiseProduct(factors));
  });
}

Var gelu(Var a) {
  MatrixXd out = clens::gelu(a.value());
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const MatrixXd d = t.value(a.id).unaryExpr([](double v) { return gelu_derivative(v); });
    t.accumulate(a.id, t.upstream(self).cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw std::invalid_argument("layer_norm: gain must be 1 x cols");
  const MatrixXd& xv = x.value();
  const Eigen::Index n = xv.cols();
  MatrixXd normed(xv.rows(), n);
  VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).sum() / static_cast<double>(n);
    const auto centered = (xv.row(r).array() - mean).eval();
    const double var = centered.square().sum() / static_cast<double>(n);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normed.row(r) = centered * inv_std(r);
  }
  MatrixXd out = normed.array().rowwise() * gain.value().row(0).array();
  return x.tape->record(std::move(out), {x, gain}, [x, gain, normed, inv_std](Tape& t, std::size_t self) {
    const MatrixXd& g = t.upstream(self);
    if (t.requires_grad(gain.id)) t.accumulate(gain.id, g.cwiseProduct(normed).colwise().sum());
    if (t.requires_grad(x.id)) {
      const double n = static_cast<double>(normed.cols());
      const MatrixXd gn = g.array().rowwise() * t.value(gain.id).row(0).array();
      MatrixXd dx(gn.rows(), gn.cols());
      for (Eigen::Index r = 0; r < gn.rows(); ++r) {
        const double mean_g = gn.row(r).sum() / n;
        const double mean_gx = gn.row(r).dot(normed.row(r)) / n;
        dx.row(r) = inv_std(r) * (gn.row(r).array() - mean_g - normed.row(r).array() * mean_gx);
      }
      t.accumulate(x.id, dx);
    }
  });
}

Var softmax_rows(Var x) {
  MatrixXd out = clens::softmax_rows(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const MatrixXd& p = t.value(self);
    const MatrixXd& g = t.upstream(self);
    const VectorXd dots = g.cwiseProduct(p).rowwise().sum();
    t.accumulate(x.id, p.cwiseProduct(g.colwise() - dots));
  });
}

Var transpose(Var a) {
  MatrixXd out = a.value().transpose();
  return a.tape->record(std::move(out), {a},
                        [a](Tape& t, std::size_t self) { t.accumulate(a.id, t.upstream(self).transpose()); });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const MatrixXd& tv = table.value();
  MatrixXd out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, std::size_t self) {
    const MatrixXd& g = t.upstream(self);
    MatrixXd d = MatrixXd::Zero(t.value(table.id).rows(), g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(table.id, d);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows: range outside tensor");
  MatrixXd out = a.value().middleRows(start, count);
  return a.tape->record(std::move(out), {a}, [a, start, count](Tape& t, std::size_t self) {
    MatrixXd d = MatrixXd::Zero(t.value(a.id).rows(), t.value(a.id).cols());
    d.middleRows(start, count) = t.upstream(self);
    t.accumulate(a.id, d);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols: range outside tensor");
  MatrixXd out = a.value().middleCols(start, count);
  return a.tape->record(std::move(out), {a}, [a, start, count](Tape& t, std::size_t self) {
    MatrixXd d = MatrixXd::Zero(t.value(a.id).rows(), t.value(a.id).cols());
    d.middleCols(start, count) = t.upstream(self);
    t.accumulate(a.id, d);
  });
}

Var vstack(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vstack: column mismatch");
    rows += p.rows();
  }
  MatrixXd out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().tape->record(std::move(out), parts, [inputs](Tape& t, std::size_t self) {
    const MatrixXd& g = t.upstream(self);
    Eigen::Index off = 0;
    for (const Var& p : inputs) {
      const Eigen::Index r = t.value(p.id).rows();
      if (t.requires_grad(p.id)) t.accumulate(p.id, g.middleRows(off, r));
      off += r;
    }
  });
}

Var sum(Var a) {
  MatrixXd out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const MatrixXd& v = t.value(a.id);
    t.accumulate(a.id, MatrixXd::Constant(v.rows(), v.cols(), t.upstream(self)(0, 0)));
  });
}

Var pick(Var a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || row >= a.rows() || col < 0 || col >= a.cols()) throw std::out_of_range("pick: index outside tensor");
  MatrixXd out(1, 1);
  out(0, 0) = a.value()(row, col);
  return a.tape->record(std::move(out), {a}, [a, row, col](Tape& t, std::size_t self) {
    const MatrixXd& v = t.value(a.id);
    MatrixXd d = MatrixXd::Zero(v.rows(), v.cols());
    d(row, col) = t.upstream(self)(0, 0);
    t.accumulate(a.id, d);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const MatrixXd& lv = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) {
    throw std::invalid_argument("cross_entropy: one target per row required");
  }
  const MatrixXd log_p = log_softmax_rows(lv);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    if (targets[r] >= lv.cols()) throw std::out_of_range("cross_entropy: target outside vocabulary");
    total -= log_p(static_cast<Eigen::Index>(r), targets[r]);
  }
  MatrixXd out(1, 1);
  out(0, 0) = total;
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape->record(std::move(out), {logits}, [logits, log_p, tgt = std::move(tgt)](Tape& t, std::size_t self) {
    const double g = t.upstream(self)(0, 0);
    MatrixXd d = MatrixXd::Zero(log_p.rows(), log_p.cols());
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      if (tgt[r] < 0) continue;
      const auto row = static_cast<Eigen::Index>(r);
      d.row(row) = log_p.row(row).array().exp() * g;
      d(row, tgt[r]) -= g;
    }
    t.accumulate(logits.id, d);
  });
}

AttentionOutput causal_attention(Var q, Var k, Var v, const AttentionLayout& layout, const LastRowScale* scale,
                                 bool keep_probabilities) {
  const Eigen::Index T = layout.seq_len;
  const Eigen::Index H = layout.n_heads;
  const Eigen::Index d = q.cols();
  if (q.rows() != layout.batch * T || k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != d ||
      v.cols() != d) {
    throw std::invalid_argument("causal_attention: q/k/v shapes inconsistent with layout");
  }
  if (d % H != 0) throw std::invalid_argument("causal_attention: width not divisible by head count");
  if (scale && (static_cast<Eigen::Index>(scale->visual_factor.size()) != H ||
                static_cast<Eigen::Index>(scale->text_factor.size()) != H)) {
    throw std::invalid_argument("causal_attention: scale needs one factor per head");
  }
  const Eigen::Index dh = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // probs holds the pre-rescale softmax output, mixed the rescaled weights.
  std::vector<MatrixXd> probs(static_cast<std::size_t>(layout.batch * H));
  std::vector<MatrixXd> mixed_weights(probs.size());
  MatrixXd out(q.rows(), d);
  const MatrixXd& qv = q.value();
  const MatrixXd& kv = k.value();
  const MatrixXd& vv = v.value();
  for (Eigen::Index b = 0; b < layout.batch; ++b) {
    for (Eigen::Index h = 0; h < H; ++h) {
      const auto qb = qv.block(b * T, h * dh, T, dh);
      const auto kb = kv.block(b * T, h * dh, T, dh);
      MatrixXd scores = (qb * kb.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < T; ++i) {
        for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = neg_inf;
      }
      MatrixXd p = clens::softmax_rows(scores);
      MatrixXd w = p;
      if (scale && scale->touches(h)) {
        const Eigen::Index last = T - 1;
        for (Eigen::Index j = 0; j < T; ++j) {
          w(last, j) *= j < layout.n_visual ? scale->visual_factor[h] : scale->text_factor[h];
        }
      }
      out.block(b * T, h * dh, T, dh) = w * vv.block(b * T, h * dh, T, dh);
      const auto slot = static_cast<std::size_t>(b * H + h);
      probs[slot] = std::move(p);
      mixed_weights[slot] = std::move(w);
    }
  }

  std::vector<MatrixXd> kept;
  if (keep_probabilities) kept = mixed_weights;

  std::optional<LastRowScale> scale_copy;
  if (scale) scale_copy = *scale;
  Var mixed = q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, layout, dh, inv_sqrt, probs = std::move(probs), mixed_weights = std::move(mixed_weights),
       scale_copy = std::move(scale_copy)](Tape& t, std::size_t self) {
        const Eigen::Index T = layout.seq_len;
        const Eigen::Index H = layout.n_heads;
        const MatrixXd& g = t.upstream(self);
        const MatrixXd& qv = t.value(q.id);
        const MatrixXd& kv = t.value(k.id);
        const MatrixXd& vv = t.value(v.id);
        MatrixXd dq = MatrixXd::Zero(qv.rows(), qv.cols());
        MatrixXd dk = MatrixXd::Zero(kv.rows(), kv.cols());
        MatrixXd dv = MatrixXd::Zero(vv.rows(), vv.cols());
        for (Eigen::Index b = 0; b < layout.batch; ++b) {
          for (Eigen::Index h = 0; h < H; ++h) {
            const auto slot = static_cast<std::size_t>(b * H + h);
            const MatrixXd& p = probs[slot];
            const MatrixXd& w = mixed_weights[slot];
            const auto gb = g.block(b * T, h * dh, T, dh);
            MatrixXd dw = gb * vv.block(b * T, h * dh, T, dh).transpose();
            dv.block(b * T, h * dh, T, dh) = w.transpose() * gb;
            if (scale_copy && scale_copy->touches(h)) {
              const Eigen::Index last = T - 1;
              for (Eigen::Index j = 0; j < T; ++j) {
                dw(last, j) *= j < layout.n_visual ? scale_copy->visual_factor[h] : scale_copy->text_factor[h];
              }
            }
            const VectorXd dots = dw.cwiseProduct(p).rowwise().sum();
            const MatrixXd ds = p.cwiseProduct(dw.colwise() - dots) * inv_sqrt;
            dq.block(b * T, h * dh, T, dh) = ds * kv.block(b * T, h * dh, T, dh);
            dk.block(b * T, h * dh, T, dh) = ds.transpose() * qv.block(b * T, h * dh, T, dh);
          }
        }
        t.accumulate(q.id, dq);
        t.accumulate(k.id, dk);
        t.accumulate(v.id, dv);
      });
  return AttentionOutput{mixed, std::move(kept)};
}

}  // namespace clens::ad
