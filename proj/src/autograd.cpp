#include "scenegen/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace scenegen::nn {

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, record_, nullptr);
  if (record_) nodes_[v.id].param = &p;
  return v;
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, Var)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a tape that does not record");
  if (nodes_[loss.id].value.size() != 1) throw std::logic_error("backward needs a scalar loss");
  grad(loss).setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, Var{i});
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Tape& tape, Var x, Var w) {
  Matrix out = tape.value(x) * tape.value(w);
  return tape.push(std::move(out), tape.needs_grad(x) || tape.needs_grad(w),
                   [x, w](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
                     if (t.needs_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
                   });
}

Var linear(Tape& tape, Var x, Var w, Var b) {
  Matrix out = tape.value(x) * tape.value(w);
  out.rowwise() += tape.value(b).row(0);
  return tape.push(std::move(out),
                   tape.needs_grad(x) || tape.needs_grad(w) || tape.needs_grad(b),
                   [x, w, b](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
                     if (t.needs_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
                     if (t.needs_grad(b)) t.grad(b) += g.colwise().sum();
                   });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Matrix out = tape.value(a) + tape.value(b);
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(a)) t.grad(a) += g;
                     if (t.needs_grad(b)) t.grad(b) += g;
                   });
}

Var mul(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  Matrix out = tape.value(a).cwiseProduct(tape.value(b));
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
                     if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
                   });
}

Var modulate(Tape& tape, Var x, Var shift, Var scale) {
  require_same_shape(tape.value(x), tape.value(shift), "modulate");
  require_same_shape(tape.value(x), tape.value(scale), "modulate");
  Matrix out = tape.value(x).array() * (1.0 + tape.value(scale).array()) +
               tape.value(shift).array();
  return tape.push(std::move(out),
                   tape.needs_grad(x) || tape.needs_grad(shift) || tape.needs_grad(scale),
                   [x, shift, scale](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(x)) {
                       t.grad(x).array() += g.array() * (1.0 + t.value(scale).array());
                     }
                     if (t.needs_grad(shift)) t.grad(shift) += g;
                     if (t.needs_grad(scale)) t.grad(scale) += g.cwiseProduct(t.value(x));
                   });
}

Var gated_residual(Tape& tape, Var x, Var gate, Var y) {
  require_same_shape(tape.value(x), tape.value(y), "gated_residual");
  require_same_shape(tape.value(x), tape.value(gate), "gated_residual");
  Matrix out = tape.value(x) + tape.value(gate).cwiseProduct(tape.value(y));
  return tape.push(std::move(out),
                   tape.needs_grad(x) || tape.needs_grad(gate) || tape.needs_grad(y),
                   [x, gate, y](Tape& t, Var self) {
                     const Matrix& g = t.grad(self);
                     if (t.needs_grad(x)) t.grad(x) += g;
                     if (t.needs_grad(gate)) t.grad(gate) += g.cwiseProduct(t.value(y));
                     if (t.needs_grad(y)) t.grad(y) += g.cwiseProduct(t.value(gate));
                   });
}

Var layer_norm(Tape& tape, Var x, double eps) {
  const Matrix& in = tape.value(x);
  const Eigen::Index cols = in.cols();
  auto rstd = std::make_shared<Eigen::VectorXd>(in.rows());
  Matrix out(in.rows(), cols);
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    const double s = 1.0 / std::sqrt(var + eps);
    (*rstd)(r) = s;
    out.row(r) = (in.row(r).array() - mean) * s;
  }
  return tape.push(std::move(out), tape.needs_grad(x), [x, rstd](Tape& t, Var self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& dx = t.grad(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double mg = g.row(r).mean();
      const double mgy = g.row(r).dot(y.row(r)) / static_cast<double>(g.cols());
      dx.row(r).array() += (*rstd)(r) * (g.row(r).array() - mg - y.row(r).array() * mgy);
    }
  });
}

Var silu(Tape& tape, Var x) {
  const Matrix& in = tape.value(x);
  Matrix out = in.array() / (1.0 + (-in.array()).exp());
  return tape.push(std::move(out), tape.needs_grad(x), [x](Tape& t, Var self) {
    const auto& xv = t.value(x).array();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-xv).exp());
    t.grad(x).array() += t.grad(self).array() * (s * (1.0 + xv * (1.0 - s)));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Tape& tape, Var x) {
  const Matrix& in = tape.value(x);
  const Eigen::ArrayXXd th = (kGeluC * (in.array() + kGeluA * in.array().cube())).tanh();
  Matrix out = 0.5 * in.array() * (1.0 + th);
  return tape.push(std::move(out), tape.needs_grad(x), [x](Tape& t, Var self) {
    const auto& xv = t.value(x).array();
    const Eigen::ArrayXXd th = (kGeluC * (xv + kGeluA * xv.cube())).tanh();
    const Eigen::ArrayXXd d =
        0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th.square()) * kGeluC * (1.0 + 3.0 * kGeluA * xv.square());
    t.grad(x).array() += t.grad(self).array() * d;
  });
}

Var slice_cols(Tape& tape, Var x, int start, int count) {
  Matrix out = tape.value(x).middleCols(start, count);
  return tape.push(std::move(out), tape.needs_grad(x), [x, start, count](Tape& t, Var self) {
    t.grad(x).middleCols(start, count) += t.grad(self);
  });
}

Var tile_rows(Tape& tape, Var x, int times) {
  const Matrix& in = tape.value(x);
  Matrix out(in.rows() * times, in.cols());
  for (int i = 0; i < times; ++i) out.middleRows(i * in.rows(), in.rows()) = in;
  return tape.push(std::move(out), tape.needs_grad(x), [x, times](Tape& t, Var self) {
    const Matrix& g = t.grad(self);
    Matrix& dx = t.grad(x);
    const Eigen::Index r = dx.rows();
    for (int i = 0; i < times; ++i) dx += g.middleRows(i * r, r);
  });
}

Var concat_rows(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = tape.value(parts[0]).cols();
  bool needs = false;
  for (Var p : parts) {
    if (tape.value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += tape.value(p).rows();
    needs = needs || tape.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, tape.value(p).rows()) = tape.value(p);
    at += tape.value(p).rows();
  }
  return tape.push(std::move(out), needs, [parts](Tape& t, Var self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index r = t.value(p).rows();
      if (t.needs_grad(p)) t.grad(p) += g.middleRows(at, r);
      at += r;
    }
  });
}

namespace {

// Rotates (or inversely rotates) column pairs of `src` into `dst`.
void rotate_pairs(const Matrix& src, Matrix& dst, const RotaryTable& table, int head_dim,
                  bool inverse) {
  const int half = head_dim / 2;
  const Eigen::Index heads = src.cols() / head_dim;
  for (Eigen::Index r = 0; r < src.rows(); ++r) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Eigen::Index base = h * head_dim;
      for (int i = 0; i < half; ++i) {
        const double c = table.cos(r, i);
        const double s = inverse ? -table.sin(r, i) : table.sin(r, i);
        const double x0 = src(r, base + 2 * i);
        const double x1 = src(r, base + 2 * i + 1);
        dst(r, base + 2 * i) += x0 * c - x1 * s;
        dst(r, base + 2 * i + 1) += x0 * s + x1 * c;
      }
    }
  }
}

}  // namespace

Var rotary(Tape& tape, Var x, std::shared_ptr<const RotaryTable> table, int head_dim) {
  const Matrix& in = tape.value(x);
  if (table->cos.rows() != in.rows() || table->cos.cols() != head_dim / 2) {
    throw std::invalid_argument("rotary: table shape mismatch");
  }
  Matrix out = Matrix::Zero(in.rows(), in.cols());
  rotate_pairs(in, out, *table, head_dim, false);
  return tape.push(std::move(out), tape.needs_grad(x), [x, table, head_dim](Tape& t, Var self) {
    rotate_pairs(t.grad(self), t.grad(x), *table, head_dim, true);
  });
}

namespace {

Matrix gather_block(const Matrix& m, const std::vector<int>& rows, Eigen::Index col, Eigen::Index width) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), width);
  for (size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]).segment(col, width);
  return out;
}

void scatter_add_block(Matrix& m, const std::vector<int>& rows, Eigen::Index col, const Matrix& block) {
  for (size_t i = 0; i < rows.size(); ++i) m.row(rows[i]).segment(col, block.cols()) += block.row(i);
}

}  // namespace

Var attention(Tape& tape, Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout,
              int heads) {
  const Matrix& Q = tape.value(q);
  const Matrix& K = tape.value(k);
  const Matrix& V = tape.value(v);
  if (Q.cols() != K.cols() || K.cols() != V.cols() || K.rows() != V.rows() || Q.cols() % heads != 0) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  const Eigen::Index dh = Q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(layout->size() * heads);
  Matrix out = Matrix::Zero(Q.rows(), Q.cols());
  for (const AttentionGroup& g : *layout) {
    for (int h = 0; h < heads; ++h) {
      if (g.queries.empty() || g.keys.empty()) {
        probs->emplace_back();
        continue;
      }
      const Matrix qg = gather_block(Q, g.queries, h * dh, dh);
      const Matrix kg = gather_block(K, g.keys, h * dh, dh);
      const Matrix vg = gather_block(V, g.keys, h * dh, dh);
      Matrix s = (qg * kg.transpose()) * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      const Matrix og = s * vg;
      for (size_t i = 0; i < g.queries.size(); ++i) out.row(g.queries[i]).segment(h * dh, dh) = og.row(i);
      probs->push_back(std::move(s));
    }
  }
  const bool needs = tape.needs_grad(q) || tape.needs_grad(k) || tape.needs_grad(v);
  return tape.push(std::move(out), needs, [q, k, v, layout, heads, probs, dh, scale](Tape& t, Var self) {
    const Matrix& G = t.grad(self);
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    const bool gq = t.needs_grad(q);
    const bool gk = t.needs_grad(k);
    const bool gv = t.needs_grad(v);
    size_t idx = 0;
    for (const AttentionGroup& g : *layout) {
      for (int h = 0; h < heads; ++h, ++idx) {
        const Matrix& p = (*probs)[idx];
        if (p.size() == 0) continue;
        const Matrix dout = gather_block(G, g.queries, h * dh, dh);
        const Matrix vg = gather_block(V, g.keys, h * dh, dh);
        if (gv) scatter_add_block(t.grad(v), g.keys, h * dh, p.transpose() * dout);
        if (!gq && !gk) continue;
        const Matrix dp = dout * vg.transpose();
        Matrix ds = p.cwiseProduct(dp);
        const Eigen::VectorXd row_dot = ds.rowwise().sum();
        ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
        ds *= scale;
        if (gq) {
          const Matrix kg = gather_block(K, g.keys, h * dh, dh);
          scatter_add_block(t.grad(q), g.queries, h * dh, ds * kg);
        }
        if (gk) {
          const Matrix qg = gather_block(Q, g.queries, h * dh, dh);
          scatter_add_block(t.grad(k), g.keys, h * dh, ds.transpose() * qg);
        }
      }
    }
  });
}

Var weighted_mse(Tape& tape, Var pred, const Matrix& target, const Eigen::VectorXd& weights) {
  const Matrix& p = tape.value(pred);
  require_same_shape(p, target, "weighted_mse");
  const double wsum = weights.sum();
  Matrix out(1, 1);
  if (wsum <= 0.0) {
    out(0, 0) = 0.0;
    return tape.push(std::move(out), false, nullptr);
  }
  const double denom = wsum * static_cast<double>(p.cols());
  auto diff = std::make_shared<Matrix>(p - target);
  out(0, 0) = (diff->array().square().rowwise().sum().matrix().cwiseProduct(weights)).sum() / denom;
  return tape.push(std::move(out), tape.needs_grad(pred),
                   [pred, diff, weights, denom](Tape& t, Var self) {
                     const double g = t.grad(self)(0, 0);
                     t.grad(pred) += (2.0 * g / denom) * (weights.asDiagonal() * (*diff));
                   });
}

}  // namespace scenegen::nn
