#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

// Minimal reverse-mode differentiation over row-major matrices. Rows are tokens,
// columns are features. Only the operations the denoiser needs are provided.
namespace scenegen::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var param(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Lazily zero-initialised gradient buffer.
  Matrix& grad(Var v);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and accumulates into parameters.
  void backward(Var loss);

  // Registers a node; `backward` reads grad(self) and accumulates into its inputs.
  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, Var self)> backward);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, Var)> backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// One attention group: every query row attends over the listed key rows.
struct AttentionGroup {
  std::vector<int> queries;
  std::vector<int> keys;
};
using AttentionLayout = std::vector<AttentionGroup>;

// Rotary encoding: row r, column pair i inside each head rotates by an angle whose
// cosine/sine are stored at (r, i).
struct RotaryTable {
  Matrix cos;
  Matrix sin;
};

Var matmul(Tape& tape, Var x, Var w);
Var linear(Tape& tape, Var x, Var w, Var b);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
// x * (1 + scale) + shift, all same shape.
Var modulate(Tape& tape, Var x, Var shift, Var scale);
// x + gate * y
Var gated_residual(Tape& tape, Var x, Var gate, Var y);
// Row-wise standardisation without affine terms.
Var layer_norm(Tape& tape, Var x, double eps = 1e-6);
Var silu(Tape& tape, Var x);
// tanh approximation
Var gelu(Tape& tape, Var x);
Var slice_cols(Tape& tape, Var x, int start, int count);
Var tile_rows(Tape& tape, Var x, int times);
Var concat_rows(Tape& tape, const std::vector<Var>& parts);
// Rotates consecutive column pairs inside every head of width `head_dim`.
Var rotary(Tape& tape, Var x, std::shared_ptr<const RotaryTable> table, int head_dim);
// Multi-head softmax attention; rows that are not queries of any group come out zero.
Var attention(Tape& tape, Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout,
              int heads);
// sum_r w_r * ||pred_r - target_r||^2 / (cols * sum_r w_r); 0 when sum w = 0.
Var weighted_mse(Tape& tape, Var pred, const Matrix& target, const Eigen::VectorXd& weights);

}  // namespace scenegen::nn
