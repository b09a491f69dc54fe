#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// Every node on the tape holds an Eigen matrix laid out as (features x batch):
// a column is one sample. Elementwise binary ops broadcast a 1x1, 1xC or Rx1
// operand against the other one. Gradients are only defined for scalar (1x1)
// outputs.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <vector>

namespace ncds::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  // Accumulates the gradient of this node's output into the parents' gradients.
  using Backward = std::function<void(const Matrix& grad, std::vector<Matrix>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When disabled, ops still compute values but record no backward closures.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  Var constant(Matrix value);

  // A leaf whose gradient is scattered into a flat parameter vector starting at
  // `offset`, in row-major order of `value`.
  Var parameter(Matrix value, Eigen::Index offset);

  // Runs the reverse sweep from a 1x1 node. Afterwards grad() is valid for
  // every node recorded before `loss`.
  void backward(const Var& loss);

  // Gradient of the last backward() w.r.t. a node (zeros if unreached).
  Matrix grad(const Var& v) const;

  // Collects parameter-leaf gradients into a flat vector of length n_params.
  Vector parameter_gradient(Eigen::Index n_params) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  const Matrix& value(std::size_t index) const { return nodes_[index].value; }

  Var push(Matrix value, std::vector<std::size_t> parents, Backward backward);

 private:
  struct Node {
    Matrix value;
    std::vector<std::size_t> parents;
    Backward backward;
  };
  struct ParamLeaf {
    std::size_t node;
    Eigen::Index offset;
  };

  std::vector<Node> nodes_;
  std::vector<ParamLeaf> params_;
  std::vector<Matrix> grads_;
  bool recording_ = true;
};

// Elementwise arithmetic with broadcasting.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double c);
Var operator+(double c, const Var& a);
Var operator-(const Var& a, double c);
Var operator-(double c, const Var& a);
Var operator*(const Var& a, double c);
Var operator*(double c, const Var& a);
Var operator/(const Var& a, double c);

Var matmul(const Var& a, const Var& b);
// Constant left factor, avoids putting large fixed matrices on the tape.
Var matmul(const Matrix& a, const Var& b);

Var tanh(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);

// Sum of all entries -> 1x1.
Var sum(const Var& a);
// Column sums -> 1xC.
Var sum_rows(const Var& a);
// Row sums -> Rx1.
Var sum_cols(const Var& a);

Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var vstack(const std::vector<Var>& parts);
Var hstack(const std::vector<Var>& parts);

// out(0, c) = a(index[c], c).
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index);
// out(0, c) = min over r in row_set of a(r, c).
Var min_rows(const Var& a, const std::vector<Eigen::Index>& row_set);

// Treats each column of `m` as a row-major (out_dim x in_dim) matrix M_c and
// returns M_c v_c per column; with transpose, returns M_c^T u_c where u has
// out_dim rows.
Var batched_matvec(const Var& m, const Var& v, Eigen::Index out_dim, bool transpose);

}  // namespace ncds::ad
