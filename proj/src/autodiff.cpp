#include "ncds/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ncds::ad {

namespace {

void accumulate(std::vector<Matrix>& grads, std::size_t index, const Matrix& contribution) {
  Matrix& g = grads[index];
  if (g.size() == 0) {
    g = contribution;
  } else {
    g += contribution;
  }
}

bool broadcastable(Eigen::Index from, Eigen::Index to) { return from == to || from == 1; }

std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Matrix& a, const Matrix& b) {
  const Eigen::Index r = std::max(a.rows(), b.rows());
  const Eigen::Index c = std::max(a.cols(), b.cols());
  if (!broadcastable(a.rows(), r) || !broadcastable(a.cols(), c) || !broadcastable(b.rows(), r) ||
      !broadcastable(b.cols(), c)) {
    throw std::invalid_argument("ad: incompatible shapes " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
  return {r, c};
}

Matrix broadcast(const Matrix& m, Eigen::Index r, Eigen::Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  return m.replicate(r / m.rows(), c / m.cols());
}

Matrix reduce_to(const Matrix& g, Eigen::Index r, Eigen::Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Tape* same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument("ad: operands live on different tapes");
  }
  return a.tape();
}

template <typename Fn, typename Deriv>
Var unary(const Var& a, Fn fn, Deriv deriv) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  Matrix out = a.value().unaryExpr(fn);
  return t->push(std::move(out), {ia}, [t, ia, deriv](const Matrix& g, std::vector<Matrix>& grads) {
    const Matrix& x = t->value(ia);
    accumulate(grads, ia, g.cwiseProduct(x.unaryExpr(deriv)));
  });
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(index_); }

Var Tape::push(Matrix value, std::vector<std::size_t> parents, Backward backward) {
  if (!recording_) {
    parents.clear();
    backward = nullptr;
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::parameter(Matrix value, Eigen::Index offset) {
  Var v = push(std::move(value), {}, nullptr);
  params_.push_back(ParamLeaf{v.index(), offset});
  return v;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("ad: loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("ad: loss must be scalar");
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.index()] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
    nodes_[i].backward(grads_[i], grads_);
  }
}

Matrix Tape::grad(const Var& v) const {
  if (v.index() < grads_.size() && grads_[v.index()].size() != 0) return grads_[v.index()];
  return Matrix::Zero(v.rows(), v.cols());
}

Vector Tape::parameter_gradient(Eigen::Index n_params) const {
  Vector out = Vector::Zero(n_params);
  for (const ParamLeaf& p : params_) {
    if (p.node >= grads_.size() || grads_[p.node].size() == 0) continue;
    const Matrix& g = grads_[p.node];
    if (p.offset + g.size() > n_params) throw std::out_of_range("ad: parameter offset out of range");
    Eigen::Index k = p.offset;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) out[k++] += g(r, c);
    }
  }
  return out;
}

void Tape::clear() {
  nodes_.clear();
  params_.clear();
  grads_.clear();
}

Var operator+(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  Matrix out = broadcast(a.value(), r, c) + broadcast(b.value(), r, c);
  return t->push(std::move(out), {ia, ib}, [t, ia, ib](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, reduce_to(g, t->value(ia).rows(), t->value(ia).cols()));
    accumulate(grads, ib, reduce_to(g, t->value(ib).rows(), t->value(ib).cols()));
  });
}

Var operator-(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  Matrix out = broadcast(a.value(), r, c) - broadcast(b.value(), r, c);
  return t->push(std::move(out), {ia, ib}, [t, ia, ib](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, reduce_to(g, t->value(ia).rows(), t->value(ia).cols()));
    accumulate(grads, ib, -reduce_to(g, t->value(ib).rows(), t->value(ib).cols()));
  });
}

Var operator*(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  Matrix out = broadcast(a.value(), r, c).cwiseProduct(broadcast(b.value(), r, c));
  return t->push(std::move(out), {ia, ib},
                 [t, ia, ib, r, c](const Matrix& g, std::vector<Matrix>& grads) {
                   const Matrix& x = t->value(ia);
                   const Matrix& y = t->value(ib);
                   accumulate(grads, ia,
                              reduce_to(g.cwiseProduct(broadcast(y, r, c)), x.rows(), x.cols()));
                   accumulate(grads, ib,
                              reduce_to(g.cwiseProduct(broadcast(x, r, c)), y.rows(), y.cols()));
                 });
}

Var operator/(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  Matrix out = broadcast(a.value(), r, c).cwiseQuotient(broadcast(b.value(), r, c));
  return t->push(std::move(out), {ia, ib},
                 [t, ia, ib, r, c](const Matrix& g, std::vector<Matrix>& grads) {
                   const Matrix& x = t->value(ia);
                   const Matrix& y = t->value(ib);
                   const Matrix yb = broadcast(y, r, c);
                   const Matrix xb = broadcast(x, r, c);
                   accumulate(grads, ia, reduce_to(g.cwiseQuotient(yb), x.rows(), x.cols()));
                   const Matrix gy = -g.cwiseProduct(xb).cwiseQuotient(yb.cwiseProduct(yb));
                   accumulate(grads, ib, reduce_to(gy, y.rows(), y.cols()));
                 });
}

Var operator-(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  return t->push(-a.value(), {ia}, [ia](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, -g);
  });
}

Var operator+(const Var& a, double c) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  Matrix out = a.value().array() + c;
  return t->push(std::move(out), {ia}, [ia](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g);
  });
}

Var operator+(double c, const Var& a) { return a + c; }
Var operator-(const Var& a, double c) { return a + (-c); }
Var operator-(double c, const Var& a) { return (-a) + c; }

Var operator*(const Var& a, double c) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  return t->push(a.value() * c, {ia}, [ia, c](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g * c);
  });
}

Var operator*(double c, const Var& a) { return a * c; }
Var operator/(const Var& a, double c) { return a * (1.0 / c); }

Var matmul(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("ad: matmul inner dimension mismatch");
  const std::size_t ia = a.index(), ib = b.index();
  Matrix out = a.value() * b.value();
  return t->push(std::move(out), {ia, ib}, [t, ia, ib](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g * t->value(ib).transpose());
    accumulate(grads, ib, t->value(ia).transpose() * g);
  });
}

Var matmul(const Matrix& a, const Var& b) {
  Tape* t = b.tape();
  if (a.cols() != b.rows()) throw std::invalid_argument("ad: matmul inner dimension mismatch");
  const std::size_t ib = b.index();
  Matrix out = a * b.value();
  return t->push(std::move(out), {ib}, [a, ib](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ib, a.transpose() * g);
  });
}

Var tanh(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  Matrix out = a.value().array().tanh();
  const std::size_t io = t->size();
  return t->push(std::move(out), {ia}, [t, ia, io](const Matrix& g, std::vector<Matrix>& grads) {
    const Matrix& y = t->value(io);
    accumulate(grads, ia, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

namespace {
double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var softplus(const Var& a) { return unary(a, softplus_scalar, sigmoid_scalar); }

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var exp(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  Matrix out = a.value().array().exp();
  const std::size_t io = t->size();
  return t->push(std::move(out), {ia}, [t, ia, io](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g.cwiseProduct(t->value(io)));
  });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  Matrix out = a.value().array().sqrt();
  const std::size_t io = t->size();
  return t->push(std::move(out), {ia}, [t, ia, io](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, (g.array() / (2.0 * t->value(io).array())).matrix());
  });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var sum(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t->push(Matrix::Constant(1, 1, a.value().sum()), {ia},
                 [ia, r, c](const Matrix& g, std::vector<Matrix>& grads) {
                   accumulate(grads, ia, Matrix::Constant(r, c, g(0, 0)));
                 });
}

Var sum_rows(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows();
  return t->push(a.value().colwise().sum(), {ia}, [ia, r](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g.replicate(r, 1));
  });
}

Var sum_cols(const Var& a) {
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index c = a.cols();
  return t->push(a.value().rowwise().sum(), {ia}, [ia, c](const Matrix& g, std::vector<Matrix>& grads) {
    accumulate(grads, ia, g.replicate(1, c));
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("ad: row slice out of range");
  }
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t->push(a.value().middleRows(start, count), {ia},
                 [ia, r, c, start, count](const Matrix& g, std::vector<Matrix>& grads) {
                   Matrix full = Matrix::Zero(r, c);
                   full.middleRows(start, count) = g;
                   accumulate(grads, ia, full);
                 });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("ad: column slice out of range");
  }
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t->push(a.value().middleCols(start, count), {ia},
                 [ia, r, c, start, count](const Matrix& g, std::vector<Matrix>& grads) {
                   Matrix full = Matrix::Zero(r, c);
                   full.middleCols(start, count) = g;
                   accumulate(grads, ia, full);
                 });
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad: vstack of nothing");
  Tape* t = parts.front().tape();
  const Eigen::Index c = parts.front().cols();
  Eigen::Index total = 0;
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    if (p.tape() != t || p.cols() != c) throw std::invalid_argument("ad: vstack shape mismatch");
    total += p.rows();
    idx.push_back(p.index());
    heights.push_back(p.rows());
  }
  Matrix out(total, c);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t->push(std::move(out), idx, [idx, heights](const Matrix& g, std::vector<Matrix>& grads) {
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      accumulate(grads, idx[k], g.middleRows(r, heights[k]));
      r += heights[k];
    }
  });
}

Var hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad: hstack of nothing");
  Tape* t = parts.front().tape();
  const Eigen::Index r = parts.front().rows();
  Eigen::Index total = 0;
  std::vector<std::size_t> idx;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != t || p.rows() != r) throw std::invalid_argument("ad: hstack shape mismatch");
    total += p.cols();
    idx.push_back(p.index());
    widths.push_back(p.cols());
  }
  Matrix out(r, total);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t->push(std::move(out), idx, [idx, widths](const Matrix& g, std::vector<Matrix>& grads) {
    Eigen::Index c = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      accumulate(grads, idx[k], g.middleCols(c, widths[k]));
      c += widths[k];
    }
  });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index) {
  if (static_cast<Eigen::Index>(index.size()) != a.cols()) {
    throw std::invalid_argument("ad: gather index length must equal column count");
  }
  Tape* t = a.tape();
  const std::size_t ia = a.index();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out(1, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    if (index[j] < 0 || index[j] >= r) throw std::out_of_range("ad: gather index out of range");
    out(0, j) = a.value()(index[j], j);
  }
  return t->push(std::move(out), {ia}, [ia, r, c, index](const Matrix& g, std::vector<Matrix>& grads) {
    Matrix full = Matrix::Zero(r, c);
    for (Eigen::Index j = 0; j < c; ++j) full(index[j], j) = g(0, j);
    accumulate(grads, ia, full);
  });
}

Var min_rows(const Var& a, const std::vector<Eigen::Index>& row_set) {
  if (row_set.empty()) throw std::invalid_argument("ad: min over empty index set");
  std::vector<Eigen::Index> argmin(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = row_set.front();
    for (Eigen::Index r : row_set) {
      if (r < 0 || r >= a.rows()) throw std::out_of_range("ad: min index out of range");
      if (a.value()(r, j) < best) {
        best = a.value()(r, j);
        arg = r;
      }
    }
    argmin[j] = arg;
  }
  return gather_rows(a, argmin);
}

Var batched_matvec(const Var& m, const Var& v, Eigen::Index out_dim, bool transpose) {
  Tape* t = same_tape(m, v);
  if (out_dim <= 0 || m.rows() % out_dim != 0) {
    throw std::invalid_argument("ad: batched_matvec row count not divisible by out_dim");
  }
  const Eigen::Index in_dim = m.rows() / out_dim;
  const Eigen::Index n = m.cols();
  if (v.cols() != n) throw std::invalid_argument("ad: batched_matvec batch mismatch");
  if (v.rows() != (transpose ? out_dim : in_dim)) {
    throw std::invalid_argument("ad: batched_matvec vector length mismatch");
  }
  const Matrix& M = m.value();
  const Matrix& V = v.value();
  Matrix out = Matrix::Zero(transpose ? in_dim : out_dim, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index i = 0; i < out_dim; ++i) {
      for (Eigen::Index j = 0; j < in_dim; ++j) {
        const double mij = M(i * in_dim + j, c);
        if (transpose) {
          out(j, c) += mij * V(i, c);
        } else {
          out(i, c) += mij * V(j, c);
        }
      }
    }
  }
  const std::size_t im = m.index(), iv = v.index();
  return t->push(std::move(out), {im, iv},
                 [t, im, iv, out_dim, in_dim, n, transpose](const Matrix& g,
                                                            std::vector<Matrix>& grads) {
                   const Matrix& M = t->value(im);
                   const Matrix& V = t->value(iv);
                   Matrix gm = Matrix::Zero(M.rows(), n);
                   Matrix gv = Matrix::Zero(V.rows(), n);
                   for (Eigen::Index c = 0; c < n; ++c) {
                     for (Eigen::Index i = 0; i < out_dim; ++i) {
                       for (Eigen::Index j = 0; j < in_dim; ++j) {
                         const Eigen::Index k = i * in_dim + j;
                         if (transpose) {
                           // out_j = sum_i M_ij V_i
                           gm(k, c) = g(j, c) * V(i, c);
                           gv(i, c) += M(k, c) * g(j, c);
                         } else {
                           // out_i = sum_j M_ij V_j
                           gm(k, c) = g(i, c) * V(j, c);
                           gv(j, c) += M(k, c) * g(i, c);
                         }
                       }
                     }
                   }
                   accumulate(grads, im, gm);
                   accumulate(grads, iv, gv);
                 });
}

}  // namespace ncds::ad
