#pragma once

// Minimal reverse-mode differentiation over row-major double matrices.
//
// Values are computed eagerly as ops are recorded. A Tape constructed with
// record=false keeps values only, which is what inference paths use.
// Rows are batch items throughout; "row" operands are 1 x n broadcasts.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "sganc/error.hpp"
#include "sganc/latent.hpp"

namespace sganc::ad {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Leaf for a trainable parameter. Registering the same matrix twice
  /// returns the same Var, so gradients from every use accumulate.
  Var param(const Matrix& p) {
    if (auto it = params_.find(&p); it != params_.end()) return it->second;
    Var v = push(p, record_, {});
    params_.emplace(&p, v);
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw Error("scalar() on a non-scalar node");
    return m(0, 0);
  }

  /// Gradient of the last backward() target w.r.t. v; zeros if v was not reached.
  Matrix grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradient w.r.t. a registered parameter; zeros if the parameter never entered the graph.
  Matrix grad_of(const Matrix& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return Matrix::Zero(p.rows(), p.cols());
    return grad(it->second);
  }

  void backward(Var loss) {
    if (!record_) throw Error("backward() on a tape that does not record");
    auto& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw Error("backward() target must be a 1x1 scalar");
    if (!std::isfinite(root.value(0, 0))) throw NumericError("backward() on a non-finite loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    root.grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
      n.back(*this, i);
    }
  }

  /// Elements clamped to the probability floor so far (see neg_log2_prob).
  std::size_t clamped_count() const { return clamped_; }
  std::size_t size() const { return nodes_.size(); }

  // -- used by op implementations --------------------------------------------
  Var push(Matrix value, bool needs_grad, Backward back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }
  bool needs(Var v) const { return nodes_.at(v.id).needs_grad; }
  const Matrix& g(std::size_t self) const { return nodes_[self].grad; }
  void accumulate(Var v, const Matrix& delta) {
    auto& n = nodes_.at(v.id);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = delta;
    else
      n.grad += delta;
  }
  void note_clamped(std::size_t k) { clamped_ += k; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward back;
  };
  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, Var> params_;
  std::size_t clamped_ = 0;
};

namespace detail {
inline void same_shape(const Tape& t, Var a, Var b, const char* op) {
  const auto &x = t.value(a), &y = t.value(b);
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw Error(std::string("shape mismatch in ") + op + ": " + std::to_string(x.rows()) + "x" +
                std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
}
inline void row_shape(const Tape& t, Var a, Var row, const char* op) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw Error(std::string("shape mismatch in ") + op + ": row operand must be 1x" +
                std::to_string(t.value(a).cols()));
}
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace detail

// ---- elementwise binary ------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "add");
  return t.push(t.value(a) + t.value(b), t.needs(a) || t.needs(b), [a, b](Tape& t, std::size_t s) {
    t.accumulate(a, t.g(s));
    t.accumulate(b, t.g(s));
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "sub");
  return t.push(t.value(a) - t.value(b), t.needs(a) || t.needs(b), [a, b](Tape& t, std::size_t s) {
    t.accumulate(a, t.g(s));
    t.accumulate(b, -t.g(s));
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  detail::same_shape(t, a, b, "mul");
  return t.push(t.value(a).cwiseProduct(t.value(b)), t.needs(a) || t.needs(b), [a, b](Tape& t, std::size_t s) {
    if (t.needs(a)) t.accumulate(a, t.g(s).cwiseProduct(t.value(b)));
    if (t.needs(b)) t.accumulate(b, t.g(s).cwiseProduct(t.value(a)));
  });
}

/// a + row broadcast over rows.
inline Var add_row(Tape& t, Var a, Var row) {
  detail::row_shape(t, a, row, "add_row");
  Matrix v = t.value(a).rowwise() + t.value(row).row(0);
  return t.push(std::move(v), t.needs(a) || t.needs(row), [a, row](Tape& t, std::size_t s) {
    t.accumulate(a, t.g(s));
    if (t.needs(row)) t.accumulate(row, t.g(s).colwise().sum());
  });
}

/// a * row broadcast over rows.
inline Var mul_row(Tape& t, Var a, Var row) {
  detail::row_shape(t, a, row, "mul_row");
  Matrix v = t.value(a).array().rowwise() * t.value(row).row(0).array();
  return t.push(std::move(v), t.needs(a) || t.needs(row), [a, row](Tape& t, std::size_t s) {
    if (t.needs(a)) t.accumulate(a, (t.g(s).array().rowwise() * t.value(row).row(0).array()).matrix());
    if (t.needs(row)) t.accumulate(row, t.g(s).cwiseProduct(t.value(a)).colwise().sum());
  });
}

inline Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows())
    throw Error("shape mismatch in matmul: inner dims " + std::to_string(t.value(a).cols()) + " vs " +
                std::to_string(t.value(b).rows()));
  Matrix v = t.value(a) * t.value(b);
  return t.push(std::move(v), t.needs(a) || t.needs(b), [a, b](Tape& t, std::size_t s) {
    if (t.needs(a)) t.accumulate(a, t.g(s) * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * t.g(s));
  });
}

// ---- shape -----------------------------------------------------------------

/// Row-major relabel; element order is unchanged.
inline Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
  const auto& x = t.value(a);
  if (rows * cols != x.size()) throw Error("reshape changes element count");
  Matrix v = Eigen::Map<const Matrix>(x.data(), rows, cols);
  const auto r0 = x.rows(), c0 = x.cols();
  return t.push(std::move(v), t.needs(a), [a, r0, c0](Tape& t, std::size_t s) {
    t.accumulate(a, Eigen::Map<const Matrix>(t.g(s).data(), r0, c0));
  });
}

// ---- scalar-parameterized ----------------------------------------------------

inline Var scale(Tape& t, Var a, double k) {
  return t.push(t.value(a) * k, t.needs(a), [a, k](Tape& t, std::size_t s) { t.accumulate(a, t.g(s) * k); });
}

inline Var add_scalar(Tape& t, Var a, double k) {
  Matrix v = t.value(a).array() + k;
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) { t.accumulate(a, t.g(s)); });
}

// ---- elementwise unary -------------------------------------------------------

/// Generic elementwise map with a caller-supplied derivative.
template <class F, class DF>
Var unary(Tape& t, Var a, F f, DF df) {
  Matrix v = t.value(a).unaryExpr(f);
  return t.push(std::move(v), t.needs(a), [a, df](Tape& t, std::size_t s) {
    t.accumulate(a, t.g(s).cwiseProduct(t.value(a).unaryExpr(df)));
  });
}

inline Var tanh(Tape& t, Var a) {
  Matrix v = t.value(a).array().tanh();
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) {
    // the node's own value is tanh(a)
    const auto& y = t.value(Var{s});
    t.accumulate(a, (t.g(s).array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var exp(Tape& t, Var a) {
  Matrix v = t.value(a).array().exp();
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) {
    t.accumulate(a, t.g(s).cwiseProduct(t.value(Var{s})));
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Matrix v = t.value(a).unaryExpr([](double x) { return detail::sigmoid(x); });
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) {
    const auto& y = t.value(Var{s});
    t.accumulate(a, (t.g(s).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var softplus(Tape& t, Var a) {
  return unary(t, a, [](double x) { return detail::softplus(x); }, [](double x) { return detail::sigmoid(x); });
}

inline Var leaky_relu(Tape& t, Var a, double slope = 0.01) {
  return unary(
      t, a, [slope](double x) { return x > 0 ? x : slope * x; }, [slope](double x) { return x > 0 ? 1.0 : slope; });
}

inline Var abs(Tape& t, Var a) {
  return unary(
      t, a, [](double x) { return std::abs(x); }, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Var square(Tape& t, Var a) {
  Matrix v = t.value(a).array().square();
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) {
    t.accumulate(a, 2.0 * t.g(s).cwiseProduct(t.value(a)));
  });
}

// ---- reductions --------------------------------------------------------------

inline Var sum(Tape& t, Var a) {
  Matrix v(1, 1);
  v(0, 0) = t.value(a).sum();
  return t.push(std::move(v), t.needs(a), [a](Tape& t, std::size_t s) {
    const auto& x = t.value(a);
    t.accumulate(a, Matrix::Constant(x.rows(), x.cols(), t.g(s)(0, 0)));
  });
}

inline Var mean(Tape& t, Var a) { return scale(t, sum(t, a), 1.0 / static_cast<double>(t.value(a).size())); }

// ---- entropy-model specific ----------------------------------------------------

/// Per-coordinate small dense maps. For D coordinates with in/out widths,
/// x is B x (D*in), weight is D x (out*in) (row j*in+i), bias is D x out;
/// out[b, d*out+j] = sum_i weight[d, j*in+i] * x[b, d*in+i] + bias[d, j].
inline Var coord_linear(Tape& t, Var x, Var weight, Var bias, Eigen::Index in, Eigen::Index out) {
  const auto& X = t.value(x);
  const auto& W = t.value(weight);
  const auto& Bv = t.value(bias);
  const Eigen::Index D = W.rows();
  if (W.cols() != out * in || Bv.rows() != D || Bv.cols() != out || X.cols() != D * in)
    throw Error("shape mismatch in coord_linear");
  const Eigen::Index B = X.rows();
  Matrix y(B, D * out);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index d = 0; d < D; ++d)
      for (Eigen::Index j = 0; j < out; ++j) {
        double acc = Bv(d, j);
        for (Eigen::Index i = 0; i < in; ++i) acc += W(d, j * in + i) * X(b, d * in + i);
        y(b, d * out + j) = acc;
      }
  const bool needs = t.needs(x) || t.needs(weight) || t.needs(bias);
  return t.push(std::move(y), needs, [x, weight, bias, in, out](Tape& t, std::size_t s) {
    const auto& G = t.g(s);
    const auto& X = t.value(x);
    const auto& W = t.value(weight);
    const Eigen::Index D = W.rows(), B = X.rows();
    Matrix gx = Matrix::Zero(B, D * in), gw = Matrix::Zero(D, out * in), gb = Matrix::Zero(D, out);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index d = 0; d < D; ++d)
        for (Eigen::Index j = 0; j < out; ++j) {
          const double gy = G(b, d * out + j);
          gb(d, j) += gy;
          for (Eigen::Index i = 0; i < in; ++i) {
            gw(d, j * in + i) += gy * X(b, d * in + i);
            gx(b, d * in + i) += gy * W(d, j * in + i);
          }
        }
    t.accumulate(x, gx);
    t.accumulate(weight, gw);
    t.accumulate(bias, gb);
  });
}

/// Probability mass sigmoid(upper) - sigmoid(lower), evaluated on the side of
/// the logistic where it does not cancel catastrophically.
inline Var interval_prob(Tape& t, Var lower, Var upper) {
  detail::same_shape(t, lower, upper, "interval_prob");
  const auto& L = t.value(lower);
  const auto& U = t.value(upper);
  Matrix v(L.rows(), L.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double l = L.data()[i], u = U.data()[i];
    const double sgn = (l + u) > 0 ? -1.0 : 1.0;
    v.data()[i] = std::abs(detail::sigmoid(sgn * u) - detail::sigmoid(sgn * l));
  }
  return t.push(std::move(v), t.needs(lower) || t.needs(upper), [lower, upper](Tape& t, std::size_t s) {
    const auto& G = t.g(s);
    const auto& L = t.value(lower);
    const auto& U = t.value(upper);
    Matrix gl(L.rows(), L.cols()), gu(L.rows(), L.cols());
    for (Eigen::Index i = 0; i < G.size(); ++i) {
      const double l = L.data()[i], u = U.data()[i];
      const double sgn = (l + u) > 0 ? -1.0 : 1.0;
      const double su = detail::sigmoid(sgn * u), sl = detail::sigmoid(sgn * l);
      const double dir = (su - sl) >= 0 ? 1.0 : -1.0;
      // d/du sigmoid(sgn*u) = sgn * s(1-s)
      gu.data()[i] = G.data()[i] * dir * sgn * su * (1.0 - su);
      gl.data()[i] = -G.data()[i] * dir * sgn * sl * (1.0 - sl);
    }
    t.accumulate(lower, gl);
    t.accumulate(upper, gu);
  });
}

/// -log2(clamp(p, floor, 1)). Clamped elements contribute no gradient and are
/// counted on the tape.
inline Var neg_log2_prob(Tape& t, Var p, double floor) {
  const auto& P = t.value(p);
  Matrix v(P.rows(), P.cols());
  std::size_t clamped = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double q = P.data()[i];
    if (q < floor) {
      q = floor;
      ++clamped;
    }
    v.data()[i] = -std::log2(std::min(q, 1.0));
  }
  t.note_clamped(clamped);
  return t.push(std::move(v), t.needs(p), [p, floor](Tape& t, std::size_t s) {
    const auto& G = t.g(s);
    const auto& P = t.value(p);
    Matrix gp(P.rows(), P.cols());
    for (Eigen::Index i = 0; i < gp.size(); ++i) {
      const double q = P.data()[i];
      gp.data()[i] = (q < floor || q > 1.0) ? 0.0 : -G.data()[i] / (q * std::log(2.0));
    }
    t.accumulate(p, gp);
  });
}

}  // namespace sganc::ad
