#pragma once

// Central finite-difference oracle for tape gradients.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sganc/autodiff.hpp"

namespace gradcheck {

using sganc::Matrix;
namespace ad = sganc::ad;

/// Builds a scalar from recorded parameter Vars (one per input matrix).
using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Denominator floor: gradients below this are compared absolutely (1e-9).
inline constexpr double kFloor = 1e-5;

/// Central difference at h; if it disagrees with `ana`, once more at h/100.
/// A LeakyReLU or |x| kink inside [x-h, x+h] spoils the wide stencil but not
/// the narrow one.
template <class Eval>
double central(Eval&& at, double x0, double h, double ana) {
  auto diff = [&](double step) { return (at(x0 + step) - at(x0 - step)) / (2 * step); };
  const double wide = diff(h);
  if (std::abs(ana - wide) <= 1e-4 * std::max({std::abs(ana), std::abs(wide), kFloor})) return wide;
  return diff(h / 100);
}

struct Report {
  double max_rel = 0;
  std::string where;
};

inline double eval(const Builder& f, const std::vector<Matrix>& inputs) {
  ad::Tape t(false);
  std::vector<ad::Var> vs;
  for (const auto& m : inputs) vs.push_back(t.constant(m));
  return t.scalar(f(t, vs));
}

/// Compares tape gradients of f at `inputs` with (f(x+h) - f(x-h)) / 2h for
/// every input element. Relative error uses max(|a|, |n|, kFloor).
inline Report check(const Builder& f, std::vector<Matrix> inputs, double h = 1e-5) {
  ad::Tape t;
  std::vector<ad::Var> vs;
  for (const auto& m : inputs) vs.push_back(t.param(m));
  const auto out = f(t, vs);
  t.backward(out);
  Report r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix g = t.grad(vs[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      const double ana = g.data()[i];
      const double num = central(
          [&](double x) {
            inputs[k].data()[i] = x;
            return eval(f, inputs);
          },
          x0, h, ana);
      inputs[k].data()[i] = x0;
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), kFloor});
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.where = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                  std::to_string(ana) + " numeric " + std::to_string(num);
      }
    }
  }
  return r;
}

/// Uniform entries in [lo, hi] kept at least `gap` away from zero.
inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.5, double hi = 1.5,
                            double gap = 1e-2) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v = u(rng);
    while (std::abs(v) < gap) v = u(rng);
    m.data()[i] = v;
  }
  return m;
}

/// Weighted sum with fixed random weights: turns any output into a scalar
/// whose gradient exercises every element.
inline ad::Var project(ad::Tape& t, ad::Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& x = t.value(v);
  const Matrix w = random_matrix(x.rows(), x.cols(), rng, -1.0, 1.0, 0.1);
  return ad::sum(t, ad::mul(t, v, t.constant(w)));
}

}  // namespace gradcheck
