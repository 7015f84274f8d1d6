#pragma once

// Fully factorized entropy model: one learned univariate CDF per coordinate,
// plus integer PMF tables frozen from it for rANS coding.
//
// Each CDF is sigmoid(f(x)) with f a composition of K per-coordinate dense
// maps whose weights pass through softplus (so f is increasing), with a
// tanh gate h + tanh(a) * tanh(h) after every map but the last (|tanh(a)| < 1
// keeps that gate increasing as well).

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sganc/autodiff.hpp"
#include "sganc/bytes.hpp"
#include "sganc/latent.hpp"

namespace sganc {

/// Smallest probability used in any rate computation.
inline constexpr double kProbabilityFloor = 0x1p-64;
inline constexpr std::uint32_t kDefaultPrecision = 16;

template <class M>
concept CdfModel = requires(const M& m, double x, std::size_t d, ad::Tape& t, ad::Var v, bool* flag) {
  { m.coord_count() } -> std::convertible_to<std::size_t>;
  { m.cdf(x, d) } -> std::convertible_to<double>;
  { m.interval_likelihood(x, d, flag) } -> std::convertible_to<double>;
  { m.tail_mass(std::int32_t{}, std::int32_t{}, d) } -> std::convertible_to<double>;
  { m.record_likelihood(t, v) } -> std::same_as<ad::Var>;
};

namespace detail {
inline double clamp_likelihood(double p, bool* clamped) {
  if (p < kProbabilityFloor) {
    if (clamped) *clamped = true;
    return kProbabilityFloor;
  }
  return std::min(p, 1.0);
}

/// sigmoid(u) - sigmoid(l) for l <= u without cancellation in the tails.
inline double logistic_interval(double l, double u) {
  const double sgn = (l + u) > 0 ? -1.0 : 1.0;
  return std::abs(ad::detail::sigmoid(sgn * u) - ad::detail::sigmoid(sgn * l));
}
}  // namespace detail

class FactorizedModel {
 public:
  static constexpr std::array<Eigen::Index, 5> kWidths{1, 3, 3, 3, 1};
  static constexpr std::size_t kStages = kWidths.size() - 1;

  FactorizedModel() = default;

  /// `init_scale` sets the initial logistic scale of every coordinate's
  /// density; weights start at the identity-like value for that scale and
  /// biases are drawn from U(-0.5, 0.5).
  explicit FactorizedModel(std::size_t coords, double init_scale = 2.0, std::uint64_t seed = 0) : coords_(coords) {
    if (coords == 0) throw ConfigError("entropy model needs at least one coordinate");
    const auto D = static_cast<Eigen::Index>(coords);
    const double per_stage = std::pow(init_scale, 1.0 / static_cast<double>(kStages));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (std::size_t k = 0; k < kStages; ++k) {
      const Eigen::Index in = kWidths[k], out = kWidths[k + 1];
      const double init = std::log(std::expm1(1.0 / per_stage / static_cast<double>(out)));
      matrices_[k] = Matrix::Constant(D, out * in, init);
      biases_[k] = Matrix(D, out);
      for (Eigen::Index i = 0; i < biases_[k].size(); ++i) biases_[k].data()[i] = u(rng);
      if (k + 1 < kStages) factors_[k] = Matrix::Zero(D, out);
    }
  }

  std::size_t coord_count() const { return coords_; }

  /// Logit of the CDF at x for coordinate d.
  double logit(double x, std::size_t d) const {
    std::array<double, 3> h{x, 0, 0}, next{};
    const auto row = static_cast<Eigen::Index>(d);
    for (std::size_t k = 0; k < kStages; ++k) {
      const Eigen::Index in = kWidths[k], out = kWidths[k + 1];
      for (Eigen::Index j = 0; j < out; ++j) {
        double acc = biases_[k](row, j);
        for (Eigen::Index i = 0; i < in; ++i) acc += ad::detail::softplus(matrices_[k](row, j * in + i)) * h[i];
        if (k + 1 < kStages) acc += std::tanh(factors_[k](row, j)) * std::tanh(acc);
        next[static_cast<std::size_t>(j)] = acc;
      }
      h = next;
    }
    return h[0];
  }

  double cdf(double x, std::size_t d) const { return ad::detail::sigmoid(logit(x, d)); }

  /// cdf(x + 1/2) - cdf(x - 1/2), floored at 2^-64 (sets *clamped when that happens).
  double interval_likelihood(double x, std::size_t d, bool* clamped = nullptr) const {
    return detail::clamp_likelihood(detail::logistic_interval(logit(x - 0.5, d), logit(x + 0.5, d)), clamped);
  }

  /// Probability mass outside [lo - 1/2, hi + 1/2].
  double tail_mass(std::int32_t lo, std::int32_t hi, std::size_t d) const {
    return ad::detail::sigmoid(logit(lo - 0.5, d)) + ad::detail::sigmoid(-logit(hi + 0.5, d));
  }

  /// x is B x D; returns B x D logits.
  ad::Var record_logits(ad::Tape& t, ad::Var x) const {
    if (t.value(x).cols() != static_cast<Eigen::Index>(coords_))
      throw ConfigError("entropy model has " + std::to_string(coords_) + " coordinates, input has " +
                        std::to_string(t.value(x).cols()));
    const Eigen::Index D = static_cast<Eigen::Index>(coords_);
    ad::Var h = x;
    for (std::size_t k = 0; k < kStages; ++k) {
      const Eigen::Index in = kWidths[k], out = kWidths[k + 1];
      h = ad::coord_linear(t, h, ad::softplus(t, t.param(matrices_[k])), t.param(biases_[k]), in, out);
      if (k + 1 < kStages) {
        const auto gate = ad::reshape(t, ad::tanh(t, t.param(factors_[k])), 1, D * out);
        h = ad::add(t, h, ad::mul_row(t, ad::tanh(t, h), gate));
      }
    }
    return h;
  }

  /// Interval likelihood of every element of x (B x D).
  ad::Var record_likelihood(ad::Tape& t, ad::Var x) const {
    const auto lower = record_logits(t, ad::add_scalar(t, x, -0.5));
    const auto upper = record_logits(t, ad::add_scalar(t, x, 0.5));
    return ad::interval_prob(t, lower, upper);
  }

  void collect(std::vector<Matrix*>& out) {
    for (std::size_t k = 0; k < kStages; ++k) {
      out.push_back(&matrices_[k]);
      out.push_back(&biases_[k]);
      if (k + 1 < kStages) out.push_back(&factors_[k]);
    }
  }

  /// Parameters of coordinate d in declaration order (file block layout).
  std::vector<double> coordinate_block(std::size_t d) const {
    std::vector<double> out;
    const auto row = static_cast<Eigen::Index>(d);
    for (std::size_t k = 0; k < kStages; ++k) {
      for (Eigen::Index j = 0; j < matrices_[k].cols(); ++j) out.push_back(matrices_[k](row, j));
      for (Eigen::Index j = 0; j < biases_[k].cols(); ++j) out.push_back(biases_[k](row, j));
      if (k + 1 < kStages)
        for (Eigen::Index j = 0; j < factors_[k].cols(); ++j) out.push_back(factors_[k](row, j));
    }
    return out;
  }

  static std::size_t block_size() {
    std::size_t n = 0;
    for (std::size_t k = 0; k < kStages; ++k)
      n += static_cast<std::size_t>(kWidths[k] * kWidths[k + 1] + kWidths[k + 1] + (k + 1 < kStages ? kWidths[k + 1] : 0));
    return n;
  }

  void set_coordinate_block(std::size_t d, std::span<const double> block) {
    if (block.size() != block_size()) throw ConfigError("coordinate parameter block has the wrong size");
    const auto row = static_cast<Eigen::Index>(d);
    std::size_t i = 0;
    for (std::size_t k = 0; k < kStages; ++k) {
      for (Eigen::Index j = 0; j < matrices_[k].cols(); ++j) matrices_[k](row, j) = block[i++];
      for (Eigen::Index j = 0; j < biases_[k].cols(); ++j) biases_[k](row, j) = block[i++];
      if (k + 1 < kStages)
        for (Eigen::Index j = 0; j < factors_[k].cols(); ++j) factors_[k](row, j) = block[i++];
    }
  }

 private:
  std::size_t coords_ = 0;
  std::array<Matrix, kStages> matrices_;
  std::array<Matrix, kStages> biases_;
  std::array<Matrix, kStages - 1> factors_;
};

/// Density uniform on [lo, hi] for every coordinate; a fixed reference
/// model with no parameters.
class UniformModel {
 public:
  UniformModel(std::size_t coords, double lo = -4.0, double hi = 4.0) : coords_(coords), lo_(lo), hi_(hi) {
    if (!(hi > lo)) throw ConfigError("uniform model needs hi > lo");
  }

  std::size_t coord_count() const { return coords_; }
  double cdf(double x, std::size_t = 0) const { return std::clamp((x - lo_) / (hi_ - lo_), 0.0, 1.0); }
  double interval_likelihood(double x, std::size_t d = 0, bool* clamped = nullptr) const {
    return detail::clamp_likelihood(cdf(x + 0.5, d) - cdf(x - 0.5, d), clamped);
  }
  double tail_mass(std::int32_t lo, std::int32_t hi, std::size_t d) const {
    return cdf(lo - 0.5, d) + (1.0 - cdf(hi + 0.5, d));
  }

  ad::Var record_likelihood(ad::Tape& t, ad::Var x) const {
    const double lo = lo_, hi = hi_;
    auto pdf = [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 / (hi - lo) : 0.0; };
    return ad::unary(
        t, x, [this](double v) { return cdf(v + 0.5) - cdf(v - 0.5); },
        [pdf](double v) { return pdf(v + 0.5) - pdf(v - 0.5); });
  }

  void collect(std::vector<Matrix*>&) {}

 private:
  std::size_t coords_;
  double lo_, hi_;
};

struct RateEstimate {
  double bits = 0.0;
  std::size_t clamped = 0;  // elements whose likelihood hit the floor
};

/// -sum log2 p_d(values(b, d)) over a B x D matrix of (noisy or integer) values.
template <CdfModel M>
RateEstimate rate_bits(const Matrix& values, const M& model) {
  if (values.cols() != static_cast<Eigen::Index>(model.coord_count()))
    throw ConfigError("rate_bits: value columns do not match model coordinates");
  RateEstimate r;
  for (Eigen::Index b = 0; b < values.rows(); ++b)
    for (Eigen::Index d = 0; d < values.cols(); ++d) {
      bool clamped = false;
      r.bits -= std::log2(model.interval_likelihood(values(b, d), static_cast<std::size_t>(d), &clamped));
      r.clamped += clamped ? 1 : 0;
    }
  return r;
}

// ---- frozen tables ------------------------------------------------------------

/// Integer frequencies over [support_min, support_max], optionally followed by
/// an escape slot, summing to exactly 2^precision with every entry >= 1.
class PmfTable {
 public:
  PmfTable() = default;
  PmfTable(std::int32_t support_min, std::vector<std::uint32_t> freq, bool has_escape,
           std::uint32_t precision = kDefaultPrecision)
      : min_(support_min), freq_(std::move(freq)), escape_(has_escape), precision_(precision) {
    if (precision_ < 1 || precision_ > 16) throw ConfigError("table precision must be in [1,16]");
    if (freq_.size() < (escape_ ? 2u : 1u)) throw ConfigError("table needs at least one in-support symbol");
    std::uint64_t total = 0;
    cum_.assign(freq_.size() + 1, 0);
    for (std::size_t i = 0; i < freq_.size(); ++i) {
      if (freq_[i] == 0) throw ConfigError("table frequency " + std::to_string(i) + " is zero");
      total += freq_[i];
      if (total > (1ull << precision_)) break;
      cum_[i + 1] = static_cast<std::uint32_t>(total);
    }
    if (total != (1ull << precision_))
      throw ConfigError("table frequencies sum to " + std::to_string(total) + ", expected 2^" +
                        std::to_string(precision_));
  }

  std::int32_t support_min() const { return min_; }
  std::int32_t support_max() const {
    return min_ + static_cast<std::int32_t>(freq_.size()) - 1 - (escape_ ? 1 : 0);
  }
  bool has_escape() const { return escape_; }
  std::uint32_t precision() const { return precision_; }
  std::uint32_t total() const { return 1u << precision_; }
  const std::vector<std::uint32_t>& freq() const { return freq_; }
  std::size_t slots() const { return freq_.size(); }
  std::size_t escape_slot() const { return freq_.size() - 1; }
  std::uint32_t start(std::size_t slot) const { return cum_[slot]; }

  bool in_support(std::int64_t s) const { return s >= min_ && s <= support_max(); }
  std::size_t slot_of(std::int32_t s) const { return static_cast<std::size_t>(static_cast<std::int64_t>(s) - min_); }
  std::int32_t symbol_of(std::size_t slot) const { return min_ + static_cast<std::int32_t>(slot); }

  /// Slot whose cumulative range contains `value` (< total).
  std::size_t find_slot(std::uint32_t value) const {
    auto it = std::upper_bound(cum_.begin(), cum_.end(), value);
    return static_cast<std::size_t>(it - cum_.begin()) - 1;
  }

  /// Ideal code length of symbol s under this table, including the raw
  /// 32-bit payload of an escape.
  double cost_bits(std::int32_t s) const {
    if (in_support(s)) return static_cast<double>(precision_) - std::log2(static_cast<double>(freq_[slot_of(s)]));
    if (!escape_) return std::numeric_limits<double>::infinity();
    return static_cast<double>(precision_) - std::log2(static_cast<double>(freq_[escape_slot()])) + 32.0;
  }

  friend bool operator==(const PmfTable& a, const PmfTable& b) {
    return a.min_ == b.min_ && a.freq_ == b.freq_ && a.escape_ == b.escape_ && a.precision_ == b.precision_;
  }

 private:
  std::int32_t min_ = 0;
  std::vector<std::uint32_t> freq_;
  std::vector<std::uint32_t> cum_;
  bool escape_ = false;
  std::uint32_t precision_ = kDefaultPrecision;
};

/// Round probabilities to integer frequencies: each >= 1, total exactly
/// 2^precision. Excess or deficit is settled on the largest entries.
inline std::vector<std::uint32_t> quantize_pmf(std::span<const double> probs, std::uint32_t precision = kDefaultPrecision) {
  const std::int64_t total = std::int64_t{1} << precision;
  if (probs.empty()) throw ConfigError("cannot quantize an empty pmf");
  if (static_cast<std::int64_t>(probs.size()) > total) throw ConfigError("more symbols than table precision allows");
  double mass = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw NumericError("pmf entries must be finite and non-negative");
    mass += p;
  }
  std::vector<std::int64_t> f(probs.size());
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double scaled = mass > 0 ? probs[i] / mass * static_cast<double>(total) : 0.0;
    f[i] = std::max<std::int64_t>(1, std::llround(scaled));
    sum += f[i];
  }
  // Deterministic tie-break: larger frequency first, then lower index.
  std::vector<std::size_t> order(f.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
  if (sum < total) {
    f[order.front()] += total - sum;
  } else {
    std::int64_t excess = sum - total;
    while (excess > 0) {
      bool moved = false;
      for (std::size_t idx : order) {
        if (excess == 0) break;
        const std::int64_t room = f[idx] - 1;
        if (room <= 0) continue;
        // take proportionally from large entries, at least one count
        const std::int64_t take = std::min(room, std::max<std::int64_t>(1, excess * f[idx] / total));
        f[idx] -= std::min(take, excess);
        excess -= std::min(take, excess);
        moved = true;
      }
      if (!moved) throw NumericError("cannot renormalize pmf");
    }
  }
  return {f.begin(), f.end()};
}

enum class EscapePolicy : std::uint8_t {
  Never = 0,   // no escape slot; out-of-support symbols are coding errors
  Auto = 1,    // add an escape slot only if mass outside the support exceeds 1e-4
  Always = 2,  // always reserve an escape slot
};

inline constexpr double kEscapeMassThreshold = 1e-4;

struct FreezeResult {
  PmfTable table;
  double outside_mass = 0.0;
  bool coverage_warning = false;  // outside mass exceeded the threshold
};

/// Freeze coordinate d of `model` over the integer support [lo, hi].
template <CdfModel M>
FreezeResult freeze_pmf(const M& model, std::size_t d, std::int32_t lo, std::int32_t hi,
                        std::uint32_t precision = kDefaultPrecision, EscapePolicy policy = EscapePolicy::Auto) {
  if (hi < lo) throw ConfigError("empty support in freeze_pmf");
  std::vector<double> probs;
  probs.reserve(static_cast<std::size_t>(hi - lo) + 2);
  for (std::int32_t k = lo; k <= hi; ++k)
    probs.push_back(model.interval_likelihood(static_cast<double>(k), d));
  FreezeResult r;
  r.outside_mass = std::max(0.0, model.tail_mass(lo, hi, d));
  r.coverage_warning = r.outside_mass > kEscapeMassThreshold;
  const bool escape = policy == EscapePolicy::Always || (policy == EscapePolicy::Auto && r.coverage_warning);
  if (escape) probs.push_back(r.outside_mass);
  r.table = PmfTable(lo, quantize_pmf(probs, precision), escape, precision);
  return r;
}

}  // namespace sganc

namespace sganc {

/// Per-stage factorized models, optionally with their frozen tables.
///
/// A stage model may cover fewer coordinates than the stage has values
/// (rows sharing one model); value column j then uses coordinate j % D.
struct EntropyBundle {
  std::vector<FactorizedModel> models;
  std::vector<std::vector<PmfTable>> tables;  // empty, or one table per coordinate per stage

  bool frozen() const { return !tables.empty(); }
  std::size_t stage_count() const { return models.size(); }

  const PmfTable& table(std::size_t stage, std::size_t column) const {
    const auto& ts = tables.at(stage);
    return ts[column % ts.size()];
  }

  void collect(std::vector<Matrix*>& out) {
    for (auto& m : models) m.collect(out);
  }
};

inline constexpr std::uint16_t kEntropyFileVersion = 1;

inline Bytes serialize_entropy(const EntropyBundle& b) {
  ByteWriter w;
  w.tag("SGEM");
  w.u16(kEntropyFileVersion);
  w.u16(static_cast<std::uint16_t>(b.models.size()));
  for (std::size_t s = 0; s < b.models.size(); ++s) {
    const auto& m = b.models[s];
    w.u32(static_cast<std::uint32_t>(m.coord_count()));
    w.u16(static_cast<std::uint16_t>(FactorizedModel::kStages));
    for (auto width : FactorizedModel::kWidths) w.u16(static_cast<std::uint16_t>(width));
    for (std::size_t d = 0; d < m.coord_count(); ++d)
      for (double x : m.coordinate_block(d)) w.f64(x);
    const bool has_tables = b.frozen();
    w.u8(has_tables ? 1 : 0);
    if (!has_tables) continue;
    const auto& ts = b.tables.at(s);
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
      w.u8(static_cast<std::uint8_t>(t.precision()));
      w.u8(t.has_escape() ? 1 : 0);
      w.i32(t.support_min());
      w.i32(t.support_max());
      for (auto f : t.freq()) w.u32(f);
    }
  }
  return std::move(w).bytes();
}

inline EntropyBundle parse_entropy(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("SGEM", "entropy model");
  const auto vat = r.offset();
  if (auto v = r.u16(); v != kEntropyFileVersion) throw UnsupportedVersion(v, vat);
  EntropyBundle b;
  const std::size_t stages = r.u16();
  for (std::size_t s = 0; s < stages; ++s) {
    const auto dat = r.offset();
    const std::size_t coords = r.u32();
    if (coords == 0) throw FormatError("entropy stage with zero coordinates", dat);
    const auto kat = r.offset();
    const std::size_t k = r.u16();
    if (k != FactorizedModel::kStages) throw FormatError("unsupported CDF depth " + std::to_string(k), kat);
    for (auto width : FactorizedModel::kWidths) {
      const auto at = r.offset();
      if (r.u16() != width) throw FormatError("unsupported CDF widths", at);
    }
    r.require(coords * FactorizedModel::block_size() * 8, "entropy parameter blocks");
    FactorizedModel m(coords);
    std::vector<double> block(FactorizedModel::block_size());
    for (std::size_t d = 0; d < coords; ++d) {
      for (auto& x : block) x = r.f64();
      m.set_coordinate_block(d, block);
    }
    b.models.push_back(std::move(m));
    const auto fat = r.offset();
    const auto flag = r.u8();
    if (flag > 1) throw FormatError("bad table flag", fat);
    if (!flag) continue;
    std::vector<PmfTable> ts;
    const std::size_t count = r.u32();
    for (std::size_t i = 0; i < count; ++i) {
      const auto tat = r.offset();
      const std::uint32_t precision = r.u8();
      const bool escape = r.u8() != 0;
      const auto lo = r.i32();
      const auto hi = r.i32();
      if (hi < lo || static_cast<std::int64_t>(hi) - lo > (1 << 16)) throw FormatError("bad table support", tat);
      const std::size_t slots = static_cast<std::size_t>(static_cast<std::int64_t>(hi) - lo + 1) + (escape ? 1 : 0);
      r.require(slots * 4, "table frequencies");
      std::vector<std::uint32_t> f(slots);
      for (auto& x : f) x = r.u32();
      try {
        ts.emplace_back(lo, std::move(f), escape, precision);
      } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid frozen table: ") + e.what(), tat);
      }
    }
    b.tables.push_back(std::move(ts));
  }
  if (!b.tables.empty() && b.tables.size() != b.models.size())
    throw FormatError("tables present for only some stages", r.offset());
  if (!r.at_end()) throw FormatError("trailing bytes after entropy model", r.offset());
  return b;
}

}  // namespace sganc
