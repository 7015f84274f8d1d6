#pragma once

// Bijective latent transform built from affine coupling layers.
//
// Each coupling layer keeps the passive half of the coordinates and maps the
// active half as y = x * exp(s(x_p)) + t(x_p), where s and t are three-layer
// fully connected nets (LeakyReLU hidden, Tanh on the scale output). The
// inverse is (y - t) * exp(-s), exact up to floating-point rounding.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sganc/autodiff.hpp"
#include "sganc/bytes.hpp"
#include "sganc/latent.hpp"

namespace sganc {

enum class FlowGranularity : std::uint8_t {
  RowShared = 0,  // one C-wide flow applied to every layer row of a stage
  Flattened = 1,  // one flow over the stage's rows*C values
};

enum class Direction { Forward, Inverse };

struct FlowConfig {
  std::size_t coupling_layers = 13;
  std::size_t hidden = 0;  // 0 -> same as the coupling width
  FlowGranularity granularity = FlowGranularity::RowShared;
  double leaky_slope = 0.01;
};

struct Dense {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  Dense() = default;
  Dense(std::size_t in, std::size_t out)
      : weight(Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out))),
        bias(Matrix::Zero(1, static_cast<Eigen::Index>(out))) {}
};

/// FC -> LeakyReLU -> FC -> LeakyReLU -> FC.
struct Mlp {
  Dense l0, l1, l2;

  Mlp() = default;
  Mlp(std::size_t width, std::size_t hidden) : l0(width, hidden), l1(hidden, hidden), l2(hidden, width) {}

  void collect(std::vector<Matrix*>& out) {
    for (Dense* d : {&l0, &l1, &l2}) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    }
  }
  void collect(std::vector<const Matrix*>& out) const {
    for (const Dense* d : {&l0, &l1, &l2}) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    }
  }
};

struct CouplingLayer {
  Matrix mask;  // 1 x width; 1 = passive (conditioning, copied through)
  Mlp scale_net;
  Mlp translate_net;

  std::size_t width() const { return static_cast<std::size_t>(mask.cols()); }

  /// Alternating even/odd split; `parity` selects which half is passive.
  static CouplingLayer make(std::size_t width, std::size_t hidden, std::size_t parity) {
    if (width < 2) throw ConfigError("coupling layer needs width >= 2 (one active, one passive coordinate)");
    CouplingLayer c;
    c.mask = Matrix::Zero(1, static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < width; ++i) c.mask(0, static_cast<Eigen::Index>(i)) = (i % 2 == parity % 2) ? 1.0 : 0.0;
    c.scale_net = Mlp(width, hidden);
    c.translate_net = Mlp(width, hidden);
    return c;
  }
};

namespace detail {
inline ad::Var record_mlp(ad::Tape& t, const Mlp& net, ad::Var x, double slope) {
  auto dense = [&](const Dense& d, ad::Var in) {
    return ad::add_row(t, ad::matmul(t, in, t.param(d.weight)), t.param(d.bias));
  };
  auto h = ad::leaky_relu(t, dense(net.l0, x), slope);
  h = ad::leaky_relu(t, dense(net.l1, h), slope);
  return dense(net.l2, h);
}
}  // namespace detail

/// One coupling layer on a batch (rows) of width-wide vectors.
inline ad::Var record_coupling(ad::Tape& t, const CouplingLayer& layer, ad::Var x, Direction dir, double slope = 0.01,
                               std::size_t layer_index = 0) {
  if (t.value(x).cols() != layer.mask.cols())
    throw ConfigError("coupling input width " + std::to_string(t.value(x).cols()) + " does not match mask width " +
                      std::to_string(layer.mask.cols()));
  const ad::Var mask = t.constant(layer.mask);
  const ad::Var active = t.constant((1.0 - layer.mask.array()).matrix());
  const ad::Var passive_part = ad::mul_row(t, x, mask);
  const ad::Var s = ad::mul_row(t, ad::tanh(t, detail::record_mlp(t, layer.scale_net, passive_part, slope)), active);
  const ad::Var shift = ad::mul_row(t, detail::record_mlp(t, layer.translate_net, passive_part, slope), active);
  ad::Var y;
  if (dir == Direction::Forward)
    y = ad::add(t, ad::mul(t, x, ad::exp(t, s)), shift);
  else
    y = ad::mul(t, ad::sub(t, x, shift), ad::exp(t, ad::scale(t, s, -1.0)));
  if (!t.value(y).allFinite()) throw NumericError("non-finite value in coupling layer " + std::to_string(layer_index));
  return y;
}

/// Ordered stack of coupling layers for one stage.
class CouplingStack {
 public:
  CouplingStack() = default;
  CouplingStack(std::size_t width, std::size_t count, std::size_t hidden, double slope = 0.01) : slope_(slope) {
    for (std::size_t k = 0; k < count; ++k) layers_.push_back(CouplingLayer::make(width, hidden ? hidden : width, k));
  }

  std::size_t width() const { return layers_.empty() ? 0 : layers_.front().width(); }
  std::size_t size() const { return layers_.size(); }
  double slope() const { return slope_; }
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  /// x: rows of width-wide vectors.
  ad::Var record(ad::Tape& t, ad::Var x, Direction dir) const {
    if (dir == Direction::Forward) {
      for (std::size_t k = 0; k < layers_.size(); ++k) x = record_coupling(t, layers_[k], x, dir, slope_, k);
    } else {
      for (std::size_t k = layers_.size(); k-- > 0;) x = record_coupling(t, layers_[k], x, dir, slope_, k);
    }
    return x;
  }

  void collect(std::vector<Matrix*>& out) {
    for (auto& l : layers_) {
      l.scale_net.collect(out);
      l.translate_net.collect(out);
    }
  }
  void collect(std::vector<const Matrix*>& out) const {
    for (const auto& l : layers_) {
      l.scale_net.collect(out);
      l.translate_net.collect(out);
    }
  }

 private:
  std::vector<CouplingLayer> layers_;
  double slope_ = 0.01;
};

/// Single-vector coupling evaluation (no gradient recording).
inline Matrix coupling_apply(const Matrix& x, const CouplingLayer& layer, Direction dir, double slope = 0.01) {
  if (!x.allFinite()) throw NumericError("non-finite coupling input");
  ad::Tape t(false);
  return t.value(record_coupling(t, layer, t.constant(x), dir, slope));
}

/// Per-stage coupling stacks covering a whole latent code.
class FlowModel {
 public:
  FlowModel(StageLayout layout, std::size_t channels, FlowConfig cfg = {})
      : layout_(std::move(layout)), channels_(channels), cfg_(cfg) {
    for (const auto& r : layout_.stages()) {
      const std::size_t width = cfg_.granularity == FlowGranularity::RowShared ? channels : r.size() * channels;
      stacks_.emplace_back(width, cfg_.coupling_layers, cfg_.hidden, cfg_.leaky_slope);
    }
  }

  const StageLayout& layout() const { return layout_; }
  std::size_t channels() const { return channels_; }
  const FlowConfig& config() const { return cfg_; }
  std::size_t stage_count() const { return stacks_.size(); }
  CouplingStack& stage(std::size_t s) { return stacks_.at(s); }
  const CouplingStack& stage(std::size_t s) const { return stacks_.at(s); }

  /// Draws hidden-layer weights (std 1/sqrt(fan_in)); output layers stay
  /// zero so the freshly initialized transform is exactly the identity.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& st : stacks_)
      for (auto& l : st.layers())
        for (Mlp* net : {&l.scale_net, &l.translate_net}) {
          for (Dense* d : {&net->l0, &net->l1}) fill_normal(d->weight, rng, 1.0 / std::sqrt(double(d->weight.rows())));
          net->l2.weight.setZero();
          net->l2.bias.setZero();
        }
  }

  /// Randomizes every weight including the output layers (test helper for non-identity transforms).
  void randomize(std::uint64_t seed, double output_scale) {
    initialize(seed);
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
    for (auto& st : stacks_)
      for (auto& l : st.layers())
        for (Mlp* net : {&l.scale_net, &l.translate_net}) {
          fill_normal(net->l2.weight, rng, output_scale / std::sqrt(double(net->l2.weight.rows())));
          fill_normal(net->l2.bias, rng, output_scale);
        }
  }

  /// Stage block as B x (rows*C) -> same shape, through the stage's stack.
  ad::Var record_stage(ad::Tape& t, std::size_t s, ad::Var block, Direction dir) const {
    const auto& v = t.value(block);
    const Eigen::Index rows = static_cast<Eigen::Index>(layout_.stage(s).size());
    const Eigen::Index c = static_cast<Eigen::Index>(channels_);
    if (v.cols() != rows * c)
      throw ConfigError("stage " + std::to_string(s) + " expects " + std::to_string(rows * c) + " values per item, got " +
                        std::to_string(v.cols()));
    if (cfg_.granularity == FlowGranularity::Flattened) return stacks_[s].record(t, block, dir);
    const Eigen::Index batch = v.rows();
    auto rowwise = ad::reshape(t, block, batch * rows, c);
    rowwise = stacks_[s].record(t, rowwise, dir);
    return ad::reshape(t, rowwise, batch, rows * c);
  }

  void collect(std::vector<Matrix*>& out) {
    for (auto& st : stacks_) st.collect(out);
  }
  void collect(std::vector<const Matrix*>& out) const {
    for (const auto& st : stacks_) st.collect(out);
  }

  std::size_t parameter_count() const {
    std::vector<const Matrix*> ps;
    collect(ps);
    std::size_t n = 0;
    for (auto* p : ps) n += static_cast<std::size_t>(p->size());
    return n;
  }

 private:
  static void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  }

  StageLayout layout_;
  std::size_t channels_;
  FlowConfig cfg_;
  std::vector<CouplingStack> stacks_;
};

namespace detail {
inline LatentCode apply_flow(const LatentCode& w, const FlowModel& model, Direction dir) {
  if (w.channels() != model.channels() || w.layers() != model.layout().layers())
    throw ConfigError("latent shape " + std::to_string(w.layers()) + "x" + std::to_string(w.channels()) +
                      " does not match flow shape " + std::to_string(model.layout().layers()) + "x" +
                      std::to_string(model.channels()));
  auto blocks = stage_split(w, model.layout());
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    ad::Tape t(false);
    const Eigen::Index n = blocks[s].size();
    auto in = t.constant(Eigen::Map<const Matrix>(blocks[s].data(), 1, n));
    auto out = model.record_stage(t, s, in, dir);
    blocks[s] = Eigen::Map<const Matrix>(t.value(out).data(), blocks[s].rows(), blocks[s].cols());
  }
  return stage_join(blocks, model.layout());
}
}  // namespace detail

inline LatentCode flow_forward(const LatentCode& w, const FlowModel& model) {
  return detail::apply_flow(w, model, Direction::Forward);
}

inline LatentCode flow_inverse(const LatentCode& ws, const FlowModel& model) {
  return detail::apply_flow(ws, model, Direction::Inverse);
}

// ---- .sgflow -----------------------------------------------------------------

inline constexpr std::uint16_t kFlowFileVersion = 1;

inline Bytes serialize_flow(const FlowModel& model) {
  const auto& lay = model.layout();
  ByteWriter w;
  w.tag("SGFW");
  w.u16(kFlowFileVersion);
  w.u16(static_cast<std::uint16_t>(lay.layers()));
  w.u16(static_cast<std::uint16_t>(model.channels()));
  w.u16(static_cast<std::uint16_t>(lay.stage_count()));
  for (const auto& r : lay.stages()) {
    w.u16(static_cast<std::uint16_t>(r.start));
    w.u16(static_cast<std::uint16_t>(r.end));
  }
  for (double x : lay.lambda_weights()) w.f64(x);
  const auto& cfg = model.config();
  w.u8(static_cast<std::uint8_t>(cfg.granularity));
  w.u16(static_cast<std::uint16_t>(cfg.coupling_layers));
  w.u32(static_cast<std::uint32_t>(cfg.hidden));
  w.f64(cfg.leaky_slope);
  std::vector<const Matrix*> ps;
  model.collect(ps);
  for (const auto* p : ps)
    for (Eigen::Index i = 0; i < p->size(); ++i) w.f64(p->data()[i]);
  return std::move(w).bytes();
}

inline FlowModel parse_flow(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("SGFW", "flow model");
  const auto vat = r.offset();
  if (auto v = r.u16(); v != kFlowFileVersion) throw UnsupportedVersion(v, vat);
  const std::size_t layers = r.u16();
  const std::size_t channels = r.u16();
  const std::size_t stages = r.u16();
  std::vector<StageRange> ranges;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t a = r.u16();
    const std::size_t b = r.u16();
    ranges.push_back({a, b});
  }
  std::vector<double> weights(layers);
  for (auto& x : weights) x = r.f64();
  FlowConfig cfg;
  const auto gat = r.offset();
  const auto g = r.u8();
  if (g > 1) throw FormatError("unknown flow granularity", gat);
  cfg.granularity = static_cast<FlowGranularity>(g);
  cfg.coupling_layers = r.u16();
  cfg.hidden = r.u32();
  cfg.leaky_slope = r.f64();
  const auto lat = r.offset();
  FlowModel model = [&] {
    try {
      return FlowModel(StageLayout(layers, std::move(ranges), std::move(weights)), channels, cfg);
    } catch (const Error& e) {
      throw FormatError(std::string("invalid flow header: ") + e.what(), lat);
    }
  }();
  std::vector<Matrix*> ps;
  model.collect(ps);
  for (auto* p : ps)
    for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = r.f64();
  if (!r.at_end()) throw FormatError("trailing bytes after flow parameters", r.offset());
  return model;
}

}  // namespace sganc
