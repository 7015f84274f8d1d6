#pragma once

// Rate-distortion training of the flow and the entropy models.
//
// Loss units: the rate term is bits per frame divided by
// TrainConfig::pixels_per_frame (bits per pixel when that is the image
// size), the distortion term is the layer-weighted sum of squared latent
// errors per frame, so loss = R / pixels + lambda * SSE. The reported
// `distortion` is the weighted per-coordinate MSE (SSE / (L*C)).

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sganc/autodiff.hpp"
#include "sganc/entropy_model.hpp"
#include "sganc/flow.hpp"
#include "sganc/latent.hpp"

namespace sganc {

struct TrainConfig {
  double lambda = 1e-4;
  double lambda_l1 = 0.0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 8;
  std::size_t window = 4;  // frames per inter training window
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  double pixels_per_frame = 1024.0 * 1024.0;
  double divergence_limit = 1e6;
  std::vector<double> layer_weights;  // empty -> the flow layout's schedule
  bool freeze_flow = false;           // update entropy models only
  bool zero_noise = false;            // replace the uniform noise by 0 (test hook)

  void validate(bool inter) const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite non-negative number");
    if (!(lambda_l1 >= 0)) throw ConfigError("lambda_l1 must be non-negative");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0,1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (inter && window < 2) throw ConfigError("inter training needs window >= 2");
    if (!(pixels_per_frame > 0)) throw ConfigError("pixels_per_frame must be positive");
  }

  /// Applies flat key=value pairs; unknown keys are errors.
  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) {
      try {
        if (k == "lambda") lambda = std::stod(v);
        else if (k == "lambda_l1") lambda_l1 = std::stod(v);
        else if (k == "learning_rate") learning_rate = std::stod(v);
        else if (k == "beta1") beta1 = std::stod(v);
        else if (k == "beta2") beta2 = std::stod(v);
        else if (k == "adam_epsilon") adam_epsilon = std::stod(v);
        else if (k == "batch_size") batch_size = std::stoul(v);
        else if (k == "window") window = std::stoul(v);
        else if (k == "steps") steps = std::stoul(v);
        else if (k == "seed") seed = std::stoull(v);
        else if (k == "pixels_per_frame") pixels_per_frame = std::stod(v);
        else if (k == "divergence_limit") divergence_limit = std::stod(v);
        else throw ConfigError("unknown config key '" + k + "'");
      } catch (const std::logic_error&) {
        throw ConfigError("bad value '" + v + "' for config key '" + k + "'");
      }
    }
  }

  /// SGANC_SEED, when set, overrides `seed`.
  void apply_env() {
    if (const char* s = std::getenv("SGANC_SEED"); s && *s) {
      try {
        seed = std::stoull(s);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("SGANC_SEED is not an unsigned integer: ") + s);
      }
    }
  }
};

/// Parses "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " has no '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

// ---- noise -------------------------------------------------------------------

/// i.i.d. U[-1/2, 1/2) per element.
inline Matrix uniform_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Matrix e(rows, cols);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = u(rng);
  return e;
}

inline Matrix noise_quantize(const Matrix& x, std::mt19937_64& rng) {
  return x + uniform_noise(x.rows(), x.cols(), rng);
}

// ---- losses --------------------------------------------------------------------

struct LossTerms {
  double rate_bits = 0;   // bits per frame
  double distortion = 0;  // weighted per-coordinate MSE
  double loss = 0;
  std::size_t clamped = 0;
};

struct RecordedLoss {
  ad::Var loss;
  LossTerms terms;
};

namespace detail {
template <CdfModel M>
ad::Var record_stage_rate(ad::Tape& t, const M& model, ad::Var values) {
  const auto& v = t.value(values);
  const auto d = static_cast<Eigen::Index>(model.coord_count());
  if (v.cols() != d) {
    if (v.cols() % d != 0) throw ConfigError("stage width is not a multiple of the entropy model's coordinates");
    values = ad::reshape(t, values, v.rows() * (v.cols() / d), d);
  }
  return ad::sum(t, ad::neg_log2_prob(t, model.record_likelihood(t, values), kProbabilityFloor));
}

inline Matrix stage_rows(std::span<const LatentCode> items, const StageRange& r) {
  const auto width = static_cast<Eigen::Index>(r.size() * items.front().channels());
  Matrix m(static_cast<Eigen::Index>(items.size()), width);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto block = items[b].data().middleRows(static_cast<Eigen::Index>(r.start), static_cast<Eigen::Index>(r.size()));
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      m.row(static_cast<Eigen::Index>(b)).segment(i * block.cols(), block.cols()) = block.row(i);
  }
  return m;
}

inline Matrix weight_row(const std::vector<double>& layer_weights, const StageRange& r, std::size_t channels) {
  Matrix w(1, static_cast<Eigen::Index>(r.size() * channels));
  for (std::size_t l = 0; l < r.size(); ++l)
    w.row(0).segment(static_cast<Eigen::Index>(l * channels), static_cast<Eigen::Index>(channels)).setConstant(
        layer_weights.at(r.start + l));
  return w;
}

inline const std::vector<double>& layer_weights(const FlowModel& flow, const TrainConfig& cfg) {
  const auto& w = cfg.layer_weights.empty() ? flow.layout().lambda_weights() : cfg.layer_weights;
  if (w.size() != flow.layout().layers()) throw ConfigError("layer weight count does not match the layout");
  return w;
}

inline Matrix draw_noise(Eigen::Index rows, Eigen::Index cols, const TrainConfig& cfg, std::mt19937_64& rng) {
  return cfg.zero_noise ? Matrix::Zero(rows, cols) : uniform_noise(rows, cols, rng);
}

inline void check_models(const FlowModel& flow, std::size_t count) {
  if (count != flow.stage_count())
    throw ConfigError("entropy model count (" + std::to_string(count) + ") differs from stage count (" +
                      std::to_string(flow.stage_count()) + ")");
}
}  // namespace detail

/// Intra objective on a batch of codes: rate of T(w) + noise and the
/// distortion of T^-1(T(w) + noise) against w.
template <CdfModel M>
RecordedLoss record_intra_loss(ad::Tape& t, std::span<const LatentCode> batch, const FlowModel& flow,
                               std::span<const M> models, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (batch.empty()) throw ConfigError("empty training batch");
  detail::check_models(flow, models.size());
  const auto& weights = detail::layer_weights(flow, cfg);
  const std::size_t clamped_before = t.clamped_count();
  std::vector<ad::Var> rates, errors;
  for (std::size_t s = 0; s < flow.stage_count(); ++s) {
    const auto& r = flow.layout().stage(s);
    const Matrix x = detail::stage_rows(batch, r);
    if (!x.allFinite()) throw NumericError("non-finite training batch");
    const auto xv = t.constant(x);
    const auto y = flow.record_stage(t, s, xv, Direction::Forward);
    const auto noisy = ad::add(t, y, t.constant(detail::draw_noise(x.rows(), x.cols(), cfg, rng)));
    rates.push_back(detail::record_stage_rate(t, models[s], noisy));
    const auto back = flow.record_stage(t, s, noisy, Direction::Inverse);
    const auto sq = ad::square(t, ad::sub(t, back, xv));
    errors.push_back(ad::sum(t, ad::mul_row(t, sq, t.constant(detail::weight_row(weights, r, flow.channels())))));
  }
  auto total_rate = rates[0];
  auto total_err = errors[0];
  for (std::size_t s = 1; s < rates.size(); ++s) {
    total_rate = ad::add(t, total_rate, rates[s]);
    total_err = ad::add(t, total_err, errors[s]);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto rate = ad::scale(t, total_rate, inv_b);
  const auto sse = ad::scale(t, total_err, inv_b);
  const auto loss = ad::add(t, ad::scale(t, rate, 1.0 / cfg.pixels_per_frame), ad::scale(t, sse, cfg.lambda));
  RecordedLoss out{loss, {}};
  out.terms.rate_bits = t.scalar(rate);
  out.terms.distortion = t.scalar(sse) / static_cast<double>(batch.front().size());
  out.terms.loss = t.scalar(loss);
  out.terms.clamped = t.clamped_count() - clamped_before;
  if (!std::isfinite(out.terms.loss)) throw NumericError("non-finite intra loss");
  return out;
}

template <CdfModel M>
LossTerms intra_loss(std::span<const LatentCode> batch, const FlowModel& flow, std::span<const M> models,
                     const TrainConfig& cfg, std::mt19937_64& rng) {
  ad::Tape t(false);
  return record_intra_loss(t, batch, flow, models, cfg, rng).terms;
}

/// Inter objective over B windows of N consecutive frames: the first frame is
/// taken as known, each later frame is predicted from the previous
/// reconstruction plus the noisy difference, and only the differences are
/// rated. rate_bits and distortion are per predicted frame.
template <CdfModel M>
RecordedLoss record_inter_loss(ad::Tape& t, std::span<const std::vector<LatentCode>> windows, const FlowModel& flow,
                               std::span<const M> models, const TrainConfig& cfg, std::mt19937_64& rng) {
  if (windows.empty()) throw ConfigError("empty training batch");
  const std::size_t n = windows.front().size();
  if (n < 2) throw ConfigError("inter loss needs windows of at least 2 frames");
  for (const auto& w : windows)
    if (w.size() != n) throw ConfigError("inter windows have different lengths");
  detail::check_models(flow, models.size());
  const auto& weights = detail::layer_weights(flow, cfg);
  const std::size_t clamped_before = t.clamped_count();

  std::vector<ad::Var> terms_rate, terms_err, terms_l1;
  std::vector<LatentCode> frame_batch;
  for (std::size_t s = 0; s < flow.stage_count(); ++s) {
    const auto& r = flow.layout().stage(s);
    const auto wrow = t.constant(detail::weight_row(weights, r, flow.channels()));
    std::vector<ad::Var> x(n), mapped(n);
    for (std::size_t f = 0; f < n; ++f) {
      frame_batch.clear();
      for (const auto& w : windows) frame_batch.push_back(w[f]);
      x[f] = t.constant(detail::stage_rows(frame_batch, r));
      mapped[f] = flow.record_stage(t, s, x[f], Direction::Forward);
    }
    auto recon = mapped[0];
    for (std::size_t f = 1; f < n; ++f) {
      const auto& xv = t.value(x[f]);
      const auto delta = ad::sub(t, mapped[f], mapped[f - 1]);
      const auto v_hat = ad::add(t, delta, t.constant(detail::draw_noise(xv.rows(), xv.cols(), cfg, rng)));
      recon = ad::add(t, recon, v_hat);
      terms_rate.push_back(detail::record_stage_rate(t, models[s], v_hat));
      const auto back = flow.record_stage(t, s, recon, Direction::Inverse);
      terms_err.push_back(ad::sum(t, ad::mul_row(t, ad::square(t, ad::sub(t, back, x[f])), wrow)));
      if (cfg.lambda_l1 > 0) terms_l1.push_back(ad::sum(t, ad::abs(t, delta)));
    }
  }
  auto fold = [&](const std::vector<ad::Var>& v) {
    auto acc = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) acc = ad::add(t, acc, v[i]);
    return acc;
  };
  const double inv_b = 1.0 / static_cast<double>(windows.size());
  const auto rate = ad::scale(t, fold(terms_rate), inv_b);
  const auto sse = ad::scale(t, fold(terms_err), inv_b);
  auto loss = ad::add(t, ad::scale(t, rate, 1.0 / cfg.pixels_per_frame), ad::scale(t, sse, cfg.lambda));
  if (!terms_l1.empty()) loss = ad::add(t, loss, ad::scale(t, fold(terms_l1), cfg.lambda_l1 * inv_b));
  const double predicted = static_cast<double>(n - 1);
  RecordedLoss out{loss, {}};
  out.terms.rate_bits = t.scalar(rate) / predicted;
  out.terms.distortion = t.scalar(sse) / (predicted * static_cast<double>(windows.front().front().size()));
  out.terms.loss = t.scalar(loss);
  out.terms.clamped = t.clamped_count() - clamped_before;
  if (!std::isfinite(out.terms.loss)) throw NumericError("non-finite inter loss");
  return out;
}

template <CdfModel M>
LossTerms inter_loss(std::span<const std::vector<LatentCode>> windows, const FlowModel& flow,
                     std::span<const M> models, const TrainConfig& cfg, std::mt19937_64& rng) {
  ad::Tape t(false);
  return record_inter_loss(t, windows, flow, models, cfg, rng).terms;
}

// ---- optimizer -------------------------------------------------------------------

struct OptimizerState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter in place.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, OptimizerState& state,
                      const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw ConfigError("parameter and gradient counts differ");
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first.size() != params.size()) throw ConfigError("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw ConfigError("gradient " + std::to_string(i) + " shape does not match its parameter");
    if (!grads[i].allFinite()) throw NumericError("NaN or infinite gradient for parameter " + std::to_string(i));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first[i] = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * grads[i];
    state.second[i] = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    const auto m_hat = (state.first[i].array() / c1);
    const auto v_hat = (state.second[i].array() / c2);
    params[i]->array() -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
  }
}

// ---- training loop -------------------------------------------------------------------

enum class TrainMode { Intra, Inter };

struct TraceRow {
  std::size_t step = 0;
  LossTerms terms;
};

struct TrainTrace {
  std::vector<TraceRow> rows;

  std::string csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "step,rate_bits,distortion,loss\n";
    for (const auto& r : rows) out << r.step << ',' << r.terms.rate_bits << ',' << r.terms.distortion << ',' << r.terms.loss << '\n';
    return out.str();
  }
};

class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, TrainTrace trace, std::vector<Matrix> snapshot)
      : NumericError(what), trace_(std::move(trace)), snapshot_(std::move(snapshot)) {}
  const TrainTrace& trace() const { return trace_; }
  const std::vector<Matrix>& snapshot() const { return snapshot_; }

 private:
  TrainTrace trace_;
  std::vector<Matrix> snapshot_;
};

struct TrainResult {
  FlowModel flow;
  EntropyBundle entropy;
  TrainTrace trace;
};

/// Fresh models for a layout: identity flow and one factorized model per stage
/// covering every value of the stage.
inline TrainResult make_models(const StageLayout& layout, std::size_t channels, const FlowConfig& flow_cfg,
                               std::uint64_t seed, double entropy_init_scale = 2.0) {
  TrainResult r{FlowModel(layout, channels, flow_cfg), {}, {}};
  r.flow.initialize(seed);
  for (std::size_t s = 0; s < layout.stage_count(); ++s)
    r.entropy.models.emplace_back(layout.stage(s).size() * channels, entropy_init_scale, seed + 1 + s);
  return r;
}

/// Trains (flow, entropy) in place on the given videos. Intra mode treats every
/// frame as an independent code; inter mode samples windows of cfg.window
/// consecutive frames. Deterministic given cfg.seed.
inline TrainTrace train(std::span<const LatentSequence> data, TrainMode mode, FlowModel& flow, EntropyBundle& entropy,
                        const TrainConfig& cfg) {
  const bool inter = mode == TrainMode::Inter;
  cfg.validate(inter);
  if (data.empty()) throw ConfigError("empty training dataset");
  for (const auto& seq : data)
    if (seq.layers() != flow.layout().layers() || seq.channels() != flow.channels())
      throw ConfigError("training data shape does not match the flow");
  detail::check_models(flow, entropy.models.size());

  std::vector<const LatentCode*> frames;
  std::vector<std::pair<std::size_t, std::size_t>> window_starts;
  for (std::size_t v = 0; v < data.size(); ++v) {
    for (const auto& f : data[v]) frames.push_back(&f);
    if (inter && data[v].size() >= cfg.window)
      for (std::size_t s = 0; s + cfg.window <= data[v].size(); ++s) window_starts.emplace_back(v, s);
  }
  if (inter && window_starts.empty()) throw ConfigError("no video is long enough for the training window");

  std::vector<Matrix*> params;
  if (!cfg.freeze_flow) flow.collect(params);
  entropy.collect(params);

  std::mt19937_64 rng(cfg.seed);
  OptimizerState opt;
  TrainTrace trace;
  std::vector<LatentCode> batch;
  std::vector<std::vector<LatentCode>> windows(cfg.batch_size);
  std::vector<Matrix> grads(params.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ad::Tape t;
    RecordedLoss rec;
    if (inter) {
      std::uniform_int_distribution<std::size_t> pick(0, window_starts.size() - 1);
      for (auto& w : windows) {
        const auto [v, s] = window_starts[pick(rng)];
        w.assign(data[v].frames().begin() + static_cast<std::ptrdiff_t>(s),
                 data[v].frames().begin() + static_cast<std::ptrdiff_t>(s + cfg.window));
      }
      rec = record_inter_loss<FactorizedModel>(t, windows, flow, entropy.models, cfg, rng);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
      batch.clear();
      for (std::size_t i = 0; i < cfg.batch_size; ++i) batch.push_back(*frames[pick(rng)]);
      rec = record_intra_loss<FactorizedModel>(t, batch, flow, entropy.models, cfg, rng);
    }
    trace.rows.push_back({step, rec.terms});
    auto snapshot = [&] {
      std::vector<Matrix> snap;
      for (auto* p : params) snap.push_back(*p);
      return snap;
    };
    if (!std::isfinite(rec.terms.loss) || rec.terms.loss > cfg.divergence_limit)
      throw TrainingAborted("training diverged at step " + std::to_string(step), trace, snapshot());
    t.backward(rec.loss);
    for (std::size_t i = 0; i < params.size(); ++i) grads[i] = t.grad_of(*params[i]);
    try {
      adam_step(params, grads, opt, cfg);
    } catch (const NumericError& e) {
      throw TrainingAborted(e.what(), trace, snapshot());
    }
  }
  return trace;
}

}  // namespace sganc
