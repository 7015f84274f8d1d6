#pragma once

// End-to-end helpers: train, freeze tables, build a codec bundle, measure.

#include <optional>
#include <span>
#include <vector>

#include "sganc/codec.hpp"
#include "sganc/trainer.hpp"

namespace sganc {

struct FittedModels {
  FlowModel flow;
  EntropyBundle entropy;               // intra model, or the difference model after inter training
  std::optional<EntropyBundle> intra;  // intra-frame model trained on the inter flow
  TrainTrace trace;
  TrainTrace intra_trace;

  CodecBundle bundle(unsigned g = kDefaultGap) const { return CodecBundle(flow, entropy, intra, g); }
};

inline FittedModels fit_intra(std::span<const LatentSequence> data, const StageLayout& layout,
                              const FlowConfig& flow_cfg, const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("empty training dataset");
  auto m = make_models(layout, data.front().channels(), flow_cfg, cfg.seed);
  FittedModels out{std::move(m.flow), std::move(m.entropy), std::nullopt, {}, {}};
  out.trace = train(data, TrainMode::Intra, out.flow, out.entropy, cfg);
  freeze_tables(out.entropy, collect_intra_symbols(out.flow, data));
  return out;
}

/// Inter training, then a second entropy model for intra frames fitted on the
/// frozen inter flow with `intra_steps` steps.
inline FittedModels fit_inter(std::span<const LatentSequence> data, const StageLayout& layout,
                              const FlowConfig& flow_cfg, const TrainConfig& cfg, std::size_t intra_steps) {
  if (data.empty()) throw ConfigError("empty training dataset");
  auto m = make_models(layout, data.front().channels(), flow_cfg, cfg.seed);
  FittedModels out{std::move(m.flow), std::move(m.entropy), std::nullopt, {}, {}};
  out.trace = train(data, TrainMode::Inter, out.flow, out.entropy, cfg);
  freeze_tables(out.entropy, collect_difference_symbols(out.flow, data));

  auto fresh = make_models(layout, data.front().channels(), flow_cfg, cfg.seed + 7919);
  EntropyBundle intra = std::move(fresh.entropy);
  TrainConfig icfg = cfg;
  icfg.freeze_flow = true;
  icfg.steps = intra_steps;
  out.intra_trace = train(data, TrainMode::Intra, out.flow, intra, icfg);
  freeze_tables(intra, collect_intra_symbols(out.flow, data));
  out.intra = std::move(intra);
  return out;
}

struct OperatingPoint {
  double bpp = 0;
  double latent_mse = 0;
  double bits_per_frame = 0;
  std::size_t frames = 0;
};

/// Codes every sequence, decodes it back and reports average rate and
/// W+ distortion over all frames.
inline OperatingPoint evaluate(std::span<const LatentSequence> data, const CodecBundle& bundle, bool inter,
                               bool intra_refresh = false, ImageSize img = {}) {
  OperatingPoint p;
  std::size_t bytes = 0;
  double sse = 0;
  std::size_t values = 0;
  for (const auto& seq : data) {
    const auto enc = inter ? encode_inter(seq, bundle, intra_refresh, img) : encode_intra(seq, bundle, img);
    const auto dec = decode(enc.container, bundle);
    bytes += enc.container.size();
    for (std::size_t t = 0; t < seq.size(); ++t) {
      sse += (dec.frames[t].data() - seq[t].data()).squaredNorm();
      values += seq[t].size();
    }
    p.frames += seq.size();
  }
  if (p.frames == 0) throw ConfigError("nothing to evaluate");
  p.bpp = bpp(bytes, p.frames, img.width, img.height);
  p.latent_mse = sse / static_cast<double>(values);
  p.bits_per_frame = static_cast<double>(bytes) * 8.0 / static_cast<double>(p.frames);
  return p;
}

}  // namespace sganc
