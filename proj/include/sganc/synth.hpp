#pragma once

// Synthetic latent data: i.i.d. Gaussian-mixture codes and AR(1) videos.
// Each code or frame draws from its own generator seeded by (seed, index),
// so any item can be regenerated alone.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sganc/error.hpp"
#include "sganc/latent.hpp"

namespace sganc {

struct MixtureComponent {
  double weight = 1.0;
  Matrix mean;   // L x C
  Matrix scale;  // L x C, positive
};

struct SynthSpec {
  std::size_t layers = kDeskLayers;
  std::size_t channels = kDeskChannels;
  std::vector<MixtureComponent> mixture;
  double rho = 0.0;
  std::size_t frames = 1;
  std::uint64_t seed = 0;

  /// One component, mean 0 and unit scale everywhere.
  static SynthSpec standard(std::size_t layers, std::size_t channels, std::uint64_t seed = 0) {
    SynthSpec s;
    s.layers = layers;
    s.channels = channels;
    s.seed = seed;
    const auto l = static_cast<Eigen::Index>(layers), c = static_cast<Eigen::Index>(channels);
    s.mixture.push_back({1.0, Matrix::Zero(l, c), Matrix::Ones(l, c)});
    return s;
  }

  /// `k` equally weighted components with random means in [-2, 2] and scales in [0.3, 1].
  static SynthSpec random_mixture(std::size_t layers, std::size_t channels, std::size_t k, std::uint64_t seed) {
    SynthSpec s;
    s.layers = layers;
    s.channels = channels;
    s.seed = seed;
    std::mt19937_64 rng(seed ^ 0x6d69787475726573ULL);
    std::uniform_real_distribution<double> mean(-2.0, 2.0), scale(0.3, 1.0);
    const auto l = static_cast<Eigen::Index>(layers), c = static_cast<Eigen::Index>(channels);
    for (std::size_t i = 0; i < k; ++i) {
      MixtureComponent m{1.0, Matrix(l, c), Matrix(l, c)};
      for (Eigen::Index j = 0; j < m.mean.size(); ++j) {
        m.mean.data()[j] = mean(rng);
        m.scale.data()[j] = scale(rng);
      }
      s.mixture.push_back(std::move(m));
    }
    return s;
  }

  void validate() const {
    if (layers == 0 || channels == 0) throw ConfigError("synth shape must be non-empty");
    if (mixture.empty()) throw ConfigError("synth mixture has no components");
    for (std::size_t i = 0; i < mixture.size(); ++i) {
      const auto& m = mixture[i];
      const auto who = "mixture component " + std::to_string(i);
      if (!(m.weight > 0) || !std::isfinite(m.weight)) throw ConfigError(who + ": weight must be positive");
      if (static_cast<std::size_t>(m.mean.rows()) != layers || static_cast<std::size_t>(m.mean.cols()) != channels ||
          m.scale.rows() != m.mean.rows() || m.scale.cols() != m.mean.cols())
        throw ConfigError(who + ": means and scales must be " + std::to_string(layers) + "x" + std::to_string(channels));
      if (!m.mean.allFinite()) throw ConfigError(who + ": non-finite mean");
      if (!(m.scale.array() > 0).all() || !m.scale.allFinite()) throw ConfigError(who + ": scales must be > 0");
    }
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must be in [0, 1), got " + std::to_string(rho));
    if (frames < 1) throw ConfigError("frames must be >= 1");
  }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 item_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ (stream << 56)) + index));
}
}  // namespace detail

/// n i.i.d. codes from the per-coordinate mixture.
inline std::vector<LatentCode> gen_intra_set(std::size_t n, const SynthSpec& spec) {
  spec.validate();
  if (n == 0) throw ConfigError("gen_intra_set needs n > 0");
  std::vector<double> weights;
  for (const auto& m : spec.mixture) weights.push_back(m.weight);
  const auto l = static_cast<Eigen::Index>(spec.layers), c = static_cast<Eigen::Index>(spec.channels);
  std::vector<LatentCode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = detail::item_rng(spec.seed, 1, i);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix w(l, c);
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const auto& m = spec.mixture[spec.mixture.size() == 1 ? 0 : pick(rng)];
      w.data()[j] = m.mean.data()[j] + m.scale.data()[j] * z(rng);
    }
    out.emplace_back(std::move(w));
  }
  return out;
}

/// Stationary AR(1) video with unit marginal variance:
/// w_0 = z_0, w_t = rho w_{t-1} + sqrt(1 - rho^2) z_t.
inline LatentSequence gen_video(const SynthSpec& spec) {
  spec.validate();
  const auto l = static_cast<Eigen::Index>(spec.layers), c = static_cast<Eigen::Index>(spec.channels);
  const double innov = std::sqrt(1.0 - spec.rho * spec.rho);
  std::vector<LatentCode> frames;
  frames.reserve(spec.frames);
  Matrix w(l, c);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    auto rng = detail::item_rng(spec.seed, 2, t);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix draw(l, c);
    for (Eigen::Index j = 0; j < draw.size(); ++j) draw.data()[j] = z(rng);
    w = t == 0 ? draw : Matrix(spec.rho * w + innov * draw);
    frames.emplace_back(w);
  }
  return LatentSequence(std::move(frames));
}

/// Several independent videos, video v seeded with spec.seed + v.
inline std::vector<LatentSequence> gen_videos(std::size_t count, SynthSpec spec) {
  std::vector<LatentSequence> out;
  const auto base = spec.seed;
  for (std::size_t v = 0; v < count; ++v) {
    spec.seed = detail::splitmix64(base + v);
    out.push_back(gen_video(spec));
  }
  return out;
}

}  // namespace sganc
