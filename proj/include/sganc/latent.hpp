#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sganc/bytes.hpp"
#include "sganc/error.hpp"

namespace sganc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kFullLayers = 18;
inline constexpr std::size_t kFullChannels = 512;
inline constexpr std::size_t kDeskLayers = 4;
inline constexpr std::size_t kDeskChannels = 32;

/// One frame's latent: L layers by C channels, all entries finite.
///
/// The same type carries codes in the encoder space and in the learned
/// compression space; which one a value lives in is a property of where it
/// came from, not of the type.
class LatentCode {
 public:
  LatentCode() : LatentCode(kFullLayers, kFullChannels) {}
  LatentCode(std::size_t layers, std::size_t channels) : data_(Matrix::Zero(check_rows(layers), check_cols(channels))) {}
  explicit LatentCode(Matrix data) : data_(std::move(data)) {
    check_rows(static_cast<std::size_t>(data_.rows()));
    check_cols(static_cast<std::size_t>(data_.cols()));
    if (!data_.allFinite()) throw NumericError("latent code has non-finite entries");
  }

  std::size_t layers() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(data_.cols()); }
  std::size_t size() const { return layers() * channels(); }
  const Matrix& data() const { return data_; }
  double operator()(std::size_t l, std::size_t c) const { return data_(l, c); }

  friend bool operator==(const LatentCode& a, const LatentCode& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
  }

 private:
  static std::size_t check_rows(std::size_t l) {
    if (l == 0) throw ConfigError("latent code needs at least one layer");
    return l;
  }
  static std::size_t check_cols(std::size_t c) {
    if (c == 0) throw ConfigError("latent code needs at least one channel");
    return c;
  }
  Matrix data_;
};

/// Non-empty ordered frames of identical shape.
class LatentSequence {
 public:
  explicit LatentSequence(std::vector<LatentCode> frames, std::optional<double> frame_rate = std::nullopt)
      : frames_(std::move(frames)), frame_rate_(frame_rate) {
    if (frames_.empty()) throw ConfigError("latent sequence must contain at least one frame");
    for (const auto& f : frames_)
      if (f.layers() != frames_.front().layers() || f.channels() != frames_.front().channels())
        throw ConfigError("latent sequence frames have mixed shapes");
  }

  std::size_t size() const { return frames_.size(); }
  std::size_t layers() const { return frames_.front().layers(); }
  std::size_t channels() const { return frames_.front().channels(); }
  const LatentCode& operator[](std::size_t i) const { return frames_[i]; }
  const std::vector<LatentCode>& frames() const { return frames_; }
  std::optional<double> frame_rate() const { return frame_rate_; }
  auto begin() const { return frames_.begin(); }
  auto end() const { return frames_.end(); }

  friend bool operator==(const LatentSequence& a, const LatentSequence& b) { return a.frames_ == b.frames_; }

 private:
  std::vector<LatentCode> frames_;
  std::optional<double> frame_rate_;
};

struct StageRange {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - start; }
  friend bool operator==(const StageRange&, const StageRange&) = default;
};

/// Partition of the L layers into contiguous stages plus a per-layer
/// distortion multiplier.
class StageLayout {
 public:
  StageLayout(std::size_t layers, std::vector<StageRange> stages, std::vector<double> lambda_weights)
      : layers_(layers), stages_(std::move(stages)), weights_(std::move(lambda_weights)) {
    validate();
  }

  /// One stage covering every layer, flat weights.
  static StageLayout single(std::size_t layers) { return {layers, {{0, layers}}, std::vector<double>(layers, 1.0)}; }

  /// Three stages [0,8) [8,13) [13,18) with the decaying distortion schedule.
  static StageLayout full() { return with_schedule(kFullLayers, {{0, 8}, {8, 13}, {13, 18}}); }

  /// The full split rescaled to `layers` (boundaries rounded), e.g. 4 layers -> [0,2) [2,3) [3,4).
  static StageLayout scaled(std::size_t layers) {
    if (layers == kFullLayers) return full();
    if (layers < 3) return single(layers);
    auto b1 = static_cast<std::size_t>(std::lround(8.0 * static_cast<double>(layers) / 18.0));
    auto b2 = static_cast<std::size_t>(std::lround(13.0 * static_cast<double>(layers) / 18.0));
    b1 = std::clamp<std::size_t>(b1, 1, layers - 2);
    b2 = std::clamp<std::size_t>(b2, b1 + 1, layers - 1);
    return with_schedule(layers, {{0, b1}, {b1, b2}, {b2, layers}});
  }

  /// Weights: 1 on the first stage, then linear in layer index down to 0.01 at the last layer.
  static StageLayout with_schedule(std::size_t layers, std::vector<StageRange> stages) {
    if (stages.empty()) throw LayoutError("stage layout has no stages");
    std::vector<double> w(layers, 1.0);
    const std::size_t anchor = stages.front().end;  // first layer after stage 1
    if (anchor < layers && anchor >= 1) {
      const double span = static_cast<double>(layers - anchor);
      for (std::size_t l = anchor; l < layers; ++l)
        w[l] = 1.0 + (0.01 - 1.0) * static_cast<double>(l - anchor + 1) / span;
    }
    return {layers, std::move(stages), std::move(w)};
  }

  /// Parses "0:8,8:13,13:18".
  static StageLayout parse(const std::string& text, std::size_t layers, bool schedule = true) {
    std::vector<StageRange> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto comma = text.find(',', pos);
      if (comma == std::string::npos) comma = text.size();
      auto item = text.substr(pos, comma - pos);
      auto colon = item.find(':');
      if (colon == std::string::npos) throw LayoutError("stage range '" + item + "' is not start:end");
      try {
        out.push_back({std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1))});
      } catch (const std::logic_error&) {
        throw LayoutError("stage range '" + item + "' is not numeric");
      }
      pos = comma + 1;
    }
    if (schedule) return with_schedule(layers, std::move(out));
    return {layers, std::move(out), std::vector<double>(layers, 1.0)};
  }

  std::size_t layers() const { return layers_; }
  std::size_t stage_count() const { return stages_.size(); }
  const std::vector<StageRange>& stages() const { return stages_; }
  const StageRange& stage(std::size_t i) const { return stages_.at(i); }
  const std::vector<double>& lambda_weights() const { return weights_; }

  std::string to_string() const {
    std::string s;
    for (const auto& r : stages_) s += (s.empty() ? "" : ",") + std::to_string(r.start) + ":" + std::to_string(r.end);
    return s;
  }

  friend bool operator==(const StageLayout&, const StageLayout&) = default;

 private:
  void validate() const {
    if (layers_ == 0) throw LayoutError("stage layout over zero layers");
    if (stages_.empty()) throw LayoutError("stage layout has no stages");
    std::size_t next = 0;
    for (const auto& r : stages_) {
      if (r.start != next)
        throw LayoutError("stage ranges must be contiguous: expected start " + std::to_string(next) + ", got " +
                          std::to_string(r.start));
      if (r.end <= r.start) throw LayoutError("empty or inverted stage range");
      next = r.end;
    }
    if (next != layers_)
      throw LayoutError("stage ranges cover [0," + std::to_string(next) + ") but the code has " +
                        std::to_string(layers_) + " layers");
    if (weights_.size() != layers_) throw LayoutError("lambda weight count differs from layer count");
    for (double w : weights_)
      if (!(w > 0.0) || !std::isfinite(w)) throw LayoutError("lambda weights must be positive");
  }

  std::size_t layers_;
  std::vector<StageRange> stages_;
  std::vector<double> weights_;
};

enum class FrameKind : std::uint8_t { Intra = 0, Diff = 1, Residual = 2 };

struct QuantizedFrame {
  IntMatrix symbols;
  FrameKind kind = FrameKind::Intra;
};

/// Per-stage row blocks of `code`; concatenating them in order gives `code` back.
inline std::vector<Matrix> stage_split(const LatentCode& code, const StageLayout& layout) {
  if (layout.layers() != code.layers())
    throw LayoutError("layout covers " + std::to_string(layout.layers()) + " layers, code has " +
                      std::to_string(code.layers()));
  std::vector<Matrix> out;
  out.reserve(layout.stage_count());
  for (const auto& r : layout.stages())
    out.emplace_back(code.data().middleRows(static_cast<Eigen::Index>(r.start), static_cast<Eigen::Index>(r.size())));
  return out;
}

inline LatentCode stage_join(const std::vector<Matrix>& parts, const StageLayout& layout) {
  if (parts.size() != layout.stage_count()) throw LayoutError("stage count mismatch in stage_join");
  Matrix m(static_cast<Eigen::Index>(layout.layers()), parts.front().cols());
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const auto& r = layout.stage(s);
    if (static_cast<std::size_t>(parts[s].rows()) != r.size() || parts[s].cols() != m.cols())
      throw LayoutError("stage block " + std::to_string(s) + " has the wrong shape");
    m.middleRows(static_cast<Eigen::Index>(r.start), static_cast<Eigen::Index>(r.size())) = parts[s];
  }
  return LatentCode(std::move(m));
}

// ---- .sglat ----------------------------------------------------------------

inline constexpr std::uint16_t kLatentFileVersion = 1;
inline constexpr std::size_t kLatentHeaderBytes = 4 + 2 + 2 + 2 + 4;

inline Bytes serialize_latents(const LatentSequence& seq) {
  if (seq.layers() > 0xFFFF || seq.channels() > 0xFFFF) throw ConfigError("latent shape exceeds u16 header fields");
  ByteWriter w;
  w.tag("SGLC");
  w.u16(kLatentFileVersion);
  w.u16(static_cast<std::uint16_t>(seq.layers()));
  w.u16(static_cast<std::uint16_t>(seq.channels()));
  w.u32(static_cast<std::uint32_t>(seq.size()));
  for (const auto& f : seq)
    for (Eigen::Index i = 0; i < f.data().size(); ++i) w.f32(static_cast<float>(f.data().data()[i]));
  return std::move(w).bytes();
}

inline LatentSequence parse_latents(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("SGLC", "latent file");
  const auto version_at = r.offset();
  const auto version = r.u16();
  if (version != kLatentFileVersion) throw UnsupportedVersion(version, version_at);
  const std::size_t layers = r.u16();
  const std::size_t channels = r.u16();
  const std::size_t count = r.u32();
  if (layers == 0 || channels == 0) throw FormatError("latent file declares an empty shape", r.offset() - 8);
  if (count == 0) throw FormatError("latent file declares zero frames", r.offset() - 4);
  const std::size_t need = count * layers * channels * 4;
  if (r.remaining() < need)
    throw FormatError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(r.remaining()),
                      r.offset() + r.remaining());
  if (r.remaining() > need) throw FormatError("trailing bytes after latent payload", r.offset() + need);
  std::vector<LatentCode> frames;
  frames.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    Matrix m(static_cast<Eigen::Index>(layers), static_cast<Eigen::Index>(channels));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto at = r.offset();
      const float v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite latent value", at);
      m.data()[i] = v;
    }
    frames.emplace_back(std::move(m));
  }
  return LatentSequence(std::move(frames));
}

inline void write_latents(const LatentSequence& seq, const std::string& path) { write_file(path, serialize_latents(seq)); }
inline LatentSequence read_latents(const std::string& path) { return parse_latents(read_file(path)); }

}  // namespace sganc
