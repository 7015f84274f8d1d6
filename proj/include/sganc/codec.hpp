#pragma once

// Intra and inter codecs over latent codes, plus the .sgvc container.
//
// All coding happens in the learned space. Reconstructions there are integer
// valued (rounded first frame plus rounded differences and residuals), so the
// encoder's copy of the decoder state is exact and never drifts.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sganc/bytes.hpp"
#include "sganc/entropy_model.hpp"
#include "sganc/error.hpp"
#include "sganc/flow.hpp"
#include "sganc/irwin_hall.hpp"
#include "sganc/latent.hpp"
#include "sganc/rans.hpp"

namespace sganc {

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr unsigned kDefaultGap = 10;
inline constexpr unsigned kMaxGap = 18;
inline constexpr std::int32_t kSupportMargin = 2;
inline constexpr std::int64_t kMaxSupportWidth = 4096;
inline constexpr double kEscapeWarnFraction = 0.10;

enum class CodingMode : std::uint8_t {
  Intra = 0,         // every frame coded on its own
  InterResidual = 1, // differences, residual correction every g frames
  InterRefresh = 2,  // differences, intra refresh every g frames
};

/// Elementwise round-half-away-from-zero.
inline IntMatrix hard_quantize(const Matrix& x) {
  IntMatrix q(x.rows(), x.cols());
  constexpr double kLimit = static_cast<double>(std::numeric_limits<std::int32_t>::max());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    if (!std::isfinite(v) || std::abs(v) > kLimit)
      throw NumericError("value " + std::to_string(v) + " overflows the 32-bit symbol range");
    q.data()[i] = static_cast<std::int32_t>(std::round(v));
  }
  return q;
}

inline double latent_mse(const LatentCode& a, const LatentCode& b) {
  if (a.layers() != b.layers() || a.channels() != b.channels()) throw ConfigError("latent_mse: shape mismatch");
  return (a.data() - b.data()).squaredNorm() / static_cast<double>(a.size());
}

/// Bits per pixel of `total_bytes` spread over `frames` images of width x height.
inline double bpp(std::size_t total_bytes, std::size_t frames, std::uint32_t width = 1024, std::uint32_t height = 1024) {
  if (width == 0 || height == 0 || frames == 0) throw ConfigError("bpp needs positive image size and frame count");
  return static_cast<double>(total_bytes) * 8.0 / (static_cast<double>(width) * height * static_cast<double>(frames));
}

// ---- bundle --------------------------------------------------------------------

/// Everything the encoder and decoder must share: the flow, frozen tables
/// and the residual gap. Digests identify the model files.
class CodecBundle {
 public:
  /// `entropy` codes differences (inter) or frames (intra); `intra`, when
  /// given, codes intra frames instead.
  CodecBundle(FlowModel flow, EntropyBundle entropy, std::optional<EntropyBundle> intra = std::nullopt,
              unsigned g = kDefaultGap)
      : flow_(std::move(flow)), entropy_(std::move(entropy)), intra_(std::move(intra)), g_(g) {
    if (g_ < 1 || g_ > kMaxGap) throw ConfigError("residual gap g must be in [1, " + std::to_string(kMaxGap) + "]");
    check_tables(entropy_, "entropy");
    if (intra_) check_tables(*intra_, "intra entropy");
    flow_digest_ = sha256_of(serialize_flow(flow_));
    entropy_digest_ = sha256_of(serialize_entropy(entropy_));
    if (intra_) intra_digest_ = sha256_of(serialize_entropy(*intra_));
    residual_ = residual_pmf(g_);
  }

  static CodecBundle from_files(const std::string& flow_path, const std::string& entropy_path,
                                const std::optional<std::string>& intra_path, unsigned g) {
    auto flow_bytes = read_file(flow_path);
    auto ent_bytes = read_file(entropy_path);
    std::optional<EntropyBundle> intra;
    if (intra_path) intra = parse_entropy(read_file(*intra_path));
    return CodecBundle(parse_flow(flow_bytes), parse_entropy(ent_bytes), std::move(intra), g);
  }

  const FlowModel& flow() const { return flow_; }
  const EntropyBundle& entropy() const { return entropy_; }
  const EntropyBundle& intra_entropy() const { return intra_ ? *intra_ : entropy_; }
  bool has_intra_model() const { return intra_.has_value(); }
  unsigned g() const { return g_; }
  const PmfTable& residual_table() const { return residual_; }
  const StageLayout& layout() const { return flow_.layout(); }

  const Digest& flow_digest() const { return flow_digest_; }
  const Digest& entropy_digest() const { return entropy_digest_; }
  const Digest& intra_digest() const { return intra_digest_; }

 private:
  void check_tables(const EntropyBundle& b, const char* what) const {
    if (!b.frozen()) throw ConfigError(std::string(what) + " model has no frozen tables");
    if (b.tables.size() != flow_.stage_count())
      throw ConfigError(std::string(what) + " model stage count does not match the flow");
    for (std::size_t s = 0; s < b.tables.size(); ++s) {
      const std::size_t width = flow_.layout().stage(s).size() * flow_.channels();
      if (b.tables[s].empty() || width % b.tables[s].size() != 0)
        throw ConfigError(std::string(what) + " tables do not tile stage " + std::to_string(s));
    }
  }

  FlowModel flow_;
  EntropyBundle entropy_;
  std::optional<EntropyBundle> intra_;
  unsigned g_;
  Digest flow_digest_{}, entropy_digest_{}, intra_digest_{};
  PmfTable residual_;
};

// ---- table freezing ---------------------------------------------------------------

/// Per-stage symbol matrices (rows = observations, cols = stage values).
using StageSymbols = std::vector<IntMatrix>;

inline std::vector<Matrix> map_stages(const LatentCode& w, const FlowModel& flow) {
  return stage_split(flow_forward(w, flow), flow.layout());
}

/// Rounded T(w) for every frame, per stage, flattened row-major.
inline StageSymbols collect_intra_symbols(const FlowModel& flow, std::span<const LatentSequence> data) {
  StageSymbols out(flow.stage_count());
  std::vector<std::vector<IntMatrix>> rows(flow.stage_count());
  for (const auto& seq : data)
    for (const auto& f : seq) {
      auto blocks = map_stages(f, flow);
      for (std::size_t s = 0; s < blocks.size(); ++s) rows[s].push_back(hard_quantize(blocks[s]).reshaped<Eigen::RowMajor>().transpose());
    }
  for (std::size_t s = 0; s < rows.size(); ++s) {
    out[s].resize(static_cast<Eigen::Index>(rows[s].size()), rows[s].empty() ? 0 : rows[s].front().cols());
    for (std::size_t i = 0; i < rows[s].size(); ++i) out[s].row(static_cast<Eigen::Index>(i)) = rows[s][i];
  }
  return out;
}

/// Rounded consecutive differences T(w_t) - T(w_{t-1}), per stage.
inline StageSymbols collect_difference_symbols(const FlowModel& flow, std::span<const LatentSequence> data) {
  StageSymbols out(flow.stage_count());
  std::vector<std::vector<IntMatrix>> rows(flow.stage_count());
  for (const auto& seq : data) {
    std::vector<Matrix> prev;
    for (const auto& f : seq) {
      auto blocks = map_stages(f, flow);
      if (!prev.empty())
        for (std::size_t s = 0; s < blocks.size(); ++s)
          rows[s].push_back(hard_quantize(blocks[s] - prev[s]).reshaped<Eigen::RowMajor>().transpose());
      prev = std::move(blocks);
    }
  }
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (rows[s].empty()) throw ConfigError("no frame pairs to collect differences from");
    out[s].resize(static_cast<Eigen::Index>(rows[s].size()), rows[s].front().cols());
    for (std::size_t i = 0; i < rows[s].size(); ++i) out[s].row(static_cast<Eigen::Index>(i)) = rows[s][i];
  }
  return out;
}

/// Freezes one table per model coordinate over the observed symbol range
/// widened by `margin`, always with an escape slot.
inline void freeze_tables(EntropyBundle& bundle, const StageSymbols& symbols, std::int32_t margin = kSupportMargin,
                          std::uint32_t precision = kDefaultPrecision) {
  if (symbols.size() != bundle.models.size()) throw ConfigError("symbol stages do not match entropy stages");
  bundle.tables.assign(bundle.models.size(), {});
  for (std::size_t s = 0; s < bundle.models.size(); ++s) {
    const auto& model = bundle.models[s];
    const std::size_t d_count = model.coord_count();
    const auto& sym = symbols[s];
    if (sym.rows() == 0) throw ConfigError("no symbols to fit table supports on");
    if (static_cast<std::size_t>(sym.cols()) % d_count != 0) throw ConfigError("symbol width does not tile the model");
    std::vector<std::int64_t> lo(d_count, std::numeric_limits<std::int64_t>::max());
    std::vector<std::int64_t> hi(d_count, std::numeric_limits<std::int64_t>::min());
    for (Eigen::Index r = 0; r < sym.rows(); ++r)
      for (Eigen::Index c = 0; c < sym.cols(); ++c) {
        const auto d = static_cast<std::size_t>(c) % d_count;
        lo[d] = std::min<std::int64_t>(lo[d], sym(r, c));
        hi[d] = std::max<std::int64_t>(hi[d], sym(r, c));
      }
    for (std::size_t d = 0; d < d_count; ++d) {
      std::int64_t a = lo[d] - margin, b = hi[d] + margin;
      if (b - a + 1 > kMaxSupportWidth) {
        const std::int64_t mid = (a + b) / 2;
        a = mid - kMaxSupportWidth / 2;
        b = a + kMaxSupportWidth - 1;
      }
      bundle.tables[s].push_back(freeze_pmf(model, d, static_cast<std::int32_t>(a), static_cast<std::int32_t>(b),
                                            precision, EscapePolicy::Always)
                                     .table);
    }
  }
}

// ---- container ----------------------------------------------------------------------

struct ContainerHeader {
  CodingMode mode = CodingMode::Intra;
  std::uint16_t layers = 0;
  std::uint16_t channels = 0;
  std::uint32_t frame_count = 0;
  std::uint16_t g = 0;
  std::vector<StageRange> stages;
  std::uint32_t width = 1024;
  std::uint32_t height = 1024;
  Digest flow_digest{}, entropy_digest{}, intra_digest{};

  void write(ByteWriter& w) const {
    w.tag("SGVC");
    w.u16(kContainerVersion);
    w.u8(static_cast<std::uint8_t>(mode));
    w.u16(layers);
    w.u16(channels);
    w.u32(frame_count);
    w.u16(g);
    w.u16(static_cast<std::uint16_t>(stages.size()));
    for (const auto& r : stages) {
      w.u16(static_cast<std::uint16_t>(r.start));
      w.u16(static_cast<std::uint16_t>(r.end));
    }
    w.u32(width);
    w.u32(height);
    w.raw(flow_digest);
    w.raw(entropy_digest);
    w.raw(intra_digest);
  }

  static ContainerHeader read(ByteReader& r) {
    ContainerHeader h;
    r.expect_tag("SGVC", "container");
    const auto vat = r.offset();
    if (auto v = r.u16(); v != kContainerVersion) throw UnsupportedVersion(v, vat);
    const auto mat = r.offset();
    const auto mode = r.u8();
    if (mode > 2) throw FormatError("unknown coding mode " + std::to_string(mode), mat);
    h.mode = static_cast<CodingMode>(mode);
    h.layers = r.u16();
    h.channels = r.u16();
    h.frame_count = r.u32();
    h.g = r.u16();
    const std::size_t stages = r.u16();
    for (std::size_t s = 0; s < stages; ++s) {
      const std::size_t a = r.u16();
      const std::size_t b = r.u16();
      h.stages.push_back({a, b});
    }
    h.width = r.u32();
    h.height = r.u32();
    auto digest = [&](Digest& d) {
      auto b = r.raw(32, "model digest");
      std::copy(b.begin(), b.end(), d.begin());
    };
    digest(h.flow_digest);
    digest(h.entropy_digest);
    digest(h.intra_digest);
    return h;
  }
};

struct ImageSize {
  std::uint32_t width = 1024;
  std::uint32_t height = 1024;
};

struct EncodeStats {
  std::size_t symbols = 0;
  std::size_t escapes = 0;
  std::size_t payload_bytes = 0;  // rANS payload bytes over all chunks
  std::vector<std::string> warnings;
};

struct EncodeResult {
  Bytes container;
  std::vector<IntMatrix> states;  // reconstruction in the learned space, one L x C matrix per frame
  EncodeStats stats;
};

struct DecodeResult {
  ContainerHeader header;
  std::vector<IntMatrix> states;
  std::vector<LatentCode> frames;  // T^-1(state), in encoder space
  bool truncated = false;
};

struct DecodeOptions {
  bool allow_truncated = false;  // return the complete frames before a cut instead of failing
};

inline double bpp(const Bytes& container) {
  ByteReader r(container);
  const auto h = ContainerHeader::read(r);
  return bpp(container.size(), h.frame_count, h.width, h.height);
}

namespace detail {

enum class FrameCoding { Intra, Diff, DiffResidual };

inline FrameCoding frame_coding(CodingMode mode, std::size_t t, unsigned g) {
  if (mode == CodingMode::Intra || t == 0) return FrameCoding::Intra;
  if (t % g != 0) return FrameCoding::Diff;
  return mode == CodingMode::InterResidual ? FrameCoding::DiffResidual : FrameCoding::Intra;
}

inline std::vector<std::int32_t> flatten(const IntMatrix& m) {
  return {m.data(), m.data() + m.size()};
}

inline IntMatrix unflatten(const std::vector<std::int32_t>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const IntMatrix>(v.data(), rows, cols);
}

inline IntMatrix state_block(const IntMatrix& state, const StageRange& r) {
  return state.middleRows(static_cast<Eigen::Index>(r.start), static_cast<Eigen::Index>(r.size()));
}

inline IntMatrix checked_add(const IntMatrix& a, const IntMatrix& b) {
  IntMatrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const std::int64_t v = std::int64_t{a.data()[i]} + b.data()[i];
    if (v > std::numeric_limits<std::int32_t>::max() || v < std::numeric_limits<std::int32_t>::min())
      throw NumericError("reconstruction state overflows 32 bits");
    out.data()[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

inline Matrix to_real(const IntMatrix& m) { return m.cast<double>(); }

/// One frame's chunks. `primary` symbols use `tables`, `residual` (if any) the residual table.
struct FrameSymbols {
  IntMatrix primary;
  std::optional<IntMatrix> residual;
};

class ContainerWriter {
 public:
  ContainerWriter(const CodecBundle& bundle, CodingMode mode, std::size_t frames, ImageSize img) : bundle_(bundle) {
    ContainerHeader h;
    h.mode = mode;
    h.layers = static_cast<std::uint16_t>(bundle.layout().layers());
    h.channels = static_cast<std::uint16_t>(bundle.flow().channels());
    h.frame_count = static_cast<std::uint32_t>(frames);
    h.g = static_cast<std::uint16_t>(mode == CodingMode::Intra ? 0 : bundle.g());
    h.stages = bundle.layout().stages();
    h.width = img.width;
    h.height = img.height;
    h.flow_digest = bundle.flow_digest();
    h.entropy_digest = mode == CodingMode::Intra && bundle.has_intra_model() ? bundle.intra_digest()
                                                                               : bundle.entropy_digest();
    if (mode != CodingMode::Intra) h.intra_digest = bundle.intra_digest();
    h.write(w_);
  }

  /// Codes one frame; `symbols[s]` are the stage blocks.
  void frame(const std::vector<FrameSymbols>& symbols, bool intra, EncodeStats& stats) {
    const auto& ent = intra ? bundle_.intra_entropy() : bundle_.entropy();
    for (std::size_t s = 0; s < symbols.size(); ++s) {
      auto flat = flatten(symbols[s].primary);
      const std::size_t primary = flat.size();
      if (symbols[s].residual) {
        auto res = flatten(*symbols[s].residual);
        flat.insert(flat.end(), res.begin(), res.end());
      }
      auto table_for = [&](std::size_t i) -> const PmfTable& {
        return i < primary ? ent.table(s, i) : bundle_.residual_table();
      };
      for (std::size_t i = 0; i < flat.size(); ++i) stats.escapes += table_for(i).in_support(flat[i]) ? 0 : 1;
      stats.symbols += flat.size();
      auto chunk = encode_with(flat, table_for);
      stats.payload_bytes += chunk.payload.size();
      chunk.write(w_);
    }
  }

  Bytes finish(EncodeStats& stats) && {
    if (stats.symbols > 0 && static_cast<double>(stats.escapes) > kEscapeWarnFraction * static_cast<double>(stats.symbols))
      stats.warnings.push_back("escape rate " + std::to_string(stats.escapes) + "/" + std::to_string(stats.symbols) +
                               " exceeds 10%: table supports do not match the data");
    return std::move(w_).bytes();
  }

 private:
  const CodecBundle& bundle_;
  ByteWriter w_;
};

inline void check_shape(const LatentSequence& seq, const CodecBundle& bundle) {
  if (seq.layers() != bundle.layout().layers() || seq.channels() != bundle.flow().channels())
    throw ConfigError("latent shape does not match the codec bundle");
}

inline std::vector<FrameSymbols> split_state(const IntMatrix& m, const StageLayout& layout) {
  std::vector<FrameSymbols> out;
  for (const auto& r : layout.stages()) out.push_back({state_block(m, r), std::nullopt});
  return out;
}

}  // namespace detail

/// Every frame coded independently: rounded T(w).
inline EncodeResult encode_intra(const LatentSequence& seq, const CodecBundle& bundle, ImageSize img = {}) {
  detail::check_shape(seq, bundle);
  EncodeResult out;
  detail::ContainerWriter writer(bundle, CodingMode::Intra, seq.size(), img);
  for (const auto& w : seq) {
    const IntMatrix sym = hard_quantize(flow_forward(w, bundle.flow()).data());
    writer.frame(detail::split_state(sym, bundle.layout()), true, out.stats);
    out.states.push_back(sym);
  }
  out.container = std::move(writer).finish(out.stats);
  return out;
}

inline EncodeResult encode_intra(const LatentCode& w, const CodecBundle& bundle, ImageSize img = {}) {
  return encode_intra(LatentSequence({w}), bundle, img);
}

/// Inter coding: frame 0 intra; then rounded differences of consecutive
/// mapped codes, and every g-th frame either a rounded residual against the
/// running estimate or an intra refresh.
inline EncodeResult encode_inter(const LatentSequence& seq, const CodecBundle& bundle, bool intra_refresh = false,
                                 ImageSize img = {}) {
  detail::check_shape(seq, bundle);
  const auto mode = intra_refresh ? CodingMode::InterRefresh : CodingMode::InterResidual;
  EncodeResult out;
  detail::ContainerWriter writer(bundle, mode, seq.size(), img);
  const auto& layout = bundle.layout();
  Matrix prev_mapped;
  IntMatrix state;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const Matrix mapped = flow_forward(seq[t], bundle.flow()).data();
    const auto coding = detail::frame_coding(mode, t, bundle.g());
    if (coding == detail::FrameCoding::Intra) {
      state = hard_quantize(mapped);
      writer.frame(detail::split_state(state, layout), true, out.stats);
    } else {
      const IntMatrix v = hard_quantize(mapped - prev_mapped);
      const IntMatrix estimate = detail::checked_add(state, v);
      auto symbols = detail::split_state(v, layout);
      if (coding == detail::FrameCoding::DiffResidual) {
        const IntMatrix r = hard_quantize(mapped - detail::to_real(estimate));
        for (std::size_t s = 0; s < symbols.size(); ++s) symbols[s].residual = detail::state_block(r, layout.stage(s));
        state = detail::checked_add(estimate, r);
      } else {
        state = estimate;
      }
      writer.frame(symbols, false, out.stats);
    }
    out.states.push_back(state);
    prev_mapped = mapped;
  }
  out.container = std::move(writer).finish(out.stats);
  return out;
}

/// Decodes an intra or inter container. Refuses containers whose model
/// digests differ from the bundle's.
inline DecodeResult decode(std::span<const std::uint8_t> container, const CodecBundle& bundle, DecodeOptions opt = {}) {
  ByteReader r(container);
  DecodeResult out;
  out.header = ContainerHeader::read(r);
  const auto& h = out.header;
  const Digest expect_entropy = h.mode == CodingMode::Intra && bundle.has_intra_model() ? bundle.intra_digest()
                                                                                         : bundle.entropy_digest();
  const Digest expect_intra = h.mode == CodingMode::Intra ? Digest{} : bundle.intra_digest();
  if (h.flow_digest != bundle.flow_digest())
    throw DigestMismatch("flow model digest mismatch: container " + hex(h.flow_digest) + ", bundle " +
                         hex(bundle.flow_digest()));
  if (h.entropy_digest != expect_entropy)
    throw DigestMismatch("entropy model digest mismatch: container " + hex(h.entropy_digest) + ", bundle " +
                         hex(expect_entropy));
  if (h.intra_digest != expect_intra) throw DigestMismatch("intra entropy model digest mismatch");
  if (h.layers != bundle.layout().layers() || h.channels != bundle.flow().channels() ||
      h.stages != bundle.layout().stages())
    throw FormatError("container shape or stage layout differs from the bundle", 0);
  if (h.mode != CodingMode::Intra && h.g != bundle.g())
    throw ConfigError("container uses g=" + std::to_string(h.g) + " but the bundle has g=" + std::to_string(bundle.g()));

  const auto& layout = bundle.layout();
  const auto c = static_cast<Eigen::Index>(h.channels);
  IntMatrix state;
  for (std::size_t t = 0; t < h.frame_count; ++t) {
    const auto coding = detail::frame_coding(h.mode, t, h.g == 0 ? 1 : h.g);
    const bool intra = coding == detail::FrameCoding::Intra;
    const auto& ent = intra ? bundle.intra_entropy() : bundle.entropy();
    IntMatrix primary(static_cast<Eigen::Index>(h.layers), c), residual;
    if (coding == detail::FrameCoding::DiffResidual) residual.resize(primary.rows(), c);
    try {
      for (std::size_t s = 0; s < layout.stage_count(); ++s) {
        const auto& rg = layout.stage(s);
        const auto rows = static_cast<Eigen::Index>(rg.size());
        const std::size_t n = static_cast<std::size_t>(rows * c);
        const std::size_t total = coding == detail::FrameCoding::DiffResidual ? 2 * n : n;
        const auto chunk = EncodedChunk::read(r);
        auto flat = decode_with(chunk, total, [&](std::size_t i) -> const PmfTable& {
          return i < n ? ent.table(s, i) : bundle.residual_table();
        });
        primary.middleRows(static_cast<Eigen::Index>(rg.start), rows) =
            Eigen::Map<const IntMatrix>(flat.data(), rows, c);
        if (total > n)
          residual.middleRows(static_cast<Eigen::Index>(rg.start), rows) =
              Eigen::Map<const IntMatrix>(flat.data() + n, rows, c);
      }
    } catch (const FormatError&) {
      if (!opt.allow_truncated) throw;
      out.truncated = true;
      break;
    }
    if (intra)
      state = primary;
    else {
      state = detail::checked_add(state, primary);
      if (coding == detail::FrameCoding::DiffResidual) state = detail::checked_add(state, residual);
    }
    out.states.push_back(state);
    out.frames.push_back(flow_inverse(LatentCode(detail::to_real(state)), bundle.flow()));
  }
  if (!out.truncated && !r.at_end()) throw FormatError("trailing bytes after the last chunk", r.offset());
  return out;
}

/// Single-frame intra container -> reconstructed code in encoder space.
inline LatentCode decode_intra(std::span<const std::uint8_t> container, const CodecBundle& bundle) {
  auto d = decode(container, bundle);
  if (d.header.mode != CodingMode::Intra) throw FormatError("container is not intra coded", 0);
  if (d.frames.size() != 1)
    throw FormatError("intra container holds " + std::to_string(d.frames.size()) + " frames, expected 1", 0);
  return std::move(d.frames.front());
}

inline LatentSequence decode_inter(std::span<const std::uint8_t> container, const CodecBundle& bundle,
                                   DecodeOptions opt = {}) {
  auto d = decode(container, bundle, opt);
  if (d.header.mode == CodingMode::Intra) throw FormatError("container is intra coded", 0);
  if (d.frames.empty()) throw FormatError("no complete frame in the container", 0);
  return LatentSequence(std::move(d.frames));
}

/// Learned-model rate estimate, in bits, of the rounded T(w) symbols.
inline double estimate_intra_bits(const LatentCode& w, const CodecBundle& bundle) {
  const auto blocks = map_stages(w, bundle.flow());
  const auto& ent = bundle.intra_entropy();
  double bits = 0;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const auto& model = ent.models.at(s);
    const IntMatrix q = hard_quantize(blocks[s]);
    const auto d = static_cast<Eigen::Index>(model.coord_count());
    const Matrix flat = q.cast<double>().reshaped<Eigen::RowMajor>(q.size() / d, d);
    bits += rate_bits(flat, model).bits;
  }
  return bits;
}

}  // namespace sganc
