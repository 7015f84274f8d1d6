#pragma once

// Byte-wise rANS over frozen PmfTables: 32-bit state kept in [2^23, 2^31),
// up to 16-bit table precision, symbols encoded last-to-first so the decoder
// runs forward. Out-of-support symbols go through the table's escape slot
// followed by the raw value as two uniform 16-bit symbols.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sganc/bytes.hpp"
#include "sganc/entropy_model.hpp"
#include "sganc/error.hpp"

namespace sganc {

inline constexpr std::uint32_t kRansLow = 1u << 23;
inline constexpr std::size_t kChunkHeaderBytes = 12;

struct SymbolStream {
  std::vector<std::int32_t> symbols;
  std::vector<std::uint32_t> table_ids;  // index into the table set, one per symbol
};

struct EncodedChunk {
  Bytes payload;
  std::uint32_t symbol_count = 0;
  std::uint32_t checksum = 0;

  std::size_t wire_size() const { return kChunkHeaderBytes + payload.size(); }

  void write(ByteWriter& w) const {
    w.u32(symbol_count);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.u32(checksum);
    w.raw(payload);
  }

  Bytes to_bytes() const {
    ByteWriter w;
    write(w);
    return std::move(w).bytes();
  }

  /// Reads one chunk; the checksum is verified at decode time.
  static EncodedChunk read(ByteReader& r) {
    EncodedChunk c;
    c.symbol_count = r.u32();
    const std::size_t len = r.u32();
    c.checksum = r.u32();
    auto p = r.raw(len, "chunk payload");
    c.payload.assign(p.begin(), p.end());
    return c;
  }
};

namespace detail {
struct RansEncoder {
  std::uint32_t x = kRansLow;
  Bytes reversed;

  void put(std::uint32_t start, std::uint32_t freq, std::uint32_t scale_bits) {
    const std::uint32_t x_max = ((kRansLow >> scale_bits) << 8) * freq;
    while (x >= x_max) {
      reversed.push_back(static_cast<std::uint8_t>(x & 0xFF));
      x >>= 8;
    }
    x = ((x / freq) << scale_bits) + (x % freq) + start;
  }

  Bytes finish() {
    for (int shift = 24; shift >= 0; shift -= 8) reversed.push_back(static_cast<std::uint8_t>(x >> shift));
    return Bytes(reversed.rbegin(), reversed.rend());
  }
};

class RansDecoder {
 public:
  explicit RansDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
    if (bytes_.size() < 4) throw DecodeError("payload shorter than the rANS state", 0);
    x_ = std::uint32_t(bytes_[0]) | std::uint32_t(bytes_[1]) << 8 | std::uint32_t(bytes_[2]) << 16 |
         std::uint32_t(bytes_[3]) << 24;
    pos_ = 4;
    if (x_ < kRansLow) throw DecodeError("invalid initial rANS state", 0);
  }

  std::uint32_t peek(std::uint32_t scale_bits) const { return x_ & ((1u << scale_bits) - 1); }

  void advance(std::uint32_t start, std::uint32_t freq, std::uint32_t scale_bits, std::size_t symbol_pos) {
    x_ = freq * (x_ >> scale_bits) + (x_ & ((1u << scale_bits) - 1)) - start;
    while (x_ < kRansLow) {
      if (pos_ >= bytes_.size()) throw DecodeError("truncated rANS payload", symbol_pos);
      x_ = (x_ << 8) | bytes_[pos_++];
    }
  }

  bool finished_cleanly() const { return x_ == kRansLow && pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t x_ = 0;
};

inline constexpr std::uint32_t kRawBits = 16;
}  // namespace detail

/// Encodes symbols[i] under table_for(i). `table_for` returns const PmfTable&.
template <class TableFor>
EncodedChunk encode_with(std::span<const std::int32_t> symbols, TableFor&& table_for) {
  EncodedChunk chunk;
  chunk.symbol_count = static_cast<std::uint32_t>(symbols.size());
  if (!symbols.empty()) {
    detail::RansEncoder enc;
    for (std::size_t i = symbols.size(); i-- > 0;) {
      const PmfTable& t = table_for(i);
      const std::int32_t s = symbols[i];
      if (t.in_support(s)) {
        const auto slot = t.slot_of(s);
        enc.put(t.start(slot), t.freq()[slot], t.precision());
        continue;
      }
      if (!t.has_escape())
        throw CodingError("symbol " + std::to_string(s) + " outside table support [" + std::to_string(t.support_min()) +
                              "," + std::to_string(t.support_max()) + "] and escapes are disabled",
                          i);
      const auto raw = static_cast<std::uint32_t>(s);
      // decoder order: escape slot, high half, low half
      enc.put(raw & 0xFFFF, 1, detail::kRawBits);
      enc.put(raw >> 16, 1, detail::kRawBits);
      enc.put(t.start(t.escape_slot()), t.freq()[t.escape_slot()], t.precision());
    }
    chunk.payload = enc.finish();
  }
  chunk.checksum = crc32_of(chunk.payload);
  return chunk;
}

/// Decodes exactly `count` symbols, symbol i under table_for(i).
template <class TableFor>
std::vector<std::int32_t> decode_with(const EncodedChunk& chunk, std::size_t count, TableFor&& table_for) {
  if (crc32_of(chunk.payload) != chunk.checksum) throw ChecksumError("chunk checksum mismatch", 0);
  if (count != chunk.symbol_count)
    throw DecodeError("requested " + std::to_string(count) + " symbols but the chunk holds " +
                          std::to_string(chunk.symbol_count),
                      std::min<std::size_t>(count, chunk.symbol_count));
  std::vector<std::int32_t> out;
  out.reserve(count);
  if (count == 0) {
    if (!chunk.payload.empty()) throw DecodeError("non-empty payload for an empty chunk", 0);
    return out;
  }
  detail::RansDecoder dec(chunk.payload);
  for (std::size_t i = 0; i < count; ++i) {
    const PmfTable& t = table_for(i);
    const auto slot = t.find_slot(dec.peek(t.precision()));
    dec.advance(t.start(slot), t.freq()[slot], t.precision(), i);
    if (t.has_escape() && slot == t.escape_slot()) {
      const std::uint32_t hi = dec.peek(detail::kRawBits);
      dec.advance(hi, 1, detail::kRawBits, i);
      const std::uint32_t lo = dec.peek(detail::kRawBits);
      dec.advance(lo, 1, detail::kRawBits, i);
      out.push_back(static_cast<std::int32_t>((hi << 16) | lo));
    } else {
      out.push_back(t.symbol_of(slot));
    }
  }
  if (!dec.finished_cleanly()) throw DecodeError("rANS state desynchronized after the last symbol", count);
  return out;
}

namespace detail {
inline const PmfTable& table_at(std::span<const PmfTable> tables, std::span<const std::uint32_t> ids, std::size_t i) {
  const auto id = ids[i];
  if (id >= tables.size()) throw CodingError("table id " + std::to_string(id) + " out of range", i);
  return tables[id];
}
}  // namespace detail

inline EncodedChunk encode_symbols(const SymbolStream& stream, std::span<const PmfTable> tables) {
  if (stream.symbols.size() != stream.table_ids.size())
    throw CodingError("symbol and table-id counts differ", std::min(stream.symbols.size(), stream.table_ids.size()));
  return encode_with(stream.symbols,
                     [&](std::size_t i) -> const PmfTable& { return detail::table_at(tables, stream.table_ids, i); });
}

/// Decodes table_ids.size() symbols.
inline SymbolStream decode_symbols(const EncodedChunk& chunk, std::span<const PmfTable> tables,
                                   std::span<const std::uint32_t> table_ids) {
  SymbolStream s;
  s.symbols = decode_with(chunk, table_ids.size(),
                          [&](std::size_t i) -> const PmfTable& { return detail::table_at(tables, table_ids, i); });
  s.table_ids.assign(table_ids.begin(), table_ids.end());
  return s;
}

/// Ideal code length of the stream under its tables (escape payloads included).
inline double table_cross_entropy_bits(const SymbolStream& stream, std::span<const PmfTable> tables) {
  double bits = 0;
  for (std::size_t i = 0; i < stream.symbols.size(); ++i)
    bits += detail::table_at(tables, stream.table_ids, i).cost_bits(stream.symbols[i]);
  return bits;
}

}  // namespace sganc
