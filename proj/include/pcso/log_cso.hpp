#pragma once

// Single-roundtrip logs that rely on same-line store order:
//   CsoVbLog      dedicated validity-bit words interleaved with the payload
//   CsoRandomLog  region pre-filled with a random word; a line is written iff
//                 its last entry word no longer holds that word
//   CsoFvbLog     flexible validity bit: last bit where new content differs
//                 from the old log content, recorded in a metadata word

#include <array>
#include <bit>
#include <optional>
#include <set>

#include "pcso/log.hpp"

namespace pcso {

struct MetadataSlot {
  std::size_t offset = 0;  // byte offset inside the entry
  std::size_t width = kWordSize;
};

struct EntryLayout {
  std::size_t payload_len = 0;
  std::size_t total_len = 0;
  std::size_t payload_offset = 0;
  std::vector<MetadataSlot> metadata_slots;
};

// True iff every line overlapped by an entry placed at `entry_addr` holds at
// least one metadata bit of that entry.
inline bool layout_covers_every_line(const EntryLayout& l, std::size_t entry_addr) {
  std::size_t first = entry_addr / kLineSize;
  std::size_t last = (entry_addr + l.total_len - 1) / kLineSize;
  for (std::size_t line = first; line <= last; ++line) {
    bool found = false;
    for (const auto& m : l.metadata_slots)
      found |= (entry_addr + m.offset) / kLineSize == line;
    if (!found) return false;
  }
  return true;
}

// ---- CSO-VB ------------------------------------------------------------------

inline constexpr std::size_t kCsoVbMaxPayload = 2 * kLineSize - 2 * kWordSize;  // 112

inline EntryLayout csovb_layout(std::size_t payload_len) {
  if (payload_len == 0 || payload_len % kWordSize != 0)
    throw UsageError("CSO-VB payload must be a positive multiple of 8 bytes");
  if (payload_len > kCsoVbMaxPayload)
    throw UsageError("CSO-VB payload of " + std::to_string(payload_len) +
                     " bytes exceeds 112; use CSO-FVB or CSO-Random for larger entries");
  EntryLayout l;
  l.payload_len = payload_len;
  if (payload_len + kWordSize <= kLineSize) {
    l.total_len = slot_size_for(payload_len + kWordSize);
    l.payload_offset = 0;
    l.metadata_slots = {{payload_len, kWordSize}};
  } else {
    l.total_len = 2 * kLineSize;
    l.payload_offset = kWordSize;
    l.metadata_slots = {{0, kWordSize}, {2 * kLineSize - kWordSize, kWordSize}};
  }
  return l;
}

// Metadata word: bit 0 is the validity bit, the rest is reserved (zero).
class CsoVbLog : public PersistentLog {
 public:
  CsoVbLog(SimMemory& mem, LogRegion region, std::size_t payload_size)
      : PersistentLog(mem, region, payload_size, csovb_layout(payload_size).total_len),
        layout_(csovb_layout(payload_size)) {}

  std::string_view name() const override { return "csovb"; }
  const EntryLayout& layout() const { return layout_; }
  static std::size_t slot_bytes(std::size_t payload) { return csovb_layout(payload).total_len; }

 protected:
  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    store_words(addr + layout_.payload_offset, payload);
    for (const auto& m : layout_.metadata_slots)
      mem_->store_word(addr + m.offset, valid_bit(index), MemoryOrder::release);
    mem_->flush_range(addr, layout_.total_len);
    mem_->sfence();
  }

  bool entry_valid(std::uint64_t index) override {
    std::size_t addr = slot_addr(index);
    for (const auto& m : layout_.metadata_slots)
      if ((mem_->load_word(addr + m.offset) & 1) != valid_bit(index)) return false;
    return true;
  }

  Bytes read_payload(std::uint64_t index) override {
    return load_bytes(slot_addr(index) + layout_.payload_offset, payload_size_);
  }

  EntryLayout layout_;
};

// Deliberately broken CSO-VB: validity words are stored before the payload.
// Used to show that the crash harness catches ordering bugs.
class CsoVbMutantLog : public CsoVbLog {
 public:
  using CsoVbLog::CsoVbLog;
  std::string_view name() const override { return "csovb-mutant"; }

 protected:
  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    for (const auto& m : layout_.metadata_slots) mem_->store_word(addr + m.offset, valid_bit(index));
    store_words(addr + layout_.payload_offset, payload);
    mem_->flush_range(addr, layout_.total_len);
    mem_->sfence();
  }
};

// ---- CSO-Random -------------------------------------------------------------

inline constexpr std::uint64_t kRandomInitWord = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t kSentinelWord = ~kRandomInitWord;

// Payload laid out verbatim. Two spare slots stay free so the slot after the
// tail is durably initialized even while the latest trim's re-init is still
// riding on the next append's fence.
class CsoRandomLog : public PersistentLog {
 public:
  CsoRandomLog(SimMemory& mem, LogRegion region, std::size_t payload_size)
      : PersistentLog(mem, region, payload_size, slot_bytes(payload_size), 2) {}

  std::string_view name() const override { return "csorandom"; }

  static std::size_t slot_bytes(std::size_t payload) {
    if (payload == 0 || payload % kWordSize != 0)
      throw UsageError("CSO-Random payload must be a positive multiple of 8 bytes");
    return payload;
  }

  // Word offsets (inside a slot at `addr`) whose value decides each line.
  std::vector<std::size_t> check_offsets(std::size_t addr) const {
    std::vector<std::size_t> out;
    for (std::size_t off = 0; off < slot_size_; off += kWordSize) {
      bool last_in_line = (addr + off + kWordSize) % kLineSize == 0 || off + kWordSize == slot_size_;
      if (last_in_line) out.push_back(off);
    }
    return out;
  }

 protected:
  std::uint64_t initial_word() const override { return kRandomInitWord; }

  void validate_payload(ByteView payload) override {
    for (std::size_t off = 0; off < payload.size(); off += kWordSize)
      if (word_at(payload, off) == kSentinelWord)
        throw UsageError("csorandom: payload word equals the reserved sentinel value");
  }

  std::size_t slots_needed(ByteView payload) override { return collides(payload) ? 2 : 1; }

  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    write_slot(addr, payload);
    if (collides(payload)) {
      Bytes sentinel(slot_size_);
      for (std::size_t off = 0; off < slot_size_; off += kWordSize) std::memcpy(sentinel.data() + off, &kSentinelWord, 8);
      write_slot(slot_addr(index + 1), sentinel);
    }
  }

  bool entry_valid(std::uint64_t index) override {
    std::size_t addr = slot_addr(index);
    for (std::size_t off : check_offsets(addr))
      if (mem_->load_word(addr + off) == kRandomInitWord) return false;
    return !is_sentinel(index);
  }

  Bytes read_payload(std::uint64_t index) override { return load_bytes(slot_addr(index), payload_size_); }

  std::uint64_t scan(std::uint64_t head, std::vector<RecoveredEntry>& out) override {
    std::uint64_t i = head;
    const std::uint64_t end = head + capacity_slots();
    while (i < end) {
      if (is_sentinel(i)) break;  // orphan sentinel: nothing valid follows
      if (entry_valid(i)) {
        out.push_back({read_payload(i), slot_addr(i), i, 0});
        live_.push_back({i, 1});
        ++i;
      } else if (i + 1 < end && line_words_collide(i) && is_sentinel(i + 1)) {
        out.push_back({read_payload(i), slot_addr(i), i, 0});
        live_.push_back({i, 2});
        i += 2;
      } else {
        break;
      }
    }
    return i;
  }

  // Re-initialize freed slots now; their flushes complete at the next fence.
  void after_trim(std::uint64_t old_head, std::uint64_t new_head) override {
    std::set<std::size_t> lines;
    for (std::uint64_t i = old_head; i < new_head; ++i) {
      std::size_t addr = slot_addr(i);
      for (std::size_t off = 0; off < slot_size_; off += kWordSize) mem_->store_word(addr + off, kRandomInitWord);
      for (std::size_t l = addr / kLineSize; l <= (addr + slot_size_ - 1) / kLineSize; ++l) lines.insert(l);
    }
    for (std::size_t l : lines) mem_->clflushopt(l);
    background_flushes_ += lines.size();
  }

 private:
  static std::uint64_t word_at(ByteView b, std::size_t off) {
    std::uint64_t w = 0;
    std::memcpy(&w, b.data() + off, std::min(kWordSize, b.size() - off));
    return w;
  }

  bool collides(ByteView payload) const {
    // payload is placed at the tail slot; its line split depends on that address
    std::size_t addr = slot_addr(tail_);
    for (std::size_t off : check_offsets(addr))
      if (word_at(payload, off) == kRandomInitWord) return true;
    return false;
  }

  bool line_words_collide(std::uint64_t index) {
    std::size_t addr = slot_addr(index);
    for (std::size_t off : check_offsets(addr))
      if (mem_->load_word(addr + off) == kRandomInitWord) return true;
    return false;
  }

  bool is_sentinel(std::uint64_t index) {
    std::size_t addr = slot_addr(index);
    for (std::size_t off = 0; off < slot_size_; off += kWordSize)
      if (mem_->load_word(addr + off) != kSentinelWord) return false;
    return true;
  }

  void write_slot(std::size_t addr, ByteView content) {
    auto checks = check_offsets(addr);
    for (std::size_t off = 0; off < slot_size_; off += kWordSize) {
      bool check = std::find(checks.begin(), checks.end(), off) != checks.end();
      mem_->store(addr + off, content.subspan(off, kWordSize), check ? MemoryOrder::release : MemoryOrder::relaxed);
    }
    mem_->flush_range(addr, slot_size_);
    mem_->sfence();
  }
};

// ---- CSO-FVB ----------------------------------------------------------------

using LineWords = std::array<std::uint64_t, kWordsPerLine>;

struct FvbPair {
  std::uint16_t offset = 0;  // bit position within the line, < 512
  bool bit_value = false;
  bool operator==(const FvbPair&) const = default;
};

// Six (offset:9, value:1) pairs in bits 0..59, pair i at bits 10i..10i+9 with
// the offset low; bit 63 validates the metadata word itself.
struct FvbMeta {
  static constexpr std::size_t kPairs = 6;
  std::array<FvbPair, kPairs> pairs{};
  bool self_validity = false;

  std::uint64_t encode() const {
    std::uint64_t w = 0;
    for (std::size_t i = 0; i < kPairs; ++i) {
      if (pairs[i].offset >= 512) throw UsageError("FVB offset out of range");
      std::uint64_t p = pairs[i].offset | (std::uint64_t{pairs[i].bit_value} << 9);
      w |= p << (10 * i);
    }
    if (self_validity) w |= std::uint64_t{1} << 63;
    return w;
  }
  static FvbMeta decode(std::uint64_t w) {
    FvbMeta m;
    for (std::size_t i = 0; i < kPairs; ++i) {
      std::uint64_t p = (w >> (10 * i)) & 0x3ff;
      m.pairs[i] = {static_cast<std::uint16_t>(p & 0x1ff), ((p >> 9) & 1) != 0};
    }
    m.self_validity = ((w >> 63) & 1) != 0;
    return m;
  }
};

// Last bit (scanning from the top word down) where `next` differs from `old`.
inline std::optional<FvbPair> fvb_last_difference(const LineWords& next, const LineWords& old) {
  for (int j = static_cast<int>(kWordsPerLine) - 1; j >= 0; --j) {
    std::uint64_t diff = next[j] ^ old[j];
    if (diff != 0) {
      int bit = std::countr_zero(diff);
      return FvbPair{static_cast<std::uint16_t>(64 * j + bit), ((next[j] >> bit) & 1) != 0};
    }
  }
  return std::nullopt;
}

inline bool fvb_check_cacheline(const LineWords& line, FvbPair p) {
  if (p.offset >= 512) throw UsageError("FVB offset out of range");
  return ((line[p.offset / 64] >> (p.offset % 64)) & 1) == (p.bit_value ? 1u : 0u);
}

// Write `next` over the line at `line_addr` so the flexible validity bit is
// stored last: words below it plain, its word with release, words above it
// untouched (identical). Identical content issues no stores.
inline FvbPair fvb_write_cacheline(SimMemory& mem, std::size_t line_addr, const LineWords& next) {
  LineWords old{};
  for (std::size_t j = 0; j < kWordsPerLine; ++j) old[j] = mem.load_word(line_addr + 8 * j);
  auto diff = fvb_last_difference(next, old);
  if (!diff) return FvbPair{0, (next[0] & 1) != 0};
  std::size_t j = diff->offset / 64;
  for (std::size_t k = 0; k < j; ++k) mem.store_word(line_addr + 8 * k, next[k]);
  mem.store_word(line_addr + 8 * j, next[j], MemoryOrder::release);
  return *diff;
}

struct FvbLayout {
  std::size_t meta_words = 1;
  std::size_t lines = 1;  // lines covered by one entry (line 0 holds the metadata)
};

inline FvbLayout fvb_layout(std::size_t payload) {
  if (payload == 0) throw UsageError("CSO-FVB payload must be non-empty");
  FvbLayout l;
  while (true) {
    l.lines = (l.meta_words * kWordSize + payload + kLineSize - 1) / kLineSize;
    std::size_t groups = l.lines <= 1 ? 1 : (l.lines - 1 + FvbMeta::kPairs - 1) / FvbMeta::kPairs;
    if (groups == l.meta_words) break;
    l.meta_words = groups;
  }
  if (l.meta_words > kWordsPerLine) throw UsageError("CSO-FVB payload too large for one metadata line");
  return l;
}

// Entry = metadata words at the start of a line, payload right after.
// Line 0 is certified by the first metadata word's own validity bit (stored
// last in that line); every further line by one flexible pair.
class CsoFvbLog : public PersistentLog {
 public:
  CsoFvbLog(SimMemory& mem, LogRegion region, std::size_t payload_size)
      : PersistentLog(mem, region, payload_size, slot_bytes(payload_size)), layout_(fvb_layout(payload_size)) {}

  std::string_view name() const override { return "csofvb"; }
  const FvbLayout& layout() const { return layout_; }
  static std::size_t slot_bytes(std::size_t payload) { return fvb_layout(payload).lines * kLineSize; }

 protected:
  void write_entry(std::uint64_t index, ByteView payload) override {
    const std::size_t addr = slot_addr(index);
    const std::size_t meta_bytes = layout_.meta_words * kWordSize;
    // Image of the whole slot: bytes outside the payload keep their old value.
    Bytes image = load_bytes(addr, slot_size_);
    std::memcpy(image.data() + meta_bytes, payload.data(), payload.size());
    std::vector<FvbMeta> metas(layout_.meta_words);

    for (std::size_t line = 1; line < layout_.lines; ++line) {
      LineWords next{};
      std::memcpy(next.data(), image.data() + line * kLineSize, kLineSize);
      FvbPair p = fvb_write_cacheline(*mem_, addr + line * kLineSize, next);
      metas[(line - 1) / FvbMeta::kPairs].pairs[(line - 1) % FvbMeta::kPairs] = p;
    }
    std::size_t line0_payload_end = std::min(kLineSize, meta_bytes + payload.size());
    for (std::size_t off = meta_bytes; off < line0_payload_end; off += kWordSize)
      mem_->store(addr + off, ByteView(image.data() + off, kWordSize));
    metas[0].self_validity = valid_bit(index) != 0;
    for (std::size_t m = layout_.meta_words; m-- > 1;) mem_->store_word(addr + m * kWordSize, metas[m].encode());
    mem_->store_word(addr, metas[0].encode(), MemoryOrder::release);
    mem_->flush_range(addr, slot_size_);
    mem_->sfence();
  }

  bool entry_valid(std::uint64_t index) override {
    const std::size_t addr = slot_addr(index);
    std::vector<FvbMeta> metas;
    for (std::size_t m = 0; m < layout_.meta_words; ++m) metas.push_back(FvbMeta::decode(mem_->load_word(addr + m * kWordSize)));
    if ((metas[0].self_validity ? 1u : 0u) != valid_bit(index)) return false;
    for (std::size_t line = 1; line < layout_.lines; ++line) {
      LineWords words{};
      for (std::size_t j = 0; j < kWordsPerLine; ++j) words[j] = mem_->load_word(addr + line * kLineSize + 8 * j);
      if (!fvb_check_cacheline(words, metas[(line - 1) / FvbMeta::kPairs].pairs[(line - 1) % FvbMeta::kPairs]))
        return false;
    }
    return true;
  }

  Bytes read_payload(std::uint64_t index) override {
    return load_bytes(slot_addr(index) + layout_.meta_words * kWordSize, payload_size_);
  }

  FvbLayout layout_;
};

}  // namespace pcso
