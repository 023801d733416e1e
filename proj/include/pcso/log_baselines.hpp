#pragma once

// Comparison logs: per-word torn bits, checksummed entries, and linked
// entries that publish themselves through the predecessor's link word.

#include <boost/crc.hpp>

#include "pcso/log.hpp"

namespace pcso {

// ---- tornbit ----------------------------------------------------------------

inline constexpr std::size_t kTornbitPayloadBits = 63;

inline std::size_t tornbit_words(std::size_t payload_bytes) {
  return (payload_bytes * 8 + kTornbitPayloadBits - 1) / kTornbitPayloadBits;
}

// Packs payload bits LSB-first, 63 per word; bit 63 carries `valid_bit`.
inline std::vector<std::uint64_t> tornbit_pack(ByteView payload, std::uint64_t valid_bit) {
  std::vector<std::uint64_t> words(tornbit_words(payload.size()), 0);
  for (std::size_t bit = 0; bit < payload.size() * 8; ++bit) {
    if ((payload[bit / 8] >> (bit % 8)) & 1)
      words[bit / kTornbitPayloadBits] |= std::uint64_t{1} << (bit % kTornbitPayloadBits);
  }
  for (auto& w : words) w |= (valid_bit & 1) << 63;
  return words;
}

inline Bytes tornbit_unpack(const std::vector<std::uint64_t>& words, std::size_t payload_bytes) {
  if (words.size() < tornbit_words(payload_bytes)) throw UsageError("tornbit_unpack: too few words");
  Bytes out(payload_bytes, 0);
  for (std::size_t bit = 0; bit < payload_bytes * 8; ++bit) {
    if ((words[bit / kTornbitPayloadBits] >> (bit % kTornbitPayloadBits)) & 1)
      out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

class TornbitLog : public PersistentLog {
 public:
  TornbitLog(SimMemory& mem, LogRegion region, std::size_t payload_size)
      : PersistentLog(mem, region, payload_size, slot_bytes(payload_size)) {}

  std::string_view name() const override { return "tornbit"; }
  static std::size_t slot_bytes(std::size_t payload) { return tornbit_words(payload) * kWordSize; }

 protected:
  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    auto words = tornbit_pack(payload, valid_bit(index));
    for (std::size_t i = 0; i < words.size(); ++i) mem_->store_word(addr + i * kWordSize, words[i]);
    mem_->flush_range(addr, slot_size_);
    mem_->sfence();
  }

  bool entry_valid(std::uint64_t index) override {
    std::size_t addr = slot_addr(index);
    for (std::size_t off = 0; off < slot_size_; off += kWordSize)
      if ((mem_->load_word(addr + off) >> 63) != valid_bit(index)) return false;
    return true;
  }

  Bytes read_payload(std::uint64_t index) override {
    std::size_t addr = slot_addr(index);
    std::vector<std::uint64_t> words;
    for (std::size_t off = 0; off < slot_size_; off += kWordSize) words.push_back(mem_->load_word(addr + off));
    return tornbit_unpack(words, payload_size_);
  }
};

// ---- CRC32 / CRC64 ----------------------------------------------------------

enum class CrcKind { crc32c, crc64 };

// CRC-32C (Castagnoli, reflected) and CRC-64/ECMA-182 (non-reflected, no xor).
inline std::uint64_t crc_of(CrcKind kind, ByteView data) {
  if (kind == CrcKind::crc32c) {
    boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> c;
    c.process_bytes(data.data(), data.size());
    return c.checksum();
  }
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ull, 0, 0, false, false> c;
  c.process_bytes(data.data(), data.size());
  return c.checksum();
}

// Slot: [seq][len][payload, word padded][checksum]. seq = pass + 1, so a
// zeroed slot or a slot left over from an earlier pass never matches.
class CrcLog : public PersistentLog {
 public:
  static constexpr std::size_t kHeaderBytes = 2 * kWordSize;

  CrcLog(SimMemory& mem, LogRegion region, std::size_t payload_size, CrcKind kind)
      : PersistentLog(mem, region, payload_size, slot_bytes(payload_size)), kind_(kind) {}

  std::string_view name() const override { return kind_ == CrcKind::crc32c ? "crc32" : "crc64"; }
  CrcKind kind() const { return kind_; }

  static std::size_t slot_bytes(std::size_t payload) {
    return slot_size_for(kHeaderBytes + round_up_words(payload) + kWordSize);
  }
  std::size_t checksum_offset() const { return kHeaderBytes + round_up_words(payload_size_); }

  // Covered bytes: seq, len and the payload (without padding).
  std::uint64_t checksum_for(std::uint64_t seq, ByteView payload) const {
    Bytes buf(kHeaderBytes + payload.size());
    std::uint64_t len = payload.size();
    std::memcpy(buf.data(), &seq, 8);
    std::memcpy(buf.data() + 8, &len, 8);
    std::memcpy(buf.data() + kHeaderBytes, payload.data(), payload.size());
    return crc_of(kind_, buf);
  }

  std::uint64_t seq_for(std::uint64_t index) const { return index / slot_count_ + 1; }

 protected:
  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    std::uint64_t seq = seq_for(index);
    mem_->store_word(addr, seq);
    mem_->store_word(addr + 8, payload.size());
    store_words(addr + kHeaderBytes, payload);
    mem_->store_word(addr + checksum_offset(), checksum_for(seq, payload));
    mem_->flush_range(addr, checksum_offset() + kWordSize);
    mem_->sfence();
  }

  bool entry_valid(std::uint64_t index) override {
    std::size_t addr = slot_addr(index);
    std::uint64_t seq = mem_->load_word(addr);
    if (seq != seq_for(index) || mem_->load_word(addr + 8) != payload_size_) return false;
    return mem_->load_word(addr + checksum_offset()) == checksum_for(seq, read_payload(index));
  }

  Bytes read_payload(std::uint64_t index) override {
    return load_bytes(slot_addr(index) + kHeaderBytes, payload_size_);
  }

 private:
  CrcKind kind_;
};

// ---- linked logs (TwoRounds, AtlasLog) --------------------------------------

enum class LinkMode { two_rounds, atlas };

// Slot: [payload, word padded][next]. Entry i is published by storing
// i + 1 into the next word of slot i - 1; recovery follows those links from
// the head. One spare slot keeps the head's incoming link from being reused.
class LinkedLog : public PersistentLog {
 public:
  LinkedLog(SimMemory& mem, LogRegion region, std::size_t payload_size, LinkMode mode)
      : PersistentLog(mem, region, payload_size, slot_bytes(payload_size), 1), mode_(mode) {}

  std::string_view name() const override { return mode_ == LinkMode::two_rounds ? "tworounds" : "atlas"; }
  static std::size_t slot_bytes(std::size_t payload) { return slot_size_for(round_up_words(payload) + kWordSize); }

 protected:
  std::size_t next_addr(std::uint64_t index) const { return slot_addr(index) + slot_size_ - kWordSize; }
  std::size_t link_addr(std::uint64_t index) const { return next_addr(index + slot_count_ - 1); }
  static std::uint64_t link_value(std::uint64_t index) { return index + 1; }

  void write_entry(std::uint64_t index, ByteView payload) override {
    std::size_t addr = slot_addr(index);
    store_words(addr, payload);
    mem_->store_word(next_addr(index), 0);
    bool link_in_line = (link_addr(index) / kLineSize) == (addr / kLineSize) &&
                        (addr + slot_size_ - 1) / kLineSize == addr / kLineSize;
    if (mode_ == LinkMode::atlas && link_in_line) {
      // same line: the line's write order already puts the link after the data
      mem_->store_word(link_addr(index), link_value(index), MemoryOrder::release);
      mem_->flush_range(addr, slot_size_);
      mem_->sfence();
      return;
    }
    mem_->flush_range(addr, slot_size_);
    mem_->sfence();
    mem_->store_word(link_addr(index), link_value(index), MemoryOrder::release);
    mem_->clflushopt(link_addr(index) / kLineSize);
    mem_->sfence();
  }

  bool entry_valid(std::uint64_t index) override { return mem_->load_word(link_addr(index)) == link_value(index); }

  Bytes read_payload(std::uint64_t index) override { return load_bytes(slot_addr(index), payload_size_); }

 private:
  LinkMode mode_;
};

}  // namespace pcso
