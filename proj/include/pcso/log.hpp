#pragma once

// Append/recover/trim contract over a circular log region in simulated NVM.
//
// Region layout: line 0 is the control line whose first word is the head
// word; fixed-size slots follow. Slots are addressed by an absolute index
// that only grows; slot position is index % slot_count and the pass over
// the buffer is index / slot_count. Each log instance carries one payload
// size, so entry boundaries never need to be parsed from a torn image.

#include <bit>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "pcso/errors.hpp"
#include "pcso/pmem.hpp"

namespace pcso {

struct LogRegion {
  std::size_t base = 0;  // line aligned
  std::size_t size = 0;  // multiple of the line size, includes the control line
};

struct EntryRef {
  std::uint64_t index = 0;
  bool operator==(const EntryRef&) const = default;
};

struct RecoveredEntry {
  Bytes payload;
  std::size_t position = 0;  // byte address of the slot
  std::uint64_t index = 0;
  std::size_t age_rank = 0;  // 0 = oldest
};

struct SlotVerdict {
  std::uint64_t index = 0;  // absolute index the slot was interpreted as
  std::size_t position = 0;
  bool valid = false;      // the slot's own validity check
  bool recovered = false;  // returned by recover()
};

// Head word: bits 0..62 absolute head index, bit 63 polarity. Polarity 0
// means a set validity bit marks a valid entry; it flips on every pass, so a
// zeroed control line decodes as an empty log in its first pass.
struct HeadWord {
  static constexpr std::uint64_t kPolarityBit = std::uint64_t{1} << 63;
  std::uint64_t head = 0;
  bool polarity = false;

  std::uint64_t encode() const { return (head & ~kPolarityBit) | (polarity ? kPolarityBit : 0); }
  static HeadWord decode(std::uint64_t w) { return {w & ~kPolarityBit, (w & kPolarityBit) != 0}; }
};

// Entries up to a line share lines evenly (power-of-two size); larger
// entries occupy whole lines.
inline std::size_t slot_size_for(std::size_t entry_bytes) {
  if (entry_bytes == 0) throw UsageError("empty entry");
  if (entry_bytes <= kLineSize) return std::max<std::size_t>(kWordSize, std::bit_ceil(entry_bytes));
  return (entry_bytes + kLineSize - 1) / kLineSize * kLineSize;
}

inline std::size_t round_up_words(std::size_t n) { return (n + kWordSize - 1) / kWordSize * kWordSize; }

class PersistentLog {
 public:
  virtual ~PersistentLog() = default;
  PersistentLog(const PersistentLog&) = delete;
  PersistentLog& operator=(const PersistentLog&) = delete;

  virtual std::string_view name() const = 0;

  std::size_t payload_size() const { return payload_size_; }
  std::size_t slot_size() const { return slot_size_; }
  std::size_t slot_count() const { return slot_count_; }
  // Slots usable by live entries (some algorithms keep spare slots).
  std::size_t capacity_slots() const { return slot_count_ - reserve_; }
  const LogRegion& region() const { return region_; }
  SimMemory& memory() { return *mem_; }

  std::uint64_t head() const { return head_; }
  std::uint64_t tail() const { return tail_; }
  std::size_t size() const { return live_.size(); }
  bool empty() const { return live_.empty(); }
  std::vector<EntryRef> live_entries() const {
    std::vector<EntryRef> out;
    for (const auto& e : live_) out.push_back({e.index});
    return out;
  }

  // Flushes issued for off-critical-path initialization.
  std::uint64_t background_flushes() const { return background_flushes_; }

  // Initialize a region for first use: one batched flush plus fence.
  void format() {
    for (std::size_t off = kLineSize; off < region_.size; off += kWordSize)
      mem_->store_word(region_.base + off, initial_word());
    mem_->store_word(region_.base, HeadWord{}.encode());
    mem_->flush_range(region_.base, region_.size);
    mem_->sfence();
    head_ = tail_ = 0;
    live_.clear();
  }

  EntryRef append(ByteView payload) {
    if (payload.size() > payload_size_)
      throw UsageError(std::string(name()) + ": payload too large (" + std::to_string(payload.size()) + " > " +
                       std::to_string(payload_size_) + ")");
    if (payload.size() != payload_size_)
      throw UsageError(std::string(name()) + ": payload must be exactly " + std::to_string(payload_size_) + " bytes");
    validate_payload(payload);
    std::size_t span = slots_needed(payload);
    if (tail_ + span - head_ > capacity_slots()) throw CapacityError(std::string(name()) + ": log full");
    std::uint64_t index = tail_;
    write_entry(index, payload);
    tail_ += span;
    live_.push_back({index, span});
    return {index};
  }

  // Rebuild volatile state from the durable image; returns entries old->new.
  std::vector<RecoveredEntry> recover() {
    HeadWord hw = HeadWord::decode(mem_->load_word(region_.base));
    if (hw.polarity != (((hw.head / slot_count_) & 1) != 0))
      throw RecoveryError(std::string(name()) + ": corrupt head word (polarity does not match head index)");
    head_ = hw.head;
    live_.clear();
    std::vector<RecoveredEntry> out;
    tail_ = scan(head_, out);
    for (std::size_t r = 0; r < out.size(); ++r) out[r].age_rank = r;
    return out;
  }

  // Discard every entry up to and including `upto`.
  void trim(EntryRef upto) {
    if (upto.index < head_) return;
    if (upto.index >= tail_) throw UsageError(std::string(name()) + ": trim past tail");
    std::uint64_t new_head = head_;
    while (!live_.empty() && live_.front().index <= upto.index) {
      new_head = live_.front().index + live_.front().span;
      live_.pop_front();
    }
    if (new_head == head_) return;
    std::uint64_t old_head = head_;
    HeadWord hw{new_head, ((new_head / slot_count_) & 1) != 0};
    mem_->store_word(region_.base, hw.encode(), MemoryOrder::release);
    mem_->clflushopt(region_.base / kLineSize);
    mem_->sfence();
    head_ = new_head;
    after_trim(old_head, new_head);
  }

  void trim_all() {
    if (!live_.empty()) trim({live_.back().index});
  }

  // Read back a live entry's payload (no validity check, no events).
  Bytes read(EntryRef e) { return read_payload(e.index); }

  // Per-slot verdicts in scan order starting at the durable head.
  std::vector<SlotVerdict> inspect() {
    std::vector<RecoveredEntry> rec = recover();
    std::vector<SlotVerdict> out;
    std::size_t r = 0;
    for (std::uint64_t i = head_; i < head_ + slot_count_; ++i) {
      SlotVerdict v{i, slot_addr(i), entry_valid(i), false};
      if (r < rec.size() && rec[r].index == i) {
        v.recovered = true;
        ++r;
      }
      out.push_back(v);
    }
    return out;
  }

 protected:
  struct Live {
    std::uint64_t index;
    std::size_t span;
  };

  PersistentLog(SimMemory& mem, LogRegion region, std::size_t payload_size, std::size_t slot_size,
                std::size_t reserve = 0)
      : mem_(&mem), region_(region), payload_size_(payload_size), slot_size_(slot_size), reserve_(reserve) {
    if (region.base % kLineSize != 0 || region.size % kLineSize != 0)
      throw UsageError("log region must be line aligned");
    if (region.base + region.size > mem.capacity()) throw UsageError("log region exceeds memory");
    if (payload_size == 0) throw UsageError("payload size must be positive");
    slot_count_ = region.size <= kLineSize ? 0 : (region.size - kLineSize) / slot_size;
    if (slot_count_ < reserve + 1) throw UsageError("log region too small for one entry");
  }

  // Writes the entry (and anything it needs) and makes it durable.
  virtual void write_entry(std::uint64_t index, ByteView payload) = 0;
  virtual bool entry_valid(std::uint64_t index) = 0;
  virtual Bytes read_payload(std::uint64_t index) = 0;
  virtual std::size_t slots_needed(ByteView) { return 1; }
  virtual void validate_payload(ByteView) {}
  virtual std::uint64_t initial_word() const { return 0; }
  virtual void after_trim(std::uint64_t /*old_head*/, std::uint64_t /*new_head*/) {}

  // Collect the valid run starting at `head`; returns the next free index.
  virtual std::uint64_t scan(std::uint64_t head, std::vector<RecoveredEntry>& out) {
    std::uint64_t i = head;
    while (i < head + capacity_slots() && entry_valid(i)) {
      out.push_back({read_payload(i), slot_addr(i), i, 0});
      live_.push_back({i, 1});
      ++i;
    }
    return i;
  }

  std::size_t data_base() const { return region_.base + kLineSize; }
  std::size_t slot_addr(std::uint64_t index) const { return data_base() + (index % slot_count_) * slot_size_; }
  // Value of a set validity bit for entries written at `index`.
  std::uint64_t valid_bit(std::uint64_t index) const { return ((index / slot_count_) & 1) == 0 ? 1 : 0; }

  Bytes load_bytes(std::size_t addr, std::size_t n) {
    Bytes b(n);
    mem_->load(addr, b);
    return b;
  }

  // Store `data` word by word (a word store is the atomic unit).
  void store_words(std::size_t addr, ByteView data, MemoryOrder last = MemoryOrder::relaxed) {
    for (std::size_t off = 0; off < data.size(); off += kWordSize) {
      std::size_t n = std::min(kWordSize, data.size() - off);
      bool is_last = off + kWordSize >= data.size();
      mem_->store(addr + off, data.subspan(off, n), is_last ? last : MemoryOrder::relaxed);
    }
  }

  SimMemory* mem_;
  LogRegion region_;
  std::size_t payload_size_;
  std::size_t slot_size_;
  std::size_t reserve_;
  std::size_t slot_count_ = 0;
  std::uint64_t head_ = 0;
  std::uint64_t tail_ = 0;
  std::deque<Live> live_;
  std::uint64_t background_flushes_ = 0;
};

}  // namespace pcso
