#pragma once

// Single-trip persistent set: a chaining hash map whose nodes are entries of
// an enhanced persistent log. Only the log is durable; buckets, chain links,
// the version counter and the reuse queue are volatile and rebuilt by
// recover().
//
// Node layout (node_lines cache lines):
//   line 0: [meta][descriptor][48 key/value bytes]
//   line l>0: [56 key/value bytes][validity word]
// meta: v1 bit 0, v2 bit 1, txncount bits 2..9, version bits 10..63.
// descriptor: key length bits 0..7, tombstone bit 8, value length bits 16..31.
// Key and value form one byte stream (key first) over the data areas.
// Validity word of line l>0: bit 0 is the line's single bit; lines that
// carry key bytes (or every line in dual mode) also use bit 1, flipped
// before any data so a torn line can never look valid.
// Version 0 marks an empty node; all-zero memory is an empty set.

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcso/errors.hpp"
#include "pcso/pmem.hpp"

namespace pcso {

struct StpsMeta {
  static constexpr std::uint64_t kMaxVersion = (std::uint64_t{1} << 54) - 1;
  bool v1 = false;
  bool v2 = false;
  std::uint8_t txncount = 0;
  std::uint64_t version = 0;

  std::uint64_t encode() const {
    if (version > kMaxVersion) throw UsageError("STPS version exceeds 54 bits");
    return std::uint64_t{v1} | (std::uint64_t{v2} << 1) | (std::uint64_t{txncount} << 2) | (version << 10);
  }
  static StpsMeta decode(std::uint64_t w) {
    return {(w & 1) != 0, ((w >> 1) & 1) != 0, static_cast<std::uint8_t>((w >> 2) & 0xff), w >> 10};
  }
  bool operator==(const StpsMeta&) const = default;
};

// Every line in dual mode carries two validity bits; in single mode only
// line 0 and key-bearing lines do, so a torn value line of an entry that
// still shows its old key may surface as the old key with mixed value bytes.
enum class LineValidity { single, dual };

inline constexpr std::size_t kStpsLine0Data = kLineSize - 2 * kWordSize;  // 48
inline constexpr std::size_t kStpsLineData = kLineSize - kWordSize;       // 56
inline constexpr std::size_t kStpsMaxKey = kStpsLine0Data + kStpsLineData;  // 104

inline std::size_t stps_stream_capacity(std::size_t node_lines) {
  return kStpsLine0Data + (node_lines - 1) * kStpsLineData;
}

// Byte address (relative to the node) of stream byte `i`.
inline std::size_t stps_stream_addr(std::size_t i) {
  if (i < kStpsLine0Data) return 2 * kWordSize + i;
  i -= kStpsLine0Data;
  return kLineSize * (1 + i / kStpsLineData) + i % kStpsLineData;
}

struct StpsEntry {
  StpsMeta meta;
  std::string key;
  bool tombstone = false;
  std::string value;
};

struct StpsSlotView {
  bool valid = false;  // all validity bits equal
  StpsEntry entry;     // decoded only when valid and non-empty
  bool empty() const { return valid && entry.meta.version == 0; }
};

class StpsLayout {
 public:
  StpsLayout(std::size_t node_lines, LineValidity mode) : node_lines_(node_lines), mode_(mode) {
    if (node_lines == 0 || node_lines > 16) throw UsageError("STPS node size must be 1..16 lines");
  }
  std::size_t node_lines() const { return node_lines_; }
  std::size_t node_bytes() const { return node_lines_ * kLineSize; }
  LineValidity mode() const { return mode_; }
  std::size_t max_key() const { return std::min(kStpsMaxKey, stps_stream_capacity(node_lines_)); }

  bool two_bit_line(std::size_t line, std::size_t key_len) const {
    return mode_ == LineValidity::dual || (line == 1 && key_len > kStpsLine0Data);
  }

  void check(const std::string& key, std::size_t value_len) const {
    if (key.size() > max_key())
      throw UsageError("STPS key of " + std::to_string(key.size()) + " bytes exceeds " + std::to_string(max_key()));
    if (key.size() + value_len > stps_stream_capacity(node_lines_))
      throw UsageError("STPS key+value of " + std::to_string(key.size() + value_len) + " bytes exceeds node capacity " +
                       std::to_string(stps_stream_capacity(node_lines_)));
  }

  // All validity bits of the node at `addr` equal?
  bool bits_equal(SimMemory& mem, std::size_t addr, bool* common = nullptr) const {
    StpsMeta m = StpsMeta::decode(mem.load_word(addr));
    if (m.v1 != m.v2) return false;
    for (std::size_t l = 1; l < node_lines_; ++l) {
      std::uint64_t vw = mem.load_word(addr + l * kLineSize + kStpsLineData);
      if (((vw & 1) != 0) != m.v1 || (((vw >> 1) & 1) != 0) != m.v1) return false;
    }
    if (common) *common = m.v1;
    return true;
  }

  StpsSlotView read(SimMemory& mem, std::size_t addr) const {
    StpsSlotView out;
    StpsMeta m = StpsMeta::decode(mem.load_word(addr));
    if (m.v1 != m.v2) return out;
    std::uint64_t desc = mem.load_word(addr + kWordSize);
    std::size_t key_len = desc & 0xff;
    bool tomb = ((desc >> 8) & 1) != 0;
    std::size_t value_len = (desc >> 16) & 0xffff;
    for (std::size_t l = 1; l < node_lines_; ++l) {
      std::uint64_t vw = mem.load_word(addr + l * kLineSize + kStpsLineData);
      if (((vw & 1) != 0) != m.v1) return out;
      if (two_bit_line(l, key_len) && (((vw >> 1) & 1) != 0) != m.v1) return out;
    }
    out.valid = true;
    out.entry.meta = m;
    if (m.version == 0) return out;
    if (key_len > max_key() || key_len + value_len > stps_stream_capacity(node_lines_)) {
      out.valid = false;  // cannot come from a completed append
      return out;
    }
    Bytes stream = load_stream(mem, addr, key_len + value_len);
    out.entry.key.assign(stream.begin(), stream.begin() + key_len);
    out.entry.value.assign(stream.begin() + key_len, stream.end());
    out.entry.tombstone = tomb;
    return out;
  }

  // Stages an append (everything but the final sfence): flip the first bits,
  // fence, data, fence, publish meta and line bits, flush every line.
  void stage_append(SimMemory& mem, std::size_t addr, const StpsEntry& e) const {
    check(e.key, e.value.size());
    bool old = false;
    if (!bits_equal(mem, addr, &old))
      throw InvariantError("STPS append precondition: validity bits of the node are not all equal");
    const bool now = !old;
    StpsMeta m = StpsMeta::decode(mem.load_word(addr));
    m.v1 = now;
    mem.store_word(addr, m.encode());
    for (std::size_t l = 1; l < node_lines_; ++l)
      if (two_bit_line(l, e.key.size()))
        mem.store_word(addr + l * kLineSize + kStpsLineData, std::uint64_t{now} | (std::uint64_t{old} << 1));
    mem.release_fence();

    std::uint64_t desc = e.key.size() | (std::uint64_t{e.tombstone} << 8) | (std::uint64_t{e.value.size()} << 16);
    mem.store_word(addr + kWordSize, desc);
    Bytes stream(e.key.begin(), e.key.end());
    stream.insert(stream.end(), e.value.begin(), e.value.end());
    stream.resize(round_words(stream.size()), 0);
    for (std::size_t i = 0; i < stream.size(); i += kWordSize)
      mem.store(addr + stps_stream_addr(i), ByteView(stream.data() + i, kWordSize));

    StpsMeta fin{now, now, e.meta.txncount, e.meta.version};
    if (node_lines_ == 1) {
      mem.store_word(addr, fin.encode(), MemoryOrder::release);
    } else {
      mem.release_fence();
      mem.store_word(addr, fin.encode(), MemoryOrder::release);
      for (std::size_t l = 1; l < node_lines_; ++l)
        mem.store_word(addr + l * kLineSize + kStpsLineData, std::uint64_t{now} | (std::uint64_t{now} << 1));
    }
    mem.flush_range(addr, node_bytes());
  }

  // Empty node with equal bits (used for nodes recovery discards).
  void stage_reinit(SimMemory& mem, std::size_t addr) const {
    StpsMeta m = StpsMeta::decode(mem.load_word(addr));
    bool b = m.v1;
    mem.store_word(addr, StpsMeta{b, b, 0, 0}.encode());
    for (std::size_t l = 1; l < node_lines_; ++l)
      mem.store_word(addr + l * kLineSize + kStpsLineData, std::uint64_t{b} | (std::uint64_t{b} << 1));
    mem.flush_range(addr, node_bytes());
  }

 private:
  static std::size_t round_words(std::size_t n) { return (n + kWordSize - 1) / kWordSize * kWordSize; }

  Bytes load_stream(SimMemory& mem, std::size_t addr, std::size_t n) const {
    Bytes out(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t chunk_end = i < kStpsLine0Data ? kStpsLine0Data
                                                 : kStpsLine0Data + ((i - kStpsLine0Data) / kStpsLineData + 1) * kStpsLineData;
      std::size_t len = std::min(n, chunk_end) - i;
      mem.load(addr + stps_stream_addr(i), std::span<std::uint8_t>(out.data() + i, len));
      i += len;
    }
    return out;
  }

  std::size_t node_lines_;
  LineValidity mode_;
};

// Full append with its single fenced roundtrip.
inline void epl_append(SimMemory& mem, const StpsLayout& layout, std::size_t addr, const StpsEntry& e) {
  layout.stage_append(mem, addr, e);
  mem.sfence();
}

// FNV-1a followed by the splitmix64 finalizer.
inline std::uint64_t stps_hash(std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

struct StpsConfig {
  std::size_t base = 0;  // line aligned
  std::size_t slots = 1024;
  std::size_t node_lines = 1;
  std::size_t bucket_bits = 16;
  LineValidity mode = LineValidity::single;
};

struct StpsRecoveryStats {
  std::size_t valid_entries = 0;
  std::size_t invalid_slots = 0;
  std::size_t discarded_txn_entries = 0;
  std::size_t reinitialized = 0;
};

class StpsSet {
 public:
  static constexpr std::size_t kMaxTxn = 255;

  StpsSet(SimMemory& mem, StpsConfig cfg) : mem_(&mem), cfg_(cfg), layout_(cfg.node_lines, cfg.mode) {
    if (cfg.base % kLineSize != 0) throw UsageError("STPS region must be line aligned");
    if (cfg.slots == 0) throw UsageError("STPS needs at least one slot");
    if (cfg.base + cfg.slots * layout_.node_bytes() > mem.capacity()) throw UsageError("STPS region exceeds memory");
    if (cfg.bucket_bits > 30) throw UsageError("bucket_bits too large");
    recover();
  }

  static std::size_t region_bytes(const StpsConfig& c) { return c.slots * c.node_lines * kLineSize; }

  const StpsLayout& layout() const { return layout_; }
  const StpsConfig& config() const { return cfg_; }
  std::size_t size() const { return live_count_; }
  std::uint64_t next_version() const { return next_version_; }
  std::size_t reusable() const { return fifo_.size(); }
  std::size_t fresh() const { return fresh_.size(); }
  std::vector<std::size_t> reuse_queue() const { return {fifo_.begin(), fifo_.end()}; }
  const StpsRecoveryStats& last_recovery() const { return recovery_stats_; }
  std::size_t slot_addr(std::size_t slot) const { return cfg_.base + slot * layout_.node_bytes(); }

  std::optional<std::string> get(std::string_view key) const {
    std::int64_t cur = buckets_[bucket(key)];
    while (cur >= 0) {
      const Node& n = nodes_[cur];
      if (n.key == key) return n.value;
      cur = n.next;
    }
    return std::nullopt;
  }

  // Slot currently holding `key`'s live entry.
  std::optional<std::size_t> slot_of(std::string_view key) const {
    std::int64_t cur = buckets_[bucket(key)];
    while (cur >= 0) {
      if (nodes_[cur].key == key) return static_cast<std::size_t>(cur);
      cur = nodes_[cur].next;
    }
    return std::nullopt;
  }

  // Volatile snapshot of the map contents.
  std::map<std::string, std::string> contents() const {
    std::map<std::string, std::string> out;
    for (const auto& n : nodes_)
      if (n.state == State::live) out.emplace(n.key, n.value);
    return out;
  }

  void update(const std::string& key, const std::string& value) {
    layout_.check(key, value.size());
    Pending p = take_slots(1).front();
    StpsEntry e{{false, false, 1, next_version_++}, key, false, value};
    epl_append(*mem_, layout_, slot_addr(p.slot), e);
    finish_write(p);
    link_data(p.slot, e);
  }

  // Same events as update(); the flush overlaps bucket navigation and the
  // fence comes last.
  void update_optimized(const std::string& key, const std::string& value) {
    layout_.check(key, value.size());
    Pending p = take_slots(1).front();
    StpsEntry e{{false, false, 1, next_version_++}, key, false, value};
    layout_.stage_append(*mem_, slot_addr(p.slot), e);
    std::int64_t* prev = nullptr;
    std::int64_t cur = find(key, prev);
    mem_->sfence();
    finish_write(p);
    link_data(p.slot, e, prev, cur);
  }

  // Appends a remove entry; the removed data entry and then the remove
  // entry itself become reusable.
  void remove(const std::string& key) {
    std::int64_t* prev = nullptr;
    if (find(key, prev) < 0) return;
    layout_.check(key, 0);
    Pending p = take_slots(1).front();
    StpsEntry e{{false, false, 1, next_version_++}, key, true, {}};
    epl_append(*mem_, layout_, slot_addr(p.slot), e);
    finish_write(p);
    std::int64_t cur = find(key, prev);
    *prev = nodes_[cur].next;
    --live_count_;
    retire(static_cast<std::size_t>(cur));
    set_node(p.slot, e);
    retire(p.slot);
  }

  // All pairs share one version and carry txncount = n; flushes are
  // pipelined behind a single fence.
  void txn_update(const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty()) return;
    if (pairs.size() > kMaxTxn) throw UsageError("transaction of " + std::to_string(pairs.size()) + " elements exceeds 255");
    std::unordered_map<std::string, int> seen;
    for (const auto& [k, v] : pairs) {
      layout_.check(k, v.size());
      if (seen[k]++) throw UsageError("transaction writes key '" + k + "' twice");
    }
    std::vector<Pending> slots = take_slots(pairs.size());
    std::uint64_t version = next_version_++;
    std::vector<StpsEntry> entries;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      entries.push_back({{false, false, static_cast<std::uint8_t>(pairs.size()), version}, pairs[i].first, false,
                         pairs[i].second});
      layout_.stage_append(*mem_, slot_addr(slots[i].slot), entries.back());
    }
    mem_->sfence();
    for (const Pending& p : slots) finish_write(p);
    if (pairs.size() > 1) groups_[version] = Group{pairs.size(), {}};
    for (std::size_t i = 0; i < pairs.size(); ++i) link_data(slots[i].slot, entries[i]);
  }

  // Rebuild the volatile state from the durable nodes.
  void recover() {
    recovery_stats_ = {};
    nodes_.assign(cfg_.slots, Node{});
    buckets_.assign(std::size_t{1} << cfg_.bucket_bits, -1);
    fifo_.clear();
    fresh_.clear();
    groups_.clear();
    unreclaimed_.clear();
    waiting_.clear();
    live_count_ = 0;

    struct Found {
      std::size_t slot;
      StpsEntry e;
    };
    std::map<std::uint64_t, std::vector<Found>> by_version;
    std::vector<std::size_t> reinit;
    std::uint64_t max_version = 0;
    for (std::size_t s = 0; s < cfg_.slots; ++s) {
      StpsSlotView v = layout_.read(*mem_, slot_addr(s));
      if (!v.valid) {
        ++recovery_stats_.invalid_slots;
        reinit.push_back(s);
        continue;
      }
      if (v.entry.meta.version == 0) {
        fresh_.push_back(s);
        continue;
      }
      ++recovery_stats_.valid_entries;
      max_version = std::max(max_version, v.entry.meta.version);
      by_version[v.entry.meta.version].push_back({s, std::move(v.entry)});
    }

    for (auto& [version, group] : by_version) {
      bool committed = std::all_of(group.begin(), group.end(),
                                   [&](const Found& f) { return f.e.meta.txncount == group.size(); });
      if (!committed) {
        recovery_stats_.discarded_txn_entries += group.size();
        for (const Found& f : group) reinit.push_back(f.slot);
        continue;
      }
      if (group.size() > 1) groups_[version] = Group{group.size(), {}};
      // replay in version order, retiring what each entry supersedes
      for (Found& f : group) {
        if (f.e.tombstone) {
          std::int64_t* prev = nullptr;
          std::int64_t cur = find(f.e.key, prev);
          if (cur >= 0) {
            *prev = nodes_[cur].next;
            --live_count_;
            retire(static_cast<std::size_t>(cur));
          }
          set_node(f.slot, f.e);
          retire(f.slot);
        } else {
          link_data(f.slot, f.e);
        }
      }
    }

    for (std::size_t s : reinit) layout_.stage_reinit(*mem_, slot_addr(s));
    if (!reinit.empty()) mem_->sfence();
    recovery_stats_.reinitialized = reinit.size();
    for (std::size_t s : reinit) fresh_.push_back(s);
    std::sort(fresh_.begin(), fresh_.end());
    next_version_ = max_version + 1;
  }

 private:
  enum class State { empty, live, parked, queued, waiting };

  struct Node {
    State state = State::empty;
    std::string key;
    std::string value;
    bool tombstone = false;
    std::uint64_t version = 0;
    std::size_t txncount = 0;
    std::int64_t next = -1;
  };

  struct Group {
    std::size_t size = 0;
    std::vector<std::size_t> dead;  // retired members, in retirement order
  };

  struct Pending {
    std::size_t slot;
    std::optional<std::string> overwritten_key;  // previous dead data entry
  };

  std::size_t bucket(std::string_view key) const {
    return static_cast<std::size_t>(stps_hash(key) & ((std::uint64_t{1} << cfg_.bucket_bits) - 1));
  }

  // Returns the node holding `key` (or -1); `prev` points at the link to patch.
  std::int64_t find(std::string_view key, std::int64_t*& prev) {
    prev = &buckets_[bucket(key)];
    while (*prev >= 0) {
      if (nodes_[*prev].key == key) return *prev;
      prev = &nodes_[*prev].next;
    }
    return -1;
  }

  void set_node(std::size_t slot, const StpsEntry& e) {
    Node& n = nodes_[slot];
    n = Node{};
    n.key = e.key;
    n.value = e.value;
    n.tombstone = e.tombstone;
    n.version = e.meta.version;
    n.txncount = e.meta.txncount;
  }

  void link_data(std::size_t slot, const StpsEntry& e) {
    std::int64_t* prev = nullptr;
    std::int64_t cur = find(e.key, prev);
    link_data(slot, e, prev, cur);
  }

  void link_data(std::size_t slot, const StpsEntry& e, std::int64_t* prev, std::int64_t cur) {
    set_node(slot, e);
    Node& n = nodes_[slot];
    n.state = State::live;
    if (cur >= 0) {
      n.next = nodes_[cur].next;
      *prev = static_cast<std::int64_t>(slot);
      retire(static_cast<std::size_t>(cur));
    } else {
      n.next = *prev;
      *prev = static_cast<std::int64_t>(slot);
      ++live_count_;
    }
  }

  // Reuse rules:
  //  - members of a multi-element transaction are parked until the whole
  //    group is dead, so reusing one never discards a live sibling;
  //  - a remove entry waits until every dead data entry of its key has been
  //    overwritten, so reusing it can never revive the key.
  void retire(std::size_t slot) {
    Node& n = nodes_[slot];
    n.next = -1;
    if (n.tombstone) {
      if (unreclaimed_[n.key] == 0) {
        n.state = State::queued;
        fifo_.push_back(slot);
      } else {
        n.state = State::waiting;
        waiting_[n.key].push_back(slot);
      }
      return;
    }
    ++unreclaimed_[n.key];
    auto g = groups_.find(n.version);
    if (n.txncount > 1 && g != groups_.end()) {
      n.state = State::parked;
      g->second.dead.push_back(slot);
      if (g->second.dead.size() == g->second.size) {
        for (std::size_t s : g->second.dead) {
          nodes_[s].state = State::queued;
          fifo_.push_back(s);
        }
        groups_.erase(g);
      }
      return;
    }
    n.state = State::queued;
    fifo_.push_back(slot);
  }

  std::vector<Pending> take_slots(std::size_t n) {
    if (fifo_.size() + fresh_.size() < n) throw CapacityError("STPS: no free or reusable node");
    std::vector<Pending> out;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fifo_.empty()) {
        std::size_t s = fifo_.front();
        fifo_.pop_front();
        Node& old = nodes_[s];
        out.push_back({s, old.tombstone ? std::nullopt : std::optional<std::string>(old.key)});
        old = Node{};
      } else {
        out.push_back({fresh_.front(), std::nullopt});
        fresh_.pop_front();
      }
    }
    return out;
  }

  // Called once the write into a reused node is durable.
  void finish_write(const Pending& p) {
    if (!p.overwritten_key) return;
    auto it = unreclaimed_.find(*p.overwritten_key);
    if (it == unreclaimed_.end() || it->second == 0) throw InvariantError("STPS reuse bookkeeping out of sync");
    if (--it->second == 0) {
      auto w = waiting_.find(*p.overwritten_key);
      if (w != waiting_.end()) {
        for (std::size_t s : w->second) {
          nodes_[s].state = State::queued;
          fifo_.push_back(s);
        }
        waiting_.erase(w);
      }
      unreclaimed_.erase(it);
    }
  }

  SimMemory* mem_;
  StpsConfig cfg_;
  StpsLayout layout_;
  std::vector<Node> nodes_;
  std::vector<std::int64_t> buckets_;
  std::deque<std::size_t> fifo_;
  std::deque<std::size_t> fresh_;
  std::map<std::uint64_t, Group> groups_;
  std::unordered_map<std::string, std::size_t> unreclaimed_;
  std::unordered_map<std::string, std::vector<std::size_t>> waiting_;
  std::size_t live_count_ = 0;
  std::uint64_t next_version_ = 1;
  StpsRecoveryStats recovery_stats_;
};

}  // namespace pcso
