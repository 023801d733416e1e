#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcso/logs.hpp"
#include "pcso/stps.hpp"

namespace pcso {

// Cost model shared by every benchmark cell; only the fence latency varies.
inline CostModel bench_cost(std::uint64_t latency_ns) {
  CostModel c;
  c.fence_latency_ns = latency_ns;
  c.roundtrip_ns = 20;
  c.store_ns = 1;
  c.flush_ns = 10;
  c.load_ns = 2;
  return c;
}

// ---------------------------------------------------------------------------
// Baseline hash set: out-of-place nodes made durable, then the incoming
// pointer swung and made durable (two fenced roundtrips per update).

struct BaselineConfig {
  std::size_t base = 0;
  std::size_t slots = 0;
  std::size_t node_lines = 1;
  unsigned bucket_bits = 16;
};

class TwoRoundsSet {
 public:
  // Node: header word, key/value stream, next word (slot + 1, 0 = end).
  static constexpr std::size_t kHeader = kWordSize;

  TwoRoundsSet(SimMemory& mem, BaselineConfig cfg)
      : mem_(&mem), cfg_(cfg), buckets_(std::size_t{1} << cfg.bucket_bits, -1), nodes_(cfg.slots) {
    if (cfg.base % kLineSize != 0) throw UsageError("baseline region must be line aligned");
    if (cfg.slots == 0 || cfg.node_lines == 0) throw UsageError("baseline set needs slots and lines");
    if (cfg.bucket_bits > 30) throw UsageError("bucket_bits too large");
    if (cfg.base + region_bytes(cfg) > mem.capacity()) throw UsageError("baseline region exceeds memory");
    for (std::size_t i = 0; i < cfg.slots; ++i) free_.push_back(i);
  }

  static std::size_t bucket_area(const BaselineConfig& c) {
    std::size_t b = (std::size_t{1} << c.bucket_bits) * kWordSize;
    return (b + kLineSize - 1) / kLineSize * kLineSize;
  }
  static std::size_t region_bytes(const BaselineConfig& c) {
    return bucket_area(c) + c.slots * c.node_lines * kLineSize;
  }
  std::size_t node_bytes() const { return cfg_.node_lines * kLineSize; }
  std::size_t stream_capacity() const { return node_bytes() - kHeader - kWordSize; }
  std::size_t slot_addr(std::size_t slot) const { return cfg_.base + bucket_area(cfg_) + slot * node_bytes(); }
  std::size_t size() const { return size_; }

  std::optional<std::string> get(std::string_view key) const {
    auto s = slot_of(key);
    if (!s) return std::nullopt;
    return nodes_[*s].value;
  }

  std::optional<std::size_t> slot_of(std::string_view key) const {
    for (std::int64_t cur = buckets_[bucket(key)]; cur >= 0; cur = nodes_[cur].next)
      if (nodes_[cur].key == key) return static_cast<std::size_t>(cur);
    return std::nullopt;
  }

  void update(const std::string& key, const std::string& value) {
    if (key.size() > 0xff || key.size() + value.size() > stream_capacity() || value.size() > 0xffff)
      throw UsageError("baseline set: key/value too large for node");
    if (free_.empty()) throw CapacityError("baseline set: no free node");
    std::size_t b = bucket(key);
    std::int64_t prev = -1;
    std::int64_t cur = buckets_[b];
    while (cur >= 0 && nodes_[cur].key != key) {
      prev = cur;
      cur = nodes_[cur].next;
    }
    std::size_t slot = free_.front();
    free_.pop_front();
    std::int64_t next = cur >= 0 ? nodes_[cur].next : buckets_[b];

    // Round one: the node itself.
    std::size_t addr = slot_addr(slot);
    mem_->store_word(addr, key.size() | (std::uint64_t{1} << 8) | (std::uint64_t{value.size()} << 16));
    Bytes stream(key.begin(), key.end());
    stream.insert(stream.end(), value.begin(), value.end());
    stream.resize((stream.size() + kWordSize - 1) / kWordSize * kWordSize, 0);
    for (std::size_t i = 0; i < stream.size(); i += kWordSize) {
      std::uint64_t w;
      std::memcpy(&w, stream.data() + i, kWordSize);
      mem_->store_word(addr + kHeader + i, w);
    }
    mem_->store_word(next_addr(slot), static_cast<std::uint64_t>(next + 1));
    mem_->flush_range(addr, node_bytes());
    mem_->sfence();

    // Round two: swing the incoming pointer.
    std::size_t ptr = cur < 0 || prev < 0 ? bucket_addr(b) : next_addr(static_cast<std::size_t>(prev));
    mem_->store_word(ptr, slot + 1);
    mem_->clflushopt(ptr / kLineSize);
    mem_->sfence();

    nodes_[slot] = {key, value, next};
    if (cur < 0) {
      buckets_[b] = static_cast<std::int64_t>(slot);
      ++size_;
    } else {
      if (prev < 0)
        buckets_[b] = static_cast<std::int64_t>(slot);
      else
        nodes_[prev].next = static_cast<std::int64_t>(slot);
      nodes_[cur] = {};
      free_.push_back(static_cast<std::size_t>(cur));
    }
  }

  // Rebuild the volatile index from durable memory.
  std::map<std::string, std::string> recover() {
    std::vector<bool> used(cfg_.slots, false);
    std::fill(buckets_.begin(), buckets_.end(), -1);
    size_ = 0;
    std::map<std::string, std::string> out;
    for (std::size_t b = 0; b < buckets_.size(); ++b) {
      std::uint64_t link = mem_->load_word(bucket_addr(b));
      std::int64_t* into = &buckets_[b];
      while (link != 0) {
        if (link > cfg_.slots) throw RecoveryError("baseline set: link out of range");
        std::size_t slot = link - 1;
        if (used[slot]) throw RecoveryError("baseline set: cycle in bucket chain");
        used[slot] = true;
        std::size_t addr = slot_addr(slot);
        std::uint64_t h = mem_->load_word(addr);
        std::size_t kl = h & 0xff, vl = (h >> 16) & 0xffff;
        if (kl + vl > stream_capacity()) throw RecoveryError("baseline set: bad node header");
        Bytes s(kl + vl);
        mem_->load(addr + kHeader, s);
        Node n{std::string(s.begin(), s.begin() + kl), std::string(s.begin() + kl, s.end()), -1};
        out[n.key] = n.value;
        nodes_[slot] = n;
        *into = static_cast<std::int64_t>(slot);
        into = &nodes_[slot].next;
        link = mem_->load_word(next_addr(slot));
        ++size_;
      }
    }
    free_.clear();
    for (std::size_t i = 0; i < cfg_.slots; ++i)
      if (!used[i]) {
        nodes_[i] = {};
        free_.push_back(i);
      }
    return out;
  }

 private:
  struct Node {
    std::string key;
    std::string value;
    std::int64_t next = -1;
  };

  std::size_t bucket(std::string_view key) const { return stps_hash(key) & (buckets_.size() - 1); }
  std::size_t bucket_addr(std::size_t b) const { return cfg_.base + b * kWordSize; }
  std::size_t next_addr(std::size_t slot) const { return slot_addr(slot) + node_bytes() - kWordSize; }

  SimMemory* mem_;
  BaselineConfig cfg_;
  std::vector<std::int64_t> buckets_;
  std::vector<Node> nodes_;
  std::deque<std::size_t> free_;
  std::size_t size_ = 0;
};

// ---------------------------------------------------------------------------
// Log append micro-benchmark.

struct BenchConfig {
  Algorithm algo = Algorithm::csovb;
  double entry_lines = 1;
  std::uint64_t latency_ns = 0;
  std::size_t iterations = 100000;
  std::size_t drain_interval = 512;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string algorithm;
  double entry_lines = 0;
  std::uint64_t latency_ns = 0;
  double appends_per_sec_wallclock = 0;
  double appends_per_sec_modeled = 0;
  double roundtrips_per_append = 0;
  std::size_t payload = 0;
};

inline std::string bench_csv_header() {
  return "algorithm,entry_lines,latency_ns,appends_per_sec_wallclock,appends_per_sec_modeled,roundtrips_per_append";
}

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string bench_csv_row(const BenchRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.0f,%.0f,%.4f", r.algorithm.c_str(), fmt_num(r.entry_lines).c_str(),
                static_cast<unsigned long long>(r.latency_ns), r.appends_per_sec_wallclock,
                r.appends_per_sec_modeled, r.roundtrips_per_append);
  return buf;
}

// Largest payload whose slot fits an entry of `entry_lines` cache lines.
inline std::size_t bench_payload(Algorithm a, double entry_lines) {
  double bytes = entry_lines * kLineSize;
  if (!(entry_lines > 0) || bytes != std::floor(bytes) || static_cast<std::size_t>(bytes) % kWordSize != 0)
    throw UsageError("entry size must be a positive multiple of 8 bytes");
  if ((a == Algorithm::csovb || a == Algorithm::csovb_mutant) && entry_lines > 2)
    throw UsageError("CSO-VB entries are limited to two cache lines");
  std::size_t entry = static_cast<std::size_t>(bytes);
  for (std::size_t p = entry; p >= kWordSize; p -= kWordSize) {
    try {
      if (slot_bytes(a, p) <= entry) return p;
    } catch (const UsageError&) {
    }
  }
  throw UsageError(std::string(algorithm_name(a)) + " does not support " + fmt_num(entry_lines) + "-line entries");
}

inline BenchRow bench(const BenchConfig& cfg) {
  if (cfg.drain_interval == 0 || cfg.iterations == 0) throw UsageError("iterations and drain interval must be positive");
  const std::size_t payload = bench_payload(cfg.algo, cfg.entry_lines);
  // Slack: a CSO-Random entry may occasionally take two slots.
  LogRegion region = region_for(cfg.algo, payload, cfg.drain_interval + cfg.drain_interval / 8 + 4);
  SimMemory mem(region.size, bench_cost(cfg.latency_ns), false);
  auto log = make_log(cfg.algo, mem, region, payload);
  log->format();

  std::mt19937_64 rng(cfg.seed);
  std::vector<Bytes> pool(64, Bytes(payload));
  for (auto& p : pool)
    for (auto& b : p) b = static_cast<std::uint8_t>(rng());

  const FlushStats before = mem.stats();
  std::uint64_t append_roundtrips = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    if (i > 0 && i % cfg.drain_interval == 0) {
      for (EntryRef e : log->live_entries()) (void)log->read(e);
      log->trim_all();
    }
    std::uint64_t rt = mem.stats().fenced_roundtrips;
    log->append(pool[i % pool.size()]);
    append_roundtrips += mem.stats().fenced_roundtrips - rt;
  }
  auto t1 = std::chrono::steady_clock::now();

  BenchRow r;
  r.algorithm = std::string(algorithm_name(cfg.algo));
  r.entry_lines = cfg.entry_lines;
  r.latency_ns = cfg.latency_ns;
  r.payload = payload;
  double secs = std::chrono::duration<double>(t1 - t0).count();
  r.appends_per_sec_wallclock = secs > 0 ? static_cast<double>(cfg.iterations) / secs : 0;
  double sim = static_cast<double>(mem.stats().simulated_time_ns - before.simulated_time_ns);
  r.appends_per_sec_modeled = sim > 0 ? static_cast<double>(cfg.iterations) * 1e9 / sim : 0;
  r.roundtrips_per_append = static_cast<double>(append_roundtrips) / static_cast<double>(cfg.iterations);
  return r;
}

// ---------------------------------------------------------------------------
// Read/update key-value workload over STPS and the baseline set.

struct YcsbConfig {
  double read_fraction = 0.5;
  std::size_t set_size = 2048;
  std::size_t node_lines = 1;
  std::uint64_t latency_ns = 0;
  std::size_t ops = 100000;
  std::uint64_t seed = 1;
};

struct YcsbRow {
  std::string variant;
  std::size_t set_size = 0;
  std::size_t node_lines = 0;
  std::uint64_t latency_ns = 0;
  double read_fraction = 0;
  double throughput_modeled = 0;
  double throughput_wallclock = 0;
};

inline std::string ycsb_csv_header() {
  return "variant,set_size,node_lines,latency_ns,read_fraction,throughput_modeled,throughput_wallclock";
}

inline std::string ycsb_csv_row(const YcsbRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%llu,%s,%.0f,%.0f", r.variant.c_str(), r.set_size, r.node_lines,
                static_cast<unsigned long long>(r.latency_ns), fmt_num(r.read_fraction).c_str(),
                r.throughput_modeled, r.throughput_wallclock);
  return buf;
}

namespace detail {

inline std::string ycsb_key(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "k%09zu", i);
  return buf;
}

template <class Set>
YcsbRow run_ycsb(const char* variant, Set& set, SimMemory& mem, const YcsbConfig& cfg, std::size_t node_bytes) {
  std::mt19937_64 rng(cfg.seed);
  std::size_t vlen = stps_stream_capacity(cfg.node_lines) - ycsb_key(0).size();
  std::vector<std::string> values(64);
  for (auto& v : values) {
    v.resize(vlen);
    for (auto& c : v) c = static_cast<char>('a' + rng() % 26);
  }
  for (std::size_t i = 0; i < cfg.set_size; ++i) set.update(ycsb_key(i), values[i % values.size()]);

  Bytes buf(node_bytes);
  const std::uint64_t sim0 = mem.stats().simulated_time_ns;
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < cfg.ops; ++i) {
    bool read = static_cast<double>(rng() >> 11) * 0x1.0p-53 < cfg.read_fraction;
    std::string key = ycsb_key(rng() % cfg.set_size);
    if (read) {
      auto slot = set.slot_of(key);
      if (!slot) throw InvariantError("ycsb: preloaded key missing");
      mem.load(set.slot_addr(*slot), buf);
    } else {
      set.update(key, values[rng() % values.size()]);
    }
  }
  auto t1 = std::chrono::steady_clock::now();

  YcsbRow r;
  r.variant = variant;
  r.set_size = cfg.set_size;
  r.node_lines = cfg.node_lines;
  r.latency_ns = cfg.latency_ns;
  r.read_fraction = cfg.read_fraction;
  double sim = static_cast<double>(mem.stats().simulated_time_ns - sim0);
  r.throughput_modeled = sim > 0 ? static_cast<double>(cfg.ops) * 1e9 / sim : 0;
  double secs = std::chrono::duration<double>(t1 - t0).count();
  r.throughput_wallclock = secs > 0 ? static_cast<double>(cfg.ops) / secs : 0;
  return r;
}

inline unsigned ycsb_bucket_bits(std::size_t n) {
  unsigned b = 1;
  while ((std::size_t{1} << b) < n && b < 30) ++b;
  return b;
}

}  // namespace detail

// Same operation sequence on both variants; returns {STPS, TwoRounds-set}.
inline std::vector<YcsbRow> ycsb(const YcsbConfig& cfg) {
  if (!(cfg.read_fraction >= 0 && cfg.read_fraction <= 1)) throw UsageError("read fraction must be in [0,1]");
  if (cfg.set_size == 0) throw UsageError("set size must be positive");
  if (cfg.node_lines < 1 || cfg.node_lines > 16) throw UsageError("node size must be 1..16 lines");
  const std::size_t slots = cfg.set_size + std::max<std::size_t>(64, cfg.set_size / 8);
  const unsigned bits = detail::ycsb_bucket_bits(cfg.set_size);
  std::vector<YcsbRow> out;
  {
    StpsConfig sc;
    sc.slots = slots;
    sc.node_lines = cfg.node_lines;
    sc.bucket_bits = bits;
    SimMemory mem(StpsSet::region_bytes(sc), bench_cost(cfg.latency_ns), false);
    StpsSet set(mem, sc);
    out.push_back(detail::run_ycsb("STPS", set, mem, cfg, cfg.node_lines * kLineSize));
  }
  {
    BaselineConfig bc{0, slots, cfg.node_lines, bits};
    SimMemory mem(TwoRoundsSet::region_bytes(bc), bench_cost(cfg.latency_ns), false);
    TwoRoundsSet set(mem, bc);
    out.push_back(detail::run_ycsb("TwoRounds-set", set, mem, cfg, cfg.node_lines * kLineSize));
  }
  return out;
}

}  // namespace pcso
