#pragma once

// Simulated CPU-cache-NVM stack obeying Persistent Cache Store Order.
//
// Stores land in a volatile cached image and are logged per cache line in
// program order. A crash image is described by a per-line prefix count
// ("cut"): the first cut[line] writes to that line reached NVM, later ones
// did not. Two rules restrict legal cuts:
//
//   granularity     writes to one line persist in program order; this is
//                   built into the prefix representation.
//   explicit flush  W <hb clflushopt(c(W)) <hb sfence <hb X  =>  W <p X.
//
// Nothing else orders persistence across lines; release stores and fences
// only order cache arrival, which the per-line log already captures.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcso/errors.hpp"

namespace pcso {

inline constexpr std::size_t kLineSize = 64;
inline constexpr std::size_t kWordSize = 8;
inline constexpr std::size_t kWordsPerLine = kLineSize / kWordSize;

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class MemoryOrder : std::uint8_t { relaxed, release };

struct WriteEvent {
  std::uint64_t seq = 0;
  std::size_t line = 0;
  std::size_t offset_in_line = 0;
  Bytes data;
  MemoryOrder ordering = MemoryOrder::relaxed;
  std::uint64_t after_release_fence = 0;  // seq of the latest release fence, 0 if none
};

enum class PersistEventKind : std::uint8_t { release_fence, clflushopt, sfence };

struct PersistEvent {
  std::uint64_t seq = 0;
  PersistEventKind kind = PersistEventKind::sfence;
  std::size_t line = 0;    // clflushopt only
  std::size_t prefix = 0;  // clflushopt only: writes to `line` covered by the flush
};

struct FlushStats {
  std::uint64_t clflushopt_count = 0;
  std::uint64_t sfence_count = 0;
  std::uint64_t fenced_roundtrips = 0;  // sfences that had at least one pending flush
  std::uint64_t simulated_time_ns = 0;
  std::uint64_t store_count = 0;
  std::uint64_t load_count = 0;
};

// Simulated time charges. Defaults charge only the added fence latency.
struct CostModel {
  std::uint64_t fence_latency_ns = 0;  // added delay per fenced roundtrip
  std::uint64_t roundtrip_ns = 0;      // intrinsic cost of a fenced roundtrip
  std::uint64_t store_ns = 0;          // per store call
  std::uint64_t flush_ns = 0;          // per clflushopt
  std::uint64_t load_ns = 0;           // per load call
};

// One persisted image: line -> number of that line's writes that reached NVM.
// Lines with a zero cut are omitted so equal states compare equal.
struct CrashState {
  std::map<std::size_t, std::size_t> cuts;
  std::uint64_t generation = 0;

  std::size_t cut(std::size_t line) const {
    auto it = cuts.find(line);
    return it == cuts.end() ? 0 : it->second;
  }
  void set_cut(std::size_t line, std::size_t value) {
    if (value == 0)
      cuts.erase(line);
    else
      cuts[line] = value;
  }
  bool operator==(const CrashState& o) const { return cuts == o.cuts && generation == o.generation; }
  bool operator<(const CrashState& o) const { return cuts < o.cuts; }
};

// A crash "after event tau" can leave a given state for tau in [earliest, latest].
struct CrashWindow {
  std::uint64_t earliest = 0;
  std::uint64_t latest = std::numeric_limits<std::uint64_t>::max();
};

enum class CrashScope : std::uint8_t {
  anytime,  // crash at any point of the recorded trace
  at_end,   // crash right now: everything fenced so far is durable
};

inline constexpr std::size_t kDefaultEnumerationLimit = std::size_t{1} << 22;

namespace detail {

inline std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline bool get_le(std::istream& in, std::uint64_t& v, int bytes) {
  v = 0;
  for (int i = 0; i < bytes; ++i) {
    int c = in.get();
    if (c == std::char_traits<char>::eof()) return false;
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return true;
}

}  // namespace detail

class SimMemory {
 public:
  static constexpr std::uint32_t kSnapshotVersion = 1;

  explicit SimMemory(std::size_t capacity, CostModel cost = {}, bool tracing = true)
      : SimMemory(Bytes(capacity, 0), cost, tracing) {}

  SimMemory(Bytes image, CostModel cost, bool tracing)
      : cached_(image), persisted_base_(std::move(image)), cost_(cost), tracing_(tracing),
        generation_(detail::next_generation()) {
    if (cached_.empty() || cached_.size() % kLineSize != 0)
      throw UsageError("capacity must be a positive multiple of the line size");
  }

  std::size_t capacity() const { return cached_.size(); }
  static constexpr std::size_t line_size() { return kLineSize; }
  std::size_t line_count() const { return cached_.size() / kLineSize; }
  std::uint64_t generation() const { return generation_; }

  const CostModel& cost_model() const { return cost_; }
  void set_cost_model(CostModel cost) { cost_ = cost; }
  bool tracing() const { return tracing_; }

  // Tracing off keeps only the cached image and statistics (benchmarks).
  // Crash-state operations then refuse to run until the next checkpoint().
  void set_tracing(bool on) {
    if (on && !tracing_) {
      tracing_ = true;
      checkpoint();
    } else if (!on) {
      tracing_ = false;
      broken_trace_ = true;
    }
  }

  const FlushStats& stats() const { return stats_; }
  std::span<const std::uint8_t> cached() const { return cached_; }
  const Bytes& persisted_base() const { return persisted_base_; }
  const std::vector<WriteEvent>& write_log() const { return write_log_; }
  const std::vector<PersistEvent>& flush_log() const { return flush_log_; }
  std::uint64_t next_seq() const { return next_seq_; }
  bool has_pending_flushes() const { return !pending_.empty(); }

  // ---- program-side operations -------------------------------------------

  void store(std::size_t addr, ByteView data, MemoryOrder order = MemoryOrder::relaxed) {
    if (data.empty()) return;
    if (addr > capacity() || data.size() > capacity() - addr)
      throw UsageError("store out of range: addr " + std::to_string(addr) + " len " +
                       std::to_string(data.size()));
    std::memcpy(cached_.data() + addr, data.data(), data.size());
    ++stats_.store_count;
    stats_.simulated_time_ns += cost_.store_ns;
    if (!tracing_) return;
    std::size_t done = 0;
    while (done < data.size()) {
      std::size_t a = addr + done;
      std::size_t line = a / kLineSize;
      std::size_t off = a % kLineSize;
      std::size_t n = std::min(kLineSize - off, data.size() - done);
      WriteEvent ev;
      ev.seq = next_seq_++;
      ev.line = line;
      ev.offset_in_line = off;
      ev.data.assign(data.begin() + static_cast<std::ptrdiff_t>(done),
                     data.begin() + static_cast<std::ptrdiff_t>(done + n));
      ev.ordering = order;
      ev.after_release_fence = last_release_fence_;
      lines_[line].writes.push_back(write_log_.size());
      write_log_.push_back(std::move(ev));
      done += n;
    }
  }

  void store_word(std::size_t addr, std::uint64_t value, MemoryOrder order = MemoryOrder::relaxed) {
    std::uint8_t buf[kWordSize];
    std::memcpy(buf, &value, kWordSize);  // host is little-endian (x86/ARM64 targets)
    store(addr, ByteView(buf, kWordSize), order);
  }

  void load(std::size_t addr, std::span<std::uint8_t> out) {
    if (addr > capacity() || out.size() > capacity() - addr) throw UsageError("load out of range");
    std::memcpy(out.data(), cached_.data() + addr, out.size());
    ++stats_.load_count;
    stats_.simulated_time_ns += cost_.load_ns;
  }

  std::uint64_t load_word(std::size_t addr) {
    std::uint64_t v = 0;
    load(addr, std::span<std::uint8_t>(reinterpret_cast<std::uint8_t*>(&v), kWordSize));
    return v;
  }

  // Uncharged read of the cached image (tests, inspection).
  std::uint64_t peek_word(std::size_t addr) const {
    if (addr > capacity() || kWordSize > capacity() - addr) throw UsageError("peek out of range");
    std::uint64_t v = 0;
    std::memcpy(&v, cached_.data() + addr, kWordSize);
    return v;
  }

  void release_fence() {
    if (!tracing_) return;
    last_release_fence_ = next_seq_;
    flush_log_.push_back({next_seq_++, PersistEventKind::release_fence, 0, 0});
  }

  void clflushopt(std::size_t line) {
    if (line >= line_count()) throw UsageError("clflushopt: line out of range");
    ++stats_.clflushopt_count;
    stats_.simulated_time_ns += cost_.flush_ns;
    std::size_t prefix = 0;
    if (tracing_) {
      auto it = lines_.find(line);
      prefix = it == lines_.end() ? 0 : it->second.writes.size();
      flush_log_.push_back({next_seq_++, PersistEventKind::clflushopt, line, prefix});
    }
    auto& p = pending_[line];
    p = std::max(p, prefix);
  }

  // Flush every line overlapping [addr, addr + len).
  void flush_range(std::size_t addr, std::size_t len) {
    if (len == 0) return;
    for (std::size_t l = addr / kLineSize; l <= (addr + len - 1) / kLineSize; ++l) clflushopt(l);
  }

  void sfence() {
    ++stats_.sfence_count;
    if (!pending_.empty()) {
      ++stats_.fenced_roundtrips;
      stats_.simulated_time_ns += cost_.fence_latency_ns + cost_.roundtrip_ns;
    }
    if (tracing_) {
      std::uint64_t seq = next_seq_++;
      flush_log_.push_back({seq, PersistEventKind::sfence, 0, 0});
      for (auto [line, prefix] : pending_) {
        auto& hist = lines_[line];
        std::size_t cur = hist.raises.empty() ? 0 : hist.raises.back().second;
        if (prefix > cur) hist.raises.emplace_back(seq, prefix);
      }
    }
    pending_.clear();
  }

  // Treat the current cached image as durable and drop the trace.
  void checkpoint() {
    persisted_base_ = cached_;
    write_log_.clear();
    flush_log_.clear();
    lines_.clear();
    pending_.clear();
    last_release_fence_ = 0;
    broken_trace_ = false;
    generation_ = detail::next_generation();
  }

  // ---- crash-state generation ---------------------------------------------

  CrashState empty_state() const {
    require_trace();
    return CrashState{{}, generation_};
  }

  CrashState full_state() const {
    require_trace();
    CrashState s{{}, generation_};
    for (const auto& [line, hist] : lines_) s.set_cut(line, hist.writes.size());
    return s;
  }

  // Durable floor right now: prefixes made mandatory by completed sfences.
  CrashState durable_floor() const {
    require_trace();
    CrashState s{{}, generation_};
    for (const auto& [line, hist] : lines_)
      if (!hist.raises.empty()) s.set_cut(line, hist.raises.back().second);
    return s;
  }

  // True iff the cut tuple satisfies both persist rules for some crash point.
  bool is_consistent(const CrashState& s) const {
    require_trace();
    check_shape(s);
    std::uint64_t latest = latest_included_seq(s);
    for (const auto& [line, hist] : lines_)
      if (s.cut(line) < floor_at(hist, latest)) return false;
    return true;
  }

  CrashWindow crash_window(const CrashState& s) const {
    require_trace();
    check_shape(s);
    CrashWindow w;
    w.earliest = latest_included_seq(s);
    for (const auto& [line, hist] : lines_) {
      std::size_t c = s.cut(line);
      for (const auto& [seq, prefix] : hist.raises) {
        if (prefix > c) {
          w.latest = std::min(w.latest, seq - 1);
          break;
        }
      }
    }
    return w;
  }

  bool legal_at_end(const CrashState& s) const {
    return is_consistent(s) && crash_window(s).latest == std::numeric_limits<std::uint64_t>::max();
  }

  // Every consistent state, grouped by its latest persisted write (each state
  // has exactly one), preceded by the empty state. Deterministic order.
  std::vector<CrashState> enumerate_crash_states(std::size_t limit = kDefaultEnumerationLimit,
                                                 CrashScope scope = CrashScope::anytime) const {
    require_trace();
    std::vector<std::size_t> line_ids;
    for (const auto& [line, hist] : lines_) line_ids.push_back(line);

    struct Plan {
      std::size_t write_index;
      std::vector<std::pair<std::size_t, std::size_t>> ranges;  // per line_ids entry
    };
    std::vector<Plan> plans;
    double total = 1;  // empty state
    for (std::size_t wi = 0; wi < write_log_.size(); ++wi) {
      const WriteEvent& w = write_log_[wi];
      Plan p{wi, {}};
      double count = 1;
      for (std::size_t line : line_ids) {
        const LineHistory& hist = lines_.at(line);
        std::size_t lo, hi;
        if (line == w.line) {
          lo = hi = index_in_line(hist, w.seq) + 1;
        } else {
          lo = floor_at(hist, w.seq);
          hi = writes_before(hist, w.seq);
        }
        p.ranges.emplace_back(lo, hi);
        count *= static_cast<double>(hi - lo + 1);
      }
      total += count;
      if (total > static_cast<double>(limit))
        throw LimitError("crash-state enumeration exceeds limit " + std::to_string(limit) +
                         "; use sample_crash_state instead");
      plans.push_back(std::move(p));
    }

    std::vector<CrashState> out;
    out.push_back(CrashState{{}, generation_});
    for (const Plan& p : plans) {
      std::vector<std::size_t> cur(line_ids.size());
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = p.ranges[i].first;
      while (true) {
        CrashState s{{}, generation_};
        for (std::size_t i = 0; i < cur.size(); ++i) s.set_cut(line_ids[i], cur[i]);
        out.push_back(std::move(s));
        std::size_t k = 0;
        for (; k < cur.size(); ++k) {
          if (cur[k] < p.ranges[k].second) {
            ++cur[k];
            break;
          }
          cur[k] = p.ranges[k].first;
        }
        if (k == cur.size()) break;
      }
    }
    if (scope == CrashScope::at_end)
      std::erase_if(out, [&](const CrashState& s) { return !legal_at_end(s); });
    return out;
  }

  // Independent uniform per-line cuts, then raised until the explicit-flush
  // rule holds. Deterministic for a seed.
  CrashState sample_crash_state(std::uint64_t seed, CrashScope scope = CrashScope::anytime) const {
    require_trace();
    std::mt19937_64 rng(seed);
    CrashState s{{}, generation_};
    CrashState floor_now = scope == CrashScope::at_end ? durable_floor() : CrashState{};
    for (const auto& [line, hist] : lines_) {
      std::uniform_int_distribution<std::size_t> pick(0, hist.writes.size());
      s.set_cut(line, std::max(pick(rng), floor_now.cut(line)));
    }
    raise_to_closure(s);
    return s;
  }

  // For every write: the smallest state containing it and the largest state
  // excluding it. Covers the cut boundaries around each individual store.
  std::vector<CrashState> boundary_crash_states() const {
    require_trace();
    std::set<CrashState> seen;
    std::vector<CrashState> out;
    auto add = [&](CrashState s) {
      if (seen.insert(s).second) out.push_back(std::move(s));
    };
    CrashState full = full_state();
    for (const WriteEvent& w : write_log_) {
      const LineHistory& own = lines_.at(w.line);
      std::size_t idx = index_in_line(own, w.seq);

      CrashState lo{{}, generation_};
      for (const auto& [line, hist] : lines_) lo.set_cut(line, floor_at(hist, w.seq));
      lo.set_cut(w.line, idx + 1);
      add(std::move(lo));

      CrashState hi = full;
      hi.set_cut(w.line, idx);
      lower_to_closure(hi);
      add(std::move(hi));
    }
    return out;
  }

  Bytes crash_image(const CrashState& s) const {
    require_trace();
    if (s.generation != generation_) throw UsageError("stale crash state: trace generation mismatch");
    check_shape(s);
    Bytes image = persisted_base_;
    for (const auto& [line, cut] : s.cuts) {
      const LineHistory& hist = lines_.at(line);
      for (std::size_t i = 0; i < cut; ++i) {
        const WriteEvent& w = write_log_[hist.writes[i]];
        std::memcpy(image.data() + w.line * kLineSize + w.offset_in_line, w.data.data(), w.data.size());
      }
    }
    return image;
  }

  SimMemory apply_crash(const CrashState& s) const { return SimMemory(crash_image(s), cost_, true); }

  // ---- snapshots -----------------------------------------------------------
  // Layout (little-endian): "PCSO", u32 version, u32 line_size, u64 capacity,
  // raw bytes. The saved image is what a clean shutdown leaves in NVM.

  void snapshot_save(const std::filesystem::path& path) const {
    if (has_pending_flushes()) throw UsageError("snapshot_save: memory not quiesced (pending clflushopt)");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open snapshot for writing: " + path.string());
    out.write("PCSO", 4);
    detail::put_le(out, kSnapshotVersion, 4);
    detail::put_le(out, kLineSize, 4);
    detail::put_le(out, capacity(), 8);
    out.write(reinterpret_cast<const char*>(cached_.data()), static_cast<std::streamsize>(cached_.size()));
    if (!out) throw FormatError("short write on snapshot: " + path.string());
  }

  static SimMemory snapshot_load(const std::filesystem::path& path, CostModel cost = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open snapshot: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PCSO", 4) != 0) throw FormatError("bad snapshot magic");
    std::uint64_t version = 0, line_size = 0, capacity = 0;
    if (!detail::get_le(in, version, 4) || !detail::get_le(in, line_size, 4) || !detail::get_le(in, capacity, 8))
      throw FormatError("truncated snapshot header");
    if (version != kSnapshotVersion) throw FormatError("unsupported snapshot version " + std::to_string(version));
    if (line_size != kLineSize) throw FormatError("snapshot line size " + std::to_string(line_size) + " != 64");
    if (capacity == 0 || capacity % kLineSize != 0 || capacity > (std::uint64_t{1} << 40))
      throw FormatError("bad snapshot capacity " + std::to_string(capacity));
    Bytes image(capacity);
    in.read(reinterpret_cast<char*>(image.data()), static_cast<std::streamsize>(capacity));
    if (static_cast<std::uint64_t>(in.gcount()) != capacity) throw FormatError("truncated snapshot body");
    in.peek();
    if (!in.eof()) throw FormatError("trailing bytes after snapshot body");
    return SimMemory(std::move(image), cost, true);
  }

 private:
  struct LineHistory {
    std::vector<std::size_t> writes;  // indices into write_log_, program order
    std::vector<std::pair<std::uint64_t, std::size_t>> raises;  // (sfence seq, mandatory prefix)
  };

  void require_trace() const {
    if (!tracing_ || broken_trace_) throw UsageError("crash-state operation needs a complete trace (call checkpoint)");
  }

  void check_shape(const CrashState& s) const {
    for (const auto& [line, cut] : s.cuts) {
      auto it = lines_.find(line);
      std::size_t n = it == lines_.end() ? 0 : it->second.writes.size();
      if (cut > n) throw UsageError("stale crash state: cut beyond recorded writes on line " + std::to_string(line));
    }
  }

  // Largest mandatory prefix established by an sfence that precedes `seq`.
  static std::size_t floor_at(const LineHistory& hist, std::uint64_t seq) {
    std::size_t f = 0;
    for (const auto& [s, prefix] : hist.raises) {
      if (s >= seq) break;
      f = prefix;
    }
    return f;
  }

  std::size_t writes_before(const LineHistory& hist, std::uint64_t seq) const {
    auto it = std::lower_bound(hist.writes.begin(), hist.writes.end(), seq,
                               [&](std::size_t wi, std::uint64_t s) { return write_log_[wi].seq < s; });
    return static_cast<std::size_t>(it - hist.writes.begin());
  }

  std::size_t index_in_line(const LineHistory& hist, std::uint64_t seq) const { return writes_before(hist, seq); }

  std::uint64_t latest_included_seq(const CrashState& s) const {
    std::uint64_t latest = 0;
    for (const auto& [line, cut] : s.cuts)
      if (cut > 0) latest = std::max(latest, write_log_[lines_.at(line).writes[cut - 1]].seq);
    return latest;
  }

  void raise_to_closure(CrashState& s) const {
    bool changed = true;
    while (changed) {
      changed = false;
      std::uint64_t latest = latest_included_seq(s);
      for (const auto& [line, hist] : lines_) {
        std::size_t f = floor_at(hist, latest);
        if (s.cut(line) < f) {
          s.set_cut(line, f);
          changed = true;
        }
      }
    }
  }

  // Drop the newest persisted write until consistent.
  void lower_to_closure(CrashState& s) const {
    while (!is_consistent(s)) {
      std::uint64_t latest = 0;
      std::size_t latest_line = 0;
      for (const auto& [line, cut] : s.cuts) {
        std::uint64_t seq = write_log_[lines_.at(line).writes[cut - 1]].seq;
        if (seq > latest) {
          latest = seq;
          latest_line = line;
        }
      }
      s.set_cut(latest_line, s.cut(latest_line) - 1);
    }
  }

  Bytes cached_;
  Bytes persisted_base_;
  CostModel cost_;
  bool tracing_ = true;
  bool broken_trace_ = false;
  std::uint64_t generation_ = 0;
  std::uint64_t next_seq_ = 1;
  std::uint64_t last_release_fence_ = 0;
  std::vector<WriteEvent> write_log_;
  std::vector<PersistEvent> flush_log_;
  std::map<std::size_t, LineHistory> lines_;
  std::map<std::size_t, std::size_t> pending_;  // line -> flushed prefix awaiting sfence
  FlushStats stats_;
};

}  // namespace pcso
