#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "pcso/pmem.hpp"

using namespace pcso;

namespace {

Bytes bytes(std::size_t n, std::uint8_t fill) { return Bytes(n, fill); }

// Brute force over every subset of write events, checking the two persist
// rules pairwise against the raw event log. Independent of the enumerator.
std::set<std::map<std::size_t, std::size_t>> oracle_states(const SimMemory& m) {
  const auto& writes = m.write_log();
  const auto& events = m.flush_log();
  const std::size_t n = writes.size();
  EXPECT_LE(n, 16u);

  // must[x] = bitmask of writes that must persist whenever write x does
  std::vector<std::uint32_t> must(n, 0);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t w = 0; w < n; ++w) {
      if (w == x || writes[w].seq > writes[x].seq) continue;
      bool ordered = writes[w].line == writes[x].line;  // granularity
      for (const auto& f : events) {
        if (ordered) break;
        if (f.kind != PersistEventKind::clflushopt || f.line != writes[w].line || f.seq < writes[w].seq) continue;
        for (const auto& s : events)
          if (s.kind == PersistEventKind::sfence && s.seq > f.seq && s.seq < writes[x].seq) ordered = true;
      }
      if (ordered) must[x] |= 1u << w;
    }
  }
  std::set<std::map<std::size_t, std::size_t>> out;
  for (std::uint32_t set = 0; set < (1u << n); ++set) {
    bool ok = true;
    for (std::size_t x = 0; x < n && ok; ++x)
      if ((set >> x) & 1u) ok = (set & must[x]) == must[x];
    if (!ok) continue;
    std::map<std::size_t, std::size_t> cuts;
    for (std::size_t x = 0; x < n; ++x)
      if ((set >> x) & 1u) ++cuts[writes[x].line];
    out.insert(cuts);
  }
  return out;
}

std::set<std::map<std::size_t, std::size_t>> as_set(const std::vector<CrashState>& states) {
  std::set<std::map<std::size_t, std::size_t>> out;
  for (const auto& s : states) out.insert(s.cuts);
  return out;
}

}  // namespace

TEST(Store, SingleLineStoreIsOneEvent) {
  SimMemory m(256);
  m.store(0, bytes(8, 1));
  ASSERT_EQ(m.write_log().size(), 1u);
  EXPECT_EQ(m.write_log()[0].line, 0u);
}

TEST(Store, SplitsAtLineBoundaryLowAddressFirst) {
  SimMemory m(256);
  m.store(60, bytes(8, 7));
  ASSERT_EQ(m.write_log().size(), 2u);
  EXPECT_EQ(m.write_log()[0].line, 0u);
  EXPECT_EQ(m.write_log()[0].offset_in_line, 60u);
  EXPECT_EQ(m.write_log()[0].data.size(), 4u);
  EXPECT_EQ(m.write_log()[1].line, 1u);
  EXPECT_EQ(m.write_log()[1].offset_in_line, 0u);
  EXPECT_EQ(m.write_log()[1].data.size(), 4u);
  EXPECT_LT(m.write_log()[0].seq, m.write_log()[1].seq);
}

TEST(Store, OutOfRangeIsUsageError) {
  SimMemory m(128);
  EXPECT_THROW(m.store(124, bytes(8, 0)), UsageError);
  EXPECT_THROW(m.store(1000, bytes(1, 0)), UsageError);
  EXPECT_THROW(SimMemory(100), UsageError);
}

TEST(Store, ReleaseOrderingIsRecorded) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.release_fence();
  m.store_word(8, 2, MemoryOrder::release);
  EXPECT_EQ(m.write_log()[0].after_release_fence, 0u);
  EXPECT_EQ(m.write_log()[1].ordering, MemoryOrder::release);
  EXPECT_EQ(m.write_log()[1].after_release_fence, 2u);
}

TEST(Enumerate, SameLineStoresPersistInOrder) {
  SimMemory m(128);
  m.store(0, bytes(8, 1));
  m.store(8, bytes(8, 2), MemoryOrder::release);
  auto states = m.enumerate_crash_states();
  ASSERT_EQ(states.size(), 3u);
  std::set<std::map<std::size_t, std::size_t>> expected{{}, {{0, 1}}, {{0, 2}}};
  EXPECT_EQ(as_set(states), expected);
  EXPECT_EQ(as_set(states), oracle_states(m));
}

TEST(Enumerate, FenceWithoutWritesIsNoop) {
  SimMemory m(128);
  m.release_fence();
  EXPECT_EQ(m.enumerate_crash_states().size(), 1u);
}

TEST(Enumerate, ReleaseFenceImposesNoPersistOrderAcrossLines) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.release_fence();
  m.store_word(64, 2);
  auto states = as_set(m.enumerate_crash_states());
  EXPECT_EQ(states.size(), 4u);
  EXPECT_TRUE(states.count({{1, 1}}));  // later line without the earlier one
  EXPECT_EQ(states, oracle_states(m));
}

TEST(Enumerate, FlushThenFenceOrdersLaterWrites) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.clflushopt(0);
  m.sfence();
  m.store_word(64, 2);
  auto states = as_set(m.enumerate_crash_states());
  std::set<std::map<std::size_t, std::size_t>> expected{{}, {{0, 1}}, {{0, 1}, {1, 1}}};
  EXPECT_EQ(states, expected);
}

TEST(Enumerate, EmptyTraceHasSingleEmptyState) {
  SimMemory m(64);
  auto states = m.enumerate_crash_states();
  ASSERT_EQ(states.size(), 1u);
  EXPECT_TRUE(states[0].cuts.empty());
}

TEST(Enumerate, KWritesToOneLineGiveKPlusOneStates) {
  for (std::size_t k = 1; k <= 8; ++k) {
    SimMemory m(64);
    for (std::size_t i = 0; i < k; ++i) m.store_word(8 * (i % 8), i);
    EXPECT_EQ(m.enumerate_crash_states().size(), k + 1);
  }
}

TEST(Enumerate, AppendTraceNeverShowsSecondFlipWithoutData) {
  // flip v0, fence, data, version+v1, flush, fence on one line
  SimMemory m(128);
  m.store_word(0, 0b01);
  m.release_fence();
  for (std::size_t w = 1; w < 7; ++w) m.store_word(8 * w, 100 + w);
  m.store_word(0, 0b11 | (5ull << 10), MemoryOrder::release);
  m.clflushopt(0);
  m.sfence();
  for (const auto& s : m.enumerate_crash_states()) {
    Bytes img = m.crash_image(s);
    std::uint64_t meta;
    std::memcpy(&meta, img.data(), 8);
    if ((meta & 0b10) == 0) continue;
    for (std::size_t w = 1; w < 7; ++w) {
      std::uint64_t v;
      std::memcpy(&v, img.data() + 8 * w, 8);
      EXPECT_EQ(v, 100 + w);
    }
  }
}

TEST(Enumerate, LimitExplosionThrows) {
  SimMemory m(64 * 8);
  for (std::size_t l = 0; l < 8; ++l)
    for (std::size_t w = 0; w < 8; ++w) m.store_word(l * 64 + w * 8, 1);
  EXPECT_THROW(m.enumerate_crash_states(1000), LimitError);
}

TEST(Enumerate, MatchesBruteForceOnRandomTraces) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    SimMemory m(64 * 3);
    std::size_t writes = 0;
    const std::size_t target = 1 + rng() % 12;
    while (writes < target) {
      switch (rng() % 5) {
        case 0:
        case 1:
          m.store_word((rng() % 3) * 64 + (rng() % 8) * 8, rng(), rng() % 2 ? MemoryOrder::release : MemoryOrder::relaxed);
          ++writes;
          break;
        case 2:
          m.clflushopt(rng() % 3);
          break;
        case 3:
          m.sfence();
          break;
        default:
          m.release_fence();
      }
    }
    auto states = m.enumerate_crash_states();
    ASSERT_EQ(as_set(states), oracle_states(m)) << "trial " << trial;
    ASSERT_EQ(as_set(states).size(), states.size()) << "duplicates in trial " << trial;
    for (const auto& s : states) ASSERT_TRUE(m.is_consistent(s));
  }
}

TEST(Flush, CleanLineFlushIsLegal) {
  SimMemory m(128);
  m.clflushopt(1);
  m.sfence();
  EXPECT_EQ(m.stats().clflushopt_count, 1u);
  EXPECT_EQ(m.enumerate_crash_states().size(), 1u);
  EXPECT_THROW(m.clflushopt(2), UsageError);
}

TEST(Flush, FencedPrefixIsInEveryLaterState) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.store_word(8, 2);
  m.clflushopt(0);
  m.sfence();
  m.store_word(16, 3);  // unflushed tail on the same line
  m.store_word(64, 4);
  for (const auto& s : m.enumerate_crash_states(kDefaultEnumerationLimit, CrashScope::at_end)) {
    EXPECT_GE(s.cut(0), 2u);
    EXPECT_TRUE(m.legal_at_end(s));
  }
  EXPECT_EQ(m.durable_floor().cut(0), 2u);
}

TEST(Flush, TwoFlushesOneFenceIsOneRoundtrip) {
  SimMemory m(256);
  m.store_word(0, 1);
  m.store_word(64, 2);
  m.clflushopt(0);
  m.clflushopt(1);
  m.sfence();
  EXPECT_EQ(m.stats().clflushopt_count, 2u);
  EXPECT_EQ(m.stats().sfence_count, 1u);
  EXPECT_EQ(m.stats().fenced_roundtrips, 1u);
  CrashState floor = m.durable_floor();
  EXPECT_EQ(floor.cut(0), 1u);
  EXPECT_EQ(floor.cut(1), 1u);
  std::size_t flushes = 0;
  for (const auto& e : m.flush_log()) flushes += e.kind == PersistEventKind::clflushopt;
  EXPECT_EQ(flushes, 2u);
}

TEST(Fence, NothingPendingDoesNotCountRoundtrip) {
  SimMemory m(128, CostModel{800});
  m.sfence();
  m.store_word(0, 1);
  m.sfence();
  EXPECT_EQ(m.stats().sfence_count, 2u);
  EXPECT_EQ(m.stats().fenced_roundtrips, 0u);
  EXPECT_EQ(m.stats().simulated_time_ns, 0u);
}

TEST(Fence, LatencyChargedPerFencedRoundtrip) {
  SimMemory m(64 * 64, CostModel{800});
  for (int i = 0; i < 512; ++i) {
    std::size_t addr = (i % 64) * 64;
    m.store_word(addr, i);
    m.clflushopt(addr / 64);
    m.sfence();
  }
  EXPECT_EQ(m.stats().fenced_roundtrips, 512u);
  EXPECT_EQ(m.stats().simulated_time_ns, 409600u);
}

TEST(Fence, SimulatedTimeIsRoundtripsTimesLatency) {
  std::mt19937_64 rng(3);
  SimMemory m(64 * 8, CostModel{137});
  for (int i = 0; i < 2000; ++i) {
    switch (rng() % 3) {
      case 0: m.store_word((rng() % 64) * 8, rng()); break;
      case 1: m.clflushopt(rng() % 8); break;
      default: m.sfence();
    }
  }
  EXPECT_EQ(m.stats().simulated_time_ns, m.stats().fenced_roundtrips * 137);
}

TEST(Sample, DeterministicForSeed) {
  SimMemory m(64 * 4);
  for (int i = 0; i < 20; ++i) m.store_word((i % 4) * 64 + (i % 8) * 8, i);
  EXPECT_EQ(m.sample_crash_state(42), m.sample_crash_state(42));
}

TEST(Sample, SamplesAreConsistentAndEnumerable) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    SimMemory m(64 * 3);
    for (int i = 0; i < 10; ++i) {
      m.store_word((rng() % 3) * 64 + (rng() % 8) * 8, rng());
      if (rng() % 3 == 0) m.clflushopt(rng() % 3);
      if (rng() % 4 == 0) m.sfence();
    }
    auto legal = oracle_states(m);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      CrashState s = m.sample_crash_state(seed);
      ASSERT_TRUE(legal.count(s.cuts));
      CrashState e = m.sample_crash_state(seed, CrashScope::at_end);
      ASSERT_TRUE(m.legal_at_end(e));
    }
  }
}

TEST(Sample, CoversAllStatesOfUnfencedTwoLineTrace) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.store_word(64, 2);
  std::set<std::map<std::size_t, std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) seen.insert(m.sample_crash_state(seed).cuts);
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Boundary, StatesAreConsistent) {
  SimMemory m(64 * 3);
  m.store_word(0, 1);
  m.clflushopt(0);
  m.sfence();
  m.store_word(64, 2);
  m.store_word(128, 3);
  m.clflushopt(1);
  m.sfence();
  m.store_word(8, 4);
  auto legal = oracle_states(m);
  auto b = m.boundary_crash_states();
  EXPECT_FALSE(b.empty());
  for (const auto& s : b) EXPECT_TRUE(legal.count(s.cuts));
}

TEST(CrashWindow, MatchesFloorsAndLatestWrite) {
  SimMemory m(128);
  m.store_word(0, 1);     // seq 1
  m.clflushopt(0);        // 2
  m.sfence();             // 3
  m.store_word(64, 2);    // 4
  CrashState none = m.empty_state();
  CrashWindow w = m.crash_window(none);
  EXPECT_EQ(w.earliest, 0u);
  EXPECT_EQ(w.latest, 2u);
  CrashState both = m.full_state();
  w = m.crash_window(both);
  EXPECT_EQ(w.earliest, 4u);
  EXPECT_EQ(w.latest, std::numeric_limits<std::uint64_t>::max());
}

TEST(ApplyCrash, EmptyAndFullStates) {
  SimMemory m(128);
  m.store(0, bytes(8, 0xaa));
  m.checkpoint();
  m.store(8, bytes(8, 0xbb));
  m.store(64, bytes(16, 0xcc));
  SimMemory none = m.apply_crash(m.empty_state());
  EXPECT_EQ(Bytes(none.cached().begin(), none.cached().end()), m.persisted_base());
  EXPECT_TRUE(none.write_log().empty());
  SimMemory all = m.apply_crash(m.full_state());
  EXPECT_TRUE(std::equal(all.cached().begin(), all.cached().end(), m.cached().begin()));
  EXPECT_EQ(all.persisted_base(), Bytes(all.cached().begin(), all.cached().end()));
}

TEST(ApplyCrash, PartialStateMatchesManualReplay) {
  SimMemory m(64 * 2);
  Bytes manual(128, 0);
  for (int i = 0; i < 6; ++i) m.store_word(8 * i, 10 + i);
  for (int i = 0; i < 3; ++i) m.store_word(64 + 8 * i, 20 + i);
  CrashState s = m.empty_state();
  s.set_cut(0, 4);
  s.set_cut(1, 1);
  ASSERT_TRUE(m.is_consistent(s));
  for (int i = 0; i < 4; ++i) {
    std::uint64_t v = 10 + i;
    std::memcpy(manual.data() + 8 * i, &v, 8);
  }
  std::uint64_t v = 20;
  std::memcpy(manual.data() + 64, &v, 8);
  SimMemory c = m.apply_crash(s);
  EXPECT_EQ(Bytes(c.cached().begin(), c.cached().end()), manual);
}

TEST(ApplyCrash, StaleStateIsRejected) {
  SimMemory m(128);
  m.store_word(0, 1);
  CrashState s = m.full_state();
  m.checkpoint();
  EXPECT_THROW(m.apply_crash(s), UsageError);
  SimMemory other(128);
  CrashState bogus = other.empty_state();
  bogus.set_cut(0, 5);
  EXPECT_THROW(other.apply_crash(bogus), UsageError);
}

TEST(ApplyCrash, UntracedMemoryRefuses) {
  SimMemory m(128, {}, false);
  m.store_word(0, 1);
  EXPECT_THROW(m.enumerate_crash_states(), UsageError);
  m.set_tracing(true);
  EXPECT_EQ(m.persisted_base()[0], 1);
}

class SnapshotTest : public ::testing::Test {
 protected:
  std::filesystem::path path = std::filesystem::temp_directory_path() /
                               ("pcso_snap_" + std::to_string(::getpid()) + ".bin");
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(SnapshotTest, RoundTripIsByteIdentical) {
  SimMemory m(64 * 5);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 40; ++i) m.store_word((rng() % 40) * 8, rng());
  m.snapshot_save(path);
  SimMemory l = SimMemory::snapshot_load(path);
  EXPECT_TRUE(std::equal(l.cached().begin(), l.cached().end(), m.cached().begin(), m.cached().end()));
  std::ifstream in(path, std::ios::binary);
  char head[4];
  in.read(head, 4);
  EXPECT_EQ(std::string(head, 4), "PCSO");
  EXPECT_EQ(std::filesystem::file_size(path), 20u + 64 * 5);
}

TEST_F(SnapshotTest, TruncatedAndCorruptFilesAreFormatErrors) {
  SimMemory m(128);
  m.snapshot_save(path);
  std::filesystem::resize_file(path, 100);
  EXPECT_THROW(SimMemory::snapshot_load(path), FormatError);
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(SimMemory::snapshot_load(path), FormatError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "XXXXjunkjunkjunkjunk";
  }
  EXPECT_THROW(SimMemory::snapshot_load(path), FormatError);
  EXPECT_THROW(SimMemory::snapshot_load(path.string() + ".missing"), FormatError);
}

TEST_F(SnapshotTest, SaveRequiresQuiescedMemory) {
  SimMemory m(128);
  m.store_word(0, 1);
  m.clflushopt(0);
  EXPECT_THROW(m.snapshot_save(path), UsageError);
  m.sfence();
  EXPECT_NO_THROW(m.snapshot_save(path));
}
