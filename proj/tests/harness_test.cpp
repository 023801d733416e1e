#include <gtest/gtest.h>

#include <random>

#include "pcso/harness.hpp"

using namespace pcso;

namespace {

const std::vector<Algorithm> kSuiteAlgorithms = {Algorithm::csovb,   Algorithm::csorandom, Algorithm::csofvb,
                                                 Algorithm::tornbit, Algorithm::crc64,     Algorithm::tworounds,
                                                 Algorithm::atlas};

// Full-size random payload so every word of the entry changes.
std::string rnd(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return "hex:" + detail::to_hex(b);
}

std::string three_appends(std::size_t payload) {
  return "payload " + std::to_string(payload) + "\ncapacity 4\nA " + rnd(payload, 1) + "\nA " + rnd(payload, 2) +
         "\nA " + rnd(payload, 3) + "\n";
}

// Fill, drain and wrap so the tested appends reuse slots of the previous pass.
std::string wrap_script(std::size_t payload) {
  std::string s = "payload " + std::to_string(payload) + "\ncapacity 3\n";
  for (int i = 0; i < 3; ++i) s += "A " + rnd(payload, 10 + i) + "\n";
  s += "T 2\nA " + rnd(payload, 20) + "\nT all\ncheckpoint\n";
  s += "A " + rnd(payload, 30) + "\nA " + rnd(payload, 31) + "\nT 1\nA " + rnd(payload, 32) + "\n";
  return s;
}

std::size_t payload_for(Algorithm a) {
  if (a == Algorithm::atlas) return 24;
  if (a == Algorithm::csofvb) return 120;
  return 48;
}

}  // namespace

TEST(Script, ParsesOpsAndDirectives) {
  auto s = parse_script_text(
      "# comment\nalgo csovb\npayload 16\ncapacity 5\ncrash sampled 50\nseed 9\nA hello\nA hex:00ff10\nT 1\nT all\n");
  EXPECT_EQ(s.kind, ScriptKind::log);
  EXPECT_EQ(s.algo, Algorithm::csovb);
  EXPECT_EQ(s.payload_size(), 16u);
  EXPECT_EQ(s.capacity, 5u);
  EXPECT_EQ(s.policy, CrashPolicy::sampled);
  EXPECT_EQ(s.samples, 50u);
  ASSERT_EQ(s.ops.size(), 4u);
  EXPECT_EQ(s.ops[1].payload, (Bytes{0x00, 0xff, 0x10}));
  EXPECT_EQ(s.ops[2].count, 1u);
  EXPECT_EQ(s.ops[3].count, SIZE_MAX);
}

TEST(Script, SetScripts) {
  auto s = parse_script_text("slots 8\nlines 2\nmode dual\nU a 1\nR a\nG a\nT x 1 y 2\n");
  EXPECT_EQ(s.kind, ScriptKind::set);
  EXPECT_EQ(s.set.slots, 8u);
  EXPECT_EQ(s.set.node_lines, 2u);
  EXPECT_EQ(s.set.mode, LineValidity::dual);
  ASSERT_EQ(s.ops.size(), 4u);
  EXPECT_EQ(s.ops[3].code, 'X');
  EXPECT_EQ(s.ops[3].pairs.size(), 2u);
}

TEST(Script, Errors) {
  EXPECT_THROW(parse_script_text("A x\nZ 1\n"), FormatError);
  EXPECT_THROW(parse_script_text("A\n"), FormatError);
  EXPECT_THROW(parse_script_text("A hex:0\n"), FormatError);
  EXPECT_THROW(parse_script_text("A x\nU k v\n"), FormatError);
  EXPECT_THROW(parse_script_text("algo nope\n"), FormatError);
  EXPECT_THROW(parse_script_text("T 1 2 3\n"), FormatError);
  try {
    parse_script_text("A x\n\nfoo\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_TRUE(parse_script_text("").ops.empty());
}

TEST(CrashSuite, EmptyScriptPasses) {
  auto r = run_crash_suite(parse_script_text(""), Algorithm::csovb);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.states_checked, 1u);
}

TEST(CrashSuite, EveryAlgorithmThreeAppends) {
  for (Algorithm a : kSuiteAlgorithms) {
    auto r = run_crash_suite(parse_script_text(three_appends(payload_for(a)), "three"), a);
    EXPECT_TRUE(r.ok()) << r.text();
    EXPECT_EQ(r.mixed_states, 0u);
    EXPECT_GT(r.states_checked, 10u);
  }
}

TEST(CrashSuite, EveryAlgorithmAcrossWrap) {
  for (Algorithm a : kSuiteAlgorithms) {
    auto r = run_crash_suite(parse_script_text(wrap_script(payload_for(a)), "wrap"), a);
    EXPECT_TRUE(r.ok()) << r.text();
  }
}

TEST(CrashSuite, MutantReported) {
  auto r = run_crash_suite(parse_script_text(three_appends(48)), Algorithm::csovb_mutant);
  EXPECT_FALSE(r.ok());
  EXPECT_GT(r.mixed_states, 0u);
  EXPECT_NE(r.text().find("violation"), std::string::npos);
}

TEST(CrashSuite, SampledAndAtOpModes) {
  auto s = parse_script_text(three_appends(48));
  SuiteOptions sampled;
  sampled.policy = CrashPolicy::sampled;
  sampled.samples = 500;
  auto r = run_crash_suite(s, Algorithm::csovb, sampled);
  EXPECT_TRUE(r.ok());
  EXPECT_GE(r.states_checked, 500u);
  EXPECT_EQ(r.mode, "sampled 500");

  auto full = run_crash_suite(s, Algorithm::csovb);
  s.policy = CrashPolicy::at_op;
  s.at_op = 2;
  auto at = run_crash_suite(s, Algorithm::csovb);
  EXPECT_TRUE(at.ok());
  EXPECT_GT(at.states_checked, 0u);
  EXPECT_LT(at.states_checked, full.states_checked);
  s.at_op = 9;
  EXPECT_THROW(run_crash_suite(s, Algorithm::csovb), UsageError);
}

TEST(CrashSuite, CrashDuringTrimSeesOldOrNewHead) {
  for (Algorithm a : kSuiteAlgorithms) {
    auto r = run_crash_suite(parse_script_text("payload " + std::to_string(payload_for(a)) +
                                               "\ncapacity 3\nA a\nA b\ncheckpoint\nT 1\nT 1\n"),
                             a);
    EXPECT_TRUE(r.ok()) << r.text();
  }
}

TEST(CrashSuite, ReportCsv) {
  auto r = run_crash_suite(parse_script_text(three_appends(48), "x"), Algorithm::csovb);
  EXPECT_EQ(CrashReport::csv_header(), "algorithm,script,mode,ops,states,violations,mixed_states");
  EXPECT_EQ(r.csv_row().rfind("csovb,x,exhaustive,3,", 0), 0u);
}

TEST(CrashSuite, SetScripts) {
  auto s = parse_script_text("slots 6\nU a 1\nU b 2\nU a 3\nR b\nT a 5 c 6 d 7\nG a\n");
  auto r = run_crash_suite(s);
  EXPECT_TRUE(r.ok()) << r.text();
  auto opt = run_set_crash_suite(s, {}, SetUpdate::optimized);
  EXPECT_TRUE(opt.ok()) << opt.text();
}

TEST(Forgery, Crc32TornStatePassesCheck) {
  auto s = forge_crc32_script(1);
  auto r = run_crash_suite(s, Algorithm::crc32);
  EXPECT_FALSE(r.ok());
  EXPECT_GT(r.mixed_states, 0u);
  for (Algorithm a : {Algorithm::crc64, Algorithm::csovb}) {
    auto ok = run_crash_suite(s, a);
    EXPECT_TRUE(ok.ok()) << ok.text();
    EXPECT_EQ(ok.mixed_states, 0u);
  }
}

TEST(Audit, RoundtripsPerAlgorithm) {
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::csovb, 512, 24).roundtrips_per_append, 1.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::csofvb, 512, 120).roundtrips_per_append, 1.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::tornbit, 512, 56).roundtrips_per_append, 1.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::crc32, 512, 56).roundtrips_per_append, 1.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::crc64, 512, 56).roundtrips_per_append, 1.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::tworounds, 512, 56).roundtrips_per_append, 2.0);
  EXPECT_DOUBLE_EQ(audit_roundtrips(Algorithm::atlas, 512, 24).roundtrips_per_append, 1.5);
  auto rnd = audit_roundtrips(Algorithm::csorandom, 2048, 64);
  EXPECT_DOUBLE_EQ(rnd.roundtrips_per_append, 1.0);
  EXPECT_NEAR(rnd.background_flushes_per_append, 1.0, 0.01);
  EXPECT_THROW(audit_roundtrips(Algorithm::csovb, 1, 24), UsageError);
}

TEST(Differential, LogsAndSet) {
  auto s = parse_script_text("payload 48\ncapacity 4\nA a\nA b\nT 1\nA c\n");
  EXPECT_TRUE(differential_recovery(Algorithm::csovb, Algorithm::crc64, s).ok());
  EXPECT_TRUE(differential_recovery(Algorithm::tornbit, Algorithm::csofvb, s).ok());
  auto set = parse_script_text("U a 1\nU b 2\nR a\nU b 3\n");
  EXPECT_TRUE(differential_set_recovery(set).ok());
}
