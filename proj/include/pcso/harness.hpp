#pragma once

// Crash-injection property tester. A workload script runs against a log or
// the persistent set while the simulated memory records every event; crash
// states are then generated (exhaustively, sampled, or around one op), each
// is recovered, and the result is checked against the states the script
// itself defines after every op.
//
// Script format, one op per line, '#' starts a comment:
//   algo <name>            default algorithm (logs)
//   payload <bytes>        fixed payload size (logs)
//   capacity <entries>     live-entry capacity (logs)
//   slots <n> | lines <n> | mode single|dual     set geometry
//   crash exhaustive | crash sampled <k> | crash at-op <i>
//   seed <n>
//   checkpoint             ops above run as untested setup
//   A <payload>            append; payload is text or hex:<bytes>, zero padded
//   T <n> | T all          trim the n oldest live entries
//   U <key> <value> | R <key> | G <key> | T <k1> <v1> [<k2> <v2> ...]

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "pcso/logs.hpp"
#include "pcso/stps.hpp"

namespace pcso {

enum class CrashPolicy { exhaustive, sampled, at_op };
enum class ScriptKind { log, set };

struct ScriptOp {
  char code = 'A';  // A, T (trim), U, R, G, X (set transaction)
  Bytes payload;
  std::size_t count = 0;  // trim count; SIZE_MAX = all
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string key;
  std::size_t line = 0;
};

struct WorkloadScript {
  std::string name = "script";
  ScriptKind kind = ScriptKind::log;
  std::optional<Algorithm> algo;
  std::size_t payload = 0;  // 0 = derive from the ops
  std::size_t capacity = 8;
  StpsConfig set;
  CrashPolicy policy = CrashPolicy::exhaustive;
  std::size_t samples = 10000;
  std::size_t at_op = 0;  // 1-based op index for at-op
  std::uint64_t seed = 1;
  std::vector<ScriptOp> setup;
  std::vector<ScriptOp> ops;

  std::size_t payload_size() const {
    if (payload) return payload;
    std::size_t m = 8;
    for (const auto* list : {&setup, &ops})
      for (const auto& op : *list) m = std::max(m, op.payload.size());
    return std::max<std::size_t>(24, round_up_words(m));
  }
};

namespace detail {

inline Bytes parse_payload(const std::string& tok, std::size_t line) {
  if (tok.rfind("hex:", 0) == 0) {
    std::string h = tok.substr(4);
    if (h.size() % 2) throw FormatError("line " + std::to_string(line) + ": odd-length hex payload");
    Bytes out;
    for (std::size_t i = 0; i < h.size(); i += 2) {
      auto nib = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw FormatError("line " + std::to_string(line) + ": bad hex digit");
      };
      out.push_back(static_cast<std::uint8_t>(nib(h[i]) * 16 + nib(h[i + 1])));
    }
    return out;
  }
  return Bytes(tok.begin(), tok.end());
}

inline std::size_t parse_count(const std::string& tok, std::size_t line) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("line " + std::to_string(line) + ": expected a number, got '" + tok + "'");
  }
}

inline std::string to_hex(ByteView b) {
  std::ostringstream os;
  for (auto x : b) os << std::hex << std::setw(2) << std::setfill('0') << int(x);
  return os.str();
}

}  // namespace detail

inline WorkloadScript parse_script(std::istream& in, std::string name = "script") {
  WorkloadScript s;
  s.name = std::move(name);
  s.set.bucket_bits = 8;
  s.set.slots = 16;
  bool seen_checkpoint = false;
  bool has_set_ops = false, has_log_ops = false;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string& cmd = tok[0];
    auto need = [&](std::size_t n) {
      if (tok.size() != n) throw FormatError("line " + std::to_string(lineno) + ": '" + cmd + "' expects " +
                                             std::to_string(n - 1) + " argument(s)");
    };
    if (cmd == "algo") {
      need(2);
      try {
        s.algo = parse_algorithm(tok[1]);
      } catch (const UsageError& e) {
        throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
      }
    } else if (cmd == "payload") {
      need(2);
      s.payload = detail::parse_count(tok[1], lineno);
    } else if (cmd == "capacity") {
      need(2);
      s.capacity = detail::parse_count(tok[1], lineno);
    } else if (cmd == "slots") {
      need(2);
      s.set.slots = detail::parse_count(tok[1], lineno);
    } else if (cmd == "lines") {
      need(2);
      s.set.node_lines = detail::parse_count(tok[1], lineno);
    } else if (cmd == "mode") {
      need(2);
      if (tok[1] == "single")
        s.set.mode = LineValidity::single;
      else if (tok[1] == "dual")
        s.set.mode = LineValidity::dual;
      else
        throw FormatError("line " + std::to_string(lineno) + ": mode must be single or dual");
    } else if (cmd == "seed") {
      need(2);
      s.seed = detail::parse_count(tok[1], lineno);
    } else if (cmd == "crash") {
      if (tok.size() == 2 && tok[1] == "exhaustive") {
        s.policy = CrashPolicy::exhaustive;
      } else if (tok.size() == 3 && tok[1] == "sampled") {
        s.policy = CrashPolicy::sampled;
        s.samples = detail::parse_count(tok[2], lineno);
      } else if (tok.size() == 3 && tok[1] == "at-op") {
        s.policy = CrashPolicy::at_op;
        s.at_op = detail::parse_count(tok[2], lineno);
      } else {
        throw FormatError("line " + std::to_string(lineno) + ": crash exhaustive | sampled <k> | at-op <i>");
      }
    } else if (cmd == "checkpoint") {
      need(1);
      if (seen_checkpoint) throw FormatError("line " + std::to_string(lineno) + ": second checkpoint");
      seen_checkpoint = true;
      s.setup = std::move(s.ops);
      s.ops.clear();
    } else if (cmd == "A") {
      need(2);
      ScriptOp op;
      op.code = 'A';
      op.payload = detail::parse_payload(tok[1], lineno);
      op.line = lineno;
      s.ops.push_back(std::move(op));
      has_log_ops = true;
    } else if (cmd == "T" && tok.size() == 2) {
      ScriptOp op;
      op.code = 'T';
      op.count = tok[1] == "all" ? SIZE_MAX : detail::parse_count(tok[1], lineno);
      op.line = lineno;
      s.ops.push_back(std::move(op));
      has_log_ops = true;
    } else if (cmd == "T") {
      if (tok.size() < 3 || tok.size() % 2 == 0)
        throw FormatError("line " + std::to_string(lineno) + ": T expects <n> or key/value pairs");
      ScriptOp op;
      op.code = 'X';
      for (std::size_t i = 1; i < tok.size(); i += 2) op.pairs.emplace_back(tok[i], tok[i + 1]);
      op.line = lineno;
      s.ops.push_back(std::move(op));
      has_set_ops = true;
    } else if (cmd == "U") {
      need(3);
      ScriptOp op;
      op.code = 'U';
      op.key = tok[1];
      op.pairs.emplace_back(tok[1], tok[2]);
      op.line = lineno;
      s.ops.push_back(std::move(op));
      has_set_ops = true;
    } else if (cmd == "R" || cmd == "G") {
      need(2);
      ScriptOp op;
      op.code = cmd[0];
      op.key = tok[1];
      op.line = lineno;
      s.ops.push_back(std::move(op));
      has_set_ops = true;
    } else {
      throw FormatError("line " + std::to_string(lineno) + ": unknown op '" + cmd + "'");
    }
  }
  if (has_set_ops && has_log_ops) throw FormatError("script mixes log ops (A) and set ops (U/R/G/T k v)");
  s.kind = has_set_ops ? ScriptKind::set : ScriptKind::log;
  return s;
}

inline WorkloadScript parse_script_text(const std::string& text, std::string name = "script") {
  std::istringstream in(text);
  return parse_script(in, std::move(name));
}

inline WorkloadScript load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open script '" + path + "'");
  return parse_script(in, path);
}

// ---- crash suite ------------------------------------------------------------

struct Violation {
  std::string cut;       // line:cut pairs of the crash state
  std::string expected;  // acceptable op-prefix range
  std::string got;
  bool mixed_entry = false;  // a recovered entry matches no appended payload
};

struct CrashReport {
  std::string algorithm;
  std::string script;
  std::string mode;
  std::size_t ops = 0;
  std::size_t states_checked = 0;
  std::size_t mixed_states = 0;  // states recovering an entry that was never appended
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }

  std::string text(std::size_t max_listed = 20) const {
    std::ostringstream os;
    os << algorithm << " " << script << " [" << mode << "]: " << states_checked << " crash states, "
       << violations.size() << " violation(s)";
    if (mixed_states) os << ", " << mixed_states << " with mixed entries";
    os << "\n";
    for (std::size_t i = 0; i < violations.size() && i < max_listed; ++i) {
      const auto& v = violations[i];
      os << "  cut {" << v.cut << "} expected " << v.expected << " got " << v.got << (v.mixed_entry ? " (mixed)" : "")
         << "\n";
    }
    if (violations.size() > max_listed) os << "  ... " << violations.size() - max_listed << " more\n";
    return os.str();
  }

  static std::string csv_header() { return "algorithm,script,mode,ops,states,violations,mixed_states"; }
  std::string csv_row() const {
    std::ostringstream os;
    os << algorithm << "," << script << "," << mode << "," << ops << "," << states_checked << "," << violations.size()
       << "," << mixed_states;
    return os.str();
  }
};

struct SuiteOptions {
  std::optional<CrashPolicy> policy;  // overrides the script
  std::optional<std::size_t> samples;
  std::size_t enumeration_limit = kDefaultEnumerationLimit;
  std::size_t max_violations = 1000;  // stop collecting detail beyond this
};

namespace detail {

inline std::string cut_string(const CrashState& s) {
  std::ostringstream os;
  bool first = true;
  for (auto [line, cut] : s.cuts) {
    os << (first ? "" : ",") << line << ":" << cut;
    first = false;
  }
  return os.str();
}

// Op-prefix range a crash state may legally show: every op complete at the
// earliest crash point through every op started by the latest one.
inline std::pair<std::size_t, std::size_t> acceptable_range(const std::vector<std::uint64_t>& op_end, CrashWindow w) {
  std::size_t lo = 0, hi = 0;
  for (std::size_t j = 1; j < op_end.size(); ++j) {
    if (op_end[j] <= w.earliest + 1) lo = j;
    if (op_end[j - 1] <= w.latest) hi = j;
  }
  return {lo, hi};
}

inline std::vector<CrashState> generate_states(const SimMemory& mem, CrashPolicy policy, std::size_t samples,
                                               std::uint64_t seed, std::size_t limit,
                                               std::optional<std::pair<std::uint64_t, std::uint64_t>> op_span) {
  std::vector<CrashState> states;
  if (policy == CrashPolicy::sampled) {
    std::set<CrashState> seen;
    for (auto& s : mem.boundary_crash_states())
      if (seen.insert(s).second) states.push_back(std::move(s));
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < samples; ++i) states.push_back(mem.sample_crash_state(rng()));
  } else {
    states = mem.enumerate_crash_states(limit);
  }
  if (op_span) {
    // keep states a crash during the op can leave: window meets [start, end-1]
    auto [start, end] = *op_span;
    std::erase_if(states, [&](const CrashState& s) {
      CrashWindow w = mem.crash_window(s);
      return w.latest < start || w.earliest + 1 > end;
    });
  }
  return states;
}

inline std::string policy_name(CrashPolicy p, std::size_t samples, std::size_t at_op) {
  switch (p) {
    case CrashPolicy::exhaustive: return "exhaustive";
    case CrashPolicy::sampled: return "sampled " + std::to_string(samples);
    case CrashPolicy::at_op: return "at-op " + std::to_string(at_op);
  }
  return "?";
}

}  // namespace detail

struct LogRun {
  Algorithm algo;
  std::size_t payload;
  LogRegion region;
  SimMemory mem;
  std::unique_ptr<PersistentLog> log;
  std::vector<std::vector<Bytes>> after_op;  // live payloads after each op (index 0: before any)
  std::vector<std::uint64_t> op_end;         // next_seq after each op
  std::vector<Bytes> appended;               // every payload appended in the tested ops

  LogRun(Algorithm a, std::size_t p, std::size_t capacity)
      : algo(a), payload(p), region(region_for(a, p, capacity)), mem(region.size) {}
};

inline Bytes padded(const Bytes& b, std::size_t n) {
  if (b.size() > n) throw UsageError("payload of " + std::to_string(b.size()) + " bytes exceeds payload size " + std::to_string(n));
  Bytes out = b;
  out.resize(n, 0);
  return out;
}

// Execute a log script; setup ops are checkpointed away.
inline std::unique_ptr<LogRun> run_log_script(Algorithm algo, const WorkloadScript& s) {
  auto run = std::make_unique<LogRun>(algo, s.payload_size(), s.capacity);
  run->log = make_log(algo, run->mem, run->region, run->payload);
  run->log->format();
  std::deque<Bytes> live;
  auto apply = [&](const ScriptOp& op) {
    if (op.code == 'A') {
      Bytes p = padded(op.payload, run->payload);
      run->log->append(p);
      live.push_back(p);
      return p;
    }
    std::size_t n = std::min(op.count, live.size());
    if (n > 0) {
      auto entries = run->log->live_entries();
      run->log->trim(entries[n - 1]);
      live.erase(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(n));
    }
    return Bytes{};
  };
  for (const auto& op : s.setup) apply(op);
  if (run->mem.has_pending_flushes()) run->mem.sfence();
  run->mem.checkpoint();
  run->after_op.push_back({live.begin(), live.end()});
  run->op_end.push_back(run->mem.next_seq());
  for (const auto& op : s.ops) {
    Bytes p = apply(op);
    if (op.code == 'A') run->appended.push_back(p);
    run->after_op.push_back({live.begin(), live.end()});
    run->op_end.push_back(run->mem.next_seq());
  }
  return run;
}

inline CrashReport run_log_crash_suite(Algorithm algo, const WorkloadScript& s, const SuiteOptions& opt = {}) {
  auto run = run_log_script(algo, s);
  CrashPolicy policy = opt.policy.value_or(s.policy);
  std::size_t samples = opt.samples.value_or(s.samples);
  std::optional<std::pair<std::uint64_t, std::uint64_t>> span;
  if (policy == CrashPolicy::at_op) {
    if (s.at_op == 0 || s.at_op > s.ops.size()) throw UsageError("at-op index out of range");
    span = {{run->op_end[s.at_op - 1], run->op_end[s.at_op]}};
  }
  CrashReport rep;
  rep.algorithm = std::string(algorithm_name(algo));
  rep.script = s.name;
  rep.mode = detail::policy_name(policy, samples, s.at_op);
  rep.ops = s.ops.size();
  auto states = detail::generate_states(run->mem, policy, samples, s.seed, opt.enumeration_limit, span);

  // every payload that could legitimately be recovered
  std::set<Bytes> known(run->appended.begin(), run->appended.end());
  for (const auto& v : run->after_op)
    for (const auto& p : v) known.insert(p);

  for (const auto& st : states) {
    ++rep.states_checked;
    SimMemory img = run->mem.apply_crash(st);
    auto log = make_log(algo, img, run->region, run->payload);
    std::vector<Bytes> got;
    std::string error;
    try {
      for (auto& e : log->recover()) got.push_back(std::move(e.payload));
    } catch (const std::exception& e) {
      error = e.what();
    }
    bool mixed = std::any_of(got.begin(), got.end(), [&](const Bytes& p) { return !known.count(p); });
    if (mixed) ++rep.mixed_states;
    auto [lo, hi] = detail::acceptable_range(run->op_end, run->mem.crash_window(st));
    bool ok = error.empty();
    if (ok) {
      ok = false;
      for (std::size_t j = lo; j <= hi && !ok; ++j) ok = got == run->after_op[j];
    }
    if (!ok && rep.violations.size() < opt.max_violations) {
      std::ostringstream g;
      if (!error.empty())
        g << "error: " << error;
      else
        g << got.size() << " entries";
      rep.violations.push_back({detail::cut_string(st), "op prefix " + std::to_string(lo) + ".." + std::to_string(hi),
                                g.str(), mixed});
    } else if (!ok) {
      rep.violations.push_back({});  // counted, detail dropped
    }
  }
  return rep;
}

// ---- set scripts --------------------------------------------------------------

struct SetRun {
  StpsConfig cfg;
  SimMemory mem;
  std::unique_ptr<StpsSet> set;
  std::vector<std::map<std::string, std::string>> after_op;
  std::vector<std::uint64_t> op_end;

  explicit SetRun(StpsConfig c) : cfg(c), mem(c.base + StpsSet::region_bytes(c)) {}
};

enum class SetUpdate { plain, optimized };

inline void apply_set_op(StpsSet& set, const ScriptOp& op, SetUpdate how) {
  switch (op.code) {
    case 'U':
      if (how == SetUpdate::optimized)
        set.update_optimized(op.pairs[0].first, op.pairs[0].second);
      else
        set.update(op.pairs[0].first, op.pairs[0].second);
      break;
    case 'R': set.remove(op.key); break;
    case 'X': set.txn_update(op.pairs); break;
    case 'G': (void)set.get(op.key); break;
    default: throw UsageError(std::string("op '") + op.code + "' is not a set op");
  }
}

inline std::unique_ptr<SetRun> run_set_script(const WorkloadScript& s, SetUpdate how = SetUpdate::plain) {
  auto run = std::make_unique<SetRun>(s.set);
  run->set = std::make_unique<StpsSet>(run->mem, run->cfg);
  for (const auto& op : s.setup) apply_set_op(*run->set, op, how);
  run->mem.checkpoint();
  run->after_op.push_back(run->set->contents());
  run->op_end.push_back(run->mem.next_seq());
  for (const auto& op : s.ops) {
    apply_set_op(*run->set, op, how);
    run->after_op.push_back(run->set->contents());
    run->op_end.push_back(run->mem.next_seq());
  }
  return run;
}

inline CrashReport run_set_crash_suite(const WorkloadScript& s, const SuiteOptions& opt = {},
                                       SetUpdate how = SetUpdate::plain) {
  auto run = run_set_script(s, how);
  CrashPolicy policy = opt.policy.value_or(s.policy);
  std::size_t samples = opt.samples.value_or(s.samples);
  std::optional<std::pair<std::uint64_t, std::uint64_t>> span;
  if (policy == CrashPolicy::at_op) {
    if (s.at_op == 0 || s.at_op > s.ops.size()) throw UsageError("at-op index out of range");
    span = {{run->op_end[s.at_op - 1], run->op_end[s.at_op]}};
  }
  CrashReport rep;
  rep.algorithm = how == SetUpdate::plain ? "stps" : "stps-optimized";
  rep.script = s.name;
  rep.mode = detail::policy_name(policy, samples, s.at_op);
  rep.ops = s.ops.size();
  auto states = detail::generate_states(run->mem, policy, samples, s.seed, opt.enumeration_limit, span);
  for (const auto& st : states) {
    ++rep.states_checked;
    SimMemory img = run->mem.apply_crash(st);
    StpsSet rec(img, run->cfg);
    auto got = rec.contents();
    auto [lo, hi] = detail::acceptable_range(run->op_end, run->mem.crash_window(st));
    bool ok = false;
    for (std::size_t j = lo; j <= hi && !ok; ++j) ok = got == run->after_op[j];
    if (!ok && rep.violations.size() < opt.max_violations)
      rep.violations.push_back({detail::cut_string(st), "op prefix " + std::to_string(lo) + ".." + std::to_string(hi),
                                std::to_string(got.size()) + " keys", false});
  }
  return rep;
}

// Dispatch on the script kind; `algo` overrides the script's own directive.
inline CrashReport run_crash_suite(const WorkloadScript& s, std::optional<Algorithm> algo = std::nullopt,
                                   const SuiteOptions& opt = {}) {
  if (s.kind == ScriptKind::set) return run_set_crash_suite(s, opt);
  auto a = algo ? algo : s.algo;
  if (!a) throw UsageError("script '" + s.name + "' names no algorithm; pass one explicitly");
  return run_log_crash_suite(*a, s, opt);
}

// ---- accounting ---------------------------------------------------------------

struct RoundtripAudit {
  std::string algorithm;
  std::size_t payload = 0;
  std::size_t appends = 0;
  double roundtrips_per_append = 0;  // fenced roundtrips on the append path
  double flushes_per_append = 0;     // clflushopt on the append path
  double background_flushes_per_append = 0;  // off-path initialization flushes
};

// Appends n entries, draining (read + trim) every `drain` appends; only the
// append calls are charged to the critical path.
inline RoundtripAudit audit_roundtrips(Algorithm algo, std::size_t n, std::size_t payload, std::size_t drain = 512) {
  if (n < 2) throw UsageError("audit needs at least two appends");
  std::size_t cap = std::min(n, drain);
  LogRegion region = region_for(algo, payload, cap);
  SimMemory mem(region.size, {}, false);
  auto log = make_log(algo, mem, region, payload);
  log->format();
  std::mt19937_64 rng(n);
  std::uint64_t rt = 0, fl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (log->size() == cap) log->trim_all();
    Bytes p(payload);
    for (std::size_t k = 0; k < payload; k += 8) {
      std::uint64_t w = rng();
      if (w == kSentinelWord || w == kRandomInitWord) w ^= 1;
      std::memcpy(p.data() + k, &w, std::min<std::size_t>(8, payload - k));
    }
    auto before = mem.stats();
    log->append(p);
    rt += mem.stats().fenced_roundtrips - before.fenced_roundtrips;
    fl += mem.stats().clflushopt_count - before.clflushopt_count;
  }
  log->trim_all();
  RoundtripAudit a;
  a.algorithm = std::string(algorithm_name(algo));
  a.payload = payload;
  a.appends = n;
  a.roundtrips_per_append = static_cast<double>(rt) / static_cast<double>(n);
  a.flushes_per_append = static_cast<double>(fl) / static_cast<double>(n);
  a.background_flushes_per_append = static_cast<double>(log->background_flushes()) / static_cast<double>(n);
  return a;
}

// ---- differential recovery ----------------------------------------------------

struct DifferentialReport {
  std::string a, b;
  bool a_matches_oracle = false;
  bool b_matches_oracle = false;
  bool ok() const { return a_matches_oracle && b_matches_oracle; }
};

inline DifferentialReport differential_recovery(Algorithm a, Algorithm b, const WorkloadScript& s) {
  DifferentialReport r{std::string(algorithm_name(a)), std::string(algorithm_name(b))};
  auto check = [&](Algorithm algo) {
    auto run = run_log_script(algo, s);
    auto rec = make_log(algo, run->mem, run->region, run->payload)->recover();
    std::vector<Bytes> got;
    for (auto& e : rec) got.push_back(e.payload);
    return got == run->after_op.back();
  };
  r.a_matches_oracle = check(a);
  r.b_matches_oracle = check(b);
  return r;
}

inline DifferentialReport differential_set_recovery(const WorkloadScript& s) {
  DifferentialReport r{"stps", "stps-optimized"};
  auto check = [&](SetUpdate how) {
    auto run = run_set_script(s, how);
    StpsSet rec(run->mem, run->cfg);
    return rec.contents() == run->after_op.back();
  };
  r.a_matches_oracle = check(SetUpdate::plain);
  r.b_matches_oracle = check(SetUpdate::optimized);
  return r;
}

// ---- CRC32 forgery --------------------------------------------------------------

// Builds a script whose final append, if torn so that only its first line
// persists, still passes CRC32 validation: four payload bytes in the first
// line are solved (CRC is affine over GF(2)) so that the checksum of
// [new first line | stale second line] equals the stale checksum.
// The log has two 128-byte slots; the forged append reuses slot 0.
// Script text whose last append can tear into an image that passes CRC32.
inline std::string forge_crc32_text(std::uint64_t seed = 1) {
  constexpr std::size_t kPayload = 96;  // seq, len, 48 payload bytes | 48 payload bytes, checksum
  constexpr std::size_t kLine0Payload = kLineSize - CrcLog::kHeaderBytes;
  constexpr std::size_t kSolveAt = kLine0Payload - 8;  // 4 bytes inside line 0
  std::mt19937_64 rng(seed);
  auto random_payload = [&] {
    Bytes b(kPayload);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
  };
  Bytes x0 = random_payload(), x1 = random_payload(), y = random_payload();

  auto image_crc = [&](std::uint64_t seq, const Bytes& payload) {
    Bytes buf(CrcLog::kHeaderBytes + kPayload);
    std::uint64_t len = kPayload;
    std::memcpy(buf.data(), &seq, 8);
    std::memcpy(buf.data() + 8, &len, 8);
    std::memcpy(buf.data() + CrcLog::kHeaderBytes, payload.data(), kPayload);
    return static_cast<std::uint32_t>(crc_of(CrcKind::crc32c, buf));
  };
  // stale slot 0 holds x0 written in pass 0 (seq 1); y is written in pass 1 (seq 2)
  const std::uint32_t stale = image_crc(1, x0);
  Bytes torn = y;
  std::copy(x0.begin() + kLine0Payload, x0.end(), torn.begin() + kLine0Payload);

  auto with_bits = [&](std::uint32_t v) {
    Bytes t = torn;
    std::memcpy(t.data() + kSolveAt, &v, 4);
    return image_crc(2, t);
  };
  const std::uint32_t base = with_bits(0);
  std::array<std::uint32_t, 32> cols{};
  for (int i = 0; i < 32; ++i) cols[i] = with_bits(1u << i) ^ base;
  // Gaussian elimination: find v with XOR of cols[i] over set bits = stale ^ base
  std::array<std::uint32_t, 32> rows_val{};  // column value of pivot row
  std::array<std::uint32_t, 32> rows_mix{};  // which unknown bits combine into it
  std::array<bool, 32> have{};
  for (int i = 0; i < 32; ++i) {
    std::uint32_t val = cols[i], mix = 1u << i;
    for (int b = 31; b >= 0 && val; --b) {
      if (!((val >> b) & 1)) continue;
      if (!have[b]) {
        have[b] = true;
        rows_val[b] = val;
        rows_mix[b] = mix;
        val = 0;
        break;
      }
      val ^= rows_val[b];
      mix ^= rows_mix[b];
    }
  }
  std::uint32_t want = stale ^ base, sol = 0;
  for (int b = 31; b >= 0; --b) {
    if (!((want >> b) & 1)) continue;
    if (!have[b]) throw InvariantError("CRC32 forgery: singular system");
    want ^= rows_val[b];
    sol ^= rows_mix[b];
  }
  std::memcpy(y.data() + kSolveAt, &sol, 4);
  torn = y;
  std::copy(x0.begin() + kLine0Payload, x0.end(), torn.begin() + kLine0Payload);
  if (image_crc(2, torn) != stale) throw InvariantError("CRC32 forgery: solution does not verify");

  std::ostringstream os;
  os << "# CRC32 torn-entry forgery: the last append reuses slot 0; the image with\n"
     << "# its first line new and its second line stale passes the CRC32 check.\n"
     << "algo crc32\npayload " << kPayload << "\ncapacity 2\ncrash exhaustive\n"
     << "A hex:" << detail::to_hex(x0) << "\nA hex:" << detail::to_hex(x1) << "\nT all\ncheckpoint\n"
     << "A hex:" << detail::to_hex(y) << "\n";
  return os.str();
}

inline WorkloadScript forge_crc32_script(std::uint64_t seed = 1) {
  return parse_script_text(forge_crc32_text(seed), "crc32-forgery");
}

}  // namespace pcso
