// pcso: benchmarks, crash-consistency driver and snapshot inspector.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "pcso/bench.hpp"
#include "pcso/harness.hpp"

using namespace pcso;

namespace {

// Rows go to --csv when given, stdout otherwise.
class CsvSink {
 public:
  explicit CsvSink(const std::string& path, const std::string& header) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw UsageError("cannot open " + path);
    }
    out() << header << "\n";
  }
  std::ostream& out() { return file_.is_open() ? file_ : std::cout; }
  void row(const std::string& r) { out() << r << "\n" << std::flush; }

 private:
  std::ofstream file_;
};

std::vector<Algorithm> parse_algorithms(const std::vector<std::string>& names) {
  std::vector<Algorithm> out;
  for (const auto& n : names) {
    if (n == "all") {
      for (Algorithm a : kAllAlgorithms)
        if (a != Algorithm::csovb_mutant) out.push_back(a);
    } else {
      out.push_back(parse_algorithm(n));
    }
  }
  return out;
}

std::string hex_word(std::uint64_t w) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w));
  return buf;
}

void dump_lines(SimMemory& mem) {
  std::cout << "lines (" << mem.line_count() << ", zero lines omitted):\n";
  for (std::size_t l = 0; l < mem.line_count(); ++l) {
    std::uint64_t w[kLineSize / kWordSize];
    bool zero = true;
    for (std::size_t i = 0; i < kLineSize / kWordSize; ++i) {
      w[i] = mem.peek_word(l * kLineSize + i * kWordSize);
      zero = zero && w[i] == 0;
    }
    if (zero) continue;
    std::printf("  %6zu:", l);
    for (auto x : w) std::printf(" %s", hex_word(x).c_str());
    std::printf("\n");
  }
}

int inspect_log(SimMemory& mem, Algorithm algo, std::size_t payload) {
  auto log = make_log(algo, mem, {0, mem.capacity()}, payload);
  dump_lines(mem);
  HeadWord hw = HeadWord::decode(mem.peek_word(0));
  std::cout << "head word: " << hex_word(hw.encode()) << " (head " << hw.head << ", polarity " << hw.polarity
            << ")\n";
  auto verdicts = log->inspect();
  std::cout << "slots (" << log->name() << ", payload " << payload << ", slot " << log->slot_size()
            << " bytes, scan from head):\n";
  for (const auto& v : verdicts)
    std::cout << "  index " << v.index << " @" << v.position << ": " << (v.valid ? "valid" : "invalid")
              << (v.recovered ? ", recovered" : "") << "\n";
  auto rec = log->recover();
  std::cout << "recovered " << rec.size() << " entries\n";
  for (const auto& e : rec) std::cout << "  [" << e.age_rank << "] index " << e.index << " " << detail::to_hex(e.payload) << "\n";
  return 0;
}

int inspect_set(SimMemory& mem, StpsConfig cfg) {
  dump_lines(mem);
  cfg.slots = mem.capacity() / (cfg.node_lines * kLineSize);
  StpsLayout layout(cfg.node_lines, cfg.mode);
  std::cout << "slots (" << cfg.slots << " x " << cfg.node_lines << " lines):\n";
  for (std::size_t s = 0; s < cfg.slots; ++s) {
    StpsSlotView v = layout.read(mem, s * layout.node_bytes());
    std::cout << "  slot " << s << ": ";
    if (!v.valid) {
      std::cout << "invalid\n";
      continue;
    }
    const auto& e = v.entry;
    if (e.meta.version == 0) {
      std::cout << "empty\n";
      continue;
    }
    std::cout << "valid v" << e.meta.version << " txn " << unsigned{e.meta.txncount} << " key '" << e.key << "'"
              << (e.tombstone ? " tombstone" : " value '" + e.value + "'") << "\n";
  }
  StpsSet set(mem, cfg);
  std::cout << "recovered " << set.size() << " keys\n";
  for (const auto& [k, v] : set.contents()) std::cout << "  " << k << " = " << v << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCSO persistent logging toolkit"};
  app.require_subcommand(1);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Log append micro-benchmark");
  std::vector<std::string> b_algos{"csovb", "tworounds"};
  std::vector<double> b_lines{1};
  std::vector<std::uint64_t> b_lat{0, 100, 200, 300, 400, 500, 600, 700, 800};
  BenchConfig bc;
  std::string b_csv;
  bench_cmd->add_option("--algo", b_algos, "Algorithms (comma list, or 'all')")->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--entry-lines", b_lines, "Entry sizes in cache lines (0.5,1,2,4,8)")
      ->delimiter(',')
      ->capture_default_str();
  bench_cmd->add_option("--latency-ns", b_lat, "Added fence latencies in ns")->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--ops", bc.iterations, "Appends per cell")->capture_default_str();
  bench_cmd->add_option("--drain", bc.drain_interval, "Read and trim every N appends")->capture_default_str();
  bench_cmd->add_option("--seed", bc.seed, "Payload seed")->capture_default_str();
  bench_cmd->add_option("--csv", b_csv, "Write CSV here instead of stdout");
  bench_cmd->footer("CSV: " + bench_csv_header() +
                    "\n  modeled throughput = appends / simulated time (store 1 ns, clflushopt 10 ns,\n"
                    "  fenced roundtrip 20 ns + latency, load 2 ns); roundtrips count the append path only.");

  // ycsb
  auto* ycsb_cmd = app.add_subcommand("ycsb", "Read/update workload on STPS and the TwoRounds set");
  std::vector<std::size_t> y_sizes{2048};
  std::vector<std::size_t> y_lines{1};
  std::vector<std::uint64_t> y_lat{0, 100, 200, 300, 400, 500, 600, 700, 800};
  YcsbConfig yc;
  std::string y_csv;
  ycsb_cmd->add_option("--set-size", y_sizes, "Keys preloaded (comma list)")->delimiter(',')->capture_default_str();
  ycsb_cmd->add_option("--node-lines", y_lines, "Node size in lines, 1..16")->delimiter(',')->capture_default_str();
  ycsb_cmd->add_option("--latency-ns", y_lat, "Added fence latencies in ns")->delimiter(',')->capture_default_str();
  ycsb_cmd->add_option("--read-fraction", yc.read_fraction, "Fraction of reads")->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  ycsb_cmd->add_option("--ops", yc.ops, "Operations after preload")->capture_default_str();
  ycsb_cmd->add_option("--seed", yc.seed, "Workload seed")->capture_default_str();
  ycsb_cmd->add_option("--csv", y_csv, "Write CSV here instead of stdout");
  ycsb_cmd->footer("CSV: " + ycsb_csv_header() + "\n  variant is STPS or TwoRounds-set; keys are uniform.");

  // crashtest
  auto* crash_cmd = app.add_subcommand("crashtest", "Run a workload script under every crash state");
  std::string c_script, c_algo, c_csv, c_snapshot;
  bool c_exhaustive = false, c_optimized = false;
  std::size_t c_samples = 0, c_at_op = 0;
  std::uint64_t c_seed = 0;
  crash_cmd->add_option("script", c_script, "Workload script")->required();
  crash_cmd->add_option("--algo", c_algo, "Log algorithm (overrides the script)");
  auto* ex = crash_cmd->add_flag("--exhaustive", c_exhaustive, "Enumerate every crash state");
  auto* sm = crash_cmd->add_option("--samples", c_samples, "Boundary states plus N random ones");
  auto* at = crash_cmd->add_option("--at-op", c_at_op, "Only states overlapping op i (1-based)");
  ex->excludes(sm)->excludes(at);
  sm->excludes(at);
  auto* sd = crash_cmd->add_option("--seed", c_seed, "Sampling seed");
  crash_cmd->add_flag("--optimized", c_optimized, "Set scripts: use the overlapped update path");
  crash_cmd->add_option("--csv", c_csv, "Append a result row to this CSV file");
  crash_cmd->add_option("--save-snapshot", c_snapshot, "Save the final (crash-free) image");
  crash_cmd->footer("CSV: " + CrashReport::csv_header() + "\nExit status 0 iff no violations.");

  // inspect
  auto* insp_cmd = app.add_subcommand("inspect", "Dump a snapshot and its per-entry verdicts");
  std::string i_path, i_algo = "csovb", i_mode = "single";
  std::size_t i_payload = 0, i_lines = 1;
  bool i_set = false;
  insp_cmd->add_option("snapshot", i_path, "Snapshot file")->required();
  insp_cmd->add_option("--algo", i_algo, "Log algorithm the image was written with")->capture_default_str();
  insp_cmd->add_option("--payload", i_payload, "Log payload size in bytes (default 24)");
  insp_cmd->add_flag("--set", i_set, "Image is an STPS set");
  insp_cmd->add_option("--node-lines", i_lines, "STPS node size in lines")->capture_default_str();
  insp_cmd->add_option("--mode", i_mode, "STPS line validity: single or dual")->capture_default_str();

  // forge-crc32
  auto* forge_cmd = app.add_subcommand("forge-crc32", "Print a script whose torn append passes CRC32");
  std::uint64_t f_seed = 1;
  forge_cmd->add_option("--seed", f_seed, "Payload seed")->capture_default_str();

  app.footer("CSV schemas:\n  bench:     " + bench_csv_header() + "\n  ycsb:      " + ycsb_csv_header() +
             "\n  crashtest: " + CrashReport::csv_header());

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench_cmd) {
      CsvSink sink(b_csv, bench_csv_header());
      for (Algorithm a : parse_algorithms(b_algos))
        for (double l : b_lines)
          for (std::uint64_t lat : b_lat) {
            BenchConfig c = bc;
            c.algo = a;
            c.entry_lines = l;
            c.latency_ns = lat;
            sink.row(bench_csv_row(bench(c)));
          }
      return 0;
    }
    if (*ycsb_cmd) {
      CsvSink sink(y_csv, ycsb_csv_header());
      for (std::size_t n : y_sizes)
        for (std::size_t l : y_lines)
          for (std::uint64_t lat : y_lat) {
            YcsbConfig c = yc;
            c.set_size = n;
            c.node_lines = l;
            c.latency_ns = lat;
            for (const auto& r : ycsb(c)) sink.row(ycsb_csv_row(r));
          }
      return 0;
    }
    if (*crash_cmd) {
      WorkloadScript s = load_script(c_script);
      if (c_exhaustive) s.policy = CrashPolicy::exhaustive;
      if (*sm) {
        s.policy = CrashPolicy::sampled;
        s.samples = c_samples;
      }
      if (*at) {
        s.policy = CrashPolicy::at_op;
        s.at_op = c_at_op;
      }
      if (*sd) s.seed = c_seed;
      std::optional<Algorithm> algo = s.algo;
      if (!c_algo.empty()) algo = parse_algorithm(c_algo);
      CrashReport r = s.kind == ScriptKind::set
                          ? run_set_crash_suite(s, {}, c_optimized ? SetUpdate::optimized : SetUpdate::plain)
                          : run_crash_suite(s, algo);
      std::cout << r.text();
      if (!c_csv.empty()) {
        bool fresh = !std::filesystem::exists(c_csv) || std::filesystem::file_size(c_csv) == 0;
        std::ofstream out(c_csv, std::ios::app);
        if (!out) throw UsageError("cannot open " + c_csv);
        if (fresh) out << CrashReport::csv_header() << "\n";
        out << r.csv_row() << "\n";
      }
      if (!c_snapshot.empty()) {
        auto save = [&](SimMemory& m) {
          if (m.has_pending_flushes()) m.sfence();
          m.snapshot_save(c_snapshot);
        };
        if (s.kind == ScriptKind::set)
          save(run_set_script(s)->mem);
        else
          save(run_log_script(*algo, s)->mem);
        std::cout << "snapshot saved to " << c_snapshot;
        if (s.kind == ScriptKind::set)
          std::cout << " (inspect --set --node-lines " << s.set.node_lines << " --mode "
                    << (s.set.mode == LineValidity::dual ? "dual" : "single") << ")\n";
        else
          std::cout << " (inspect --algo " << algorithm_name(*algo) << " --payload " << s.payload_size()
                    << ")\n";
      }
      return r.ok() ? 0 : 1;
    }
    if (*forge_cmd) {
      std::cout << forge_crc32_text(f_seed);
      return 0;
    }
    if (*insp_cmd) {
      SimMemory mem = SimMemory::snapshot_load(i_path);
      if (i_set) {
        StpsConfig cfg;
        cfg.node_lines = i_lines;
        if (i_mode == "dual")
          cfg.mode = LineValidity::dual;
        else if (i_mode != "single")
          throw UsageError("mode must be single or dual");
        return inspect_set(mem, cfg);
      }
      return inspect_log(mem, parse_algorithm(i_algo), i_payload ? i_payload : 24);
    }
  } catch (const std::exception& e) {
    std::cerr << "pcso: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
