#pragma once

// Algorithm registry: names, slot sizing and construction by name.

#include <algorithm>
#include <array>
#include <memory>

#include "pcso/log_baselines.hpp"
#include "pcso/log_cso.hpp"

namespace pcso {

enum class Algorithm { csovb, csovb_mutant, csorandom, csofvb, tornbit, crc32, crc64, tworounds, atlas };

inline constexpr std::array<Algorithm, 9> kAllAlgorithms = {
    Algorithm::csovb,   Algorithm::csovb_mutant, Algorithm::csorandom, Algorithm::csofvb, Algorithm::tornbit,
    Algorithm::crc32,   Algorithm::crc64,        Algorithm::tworounds, Algorithm::atlas};

inline std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::csovb: return "csovb";
    case Algorithm::csovb_mutant: return "csovb-mutant";
    case Algorithm::csorandom: return "csorandom";
    case Algorithm::csofvb: return "csofvb";
    case Algorithm::tornbit: return "tornbit";
    case Algorithm::crc32: return "crc32";
    case Algorithm::crc64: return "crc64";
    case Algorithm::tworounds: return "tworounds";
    case Algorithm::atlas: return "atlas";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  std::erase(n, '_');
  for (Algorithm a : kAllAlgorithms) {
    std::string cand(algorithm_name(a));
    std::erase(cand, '_');
    if (n == cand) return a;
  }
  if (n == "cso-vb") return Algorithm::csovb;
  if (n == "cso-random") return Algorithm::csorandom;
  if (n == "cso-fvb") return Algorithm::csofvb;
  if (n == "atlaslog") return Algorithm::atlas;
  throw UsageError("unknown algorithm '" + std::string(name) + "'");
}

inline std::size_t slot_bytes(Algorithm a, std::size_t payload) {
  switch (a) {
    case Algorithm::csovb:
    case Algorithm::csovb_mutant: return CsoVbLog::slot_bytes(payload);
    case Algorithm::csorandom: return CsoRandomLog::slot_bytes(payload);
    case Algorithm::csofvb: return CsoFvbLog::slot_bytes(payload);
    case Algorithm::tornbit: return TornbitLog::slot_bytes(payload);
    case Algorithm::crc32:
    case Algorithm::crc64: return CrcLog::slot_bytes(payload);
    case Algorithm::tworounds:
    case Algorithm::atlas: return LinkedLog::slot_bytes(payload);
  }
  throw UsageError("unknown algorithm");
}

// Spare slots an algorithm keeps free (capacity = slots - reserve).
inline std::size_t reserved_slots(Algorithm a) {
  switch (a) {
    case Algorithm::csorandom: return 2;
    case Algorithm::tworounds:
    case Algorithm::atlas: return 1;
    default: return 0;
  }
}

// Region large enough for `entries` live entries of `payload` bytes.
inline LogRegion region_for(Algorithm a, std::size_t payload, std::size_t entries, std::size_t base = 0) {
  std::size_t data = (entries + reserved_slots(a)) * slot_bytes(a, payload);
  std::size_t size = kLineSize + (data + kLineSize - 1) / kLineSize * kLineSize;
  return {base, size};
}

inline std::unique_ptr<PersistentLog> make_log(Algorithm a, SimMemory& mem, LogRegion region, std::size_t payload) {
  switch (a) {
    case Algorithm::csovb: return std::make_unique<CsoVbLog>(mem, region, payload);
    case Algorithm::csovb_mutant: return std::make_unique<CsoVbMutantLog>(mem, region, payload);
    case Algorithm::csorandom: return std::make_unique<CsoRandomLog>(mem, region, payload);
    case Algorithm::csofvb: return std::make_unique<CsoFvbLog>(mem, region, payload);
    case Algorithm::tornbit: return std::make_unique<TornbitLog>(mem, region, payload);
    case Algorithm::crc32: return std::make_unique<CrcLog>(mem, region, payload, CrcKind::crc32c);
    case Algorithm::crc64: return std::make_unique<CrcLog>(mem, region, payload, CrcKind::crc64);
    case Algorithm::tworounds: return std::make_unique<LinkedLog>(mem, region, payload, LinkMode::two_rounds);
    case Algorithm::atlas: return std::make_unique<LinkedLog>(mem, region, payload, LinkMode::atlas);
  }
  throw UsageError("unknown algorithm");
}

}  // namespace pcso
