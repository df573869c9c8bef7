#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ebtm/digest.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/version.hpp"

namespace ebtm {

/// Reproducibility record written next to every artifact. Contains no
/// timestamps or host details, so reruns with identical inputs produce
/// byte-identical sidecars.
struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
};

inline std::uint64_t config_hash(std::vector<std::pair<std::string, std::string>> config) {
  std::sort(config.begin(), config.end());
  Fnv1a64 h;
  for (const auto& [key, value] : config) {
    h.update(key);
    h.update("=", 1);
    h.update(value);
    h.update("\n", 1);
  }
  return h.value();
}

/// Writes `<artifact_path>.prov` with the command, version, seed, the
/// configuration hash, and the sorted effective configuration.
inline void write_provenance(const std::string& artifact_path, const Provenance& prov) {
  std::vector<std::pair<std::string, std::string>> config = prov.config;
  std::sort(config.begin(), config.end());
  const std::string path = artifact_path + ".prov";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_provenance: cannot open for writing: " + path);
  out << "command=" << prov.command << '\n';
  out << "version=" << kVersion << '\n';
  out << "seed=" << prov.seed << '\n';
  out << "config_hash=" << to_hex(config_hash(config)) << '\n';
  for (const auto& [key, value] : config) {
    out << "config." << key << '=' << value << '\n';
  }
  if (!out) throw IoError("write_provenance: write failed: " + path);
}

}  // namespace ebtm
