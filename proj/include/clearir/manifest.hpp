#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/image.hpp"
#include "clearir/io.hpp"
#include "clearir/rng.hpp"

namespace clearir {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kManifestFileName = "manifest.json";

struct ManifestEntry {
  std::string pair_id;
  std::string input_path;  // relative to the manifest root
  std::string gt_path;
  Provenance provenance = Provenance::synthetic;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::string root_dir = ".";
  std::vector<ManifestEntry> entries;

  // Directory the manifest was read from / written to. Not serialized; a
  // relative root_dir is resolved against it.
  fs::path location;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  fs::path root() const {
    const fs::path r(root_dir);
    return r.is_absolute() ? r : (location / r).lexically_normal();
  }
  fs::path input_file(const ManifestEntry& e) const { return root() / e.input_path; }
  fs::path gt_file(const ManifestEntry& e) const { return root() / e.gt_path; }

  ImagePair load_pair(const ManifestEntry& e) const {
    ImagePair p{load_image(input_file(e)), load_image(gt_file(e)), e.pair_id, e.provenance,
                e.seed};
    require_same_shape(p.input_ir, p.ground_truth, e.pair_id.c_str());
    return p;
  }

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.schema_version == b.schema_version && a.root_dir == b.root_dir &&
           a.entries == b.entries;
  }
};

inline void check_unique_ids(const std::vector<ManifestEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.pair_id.empty()) throw ValidationError("manifest entry with empty pair_id");
    if (!seen.insert(e.pair_id).second) {
      throw ValidationError("duplicate pair_id '" + e.pair_id + "'");
    }
  }
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"pair_id", e.pair_id},
                       {"input_path", e.input_path},
                       {"gt_path", e.gt_path},
                       {"provenance", to_string(e.provenance)},
                       {"seed", e.seed}});
  }
  return {{"schema_version", m.schema_version}, {"root_dir", m.root_dir}, {"entries", entries}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    m.root_dir = j.at("root_dir").get<std::string>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("pair_id").get<std::string>(),
                           e.at("input_path").get<std::string>(),
                           e.at("gt_path").get<std::string>(),
                           provenance_from_string(e.at("provenance").get<std::string>()),
                           e.at("seed").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ManifestError(std::string("malformed manifest: ") + ex.what());
  }
  if (m.schema_version != kManifestSchemaVersion) {
    throw ManifestError("unsupported manifest schema_version " +
                        std::to_string(m.schema_version));
  }
  check_unique_ids(m.entries);
  return m;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& file) {
  check_unique_ids(m.entries);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + file.string() + "'");
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest '" + file.string() + "'");
}

/// Writes <root>/manifest.json with root_dir "." and returns the manifest.
inline DatasetManifest write_manifest(std::vector<ManifestEntry> entries, const fs::path& root) {
  DatasetManifest m;
  m.entries = std::move(entries);
  m.location = root;
  check_unique_ids(m.entries);
  write_manifest(m, root / kManifestFileName);
  return m;
}

// Checks that every referenced file exists. With decode = true each pair is
// also decoded and its two images compared for equal dimensions.
inline void verify_manifest_files(const DatasetManifest& m, bool decode = false) {
  for (const auto& e : m.entries) {
    for (const fs::path& p : {m.input_file(e), m.gt_file(e)}) {
      if (!fs::is_regular_file(p)) {
        throw ManifestError("entry '" + e.pair_id + "' references missing file '" +
                            p.string() + "'");
      }
    }
    if (decode) {
      const Image a = load_image(m.input_file(e));
      const Image b = load_image(m.gt_file(e));
      if (!a.same_shape(b)) {
        throw ManifestError("entry '" + e.pair_id + "' has mismatched image sizes");
      }
    }
  }
}

/// Accepts either a manifest file or a directory containing manifest.json.
inline DatasetManifest read_manifest(const fs::path& path, bool check_files = true) {
  const fs::path file = fs::is_directory(path) ? path / kManifestFileName : path;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest '" + file.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ManifestError("cannot parse manifest '" + file.string() + "': " + ex.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.location = file.has_parent_path() ? file.parent_path() : fs::path(".");
  if (check_files) verify_manifest_files(m);
  return m;
}

// Stable content id: independent of where the dataset lives on disk.
inline std::string manifest_content_id(const DatasetManifest& m) {
  nlohmann::json j = to_json(m);
  j.erase("root_dir");
  const std::string s = j.dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

}  // namespace clearir
