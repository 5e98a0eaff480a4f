#pragma once

// Small on-disk formats used by the pipeline: endmember and trace CSVs,
// patch manifests, PGM previews, and file checksums.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsc_io.hpp"
#include "hypersynth/core/hsi.hpp"

namespace hypersynth::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string crc_hex(const std::string& bytes) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", hypersynth::detail::crc32_of(bytes));
  return buf;
}

inline std::string file_checksum(const fs::path& path) { return crc_hex(read_file(path)); }

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// Header "band,e0,...,e{p-1}", then one row per band.
inline void write_endmembers_csv(const EndmemberMatrix& e, const fs::path& path) {
  std::ostringstream os;
  os.precision(10);
  os << "band";
  for (std::size_t j = 0; j < e.count(); ++j) os << ",e" << j;
  os << "\n";
  for (std::size_t b = 0; b < e.bands(); ++b) {
    os << b;
    for (std::size_t j = 0; j < e.count(); ++j)
      os << "," << e.signatures()(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
    os << "\n";
  }
  write_file(path, os.str());
}

inline EndmemberMatrix read_endmembers_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  const auto p = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("'" + path.string() + "': bad number '" + cell + "'");
      }
    }
    if (row.size() != p) throw IoError("'" + path.string() + "': ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || p == 0) throw IoError("'" + path.string() + "' holds no endmembers");
  Eigen::MatrixXd e(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t j = 0; j < p; ++j) e(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = rows[b][j];
  return EndmemberMatrix(std::move(e));
}

inline void write_series_csv(const fs::path& path, const std::string& header, const std::vector<double>& values,
                             std::size_t first_index) {
  std::ostringstream os;
  os.precision(10);
  os << header << "\n";
  for (std::size_t i = 0; i < values.size(); ++i) os << first_index + i << "," << values[i] << "\n";
  write_file(path, os.str());
}

// 8-bit binary PGM of one channel; values are clamped to [0, 1].
inline void write_pgm(const Patch& p, std::size_t channel, const fs::path& path) {
  std::string bytes = "P5\n" + std::to_string(p.width) + " " + std::to_string(p.height) + "\n255\n";
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) {
      const double v = std::clamp(static_cast<double>(p.at(channel, r, c)), 0.0, 1.0);
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file(path, bytes);
}

struct ManifestEntry {
  std::string file;  // relative to the manifest's directory
  std::string source_id;
  std::string method;
};

// Loads the patches listed under `key` of a manifest.
inline std::vector<Patch> load_manifest_patches(const fs::path& manifest, const std::string& key = "patches") {
  const json m = read_json(manifest);
  if (!m.contains(key)) throw IoError("manifest '" + manifest.string() + "' has no \"" + key + "\" list");
  std::vector<Patch> out;
  for (const auto& e : m.at(key)) out.push_back(load_patch(manifest.parent_path() / e.at("file").get<std::string>()));
  return out;
}

inline std::string index_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
  return buf;
}

}  // namespace hypersynth::pipeline
