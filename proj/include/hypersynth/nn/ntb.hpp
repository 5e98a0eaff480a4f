#pragma once

// NTB tensor container: "NTB1\n", one-line JSON header, "\n", payload.
// Header: {"tensors": [{"name", "shape", "dtype": "f32le"|"f64le",
// "offset"}], "meta": {...}, "payload_bytes", "crc32"}; offsets are byte
// offsets into the payload.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsc_io.hpp"

namespace hypersynth::nn {

static_assert(std::endian::native == std::endian::little, "NTB I/O assumes a little-endian host");

struct NtbTensor {
  std::vector<std::size_t> shape;
  std::string dtype;  // "f32le" or "f64le"
  std::vector<double> values;  // widened on read; narrowed to dtype on write

  std::size_t count() const { return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>()); }
};

struct NtbFile {
  std::vector<std::pair<std::string, NtbTensor>> tensors;  // write order is preserved
  nlohmann::json meta = nlohmann::json::object();

  const NtbTensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw IoError("NTB: missing tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& kv : tensors)
      if (kv.first == name) return true;
    return false;
  }
};

inline void write_ntb(const std::filesystem::path& path, const NtbFile& f) {
  std::string payload;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : f.tensors) {
    if (t.values.size() != t.count()) throw ConfigError("NTB: tensor '" + name + "' value count differs from shape");
    list.push_back({{"name", name}, {"shape", t.shape}, {"dtype", t.dtype}, {"offset", payload.size()}});
    if (t.dtype == "f32le") {
      for (double v : t.values) {
        const float x = static_cast<float>(v);
        payload.append(reinterpret_cast<const char*>(&x), 4);
      }
    } else if (t.dtype == "f64le") {
      payload.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * 8);
    } else {
      throw ConfigError("NTB: unsupported dtype '" + t.dtype + "'");
    }
  }
  const nlohmann::json header = {{"tensors", list},
                                 {"meta", f.meta},
                                 {"payload_bytes", payload.size()},
                                 {"crc32", hypersynth::detail::crc32_of(payload)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "NTB1\n" << header.dump() << "\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline NtbFile read_ntb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != "NTB1") throw IoError("'" + path.string() + "' is not an NTB1 file");
  if (!std::getline(in, header_line)) throw IoError("NTB: missing header in '" + path.string() + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw IoError("NTB: malformed header in '" + path.string() + "': " + e.what());
  }
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto expect_bytes = header.value("payload_bytes", std::size_t{0});
  if (payload.size() != expect_bytes)
    throw IoError("NTB: payload is " + std::to_string(payload.size()) + " bytes, header says " + std::to_string(expect_bytes));
  if (hypersynth::detail::crc32_of(payload) != header.value("crc32", std::uint32_t{0}))
    throw IoError("NTB: checksum mismatch in '" + path.string() + "'");

  NtbFile f;
  f.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("tensors")) {
    NtbTensor t;
    t.shape = e.at("shape").get<std::vector<std::size_t>>();
    t.dtype = e.at("dtype").get<std::string>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t width = t.dtype == "f32le" ? 4 : t.dtype == "f64le" ? 8 : 0;
    if (width == 0) throw IoError("NTB: unsupported dtype '" + t.dtype + "'");
    const std::size_t n = t.count();
    if (offset + n * width > payload.size()) throw IoError("NTB: tensor '" + e.at("name").get<std::string>() + "' overruns payload");
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (width == 4) {
        float x;
        std::memcpy(&x, payload.data() + offset + 4 * i, 4);
        t.values[i] = x;
      } else {
        std::memcpy(&t.values[i], payload.data() + offset + 8 * i, 8);
      }
    }
    f.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return f;
}

}  // namespace hypersynth::nn
