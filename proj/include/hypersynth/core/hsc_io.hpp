#pragma once

// HSC container: "HSC1\n", a one-line JSON header, "\n", then h*w*c
// little-endian float32 values in band-sequential order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"

namespace hypersynth {

namespace detail {

inline std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string encode_f32le(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) out[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> decode_f32le(const std::string& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + k])) << (8 * k);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

struct HscFile {
  nlohmann::json header;
  std::vector<float> values;
};

inline void write_hsc(const std::filesystem::path& path, nlohmann::json header, std::span<const float> values) {
  const std::string payload = encode_f32le(values);
  header["crc32"] = crc32_of(payload);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "HSC1\n" << header.dump() << "\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::size_t header_dim(const nlohmann::json& header, const char* key, const std::string& path) {
  if (!header.contains(key) || !header[key].is_number_unsigned())
    throw IoError("'" + path + "': header field '" + key + "' missing or not a non-negative integer");
  return header[key].get<std::size_t>();
}

inline HscFile read_hsc(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string name = path.string();

  std::string magic;
  if (!std::getline(in, magic) || magic != "HSC1") throw IoError("'" + name + "': bad magic, expected HSC1");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + name + "': missing header line");
  HscFile file;
  try {
    file.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + name + "': malformed header: " + e.what());
  }
  const auto& h = file.header;
  if (!h.is_object()) throw IoError("'" + name + "': header is not a JSON object");
  if (h.value("layout", "") != "bsq") throw IoError("'" + name + "': unsupported layout");
  if (h.value("dtype", "") != "f32le") throw IoError("'" + name + "': unsupported dtype");
  if (h.value("kind", "") != expected_kind)
    throw IoError("'" + name + "': kind is '" + h.value("kind", "") + "', expected '" + expected_kind + "'");
  if (!h.contains("crc32") || !h["crc32"].is_number_unsigned())
    throw IoError("'" + name + "': header field 'crc32' missing");
  const std::size_t height = header_dim(h, "h", name);
  const std::size_t width = header_dim(h, "w", name);
  const std::size_t chans = header_dim(h, "c", name);

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = height * width * chans * 4;
  if (payload.size() != expected)
    throw IoError("'" + name + "': dimension mismatch, header declares " + std::to_string(height) + "x" +
                  std::to_string(width) + "x" + std::to_string(chans) + " (" + std::to_string(expected) +
                  " bytes) but payload holds " + std::to_string(payload.size()) + " bytes");
  if (crc32_of(payload) != h["crc32"].get<std::uint32_t>())
    throw IoError("'" + name + "': checksum mismatch, payload is corrupt");

  file.values = decode_f32le(payload);
  for (std::size_t i = 0; i < file.values.size(); ++i)
    if (!std::isfinite(file.values[i]))
      throw IoError("'" + name + "': non-finite value at offset " + std::to_string(i) + " (byte " +
                    std::to_string(i * 4) + ")");
  return file;
}

}  // namespace detail

inline void save_cube(const HyperCube& cube, const std::filesystem::path& path) {
  nlohmann::json header = {{"h", cube.height()}, {"w", cube.width()},     {"c", cube.bands()},
                           {"layout", "bsq"},    {"dtype", "f32le"},      {"kind", "cube"}};
  header["wavelengths"] = cube.wavelengths() ? nlohmann::json(*cube.wavelengths()) : nlohmann::json(nullptr);
  if (cube.nodata_mask()) {
    std::vector<std::size_t> idx;
    for (std::size_t p = 0; p < cube.pixels(); ++p)
      if ((*cube.nodata_mask())[p]) idx.push_back(p);
    header["nodata"] = idx;
  } else {
    header["nodata"] = nullptr;
  }
  detail::write_hsc(path, std::move(header), cube.data());
}

inline HyperCube load_cube(const std::filesystem::path& path) {
  auto file = detail::read_hsc(path, "cube");
  const auto& h = file.header;
  std::optional<std::vector<double>> wl;
  if (h.contains("wavelengths") && !h["wavelengths"].is_null()) wl = h["wavelengths"].get<std::vector<double>>();
  std::optional<std::vector<bool>> mask;
  const std::size_t height = h["h"].get<std::size_t>(), width = h["w"].get<std::size_t>();
  if (h.contains("nodata") && !h["nodata"].is_null()) {
    mask.emplace(height * width, false);
    for (std::size_t idx : h["nodata"].get<std::vector<std::size_t>>()) {
      if (idx >= mask->size()) throw IoError("'" + path.string() + "': nodata index out of range");
      (*mask)[idx] = true;
    }
  }
  try {
    return HyperCube(height, width, h["c"].get<std::size_t>(), std::move(file.values), std::move(wl),
                     std::move(mask));
  } catch (const ConfigError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

namespace detail {

inline nlohmann::json abundance_header(const AbundanceStack& stack) {
  return {{"h", stack.height()}, {"w", stack.width()},  {"c", stack.channels()},
          {"layout", "bsq"},     {"dtype", "f32le"},    {"kind", "abundance"},
          {"wavelengths", nullptr}, {"strict_simplex", stack.strict_simplex()}};
}

}  // namespace detail

inline void save_abundances(const AbundanceStack& stack, const std::filesystem::path& path) {
  detail::write_hsc(path, detail::abundance_header(stack), stack.data());
}

inline AbundanceStack load_abundances(const std::filesystem::path& path) {
  auto file = detail::read_hsc(path, "abundance");
  const auto& h = file.header;
  try {
    return AbundanceStack(h["h"].get<std::size_t>(), h["w"].get<std::size_t>(), h["c"].get<std::size_t>(),
                          std::move(file.values), h.value("strict_simplex", false));
  } catch (const ConfigError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

// Patches are abundance containers with their provenance in extra header
// fields.
inline void save_patch(const Patch& patch, bool strict_simplex, const std::filesystem::path& path) {
  nlohmann::json header = {{"h", patch.height},     {"w", patch.width},   {"c", patch.channels},
                           {"layout", "bsq"},       {"dtype", "f32le"},   {"kind", "abundance"},
                           {"wavelengths", nullptr}, {"strict_simplex", strict_simplex},
                           {"origin", {patch.row, patch.col}},             {"source_id", patch.source_id}};
  detail::write_hsc(path, std::move(header), patch.data);
}

inline Patch load_patch(const std::filesystem::path& path) {
  auto file = detail::read_hsc(path, "abundance");
  const auto& h = file.header;
  Patch p;
  p.height = h["h"].get<std::size_t>();
  p.width = h["w"].get<std::size_t>();
  p.channels = h["c"].get<std::size_t>();
  if (h.contains("origin") && h["origin"].is_array() && h["origin"].size() == 2) {
    p.row = h["origin"][0].get<std::size_t>();
    p.col = h["origin"][1].get<std::size_t>();
  }
  p.source_id = h.value("source_id", std::string{});
  p.data = std::move(file.values);
  return p;
}

}  // namespace hypersynth
