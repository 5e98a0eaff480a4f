#pragma once

#include <string>
#include <vector>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"

namespace hypersynth::unmix {

enum class Method { LS, DL, ST };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::LS: return "ls";
    case Method::DL: return "dl";
    case Method::ST: return "st";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "ls") return Method::LS;
  if (s == "dl") return Method::DL;
  if (s == "st") return Method::ST;
  throw ConfigError("unknown unmixing method '" + s + "' (expected ls, dl or st)");
}

struct UnmixResult {
  EndmemberMatrix endmembers;
  AbundanceStack abundances;  // always strict_simplex
  std::vector<double> objective_trace;
  Method method = Method::LS;
};

}  // namespace hypersynth::unmix
