#include "regiondiff/denoiser.hpp"

namespace regiondiff {

std::string_view to_string(DenoiserKind kind) {
  switch (kind) {
    case DenoiserKind::oracle_gaussian: return "oracle_gaussian";
    case DenoiserKind::tiny_cnn: return "tiny_cnn";
    case DenoiserKind::constant_zero: return "constant_zero";
    case DenoiserKind::custom: return "custom";
  }
  return "unknown";
}

}  // namespace regiondiff
