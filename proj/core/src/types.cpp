#include "htapsim/types.hpp"

namespace htapsim {

std::string to_string(Dxid v) { return std::to_string(to_underlying(v)); }

std::string to_string(LocalXid v) { return std::to_string(to_underlying(v)); }

std::string to_string(SegmentId v) {
  if (v == kCoordinator) return "coordinator";
  return "seg" + std::to_string(to_underlying(v));
}

}  // namespace htapsim
