#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace nmsearch {

// Reports print floating values with 9 significant digits.
inline std::string format9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Rounds to 9 significant digits so JSON emitters print the short form.
inline double round9(double v) { return std::strtod(format9(v).c_str(), nullptr); }

}  // namespace nmsearch
