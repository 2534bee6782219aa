// jt/common.hpp
//
// Shared error handling and counted RNG streams.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace jt {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract check. Throws jt::Error with location info.
#define JT_CHECK(cond, msg)                                              \
  do {                                                                   \
    if (!(cond)) {                                                       \
      std::ostringstream jt_oss_;                                        \
      jt_oss_ << __FILE__ << ":" << __LINE__ << ": " << msg;             \
      throw ::jt::Error(jt_oss_.str());                                  \
    }                                                                    \
  } while (0)

// mt19937_64 wrapper that counts how many raw draws were consumed.
// The count makes "this stream was not touched" assertions exact, and
// both engine state and count serialize losslessly as text.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() {
    ++draws_;
    return engine_();
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    JT_CHECK(n > 0, "uniform_int: empty range");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = raw();
    } while (r >= limit);
    return r % n;
  }

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(raw() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (polar form would consume a variable
  // number of draws; the trig form keeps the draw count deterministic).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t draw_count() const { return draws_; }

  std::string serialize() const {
    std::ostringstream oss;
    oss << engine_ << " " << draws_;
    return oss.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream iss(s);
    iss >> engine_ >> draws_;
    JT_CHECK(!iss.fail(), "Rng::deserialize: malformed state string");
  }

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && draws_ == other.draws_;
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

}  // namespace jt
