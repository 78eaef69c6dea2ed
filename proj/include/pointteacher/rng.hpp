#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pointteacher {

// Derives an independent stream seed from a root seed and a tag, so each
// subsystem (annotation, masking, scorer noise, ...) gets its own
// reproducible stream.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

class RngStream {
 public:
  RngStream() : engine_(0x9e3779b97f4a7c15ull) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}
  RngStream(std::uint64_t root, std::string_view tag)
      : engine_(derive_seed(root, tag)) {}

  // Uniform in [lo, hi). lo == hi returns lo.
  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double gaussian(double mean, double stddev) {
    if (stddev == 0.0) return mean;
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::uint64_t next_u64() { return engine_(); }

  // For bulk draws where constructing a distribution per sample would
  // dominate; the distribution keeps its internal cache across calls.
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pointteacher
