#ifndef AVM_COMMON_HPP
#define AVM_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace avm {

using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid ModelConfig / TaskSpec fields or flag combinations.
struct ConfigError : Error {
  using Error::Error;
};

/// Matrix dimension disagreements.
struct ShapeError : Error {
  using Error::Error;
};

/// Non-finite values where finite input is required.
struct NumericError : Error {
  using Error::Error;
};

/// Malformed archives, checkpoints or manifests.
struct FormatError : Error {
  using Error::Error;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stable sub-stream seeding: mixes a base seed with a stream tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51a4b6c3d2e1f005ULL));
}

using Rng = std::mt19937_64;

inline Mat randn(Rng& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

/// FNV-1a over raw matrix bytes; used for dataset fingerprints.
inline std::uint64_t hash_bytes(const void* data, std::size_t n,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_mat(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) {
      double v = m(r, c);
      h = hash_bytes(&v, sizeof(v), h);
    }
  return h;
}

}  // namespace avm

#endif  // AVM_COMMON_HPP
