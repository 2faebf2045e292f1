#ifndef AGGWASS_RNG_HPP
#define AGGWASS_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace aggwass {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; only used to turn substream names into integers.
constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Seed of a named substream of `master`, further keyed by integer indices.
/// Parallel and serial drivers derive identical streams for the same keys.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name,
                                 std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = detail::splitmix64(master ^ detail::hash_name(name));
  for (std::uint64_t k : keys) h = detail::splitmix64(h ^ detail::splitmix64(k + 1));
  return h;
}

inline Rng substream(std::uint64_t master, std::string_view name,
                     std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(master, name, keys));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = dist(rng);
  return z;
}

/// Index drawn with probability proportional to `weights` (nonnegative,
/// positive total). Traverses the weights in the given order.
inline Eigen::Index draw_categorical(const Eigen::VectorXd& weights, Rng& rng) {
  const double total = weights.sum();
  double u = uniform01(rng) * total;
  Eigen::Index last_positive = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) <= 0.0) continue;
    last_positive = i;
    if (u < weights(i)) return i;
    u -= weights(i);
  }
  return last_positive;
}

inline Eigen::VectorXd draw_dirichlet(const Eigen::VectorXd& concentration, Rng& rng) {
  Eigen::VectorXd g(concentration.size());
  for (Eigen::Index i = 0; i < concentration.size(); ++i) {
    std::gamma_distribution<double> dist(concentration(i), 1.0);
    g(i) = dist(rng);
  }
  const double s = g.sum();
  if (s > 0.0) return g / s;
  // All draws underflowed (tiny concentrations); fall back to one-hot.
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(concentration.size());
  one_hot(draw_categorical(concentration, rng)) = 1.0;
  return one_hot;
}

}  // namespace aggwass

#endif
