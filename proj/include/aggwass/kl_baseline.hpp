#ifndef AGGWASS_KL_BASELINE_HPP
#define AGGWASS_KL_BASELINE_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "hmm.hpp"
#include "rng.hpp"

namespace aggwass {

struct KlEstimate {
  /// Symmetrized, floored at 0.
  double value = 0.0;
  double forward = 0.0;   // D(h1 || h2)
  double backward = 0.0;  // D(h2 || h1)
  /// Per-sequence normalized log-likelihood ratios, h1-sampled then h2-sampled.
  std::vector<double> per_sequence_forward;
  std::vector<double> per_sequence_backward;
};

namespace detail {

inline void require_likelihood_model(const GmmHmm& h, const char* which) {
  for (Eigen::Index k = 0; k < h.states(); ++k)
    if (h.emission(k).degenerate())
      throw DegenerateDensity(std::string("kl_hmm: ") + which + " model has a singular " +
                              "covariance in state " + std::to_string(k) +
                              "; the likelihood ratio diverges");
}

// (1/(n_seq*T)) sum_k [log P(O_k|from) - log P(O_k|to)], O_k simulated from `from`.
inline double directed_kl(const GmmHmm& from, const GmmHmm& to, Eigen::Index seq_len,
                          Eigen::Index n_seq, Rng& rng, std::vector<double>* per_seq) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < n_seq; ++k) {
    const SimulatedSequence s = simulate(from, seq_len, rng);
    const double r = (forward_loglik(from, s.observations) - forward_loglik(to, s.observations)) /
                     static_cast<double>(seq_len);
    if (per_seq) per_seq->push_back(r);
    total += r;
  }
  return total / static_cast<double>(n_seq);
}

}  // namespace detail

/// Monte Carlo symmetrized KL rate between two HMMs. Sequences from h1 use a
/// stream seeded by seed_forward, sequences from h2 one seeded by
/// seed_backward, so swapping both models and seeds gives the same value.
inline KlEstimate kl_hmm_estimate(const GmmHmm& h1, const GmmHmm& h2, Eigen::Index seq_len,
                                  Eigen::Index n_seq, std::uint64_t seed_forward,
                                  std::uint64_t seed_backward) {
  if (seq_len < 1 || n_seq < 1) throw InvalidInput("kl_hmm: seq_len and n_seq must be >= 1");
  if (h1.dim() != h2.dim()) throw InvalidInput("kl_hmm: dimension mismatch");
  detail::require_likelihood_model(h1, "first");
  detail::require_likelihood_model(h2, "second");
  KlEstimate e;
  Rng fwd(seed_forward);
  Rng bwd(seed_backward);
  e.forward = detail::directed_kl(h1, h2, seq_len, n_seq, fwd, &e.per_sequence_forward);
  e.backward = detail::directed_kl(h2, h1, seq_len, n_seq, bwd, &e.per_sequence_backward);
  e.value = std::max(0.5 * (e.forward + e.backward), 0.0);
  return e;
}

inline double kl_hmm(const GmmHmm& h1, const GmmHmm& h2, Eigen::Index seq_len,
                     Eigen::Index n_seq, std::uint64_t seed_forward, std::uint64_t seed_backward) {
  return kl_hmm_estimate(h1, h2, seq_len, n_seq, seed_forward, seed_backward).value;
}

inline double kl_hmm(const GmmHmm& h1, const GmmHmm& h2, Eigen::Index seq_len,
                     Eigen::Index n_seq, Rng& rng) {
  const std::uint64_t a = rng();
  const std::uint64_t b = rng();
  return kl_hmm(h1, h2, seq_len, n_seq, a, b);
}

}  // namespace aggwass

#endif
