#ifndef AGGWASS_HMM_HPP
#define AGGWASS_HMM_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "gaussian.hpp"
#include "gmm.hpp"
#include "rng.hpp"

namespace aggwass {

inline constexpr double kRowSumTol = 1e-9;
inline constexpr double kStationaryTol = 1e-8;
/// States whose stationary weight falls below this are treated as empty.
inline constexpr double kMinStateWeight = 1e-10;

/// Row-stochastic M x M matrix of state transition probabilities.
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Eigen::MatrixXd t) : t_(std::move(t)) {
    if (t_.rows() < 1 || t_.rows() != t_.cols())
      throw InvalidInput("TransitionMatrix: must be square with at least one state");
    if (!t_.allFinite()) throw InvalidInput("TransitionMatrix: non-finite entries");
    if (t_.minCoeff() < 0.0)
      throw InvalidInput("TransitionMatrix: negative entry " + std::to_string(t_.minCoeff()));
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      const double s = t_.row(i).sum();
      if (std::abs(s - 1.0) > kRowSumTol)
        throw InvalidInput("TransitionMatrix: row " + std::to_string(i) + " sums to " +
                           std::to_string(s));
    }
  }

  /// Divides each row by its sum first; for matrices that are stochastic up
  /// to accumulated rounding.
  static TransitionMatrix normalized(Eigen::MatrixXd t) {
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const double s = t.row(i).sum();
      if (!(s > 0.0))
        throw InvalidInput("TransitionMatrix: row " + std::to_string(i) + " has no mass");
      t.row(i) /= s;
    }
    return TransitionMatrix(std::move(t));
  }

  Eigen::Index states() const { return t_.rows(); }
  const Eigen::MatrixXd& matrix() const { return t_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return t_(i, j); }

 private:
  Eigen::MatrixXd t_;
};

/// pi with pi T = pi, by power iteration on T^T from the uniform vector.
inline Eigen::VectorXd stationary_distribution(const TransitionMatrix& t,
                                               int max_iter = 100'000, double tol = 1e-12) {
  const Eigen::Index m = t.states();
  const Eigen::MatrixXd tt = t.matrix().transpose();
  Eigen::VectorXd pi = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  double diff = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd next = tt * pi;
    next /= next.sum();
    diff = (next - pi).cwiseAbs().maxCoeff();
    pi = std::move(next);
    if (diff < tol) return pi;
  }
  throw NonConvergence("stationary_distribution: power iteration did not converge", diff);
}

/// GMM-HMM with single-Gaussian emissions under its stationary chain.
class GmmHmm {
 public:
  GmmHmm(TransitionMatrix trans, std::vector<Gaussian> emissions)
      : GmmHmm(trans, std::move(emissions), stationary_distribution(trans)) {}

  GmmHmm(TransitionMatrix trans, std::vector<Gaussian> emissions, Eigen::VectorXd stationary)
      : trans_(std::move(trans)),
        emissions_(std::move(emissions)),
        stationary_(std::move(stationary)) {
    const Eigen::Index m = trans_.states();
    if (static_cast<Eigen::Index>(emissions_.size()) != m)
      throw InvalidInput("GmmHmm: " + std::to_string(emissions_.size()) + " emissions for " +
                         std::to_string(m) + " states");
    for (const auto& g : emissions_)
      if (g.dim() != emissions_.front().dim())
        throw InvalidInput("GmmHmm: emissions have different dimensions");
    if (stationary_.size() != m)
      throw InvalidInput("GmmHmm: stationary vector has wrong length");
    detail::require_probability_vector(stationary_, kStationaryTol, "GmmHmm stationary");
    const Eigen::VectorXd drift = trans_.matrix().transpose() * stationary_ - stationary_;
    if (drift.cwiseAbs().maxCoeff() > kStationaryTol)
      throw InvalidInput("GmmHmm: stationary vector violates pi T = pi (max error " +
                         std::to_string(drift.cwiseAbs().maxCoeff()) + ")");
    for (Eigen::Index i = 0; i < m; ++i)
      if (stationary_(i) < kMinStateWeight)
        throw InvalidInput("GmmHmm: state " + std::to_string(i) +
                           " has zero stationary probability");
  }

  Eigen::Index states() const { return trans_.states(); }
  Eigen::Index dim() const { return emissions_.front().dim(); }
  const TransitionMatrix& trans() const { return trans_; }
  const std::vector<Gaussian>& emissions() const { return emissions_; }
  const Gaussian& emission(Eigen::Index i) const { return emissions_[i]; }
  const Eigen::VectorXd& stationary() const { return stationary_; }
  bool degenerate() const {
    for (const auto& g : emissions_)
      if (g.degenerate()) return true;
    return false;
  }

 private:
  TransitionMatrix trans_;
  std::vector<Gaussian> emissions_;
  Eigen::VectorXd stationary_;
};

inline Gmm marginal_gmm(const GmmHmm& model) {
  return Gmm(model.stationary(), model.emissions());
}

/// Next-observation mixture given the current state: the model's emissions
/// weighted by `row`, renormalized to sum to one.
inline Gmm conditional_gmm(const GmmHmm& model, Eigen::Index i, const Eigen::VectorXd& row) {
  if (i < 0 || i >= model.states())
    throw InvalidInput("conditional_gmm: state index " + std::to_string(i) + " out of range");
  if (row.size() != model.states())
    throw InvalidInput("conditional_gmm: row has wrong length");
  if (!row.allFinite() || row.minCoeff() < 0.0)
    throw InvalidInput("conditional_gmm: row entries must be nonnegative");
  const double s = row.sum();
  if (!(s > 0.0)) throw InvalidInput("conditional_gmm: row has no mass");
  if (std::abs(s - 1.0) > 1e-6)
    throw InvalidInput("conditional_gmm: row sums to " + std::to_string(s));
  return Gmm(row / s, model.emissions());
}

/// Relabels states: state k of the result is state perm[k] of `model`.
inline GmmHmm permute_states(const GmmHmm& model, const std::vector<Eigen::Index>& perm) {
  const Eigen::Index m = model.states();
  if (static_cast<Eigen::Index>(perm.size()) != m)
    throw InvalidInput("permute_states: permutation has wrong length");
  std::vector<bool> seen(m, false);
  for (auto p : perm) {
    if (p < 0 || p >= m || seen[p]) throw InvalidInput("permute_states: not a permutation");
    seen[p] = true;
  }
  Eigen::MatrixXd t(m, m);
  Eigen::VectorXd pi(m);
  std::vector<Gaussian> em;
  em.reserve(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    pi(a) = model.stationary()(perm[a]);
    em.push_back(model.emission(perm[a]));
    for (Eigen::Index b = 0; b < m; ++b) t(a, b) = model.trans()(perm[a], perm[b]);
  }
  return GmmHmm(TransitionMatrix(std::move(t)), std::move(em), std::move(pi));
}

struct SimulatedSequence {
  Eigen::MatrixXd observations;  // length x dim
  std::vector<Eigen::Index> states;
};

inline SimulatedSequence simulate(const GmmHmm& model, Eigen::Index length, Rng& rng) {
  if (length < 1) throw InvalidInput("simulate: length must be >= 1");
  SimulatedSequence out;
  out.observations.resize(length, model.dim());
  out.states.resize(length);
  Eigen::Index s = draw_categorical(model.stationary(), rng);
  for (Eigen::Index t = 0; t < length; ++t) {
    if (t > 0) s = draw_categorical(model.trans().matrix().row(s).transpose(), rng);
    out.states[t] = s;
    const Gaussian& g = model.emission(s);
    const Eigen::VectorXd z = standard_normal_vector(g.dim(), rng);
    out.observations.row(t) = (g.mean() + g.cov_sqrt() * z).transpose();
  }
  return out;
}

namespace detail {

/// log emission densities, length x M.
inline Eigen::MatrixXd log_emissions(const std::vector<Gaussian>& emissions,
                                     const Eigen::MatrixXd& obs) {
  const auto m = static_cast<Eigen::Index>(emissions.size());
  Eigen::MatrixXd out(obs.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Gaussian& g = emissions[k];
    if (g.degenerate())
      throw DegenerateDensity("emission " + std::to_string(k) +
                              " has a singular covariance; likelihood is undefined");
    if (obs.cols() != g.dim())
      throw InvalidInput("observations have dimension " + std::to_string(obs.cols()) +
                         ", model has " + std::to_string(g.dim()));
    const double log_norm =
        -0.5 * (static_cast<double>(g.dim()) * std::log(2.0 * std::numbers::pi) +
                g.eigenvalues().array().log().sum());
    const Eigen::MatrixXd proj = (obs.rowwise() - g.mean().transpose()) * g.eigenvectors();
    out.col(k) = (log_norm - 0.5 * (proj.cwiseAbs2() * g.eigenvalues().cwiseInverse()).array())
                     .matrix();
  }
  return out;
}

// Scaled forward pass; each step is normalized after shifting the log
// emissions by their per-time maximum. Returns log P(obs).
inline double forward_scaled(const Eigen::VectorXd& initial, const Eigen::MatrixXd& trans,
                             const Eigen::MatrixXd& log_b, Eigen::MatrixXd* alpha_out,
                             Eigen::VectorXd* scale_out, Eigen::MatrixXd* b_out) {
  const Eigen::Index len = log_b.rows();
  const Eigen::Index m = log_b.cols();
  Eigen::MatrixXd b(len, m);
  Eigen::VectorXd shift(len);
  for (Eigen::Index t = 0; t < len; ++t) {
    shift(t) = log_b.row(t).maxCoeff();
    b.row(t) = (log_b.row(t).array() - shift(t)).exp().matrix();
  }
  Eigen::MatrixXd alpha(len, m);
  Eigen::VectorXd scale(len);
  double ll = 0.0;
  for (Eigen::Index t = 0; t < len; ++t) {
    if (t == 0)
      alpha.row(0) = initial.transpose().cwiseProduct(b.row(0));
    else
      alpha.row(t) = (alpha.row(t - 1) * trans).cwiseProduct(b.row(t));
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > 0.0)) return -std::numeric_limits<double>::infinity();
    alpha.row(t) /= scale(t);
    ll += std::log(scale(t)) + shift(t);
  }
  if (alpha_out) *alpha_out = std::move(alpha);
  if (scale_out) *scale_out = std::move(scale);
  if (b_out) *b_out = std::move(b);
  return ll;
}

}  // namespace detail

/// log P(obs | model) by the forward recursion started from the stationary
/// distribution.
inline double forward_loglik(const GmmHmm& model, const Eigen::MatrixXd& obs) {
  if (obs.rows() < 1) throw InvalidInput("forward_loglik: empty observation sequence");
  const Eigen::MatrixXd log_b = detail::log_emissions(model.emissions(), obs);
  return detail::forward_scaled(model.stationary(), model.trans().matrix(), log_b, nullptr,
                                nullptr, nullptr);
}

}  // namespace aggwass

#endif
