#ifndef AGGWASS_GMM_HPP
#define AGGWASS_GMM_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "gaussian.hpp"
#include "rng.hpp"

namespace aggwass {

inline constexpr double kProbabilityTol = 1e-9;

namespace detail {

inline void require_probability_vector(const Eigen::VectorXd& p, double tol, const char* what) {
  if (p.size() == 0) throw InvalidInput(std::string(what) + ": empty probability vector");
  if (!p.allFinite()) throw InvalidInput(std::string(what) + ": non-finite probability");
  if (p.minCoeff() < 0.0)
    throw InvalidInput(std::string(what) + ": negative probability " +
                       std::to_string(p.minCoeff()));
  if (std::abs(p.sum() - 1.0) > tol)
    throw InvalidInput(std::string(what) + ": probabilities sum to " + std::to_string(p.sum()));
}

}  // namespace detail

/// Finite mixture of Gaussians sharing one dimension.
class Gmm {
 public:
  Gmm(Eigen::VectorXd weights, std::vector<Gaussian> components)
      : weights_(std::move(weights)), components_(std::move(components)) {
    if (components_.empty()) throw InvalidInput("Gmm: at least one component is required");
    if (weights_.size() != static_cast<Eigen::Index>(components_.size()))
      throw InvalidInput("Gmm: " + std::to_string(weights_.size()) + " weights for " +
                         std::to_string(components_.size()) + " components");
    detail::require_probability_vector(weights_, kProbabilityTol, "Gmm weights");
    for (const auto& c : components_)
      if (c.dim() != components_.front().dim())
        throw InvalidInput("Gmm: components have different dimensions");
  }

  Eigen::Index size() const { return weights_.size(); }
  Eigen::Index dim() const { return components_.front().dim(); }
  const Eigen::VectorXd& weights() const { return weights_; }
  double weight(Eigen::Index i) const { return weights_(i); }
  const std::vector<Gaussian>& components() const { return components_; }
  const Gaussian& component(Eigen::Index i) const { return components_[i]; }

 private:
  Eigen::VectorXd weights_;
  std::vector<Gaussian> components_;
};

namespace detail {

inline bool lexicographic_less(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

}  // namespace detail

/// Component indices sorted by (mean, covariance) lexicographically; a
/// labelling-independent order used when drawing from a mixture.
inline std::vector<Eigen::Index> canonical_order(const std::vector<Gaussian>& comps) {
  std::vector<Eigen::Index> order(comps.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto& ga = comps[a];
    const auto& gb = comps[b];
    if (ga.mean() != gb.mean()) return detail::lexicographic_less(ga.mean(), gb.mean());
    return detail::lexicographic_less(ga.cov(), gb.cov());
  });
  return order;
}

/// n draws from the mixture, one per row. Components are selected in
/// canonical order, so relabelled copies of a mixture yield identical samples
/// from the same rng state.
inline Eigen::MatrixXd sample_mixture(const Gmm& gmm, Eigen::Index n, Rng& rng) {
  if (n < 1) throw InvalidInput("sample_mixture: n must be >= 1");
  const auto order = canonical_order(gmm.components());
  Eigen::VectorXd ordered_weights(gmm.size());
  for (Eigen::Index k = 0; k < gmm.size(); ++k) ordered_weights(k) = gmm.weight(order[k]);
  Eigen::MatrixXd out(n, gmm.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Gaussian& g = gmm.component(order[draw_categorical(ordered_weights, rng)]);
    const Eigen::VectorXd z = standard_normal_vector(g.dim(), rng);
    out.row(i) = (g.mean() + g.cov_sqrt() * z).transpose();
  }
  return out;
}

/// Posterior component probabilities of a mixture. When every component is
/// singular along the same directions (e.g. zeroed observation dimensions),
/// densities are evaluated on the common support subspace; singularities that
/// differ between components are rejected.
class MixturePosterior {
 public:
  explicit MixturePosterior(const Gmm& gmm) : log_weights_(gmm.size()) {
    const Eigen::Index d = gmm.dim();
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(d, d);
    for (const auto& c : gmm.components()) total += c.cov();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(total);
    const double top = es.eigenvalues().maxCoeff();
    if (!(top > 0.0))
      throw DegenerateDensity("mixture posterior: every component is a point mass");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < d; ++i)
      if (es.eigenvalues()(i) > kDegenerateRatio * top) keep.push_back(i);
    const auto r = static_cast<Eigen::Index>(keep.size());
    if (r < d) {
      basis_.resize(d, r);
      for (Eigen::Index k = 0; k < r; ++k) basis_.col(k) = es.eigenvectors().col(keep[k]);
      const Eigen::MatrixXd complement =
          Eigen::MatrixXd::Identity(d, d) - basis_ * basis_.transpose();
      const Eigen::VectorXd& ref = gmm.component(0).mean();
      for (const auto& c : gmm.components()) {
        const double off = (complement * (c.mean() - ref)).norm();
        if (off > 1e-9 * (1.0 + ref.norm()))
          throw DegenerateDensity(
              "mixture posterior: components are singular with different supports");
      }
    }
    components_.reserve(gmm.size());
    for (Eigen::Index k = 0; k < gmm.size(); ++k) {
      const Gaussian& c = gmm.component(k);
      if (r < d) {
        components_.emplace_back(basis_.transpose() * c.mean(),
                                 detail::symmetrize(basis_.transpose() * c.cov() * basis_));
      } else {
        components_.push_back(c);
      }
      if (components_.back().degenerate())
        throw DegenerateDensity("mixture posterior: component " + std::to_string(k) +
                                " is singular within the mixture support");
      log_weights_(k) = gmm.weight(k) > 0.0 ? std::log(gmm.weight(k))
                                            : -std::numeric_limits<double>::infinity();
    }
  }

  /// Posteriors for every row of `points`, returned as an M x n matrix.
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& points) const {
    const Eigen::Index n = points.rows();
    const auto m = static_cast<Eigen::Index>(components_.size());
    const Eigen::MatrixXd x = basis_.size() > 0 ? Eigen::MatrixXd(points * basis_) : points;
    Eigen::MatrixXd logp(m, n);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Gaussian& g = components_[k];
      if (std::isinf(log_weights_(k))) {
        logp.row(k).setConstant(-std::numeric_limits<double>::infinity());
        continue;
      }
      const double log_norm =
          -0.5 * (static_cast<double>(g.dim()) * std::log(2.0 * std::numbers::pi) +
                  g.eigenvalues().array().log().sum());
      const Eigen::MatrixXd proj = (x.rowwise() - g.mean().transpose()) * g.eigenvectors();
      const Eigen::VectorXd maha = proj.cwiseAbs2() * g.eigenvalues().cwiseInverse();
      logp.row(k) = ((log_weights_(k) + log_norm) - 0.5 * maha.array()).matrix().transpose();
    }
    Eigen::MatrixXd post(m, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double top = logp.col(i).maxCoeff();
      post.col(i) = (logp.col(i).array() - top).exp().matrix();
      post.col(i) /= post.col(i).sum();
    }
    return post;
  }

 private:
  Eigen::MatrixXd basis_;
  std::vector<Gaussian> components_;
  Eigen::VectorXd log_weights_;
};

}  // namespace aggwass

#endif
