#ifndef AGGWASS_AW_DISTANCE_HPP
#define AGGWASS_AW_DISTANCE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "gaussian.hpp"
#include "gmm.hpp"
#include "hmm.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace aggwass {

enum class RegistrationMethod { maw, iaw };

inline const char* to_string(RegistrationMethod m) {
  return m == RegistrationMethod::maw ? "maw" : "iaw";
}

/// Soft matching of the states of two mixtures: a coupling of their weights.
struct Registration {
  CouplingMatrix w;
  RegistrationMethod method = RegistrationMethod::maw;
  double p = 1.0;
};

struct DistanceReport {
  double marginal = 0.0;
  double transition = 0.0;
  double alpha = 0.0;
  double combined = 0.0;
  Registration registration;
};

namespace detail {

inline void require_exponent(double p) {
  if (!(p > 0.0 && p <= 2.0))
    throw InvalidInput("exponent p must lie in (0, 2], got " + std::to_string(p));
}

inline void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw InvalidInput("alpha must lie in [0, 1], got " + std::to_string(alpha));
}

inline double pow_p(double x, double p) { return p == 1.0 ? x : std::pow(x, p); }
inline double root_p(double x, double p) {
  if (p == 1.0) return x;
  return std::pow(x, 1.0 / p);
}

}  // namespace detail

/// c_ij = W2(a_i, b_j)^p.
inline Eigen::MatrixXd w2_cost_matrix(const std::vector<Gaussian>& a,
                                      const std::vector<Gaussian>& b, double p) {
  detail::require_exponent(p);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          detail::pow_p(w2_gaussian(a[i], b[j]), p);
  return c;
}

namespace detail {

inline void require_same_dim(const Gmm& m1, const Gmm& m2, const char* what) {
  if (m1.dim() != m2.dim())
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + std::to_string(m1.dim()) +
                       " vs " + std::to_string(m2.dim()) + ")");
}

}  // namespace detail

/// Registration minimizing the aggregated cost sum w_ij W2^p over all couplings.
inline Registration register_maw(const Gmm& m1, const Gmm& m2, double p = 1.0) {
  detail::require_same_dim(m1, m2, "register_maw");
  const Eigen::MatrixXd cost = w2_cost_matrix(m1.components(), m2.components(), p);
  ExactTransport t = solve_exact(cost, m1.weights(), m2.weights());
  return Registration{std::move(t.coupling), RegistrationMethod::maw, p};
}

struct IawOptions {
  Eigen::Index n = 500;
  /// Sinkhorn regularization; <= 0 selects 0.05 * median(cost).
  double epsilon = 0.0;
  SinkhornOptions sinkhorn{};
};

namespace detail {

inline double median_of(const Eigen::MatrixXd& m) {
  std::vector<double> v(m.data(), m.data() + m.size());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double med = *mid;
  if (v.size() % 2 == 0) med = 0.5 * (med + *std::max_element(v.begin(), mid));
  return med;
}

inline Eigen::MatrixXd sample_cost(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double p) {
  Eigen::MatrixXd d2 = (-2.0 * x * y.transpose()).colwise() + x.rowwise().squaredNorm();
  d2.rowwise() += y.rowwise().squaredNorm().transpose();
  d2 = d2.cwiseMax(0.0);
  if (p == 2.0) return d2;
  if (p == 1.0) return d2.cwiseSqrt();
  return d2.array().pow(0.5 * p).matrix();
}

}  // namespace detail

/// Registration estimated from an entropic sample-level coupling: n draws from
/// each mixture are matched by Sinkhorn under cost |x - y|^p, the plan is
/// pushed to the components through posterior probabilities, and the result
/// is fitted to the exact weight marginals.
inline Registration register_iaw(const Gmm& m1, const Gmm& m2, double p, Rng& rng,
                                 const IawOptions& opts = {}) {
  detail::require_same_dim(m1, m2, "register_iaw");
  detail::require_exponent(p);
  if (opts.n < 10) throw InvalidInput("register_iaw: sample count must be >= 10");
  const MixturePosterior post1(m1);
  const MixturePosterior post2(m2);

  const Eigen::MatrixXd x = sample_mixture(m1, opts.n, rng);
  const Eigen::MatrixXd y = sample_mixture(m2, opts.n, rng);
  const Eigen::MatrixXd cost = detail::sample_cost(x, y, p);
  double eps = opts.epsilon;
  if (!(eps > 0.0)) {
    eps = 0.05 * detail::median_of(cost);
    if (!(eps > 0.0)) eps = 0.05 * cost.maxCoeff();
    if (!(eps > 0.0)) eps = 1.0;  // every sample pair coincides
  }
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(opts.n, 1.0 / opts.n);
  const CouplingMatrix plan = solve_sinkhorn(cost, uniform, uniform, eps, opts.sinkhorn);

  Eigen::MatrixXd w_hat = post1(x) * plan.w * post2(y).transpose();
  // Posteriors that underflow everywhere would leave a positive-weight state
  // with no mass; a negligible product floor keeps the fit feasible.
  w_hat += (1e-12 * w_hat.sum()) * m1.weights() * m2.weights().transpose();
  CouplingMatrix fitted = project_to_polytope(w_hat, m1.weights(), m2.weights());
  return Registration{std::move(fitted), RegistrationMethod::iaw, p};
}

inline Registration register_iaw(const Gmm& m1, const Gmm& m2, Eigen::Index n, double p,
                                 double epsilon, Rng& rng) {
  IawOptions opts;
  opts.n = n;
  opts.epsilon = epsilon;
  return register_iaw(m1, m2, p, rng, opts);
}

namespace detail {

inline void require_registration(const Registration& reg, const Eigen::VectorXd& row,
                                 const Eigen::VectorXd& col, const char* what) {
  const auto& w = reg.w.w;
  if (w.rows() != row.size() || w.cols() != col.size())
    throw InvalidInput(std::string(what) + ": registration shape does not match the models");
  if (w.minCoeff() < 0.0)
    throw InvalidInput(std::string(what) + ": registration has negative entries");
  const double rv = (w.rowwise().sum() - row).cwiseAbs().maxCoeff();
  const double cv = (w.colwise().sum().transpose() - col).cwiseAbs().maxCoeff();
  if (rv > 1e-6 || cv > 1e-6)
    throw InvalidInput(std::string(what) + ": registration marginals do not match (violation " +
                       std::to_string(std::max(rv, cv)) + ")");
}

}  // namespace detail

/// (sum_ij w_ij W2(phi1_i, phi2_j)^p)^(1/p).
inline double registered_marginal_distance(const Gmm& m1, const Gmm& m2,
                                           const Registration& reg) {
  detail::require_same_dim(m1, m2, "registered_marginal_distance");
  detail::require_registration(reg, m1.weights(), m2.weights(), "registered_marginal_distance");
  const Eigen::MatrixXd cost = w2_cost_matrix(m1.components(), m2.components(), reg.p);
  return detail::root_p(std::max(reg.w.cost(cost), 0.0), reg.p);
}

enum class Direction { one_to_two, two_to_one };

/// Carries a transition matrix across a registration. two_to_one maps T2
/// (M2 x M2) to W_r T2 W_c^T on the states of the first model; one_to_two maps
/// T1 to W_c^T T1 W_r on the states of the second. W_r is W with rows
/// normalized, W_c is W with columns normalized.
inline TransitionMatrix register_transition(const TransitionMatrix& t_from,
                                            const Registration& reg, Direction direction) {
  const Eigen::MatrixXd& w = reg.w.w;
  const Eigen::Index source = direction == Direction::two_to_one ? w.cols() : w.rows();
  if (t_from.states() != source)
    throw InvalidInput("register_transition: transition matrix has " +
                       std::to_string(t_from.states()) + " states, registration side has " +
                       std::to_string(source));
  const Eigen::VectorXd rs = w.rowwise().sum();
  const Eigen::VectorXd cs = w.colwise().sum().transpose();
  for (Eigen::Index i = 0; i < rs.size(); ++i)
    if (!(rs(i) > 0.0))
      throw InvalidInput("register_transition: state " + std::to_string(i) +
                         " of the first model is empty in the registration");
  for (Eigen::Index j = 0; j < cs.size(); ++j)
    if (!(cs(j) > 0.0))
      throw InvalidInput("register_transition: state " + std::to_string(j) +
                         " of the second model is empty in the registration");
  const Eigen::MatrixXd w_r = rs.cwiseInverse().asDiagonal() * w;
  const Eigen::MatrixXd w_c = w * cs.cwiseInverse().asDiagonal();
  Eigen::MatrixXd out = direction == Direction::two_to_one
                            ? Eigen::MatrixXd(w_r * t_from.matrix() * w_c.transpose())
                            : Eigen::MatrixXd(w_c.transpose() * t_from.matrix() * w_r);
  out = out.cwiseMax(0.0);
  return TransitionMatrix::normalized(std::move(out));
}

namespace detail {

// sum_i pi_i * (min-cost coupling of the rows t_own(i,:), t_reg(i,:) under `self_cost`),
// i.e. the p-th power of the per-state conditional mixture distances, averaged.
inline double conditional_gap_p(const Eigen::VectorXd& pi, const Eigen::MatrixXd& t_own,
                                const Eigen::MatrixXd& t_reg, const Eigen::MatrixXd& self_cost) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    const Eigen::VectorXd a = t_own.row(i).transpose();
    const Eigen::VectorXd b = t_reg.row(i).transpose();
    if (a == b) continue;
    total += pi(i) * std::max(solve_exact(self_cost, a, b).objective, 0.0);
  }
  return total;
}

}  // namespace detail

/// Symmetric gap between each model's next-observation mixtures under its own
/// transition rows and under the other model's registered rows.
inline double transition_discrepancy(const GmmHmm& h1, const GmmHmm& h2, const Registration& reg,
                                     double p) {
  detail::require_exponent(p);
  if (h1.dim() != h2.dim()) throw InvalidInput("transition_discrepancy: dimension mismatch");
  detail::require_registration(reg, h1.stationary(), h2.stationary(), "transition_discrepancy");
  const TransitionMatrix t2_on_1 = register_transition(h2.trans(), reg, Direction::two_to_one);
  const TransitionMatrix t1_on_2 = register_transition(h1.trans(), reg, Direction::one_to_two);
  const Eigen::MatrixXd c1 = w2_cost_matrix(h1.emissions(), h1.emissions(), p);
  const Eigen::MatrixXd c2 = w2_cost_matrix(h2.emissions(), h2.emissions(), p);
  const double d12 =
      detail::conditional_gap_p(h1.stationary(), h1.trans().matrix(), t2_on_1.matrix(), c1);
  const double d21 =
      detail::conditional_gap_p(h2.stationary(), h2.trans().matrix(), t1_on_2.matrix(), c2);
  return detail::root_p(d12 + d21, p);
}

/// Marginal and transition parts under one registration; combine() applies alpha.
struct AwTerms {
  double marginal = 0.0;
  double transition = 0.0;
  Registration registration;
};

inline DistanceReport combine(const AwTerms& terms, double alpha) {
  detail::require_alpha(alpha);
  DistanceReport r;
  r.marginal = terms.marginal;
  r.transition = terms.transition;
  r.alpha = alpha;
  r.combined = (1.0 - alpha) * terms.marginal + alpha * terms.transition;
  r.registration = terms.registration;
  return r;
}

inline AwTerms aw_terms(const GmmHmm& h1, const GmmHmm& h2, Registration reg, double p) {
  AwTerms t;
  t.marginal = registered_marginal_distance(marginal_gmm(h1), marginal_gmm(h2), reg);
  t.transition = transition_discrepancy(h1, h2, reg, p);
  t.registration = std::move(reg);
  return t;
}

inline AwTerms maw_terms(const GmmHmm& h1, const GmmHmm& h2, double p = 1.0) {
  if (h1.dim() != h2.dim()) throw InvalidInput("maw: dimension mismatch");
  return aw_terms(h1, h2, register_maw(marginal_gmm(h1), marginal_gmm(h2), p), p);
}

inline AwTerms iaw_terms(const GmmHmm& h1, const GmmHmm& h2, double p, Rng& rng,
                         const IawOptions& opts = {}) {
  if (h1.dim() != h2.dim()) throw InvalidInput("iaw: dimension mismatch");
  return aw_terms(h1, h2, register_iaw(marginal_gmm(h1), marginal_gmm(h2), p, rng, opts), p);
}

inline DistanceReport maw(const GmmHmm& h1, const GmmHmm& h2, double alpha, double p = 1.0) {
  detail::require_alpha(alpha);
  return combine(maw_terms(h1, h2, p), alpha);
}

inline DistanceReport iaw(const GmmHmm& h1, const GmmHmm& h2, double alpha, double p,
                          Eigen::Index n, Rng& rng) {
  detail::require_alpha(alpha);
  IawOptions opts;
  opts.n = n;
  return combine(iaw_terms(h1, h2, p, rng, opts), alpha);
}

}  // namespace aggwass

#endif
