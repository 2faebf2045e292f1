#ifndef AGGWASS_BAUM_WELCH_HPP
#define AGGWASS_BAUM_WELCH_HPP

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "gaussian.hpp"
#include "hmm.hpp"
#include "rng.hpp"

namespace aggwass {

struct BaumWelchOptions {
  int restarts = 3;
  int max_iter = 200;
  double tol = 1e-6;
  /// Eigenvalue floor applied to every covariance in each M-step.
  double cov_floor = 1e-6;
  /// Floor on the k-means++ within-cluster scatter used for initialization.
  double init_cov_floor = 1e-4;
  int kmeans_iter = 10;
  bool diagonal = false;
};

struct BaumWelchResult {
  GmmHmm model;
  /// Training log-likelihood after the last accepted EM step.
  double log_likelihood;
  /// Log-likelihood evaluated at every E-step of the winning restart.
  std::vector<double> trace;
};

namespace detail {

struct EmParams {
  Eigen::VectorXd initial;
  Eigen::MatrixXd trans;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

inline Eigen::MatrixXd floor_covariance(const Eigen::MatrixXd& s, double floor, bool diagonal) {
  if (diagonal) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.rows(), s.cols());
    for (Eigen::Index k = 0; k < s.rows(); ++k) out(k, k) = std::max(s(k, k), floor);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(s));
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose());
}

inline std::vector<Gaussian> em_emissions(const EmParams& p) {
  std::vector<Gaussian> out;
  out.reserve(p.means.size());
  for (std::size_t k = 0; k < p.means.size(); ++k) out.emplace_back(p.means[k], p.covs[k]);
  return out;
}

// k-means++ seeding followed by a few Lloyd iterations on the pooled data.
inline EmParams kmeans_init(const Eigen::MatrixXd& x, Eigen::Index m, Rng& rng,
                            const BaumWelchOptions& opts) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd centers(m, d);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index k = 1; k < m; ++k) {
    if (!(d2.sum() > 0.0))
      throw DegenerateData("baum_welch: fewer distinct observations than states");
    centers.row(k) = x.row(draw_categorical(d2, rng));
    d2 = d2.cwiseMin((x.rowwise() - centers.row(k)).rowwise().squaredNorm());
  }
  std::vector<Eigen::Index> label(n, 0);
  for (int it = 0; it < opts.kmeans_iter; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      changed = changed || best != label[i];
      label[i] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(label[i]) += x.row(i);
      counts(label[i]) += 1.0;
    }
    for (Eigen::Index k = 0; k < m; ++k)
      if (counts(k) > 0.0) centers.row(k) = sums.row(k) / counts(k);
    if (!changed && it > 0) break;
  }

  const Eigen::RowVectorXd grand_mean = x.colwise().mean();
  const Eigen::MatrixXd centered_all = x.rowwise() - grand_mean;
  const Eigen::MatrixXd global_cov =
      centered_all.transpose() * centered_all / static_cast<double>(n);

  EmParams p;
  p.initial = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  p.trans = Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m));
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
    double count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (label[i] != k) continue;
      const Eigen::VectorXd r = (x.row(i) - centers.row(k)).transpose();
      scatter += r * r.transpose();
      count += 1.0;
    }
    // A singleton cluster has no scatter; borrow the pooled covariance.
    const Eigen::MatrixXd cov = count >= 2.0 ? Eigen::MatrixXd(scatter / count) : global_cov;
    p.means.push_back(centers.row(k).transpose());
    p.covs.push_back(floor_covariance(cov, opts.init_cov_floor, opts.diagonal));
  }
  return p;
}

struct EmStep {
  double loglik = 0.0;
  EmParams next;
};

// One E-step under `p` and the M-step it implies.
inline EmStep em_iteration(const std::vector<Eigen::MatrixXd>& seqs, const EmParams& p,
                           const BaumWelchOptions& opts) {
  const auto m = static_cast<Eigen::Index>(p.means.size());
  const Eigen::Index d = p.means.front().size();
  const std::vector<Gaussian> emissions = em_emissions(p);

  Eigen::VectorXd first = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd xi_sum = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd occ = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd lin = Eigen::MatrixXd::Zero(m, d);
  std::vector<Eigen::MatrixXd> quad(m, Eigen::MatrixXd::Zero(d, d));
  EmStep out;

  for (const auto& obs : seqs) {
    const Eigen::Index len = obs.rows();
    const Eigen::MatrixXd log_b = log_emissions(emissions, obs);
    Eigen::MatrixXd alpha, b;
    Eigen::VectorXd scale;
    const double ll = forward_scaled(p.initial, p.trans, log_b, &alpha, &scale, &b);
    if (!std::isfinite(ll))
      throw DegenerateData("baum_welch: observation sequence has zero likelihood");
    out.loglik += ll;

    Eigen::MatrixXd beta(len, m);
    beta.row(len - 1).setOnes();
    for (Eigen::Index t = len - 1; t > 0; --t) {
      const Eigen::RowVectorXd bb = b.row(t).cwiseProduct(beta.row(t));
      beta.row(t - 1) = (p.trans * bb.transpose()).transpose() / scale(t);
      xi_sum += p.trans.cwiseProduct(alpha.row(t - 1).transpose() * bb) / scale(t);
    }
    Eigen::MatrixXd gamma = alpha.cwiseProduct(beta);
    for (Eigen::Index t = 0; t < len; ++t) gamma.row(t) /= gamma.row(t).sum();

    first += gamma.row(0).transpose();
    occ += gamma.colwise().sum().transpose();
    lin += gamma.transpose() * obs;
    for (Eigen::Index k = 0; k < m; ++k)
      quad[k] += obs.transpose() * gamma.col(k).asDiagonal() * obs;
  }

  EmParams& q = out.next;
  q.initial = first / first.sum();
  q.trans = p.trans;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = xi_sum.row(i).sum();
    if (s > 0.0) q.trans.row(i) = xi_sum.row(i) / s;
  }
  q.means = p.means;
  q.covs = p.covs;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (!(occ(k) > 1e-300)) continue;  // unvisited state keeps its parameters
    const Eigen::VectorXd mu = lin.row(k).transpose() / occ(k);
    const Eigen::MatrixXd s = quad[k] / occ(k) - mu * mu.transpose();
    q.means[k] = mu;
    q.covs[k] = floor_covariance(s, opts.cov_floor, opts.diagonal);
  }
  return out;
}

struct EmRun {
  EmParams params;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
};

inline EmRun run_em(const std::vector<Eigen::MatrixXd>& seqs, const Eigen::MatrixXd& pooled,
                    Eigen::Index m, Rng& rng, const BaumWelchOptions& opts) {
  EmRun run;
  run.params = kmeans_init(pooled, m, rng, opts);
  bool converged = false;
  for (int it = 0; it < opts.max_iter && !converged; ++it) {
    EmStep step = em_iteration(seqs, run.params, opts);
    run.trace.push_back(step.loglik);
    converged = it > 0 && step.loglik - run.loglik < opts.tol;
    run.loglik = step.loglik;
    if (!converged) run.params = std::move(step.next);
  }
  // The last M-step was not evaluated; score the returned parameters.
  if (!converged) {
    run.loglik = em_iteration(seqs, run.params, opts).loglik;
    run.trace.push_back(run.loglik);
  }
  return run;
}

}  // namespace detail

/// EM estimate of an m-state GMM-HMM from one or more observation sequences
/// (each length x d). Observation dimensions that are constant across all
/// data get zero variance and are excluded from the likelihood, so a model
/// fitted to data with zeroed dimensions is degenerate along them.
inline BaumWelchResult baum_welch_fit(const std::vector<Eigen::MatrixXd>& seqs, Eigen::Index m,
                                      Rng& rng, const BaumWelchOptions& opts = {}) {
  if (m < 1) throw InvalidInput("baum_welch: state count must be >= 1");
  if (seqs.empty()) throw InvalidInput("baum_welch: no observation sequences");
  if (opts.restarts < 1 || opts.max_iter < 1)
    throw InvalidInput("baum_welch: restarts and max_iter must be >= 1");
  const Eigen::Index d = seqs.front().cols();
  Eigen::Index total = 0;
  for (const auto& s : seqs) {
    if (s.rows() < 1 || s.cols() != d)
      throw InvalidInput("baum_welch: sequences must be non-empty with a common dimension");
    if (!s.allFinite()) throw InvalidInput("baum_welch: non-finite observation");
    total += s.rows();
  }
  if (m > total)
    throw InvalidInput("baum_welch: " + std::to_string(m) + " states but only " +
                       std::to_string(total) + " observations");

  Eigen::MatrixXd pooled(total, d);
  {
    Eigen::Index r = 0;
    for (const auto& s : seqs) {
      pooled.middleRows(r, s.rows()) = s;
      r += s.rows();
    }
  }
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < d; ++k)
    if (pooled.col(k).maxCoeff() > pooled.col(k).minCoeff()) active.push_back(k);
  if (active.empty()) throw DegenerateData("baum_welch: all observations are identical");
  const auto da = static_cast<Eigen::Index>(active.size());

  std::vector<Eigen::MatrixXd> sub;
  sub.reserve(seqs.size());
  for (const auto& s : seqs) sub.emplace_back(s(Eigen::all, active));
  const Eigen::MatrixXd pooled_sub = pooled(Eigen::all, active);

  std::optional<detail::EmRun> best;
  for (int r = 0; r < opts.restarts; ++r) {
    Rng restart_rng(rng());
    detail::EmRun run = detail::run_em(sub, pooled_sub, m, restart_rng, opts);
    if (!best || run.loglik > best->loglik) best = std::move(run);
  }

  std::vector<Gaussian> emissions;
  emissions.reserve(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    Eigen::VectorXd mean = pooled.row(0).transpose();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index a = 0; a < da; ++a) {
      mean(active[a]) = best->params.means[k](a);
      for (Eigen::Index b = 0; b < da; ++b)
        cov(active[a], active[b]) = best->params.covs[k](a, b);
    }
    emissions.emplace_back(std::move(mean), std::move(cov));
  }
  try {
    GmmHmm model(TransitionMatrix::normalized(best->params.trans), std::move(emissions));
    return BaumWelchResult{std::move(model), best->loglik, std::move(best->trace)};
  } catch (const InvalidInput& e) {
    throw DegenerateData(std::string("baum_welch: estimated model is invalid: ") + e.what());
  } catch (const NonConvergence& e) {
    throw DegenerateData(std::string("baum_welch: estimated chain has no stationary limit: ") +
                         e.what());
  }
}

inline GmmHmm baum_welch(const Eigen::MatrixXd& obs, Eigen::Index m, Rng& rng,
                         const BaumWelchOptions& opts = {}) {
  return baum_welch_fit({obs}, m, rng, opts).model;
}

inline GmmHmm baum_welch(const std::vector<Eigen::MatrixXd>& seqs, Eigen::Index m, Rng& rng,
                         const BaumWelchOptions& opts = {}) {
  return baum_welch_fit(seqs, m, rng, opts).model;
}

}  // namespace aggwass

#endif
