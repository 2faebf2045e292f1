#ifndef AGGWASS_GAUSSIAN_HPP
#define AGGWASS_GAUSSIAN_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "error.hpp"
#include "rng.hpp"

namespace aggwass {

inline constexpr double kSymmetryTol = 1e-9;
inline constexpr double kPsdTol = 1e-9;
/// Eigenvalues below this fraction of the largest one make a density degenerate.
inline constexpr double kDegenerateRatio = 1e-12;

namespace detail {

inline void require_symmetric(const Eigen::MatrixXd& a, const char* what) {
  if (a.rows() != a.cols())
    throw InvalidInput(std::string(what) + ": matrix is not square");
  if (!a.allFinite())
    throw InvalidInput(std::string(what) + ": matrix has non-finite entries");
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol)
    throw InvalidInput(std::string(what) + ": matrix is not symmetric (max asymmetry " +
                       std::to_string(asym) + ")");
}

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

}  // namespace detail

namespace detail {

// Square roots of PSD eigenvalues, with those below the numerical-rank
// threshold d * eps * max set to 0; rooting rounding noise would give ~1e-8.
inline Eigen::VectorXd psd_roots(const Eigen::VectorXd& lambda) {
  if (lambda.size() == 0) return lambda;
  const double cut = static_cast<double>(lambda.size()) *
                     std::numeric_limits<double>::epsilon() * std::max(lambda.maxCoeff(), 0.0);
  return (lambda.array() > cut).select(lambda.cwiseMax(0.0).cwiseSqrt(), 0.0);
}

}  // namespace detail

/// Principal square root of a symmetric PSD matrix by eigendecomposition.
/// Eigenvalues in [-1e-9, 0) are treated as 0.
inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  detail::require_symmetric(a, "sqrtm_psd");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::symmetrize(a));
  const Eigen::VectorXd& lambda = es.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() < -kPsdTol)
    throw InvalidInput("sqrtm_psd: matrix is not positive semidefinite (eigenvalue " +
                       std::to_string(lambda.minCoeff()) + ")");
  const Eigen::VectorXd root = detail::psd_roots(lambda);
  return detail::symmetrize(es.eigenvectors() * root.asDiagonal() *
                            es.eigenvectors().transpose());
}

/// Normal distribution with a symmetric PSD, possibly singular, covariance.
/// Immutable; the eigendecomposition is computed once at construction.
class Gaussian {
 public:
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov)
      : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (mean_.size() < 1) throw InvalidInput("Gaussian: dimension must be >= 1");
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
      throw InvalidInput("Gaussian: mean has dimension " + std::to_string(mean_.size()) +
                         " but covariance is " + std::to_string(cov_.rows()) + "x" +
                         std::to_string(cov_.cols()));
    if (!mean_.allFinite()) throw InvalidInput("Gaussian: mean has non-finite entries");
    detail::require_symmetric(cov_, "Gaussian covariance");
    if (cov_ != cov_.transpose()) cov_ = detail::symmetrize(cov_);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_);
    eigenvalues_ = es.eigenvalues();
    eigenvectors_ = es.eigenvectors();
    if (eigenvalues_.minCoeff() < -kPsdTol)
      throw InvalidInput("Gaussian covariance is not positive semidefinite (eigenvalue " +
                         std::to_string(eigenvalues_.minCoeff()) + ")");
    if (eigenvalues_.minCoeff() < 0.0) {
      eigenvalues_ = eigenvalues_.cwiseMax(0.0);
      cov_ = detail::symmetrize(eigenvectors_ * eigenvalues_.asDiagonal() *
                                eigenvectors_.transpose());
    }
    const double top = eigenvalues_.maxCoeff();
    const Eigen::VectorXd root = detail::psd_roots(eigenvalues_);
    cov_sqrt_ = detail::symmetrize(eigenvectors_ * root.asDiagonal() * eigenvectors_.transpose());
    degenerate_ = !(top > 0.0) || eigenvalues_.minCoeff() <= kDegenerateRatio * top;
  }

  static Gaussian isotropic(Eigen::VectorXd mean, double variance) {
    const auto d = mean.size();
    return Gaussian(std::move(mean), variance * Eigen::MatrixXd::Identity(d, d));
  }

  Eigen::Index dim() const { return mean_.size(); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  /// Symmetric PSD square root of the covariance.
  const Eigen::MatrixXd& cov_sqrt() const { return cov_sqrt_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }
  bool degenerate() const { return degenerate_; }

  friend bool operator==(const Gaussian& a, const Gaussian& b) {
    return a.mean_.size() == b.mean_.size() && a.mean_ == b.mean_ && a.cov_ == b.cov_;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd cov_sqrt_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  bool degenerate_ = false;
};

namespace detail {

inline void require_same_dim(const Gaussian& a, const Gaussian& b, const char* what) {
  if (a.dim() != b.dim())
    throw InvalidInput(std::string(what) + ": dimension mismatch (" +
                       std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
}

// tr A + tr B - 2 tr[(A^{1/2} B A^{1/2})^{1/2}] in its Procrustes form
// min_Q ||A^{1/2} - B^{1/2} Q||_F^2 over orthogonal Q, with Q = V U^T from the
// SVD A^{1/2} B^{1/2} = U S V^T. A sum of squares keeps near-equal covariances
// at rounding level instead of the ~1e-8 left after cancelling traces.
inline double covariance_gap(const Gaussian& a, const Gaussian& b) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.cov_sqrt() * b.cov_sqrt(),
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd q = svd.matrixV() * svd.matrixU().transpose();
  return (a.cov_sqrt() - b.cov_sqrt() * q).squaredNorm();
}

}  // namespace detail

/// Squared 2-Wasserstein distance between Gaussians. The covariance term is
/// evaluated in both argument orders and averaged, so the result is exactly
/// symmetric in floating point.
inline double w2_squared_gaussian(const Gaussian& a, const Gaussian& b) {
  detail::require_same_dim(a, b, "w2_gaussian");
  if (a == b) return 0.0;
  const double mean_part = (a.mean() - b.mean()).squaredNorm();
  return mean_part + 0.5 * (detail::covariance_gap(a, b) + detail::covariance_gap(b, a));
}

inline double w2_gaussian(const Gaussian& a, const Gaussian& b) {
  return std::sqrt(w2_squared_gaussian(a, b));
}

inline double log_pdf(const Gaussian& g, const Eigen::VectorXd& x) {
  if (x.size() != g.dim())
    throw InvalidInput("log_pdf: point has dimension " + std::to_string(x.size()) +
                       ", Gaussian has " + std::to_string(g.dim()));
  if (g.degenerate())
    throw DegenerateDensity("log_pdf: covariance is singular; density is undefined");
  const Eigen::VectorXd proj = g.eigenvectors().transpose() * (x - g.mean());
  const double maha = proj.cwiseAbs2().cwiseQuotient(g.eigenvalues()).sum();
  const double log_det = g.eigenvalues().array().log().sum();
  const double d = static_cast<double>(g.dim());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + maha);
}

/// n i.i.d. draws, one per row: mean + cov_sqrt * z.
inline Eigen::MatrixXd sample(const Gaussian& g, Eigen::Index n, Rng& rng) {
  if (n < 1) throw InvalidInput("sample: n must be >= 1");
  Eigen::MatrixXd out(n, g.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd z = standard_normal_vector(g.dim(), rng);
    out.row(i) = (g.mean() + g.cov_sqrt() * z).transpose();
  }
  return out;
}

/// KL(a || b) in closed form. Both covariances must be nondegenerate.
inline double kl_gaussian(const Gaussian& a, const Gaussian& b) {
  detail::require_same_dim(a, b, "kl_gaussian");
  if (b.degenerate())
    throw DegenerateDensity("kl_gaussian: second covariance is singular; KL diverges");
  if (a.degenerate())
    throw DegenerateDensity("kl_gaussian: first covariance is singular; KL diverges");
  if (a == b) return 0.0;
  const Eigen::MatrixXd& vb = b.eigenvectors();
  const Eigen::VectorXd inv_lambda_b = b.eigenvalues().cwiseInverse();
  const Eigen::MatrixXd prec_b = vb * inv_lambda_b.asDiagonal() * vb.transpose();
  const Eigen::VectorXd diff = b.mean() - a.mean();
  const double trace_term = (prec_b * a.cov()).trace();
  const double maha = diff.dot(prec_b * diff);
  const double log_det_ratio =
      b.eigenvalues().array().log().sum() - a.eigenvalues().array().log().sum();
  const double d = static_cast<double>(a.dim());
  return std::max(0.5 * (trace_term + maha - d + log_det_ratio), 0.0);
}

}  // namespace aggwass

#endif
