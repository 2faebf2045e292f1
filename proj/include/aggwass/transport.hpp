#ifndef AGGWASS_TRANSPORT_HPP
#define AGGWASS_TRANSPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace aggwass {

inline constexpr double kCouplingTol = 1e-8;

/// Nonnegative matrix together with the marginals it is meant to carry.
struct CouplingMatrix {
  Eigen::MatrixXd w;
  Eigen::VectorXd row_marginal;
  Eigen::VectorXd col_marginal;

  double row_violation() const {
    return (w.rowwise().sum() - row_marginal).cwiseAbs().sum();
  }
  double col_violation() const {
    return (w.colwise().sum().transpose() - col_marginal).cwiseAbs().sum();
  }
  /// Max-norm check of every coupling invariant.
  bool valid(double tol = kCouplingTol) const {
    if (w.rows() != row_marginal.size() || w.cols() != col_marginal.size()) return false;
    if (w.size() > 0 && w.minCoeff() < 0.0) return false;
    const double rmax = (w.rowwise().sum() - row_marginal).cwiseAbs().maxCoeff();
    const double cmax = (w.colwise().sum().transpose() - col_marginal).cwiseAbs().maxCoeff();
    return rmax <= tol && cmax <= tol;
  }
  double cost(const Eigen::MatrixXd& c) const { return w.cwiseProduct(c).sum(); }
};

struct ExactTransport {
  CouplingMatrix coupling;
  double objective = 0.0;
};

namespace detail {

inline void check_marginals(const Eigen::VectorXd& row, const Eigen::VectorXd& col,
                            const char* what) {
  if (row.size() == 0 || col.size() == 0)
    throw InvalidInput(std::string(what) + ": empty marginal");
  if (!row.allFinite() || !col.allFinite() || row.minCoeff() < 0.0 || col.minCoeff() < 0.0)
    throw InvalidInput(std::string(what) + ": marginals must be finite and nonnegative");
  const double gap = std::abs(row.sum() - col.sum());
  if (gap > 1e-6)
    throw InvalidInput(std::string(what) + ": row and column marginals have different mass (gap " +
                       std::to_string(gap) + ")");
  if (!(row.sum() > 0.0)) throw InvalidInput(std::string(what) + ": marginals have zero mass");
}

inline void check_cost(const Eigen::MatrixXd& cost, const Eigen::VectorXd& row,
                       const Eigen::VectorXd& col, const char* what) {
  if (cost.rows() != row.size() || cost.cols() != col.size())
    throw InvalidInput(std::string(what) + ": cost is " + std::to_string(cost.rows()) + "x" +
                       std::to_string(cost.cols()) + " but marginals have sizes " +
                       std::to_string(row.size()) + " and " + std::to_string(col.size()));
  if (!cost.allFinite()) throw InvalidInput(std::string(what) + ": cost has non-finite entries");
  if (cost.size() > 0 && cost.minCoeff() < 0.0)
    throw InvalidInput(std::string(what) + ": cost has negative entries");
}

// Primal network simplex on the complete bipartite transportation graph
// (supply nodes 0..n1-1, demand nodes n1..n1+n2-1, artificial root). Spanning
// tree kept in thread/parent form with block-search pivoting, after the LEMON
// design; arcs are uncapacitated so no arc ever sits at an upper bound.
class TransportSimplex {
 public:
  TransportSimplex(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                   const Eigen::VectorXd& demand)
      : n1_(static_cast<int>(supply.size())),
        n2_(static_cast<int>(demand.size())),
        node_num_(n1_ + n2_),
        arc_num_(static_cast<std::int64_t>(n1_) * n2_),
        root_(node_num_) {
    const std::int64_t all = arc_num_ + node_num_;
    cost_.resize(all);
    flow_.assign(all, 0.0);
    state_.assign(all, kLower);
    double max_cost = 0.0;
    for (int i = 0; i < n1_; ++i)
      for (int j = 0; j < n2_; ++j) {
        const double c = cost(i, j);
        cost_[static_cast<std::int64_t>(i) * n2_ + j] = c;
        max_cost = std::max(max_cost, std::abs(c));
      }
    const double scale = max_cost > 0.0 ? max_cost : 1.0;
    art_cost_ = scale * (node_num_ + 1);
    eps_ = 1e-14 * art_cost_;

    supply_.resize(node_num_ + 1);
    for (int i = 0; i < n1_; ++i) supply_[i] = supply(i);
    for (int j = 0; j < n2_; ++j) supply_[n1_ + j] = -demand(j);
    supply_[root_] = 0.0;

    art_source_.resize(node_num_);
    art_target_.resize(node_num_);
    parent_.resize(node_num_ + 1);
    pred_.resize(node_num_ + 1);
    pred_dir_.resize(node_num_ + 1);
    thread_.resize(node_num_ + 1);
    rev_thread_.resize(node_num_ + 1);
    succ_num_.resize(node_num_ + 1);
    last_succ_.resize(node_num_ + 1);
    pi_.resize(node_num_ + 1);

    parent_[root_] = -1;
    pred_[root_] = -1;
    thread_[root_] = 0;
    rev_thread_[0] = root_;
    succ_num_[root_] = node_num_ + 1;
    last_succ_[root_] = root_ - 1;
    pi_[root_] = 0.0;
    for (int u = 0; u < node_num_; ++u) {
      const std::int64_t e = arc_num_ + u;
      parent_[u] = root_;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      state_[e] = kTree;
      if (supply_[u] >= 0.0) {
        pred_dir_[u] = kDirUp;
        pi_[u] = 0.0;
        art_source_[u] = u;
        art_target_[u] = root_;
        flow_[e] = supply_[u];
        cost_[e] = 0.0;
      } else {
        pred_dir_[u] = kDirDown;
        pi_[u] = art_cost_;
        art_source_[u] = root_;
        art_target_[u] = u;
        flow_[e] = -supply_[u];
        cost_[e] = art_cost_;
      }
    }
    thread_[node_num_ - 1] = root_;
    rev_thread_[root_] = node_num_ - 1;

    block_size_ = std::max<std::int64_t>(
        10, static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(arc_num_)))));
    next_arc_ = 0;
  }

  void run() {
    const std::int64_t max_pivots =
        std::max<std::int64_t>(1'000'000, 50 * (arc_num_ + node_num_));
    std::int64_t pivots = 0;
    while (find_entering_arc()) {
      if (++pivots > max_pivots)
        throw NonConvergence("solve_exact: network simplex exceeded its pivot cap", 0.0);
      find_join_node();
      find_leaving_arc();
      change_flow();
      update_tree_structure();
      update_potential();
      if (pivots % (node_num_ + 1) == 0) recompute_potentials();
    }
    // Artificial arcs carry only rounding-level flow when the problem is balanced.
    for (int u = 0; u < node_num_; ++u) {
      if (flow_[arc_num_ + u] > 1e-9 * std::max(1.0, std::abs(supply_[u])))
        throw Infeasible("solve_exact: transportation problem is infeasible");
    }
  }

  Eigen::MatrixXd flows() const {
    Eigen::MatrixXd w(n1_, n2_);
    for (int i = 0; i < n1_; ++i)
      for (int j = 0; j < n2_; ++j)
        w(i, j) = std::max(0.0, flow_[static_cast<std::int64_t>(i) * n2_ + j]);
    return w;
  }

 private:
  static constexpr signed char kTree = 0;
  static constexpr signed char kLower = 1;
  static constexpr signed char kDirUp = 1;
  static constexpr signed char kDirDown = -1;

  int source(std::int64_t e) const {
    return e < arc_num_ ? static_cast<int>(e / n2_) : art_source_[e - arc_num_];
  }
  int target(std::int64_t e) const {
    return e < arc_num_ ? n1_ + static_cast<int>(e % n2_) : art_target_[e - arc_num_];
  }

  bool find_entering_arc() {
    double min = -eps_;
    std::int64_t cnt = block_size_;
    std::int64_t e = next_arc_;
    int i = static_cast<int>(e / n2_);
    int j = static_cast<int>(e % n2_);
    bool found = false;
    for (std::int64_t k = 0; k < arc_num_; ++k) {
      if (state_[e] == kLower) {
        const double c = cost_[e] + pi_[i] - pi_[n1_ + j];
        if (c < min) {
          min = c;
          in_arc_ = e;
          found = true;
        }
      }
      ++e;
      if (++j == n2_) {
        j = 0;
        if (++i == n1_) {
          i = 0;
          e = 0;
        }
      }
      if (--cnt == 0) {
        if (found) break;
        cnt = block_size_;
      }
    }
    next_arc_ = e;
    return found;
  }

  void find_join_node() {
    int u = source(in_arc_);
    int v = target(in_arc_);
    while (u != v) {
      if (succ_num_[u] < succ_num_[v])
        u = parent_[u];
      else
        v = parent_[v];
    }
    join_ = u;
  }

  void find_leaving_arc() {
    const int first = source(in_arc_);
    const int second = target(in_arc_);
    delta_ = std::numeric_limits<double>::infinity();
    int result = 0;
    for (int u = first; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kDirUp) {
        const double d = flow_[pred_[u]];
        if (d < delta_) {
          delta_ = d;
          u_out_ = u;
          result = 1;
        }
      }
    }
    for (int u = second; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kDirDown) {
        const double d = flow_[pred_[u]];
        if (d <= delta_) {
          delta_ = d;
          u_out_ = u;
          result = 2;
        }
      }
    }
    if (result == 0)
      throw InvalidInput("solve_exact: unbounded transportation problem (negative cycle)");
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
  }

  void change_flow() {
    if (delta_ > 0.0) {
      const double val = delta_;
      flow_[in_arc_] += val;
      for (int u = source(in_arc_); u != join_; u = parent_[u])
        flow_[pred_[u]] -= pred_dir_[u] * val;
      for (int u = target(in_arc_); u != join_; u = parent_[u])
        flow_[pred_[u]] += pred_dir_[u] * val;
    }
    state_[in_arc_] = kTree;
    flow_[pred_[u_out_]] = 0.0;
    state_[pred_[u_out_]] = kLower;
  }

  void update_tree_structure() {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    v_out_ = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kDirUp : kDirDown;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      const int thread_continue =
          old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

      int stem = u_in_;
      int par_stem = v_in_;
      int last = last_succ_[u_in_];
      int after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        const int next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);

        const int before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;

        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;

        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem]
                                                         : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;

      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }

      for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = static_cast<signed char>(-pred_dir_[p]);
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kDirUp : kDirDown;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u])
      last_succ_[u] = last_succ_out;

    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = old_rev_thread;
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = last_succ_out;
    }

    for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
    for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
  }

  void update_potential() {
    const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost_[in_arc_];
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
  }

  // Rebuild potentials from the tree to stop rounding drift accumulating.
  void recompute_potentials() {
    pi_[root_] = 0.0;
    for (int u = thread_[root_]; u != root_; u = thread_[u]) {
      const double c = cost_[pred_[u]];
      pi_[u] = pred_dir_[u] == kDirUp ? pi_[parent_[u]] - c : pi_[parent_[u]] + c;
    }
  }

  int n1_, n2_, node_num_;
  std::int64_t arc_num_;
  int root_;
  double art_cost_ = 0.0;
  double eps_ = 0.0;

  std::vector<double> cost_, flow_, supply_, pi_;
  std::vector<signed char> state_, pred_dir_;
  std::vector<int> art_source_, art_target_;
  std::vector<int> parent_, thread_, rev_thread_, succ_num_, last_succ_, dirty_revs_;
  std::vector<std::int64_t> pred_;

  std::int64_t in_arc_ = 0;
  int join_ = 0, u_in_ = 0, v_in_ = 0, u_out_ = 0, v_out_ = 0;
  double delta_ = 0.0;
  std::int64_t next_arc_ = 0, block_size_ = 10;
};

}  // namespace detail

/// Exact minimizer of sum_ij w_ij c_ij over the coupling polytope of (row, col).
inline ExactTransport solve_exact(const Eigen::MatrixXd& cost, const Eigen::VectorXd& row,
                                  const Eigen::VectorXd& col) {
  detail::check_marginals(row, col, "solve_exact");
  detail::check_cost(cost, row, col, "solve_exact");
  const Eigen::VectorXd demand = col * (row.sum() / col.sum());
  detail::TransportSimplex simplex(cost, row, demand);
  simplex.run();
  ExactTransport out;
  out.coupling = CouplingMatrix{simplex.flows(), row, col};
  out.objective = out.coupling.cost(cost);
  return out;
}

struct SinkhornOptions {
  double tol = 1e-9;
  /// Scaling iterations summed over all epsilon stages.
  int max_iter = 10'000;
  /// Accelerate with over-relaxed scaling updates after a short plain phase.
  bool overrelax = true;
  /// Warm-start from solutions at larger epsilon, halving down to the target.
  /// Without it, mass that must cross a gap many epsilons wide starts near
  /// zero and the scaling iteration cannot move it in any practical budget.
  bool epsilon_scaling = true;
};

namespace detail {

// Row update f_i = eps*log a_i - eps*LSE_j((g_j - C_ij)/eps), written for rows
// of `cost`; the column update calls it on the transpose.
inline void log_domain_update(const Eigen::MatrixXd& cost, const Eigen::VectorXd& log_a,
                              const Eigen::VectorXd& g, double eps, Eigen::VectorXd& f) {
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    const Eigen::ArrayXd z = (g.array() - cost.row(i).transpose().array()) / eps;
    const double zmax = z.maxCoeff();
    f(i) = eps * (log_a(i) - zmax - std::log((z - zmax).exp().sum()));
  }
}

inline void build_kernel(const Eigen::MatrixXd& cost, const Eigen::VectorXd& f,
                         const Eigen::VectorXd& g, double eps, Eigen::MatrixXd& kernel) {
  kernel = ((-cost).colwise() + f).rowwise() + g.transpose();
  kernel = (kernel / eps).array().exp().matrix();
}

// Finds positive scalings with diag(e^a) x diag(e^b) having marginals (row,
// col) by damped Newton on f(a, b) = sum x_ij e^(a_i + b_j) - row.a - col.b,
// the last column scaling held fixed. Rows and columns with zero target must
// already be zero. Returns false if the iteration fails to reach `tol`.
inline bool newton_scaling(Eigen::MatrixXd& x, const Eigen::VectorXd& row,
                           const Eigen::VectorXd& col, double tol, int max_iter = 100) {
  std::vector<Eigen::Index> ri, ci;
  for (Eigen::Index i = 0; i < row.size(); ++i)
    if (row(i) > 0.0) ri.push_back(i);
  for (Eigen::Index j = 0; j < col.size(); ++j)
    if (col(j) > 0.0) ci.push_back(j);
  const auto n = static_cast<Eigen::Index>(ri.size()), m = static_cast<Eigen::Index>(ci.size());
  if (n == 0 || m == 0) return false;
  Eigen::MatrixXd k(n, m);
  Eigen::VectorXd r(n), c(m);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = row(ri[i]);
  for (Eigen::Index j = 0; j < m; ++j) c(j) = col(ci[j]);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) k(i, j) = x(ri[i], ci[j]);

  Eigen::VectorXd a = Eigen::VectorXd::Zero(n), b = Eigen::VectorXd::Zero(m);
  auto plan = [&](const Eigen::VectorXd& aa, const Eigen::VectorXd& bb) {
    return Eigen::MatrixXd(aa.array().exp().matrix().asDiagonal() * k *
                           bb.array().exp().matrix().asDiagonal());
  };
  auto objective = [&](const Eigen::MatrixXd& p, const Eigen::VectorXd& aa,
                       const Eigen::VectorXd& bb) { return p.sum() - r.dot(aa) - c.dot(bb); };
  Eigen::MatrixXd p = plan(a, b);
  double f = objective(p, a, b);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd gr = p.rowwise().sum() - r;
    const Eigen::VectorXd gc = p.colwise().sum().transpose() - c;
    if (gr.cwiseAbs().sum() + gc.cwiseAbs().sum() < tol) {
      x.setZero();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) x(ri[i], ci[j]) = p(i, j);
      return true;
    }
    const Eigen::Index dim = n + m - 1;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd g(dim);
    h.topLeftCorner(n, n).diagonal() = p.rowwise().sum();
    h.bottomRightCorner(m - 1, m - 1).diagonal() = p.colwise().sum().head(m - 1).transpose();
    h.topRightCorner(n, m - 1) = p.leftCols(m - 1);
    h.bottomLeftCorner(m - 1, n) = p.leftCols(m - 1).transpose();
    g << gr, gc.head(m - 1);
    const Eigen::VectorXd step = h.ldlt().solve(-g);
    if (!step.allFinite()) return false;
    const double slope = g.dot(step);
    if (!(slope < 0.0)) return false;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      Eigen::VectorXd na = a + t * step.head(n), nb = b;
      nb.head(m - 1) += t * step.tail(m - 1);
      const Eigen::MatrixXd np = plan(na, nb);
      const double nf = objective(np, na, nb);
      if (std::isfinite(nf) && nf <= f + 1e-4 * t * slope) {
        a = std::move(na);
        b = std::move(nb);
        p = np;
        f = nf;
        accepted = true;
        break;
      }
    }
    if (!accepted) return false;
  }
  return false;
}

struct SinkhornStage {
  bool converged = false;
  double err = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool stalled = false;
  Eigen::MatrixXd plan;
};

// Scaling iterations at one epsilon starting from potentials (f, g), which
// are updated in place. Masses must be positive and of equal total.
inline SinkhornStage sinkhorn_stage(const Eigen::MatrixXd& c, const Eigen::VectorXd& a,
                                    const Eigen::VectorXd& b, double epsilon, Eigen::VectorXd& f,
                                    Eigen::VectorXd& g, double tol, int max_iter,
                                    bool overrelax) {
  const Eigen::VectorXd log_a = a.array().log().matrix();
  const Eigen::VectorXd log_b = b.array().log().matrix();
  Eigen::MatrixXd kernel;
  build_kernel(c, f, g, epsilon, kernel);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(a.size());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(b.size());

  auto absorb = [&] {
    f += epsilon * u.array().log().matrix();
    g += epsilon * v.array().log().matrix();
    u.setOnes();
    v.setOnes();
  };
  constexpr double kTiny = 1e-280;
  constexpr double kLarge = 1e50;

  // Scaling updates are over-relaxed, u <- u^(1-w) (a/Kv)^w, once the plain
  // iteration has revealed its linear rate; w = 1 is classic Sinkhorn and the
  // fixed point is the same for every w.
  double omega = 1.0;
  bool relaxation_allowed = overrelax;
  double best_err = std::numeric_limits<double>::infinity();
  int last_gain = 0;
  constexpr int kStall = 500;
  std::vector<double> history;
  auto relax = [&](Eigen::VectorXd& x, const Eigen::VectorXd& target) {
    if (omega == 1.0) {
      x = target;
    } else {
      x = (x.array() * (target.array() / x.array()).pow(omega)).matrix();
    }
  };

  SinkhornStage out;
  double col_err = 0.0;  // column residual seen by the last column update
  for (int it = 0; it <= max_iter; ++it) {
    out.iterations = it;
    Eigen::VectorXd kv = kernel * v;
    if (it > 0) {
      out.err = (u.cwiseProduct(kv) - a).cwiseAbs().sum();
      // Plain column updates leave the columns exact; relaxed ones do not.
      if (out.err < tol && omega != 1.0) {
        const Eigen::VectorXd ktu = kernel.transpose() * u;
        out.err += (v.cwiseProduct(ktu) - b).cwiseAbs().sum();
      }
      if (out.err < tol) {
        out.converged = true;
        break;
      }
      if (it == max_iter) break;
      const double monitor = out.err + col_err;
      history.push_back(monitor);
      // Relaxation that makes the residual grow, or stall, reverts to w = 1.
      if (omega != 1.0 && (monitor > 10.0 * best_err || it - last_gain > kStall)) {
        omega = 1.0;
        relaxation_allowed = false;
      }
      if (monitor < 0.99 * best_err) last_gain = it;
      // Stop once the plain rate over the last window cannot reach tol within
      // the remaining iterations; the caller finishes differently.
      constexpr std::size_t kWindow = 500;
      if (omega == 1.0 && history.size() > 2 * kWindow) {
        const double ratio = monitor / history[history.size() - 1 - kWindow];
        const double needed = ratio < 1.0 ? kWindow * std::log(tol / monitor) / std::log(ratio)
                                          : std::numeric_limits<double>::infinity();
        if (needed > max_iter - it) {
          out.stalled = true;
          break;
        }
      }
      best_err = std::min(best_err, monitor);
      constexpr std::size_t kProbe = 30;
      if (relaxation_allowed && omega == 1.0 && history.size() == kProbe) {
        const double rate = std::pow(history[kProbe - 1] / history[kProbe - 11], 0.1);
        if (rate > 0.0 && rate < 1.0) omega = std::min(2.0 / (1.0 + std::sqrt(1.0 - rate)), 1.9);
      }
    }
    if (!(kv.minCoeff() > kTiny)) {
      absorb();
      log_domain_update(c, log_a, g, epsilon, f);
      build_kernel(c, f, g, epsilon, kernel);
    } else {
      relax(u, a.cwiseQuotient(kv));
    }
    Eigen::VectorXd ktu = kernel.transpose() * u;
    if (!(ktu.minCoeff() > kTiny)) {
      absorb();
      const Eigen::MatrixXd ct = c.transpose();
      log_domain_update(ct, log_b, f, epsilon, g);
      build_kernel(c, f, g, epsilon, kernel);
    } else {
      col_err = (v.cwiseProduct(ktu) - b).cwiseAbs().sum();
      relax(v, b.cwiseQuotient(ktu));
    }
    const double hi = std::max(u.maxCoeff(), v.maxCoeff());
    const double lo = std::min(u.minCoeff(), v.minCoeff());
    if (hi > kLarge || lo < 1.0 / kLarge) {
      absorb();
      build_kernel(c, f, g, epsilon, kernel);
    }
  }
  out.plan = u.asDiagonal() * kernel * v.asDiagonal();
  absorb();
  return out;
}

}  // namespace detail

/// Entropic optimal transport by Sinkhorn scaling of exp(-cost/epsilon).
/// Scalings are absorbed into log-domain potentials whenever they leave a safe
/// range, so small epsilon does not underflow.
inline CouplingMatrix solve_sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& row,
                                     const Eigen::VectorXd& col, double epsilon,
                                     const SinkhornOptions& opts = {}) {
  detail::check_marginals(row, col, "solve_sinkhorn");
  detail::check_cost(cost, row, col, "solve_sinkhorn");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw InvalidInput("solve_sinkhorn: epsilon must be positive");

  // Zero-mass rows and columns carry no plan; solve on the support.
  std::vector<Eigen::Index> rows, cols;
  for (Eigen::Index i = 0; i < row.size(); ++i)
    if (row(i) > 0.0) rows.push_back(i);
  for (Eigen::Index j = 0; j < col.size(); ++j)
    if (col(j) > 0.0) cols.push_back(j);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd c(n, m);
  Eigen::VectorXd a(n), b(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i) = row(rows[i]);
    for (Eigen::Index j = 0; j < m; ++j) c(i, j) = cost(rows[i], cols[j]);
  }
  for (Eigen::Index j = 0; j < m; ++j) b(j) = col(cols[j]);
  b *= a.sum() / b.sum();

  std::vector<double> schedule;
  if (opts.epsilon_scaling)
    for (double e = c.maxCoeff() - c.minCoeff(); e > 2.0 * epsilon; e *= 0.5)
      schedule.push_back(e);
  schedule.push_back(epsilon);

  Eigen::VectorXd f = c.rowwise().minCoeff();
  Eigen::VectorXd g = (c.colwise() - f).colwise().minCoeff().transpose();
  // Coarse stages only need to place mass roughly; the last one gets the
  // remaining budget and the requested tolerance.
  const double coarse_tol = std::max(opts.tol, 1e-6);
  int budget = opts.max_iter;
  detail::SinkhornStage stage;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const bool last = k + 1 == schedule.size();
    stage = detail::sinkhorn_stage(c, a, b, schedule[k], f, g, last ? opts.tol : coarse_tol,
                                   last ? budget : std::min(budget, opts.max_iter / 10),
                                   opts.overrelax);
    budget -= stage.iterations;
  }
  // The fixed point scales the kernel to the marginals, the same problem
  // Newton on the dual solves in a few steps from a nearby plan. Newton steps
  // count against the iteration budget.
  if (!stage.converged && budget > 0) {
    Eigen::MatrixXd polished = stage.plan;
    if (detail::newton_scaling(polished, a, b, opts.tol, std::min(budget, 100))) {
      stage.plan = std::move(polished);
      stage.converged = true;
    }
  }
  if (!stage.converged)
    throw NonConvergence("solve_sinkhorn: no convergence within " +
                             std::to_string(opts.max_iter) + " iterations (residual " +
                             std::to_string(stage.err) + ")",
                         stage.err);

  CouplingMatrix out{Eigen::MatrixXd::Zero(row.size(), col.size()), row, col};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) out.w(rows[i], cols[j]) = stage.plan(i, j);
  return out;
}

struct ProjectionOptions {
  double tol = 1e-9;
  int max_sweeps = 10'000;
  /// Sweeps after which a stalled fit switches to Newton steps on the dual of
  /// the same scaling problem. IPF crawls when the fixed point has entries
  /// near zero; Newton reaches the same point in a handful of steps.
  int newton_after = 200;
};

/// Iterative proportional fitting of a nonnegative matrix onto the coupling
/// polytope of (row, col).
inline CouplingMatrix project_to_polytope(const Eigen::MatrixXd& w, const Eigen::VectorXd& row,
                                          const Eigen::VectorXd& col,
                                          const ProjectionOptions& opts = {}) {
  detail::check_marginals(row, col, "project_to_polytope");
  if (w.rows() != row.size() || w.cols() != col.size())
    throw InvalidInput("project_to_polytope: matrix shape does not match marginals");
  if (!w.allFinite() || w.minCoeff() < 0.0)
    throw InvalidInput("project_to_polytope: matrix must be finite and nonnegative");
  const Eigen::VectorXd target_col = col * (row.sum() / col.sum());

  Eigen::MatrixXd x = w;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (row(i) == 0.0) {
      x.row(i).setZero();
    } else if (!(x.row(i).sum() > 0.0)) {
      throw Infeasible("project_to_polytope: row " + std::to_string(i) +
                       " is all zero but its target marginal is positive");
    }
  }
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (target_col(j) == 0.0) {
      x.col(j).setZero();
    } else if (!(x.col(j).sum() > 0.0)) {
      throw Infeasible("project_to_polytope: column " + std::to_string(j) +
                       " is all zero but its target marginal is positive");
    }
  }

  auto violation = [&] {
    return (x.rowwise().sum() - row).cwiseAbs().sum() +
           (x.colwise().sum().transpose() - target_col).cwiseAbs().sum();
  };
  double err = violation();
  for (int sweep = 0; sweep < opts.max_sweeps && !(err < opts.tol); ++sweep) {
    const Eigen::VectorXd rs = x.rowwise().sum();
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (rs(i) > 0.0) x.row(i) *= row(i) / rs(i);
    const Eigen::VectorXd cs = x.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (cs(j) > 0.0) {
        x.col(j) *= target_col(j) / cs(j);
      } else if (target_col(j) > 0.0) {
        throw Infeasible("project_to_polytope: column " + std::to_string(j) +
                         " lost all mass during fitting");
      }
    }
    err = violation();
    if (sweep + 1 == opts.newton_after && !(err < opts.tol)) {
      Eigen::MatrixXd polished = x;
      if (detail::newton_scaling(polished, row, target_col, opts.tol)) {
        x = std::move(polished);
        err = violation();
      }
    }
  }
  if (!(err < opts.tol))
    throw NonConvergence("project_to_polytope: marginal violation " + std::to_string(err) +
                             " after " + std::to_string(opts.max_sweeps) + " sweeps",
                         err);
  return CouplingMatrix{x, row, col};
}

}  // namespace aggwass

#endif
