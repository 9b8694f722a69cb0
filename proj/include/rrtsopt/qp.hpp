#pragma once

/**
 * @file
 * @brief Dense convex quadratic programming.
 *
 * Solves
 *
 *     min_u  1/2 u^T P u + q^T u
 *     s.t.   G u >= h
 *            E u  = d
 *
 * with the dual active-set method of Goldfarb and Idnani. The iterate moves in primal
 * and dual space together: it starts at the unconstrained minimizer, adds equalities,
 * then repeatedly adds a violated inequality, dropping active constraints whose
 * multiplier would turn negative. The factorization of the active set is kept as
 * J = L^{-T} Q and an upper triangular R, updated with Givens rotations.
 */

#include <rrtsopt/errors.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace rrtsopt::qp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct QpProblem
{
  MatrixXd P;
  VectorXd q;
  MatrixXd G;  ///< inequality rows, G u >= h
  VectorXd h;
  MatrixXd E;  ///< equality rows, E u = d
  VectorXd d;

  [[nodiscard]] Index n() const { return q.size(); }
};

enum class QpStatus { optimal, max_iter, infeasible };

inline const char * to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::infeasible: return "infeasible";
  }
  return "?";
}

struct QpSolution
{
  VectorXd u;
  double objective{std::numeric_limits<double>::quiet_NaN()};
  QpStatus status{QpStatus::infeasible};
  /// Max of scaled stationarity, primal violation, equality residual and complementarity.
  double kkt_residual{std::numeric_limits<double>::infinity()};
  VectorXd mu;  ///< inequality multipliers (>= 0)
  VectorXd nu;  ///< equality multipliers
  int iterations{0};
};

struct QpOptions
{
  double tolerance{1e-8};
  int max_iter{200};
};

inline void validate(const QpProblem & p)
{
  const Index n = p.q.size();
  if (p.P.rows() != n || p.P.cols() != n) throw ArgumentError("qp: P must be n x n");
  if (p.G.cols() != n && p.G.rows() > 0) throw ArgumentError("qp: G must have n columns");
  if (p.G.rows() != p.h.size()) throw ArgumentError("qp: G and h disagree");
  if (p.E.cols() != n && p.E.rows() > 0) throw ArgumentError("qp: E must have n columns");
  if (p.E.rows() != p.d.size()) throw ArgumentError("qp: E and d disagree");
  const double scale = std::max(1.0, p.P.cwiseAbs().maxCoeff());
  if ((p.P - p.P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw ArgumentError("qp: P must be symmetric");
}

inline double objective(const QpProblem & p, const VectorXd & u) { return 0.5 * u.dot(p.P * u) + p.q.dot(u); }

/// KKT residual of (u, mu, nu), scaled so that unit-size problems see absolute values.
inline double kkt_residual(const QpProblem & p, const VectorXd & u, const VectorXd & mu, const VectorXd & nu)
{
  VectorXd grad = p.P * u + p.q;
  const double gscale = std::max({1.0, p.q.cwiseAbs().maxCoeff(), (p.P * u).cwiseAbs().maxCoeff()});
  if (p.G.rows() > 0) grad.noalias() -= p.G.transpose() * mu;
  if (p.E.rows() > 0) grad.noalias() -= p.E.transpose() * nu;
  double res = grad.cwiseAbs().maxCoeff() / gscale;
  if (p.G.rows() > 0) {
    const VectorXd slack = p.G * u - p.h;
    res = std::max(res, (-slack).cwiseMax(0.0).maxCoeff());
    res = std::max(res, (mu.array() * slack.array()).abs().maxCoeff() / gscale);
    if (mu.size() > 0) res = std::max(res, (-mu).cwiseMax(0.0).maxCoeff());
  }
  if (p.E.rows() > 0) res = std::max(res, (p.E * u - p.d).cwiseAbs().maxCoeff());
  return res;
}

namespace detail {

/// Active-set factorization: J (n x n) and upper triangular R (n x n, leading iq block used).
class ActiveSet
{
public:
  explicit ActiveSet(MatrixXd j) : j_(std::move(j)), r_(MatrixXd::Zero(j_.rows(), j_.rows())) {}

  [[nodiscard]] Index size() const { return iq_; }
  [[nodiscard]] const MatrixXd & J() const { return j_; }

  /// Step directions for constraint normal `np`: primal z and dual r.
  void directions(const VectorXd & np, VectorXd & d, VectorXd & z, VectorXd & r) const
  {
    const Index n = j_.rows();
    d.noalias()   = j_.transpose() * np;
    z.noalias()   = j_.rightCols(n - iq_) * d.tail(n - iq_);
    r             = r_.topLeftCorner(iq_, iq_).triangularView<Eigen::Upper>().solve(d.head(iq_));
  }

  /// Appends a constraint whose transformed normal is d. Returns false when it is
  /// linearly dependent on the active set.
  bool add(VectorXd d)
  {
    const Index n = j_.rows();
    for (Index k = n - 1; k > iq_; --k) {
      double cc = d(k - 1);
      double ss = d(k);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(k) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc       = -cc;
        ss       = -ss;
        d(k - 1) = -h;
      } else {
        d(k - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index row = 0; row < n; ++row) {
        const double t1   = j_(row, k - 1);
        const double t2   = j_(row, k);
        j_(row, k - 1)    = t1 * cc + t2 * ss;
        j_(row, k)        = xny * (t1 + j_(row, k - 1)) - t2;
      }
    }
    ++iq_;
    r_.col(iq_ - 1).head(iq_) = d.head(iq_);
    const double diag = std::abs(d(iq_ - 1));
    if (diag <= std::numeric_limits<double>::epsilon() * r_norm_) {
      --iq_;
      r_.col(iq_).head(iq_ + 1).setZero();
      return false;
    }
    r_norm_ = std::max(r_norm_, diag);
    return true;
  }

  /// Removes the active constraint at position `pos` and re-triangularizes R.
  void remove(Index pos)
  {
    const Index n = j_.rows();
    for (Index i = pos; i + 1 < iq_; ++i) r_.col(i).head(iq_) = r_.col(i + 1).head(iq_);
    r_.col(iq_ - 1).head(iq_).setZero();
    --iq_;
    for (Index jj = pos; jj < iq_; ++jj) {
      double cc = r_(jj, jj);
      double ss = r_(jj + 1, jj);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      r_(jj + 1, jj) = 0.0;
      if (cc < 0.0) {
        r_(jj, jj) = -h;
        cc         = -cc;
        ss         = -ss;
      } else {
        r_(jj, jj) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index k = jj + 1; k < iq_; ++k) {
        const double t1 = r_(jj, k);
        const double t2 = r_(jj + 1, k);
        r_(jj, k)       = t1 * cc + t2 * ss;
        r_(jj + 1, k)   = xny * (t1 + r_(jj, k)) - t2;
      }
      for (Index k = 0; k < n; ++k) {
        const double t1 = j_(k, jj);
        const double t2 = j_(k, jj + 1);
        j_(k, jj)       = t1 * cc + t2 * ss;
        j_(k, jj + 1)   = xny * (j_(k, jj) + t1) - t2;
      }
    }
  }

private:
  MatrixXd j_;
  MatrixXd r_;
  Index iq_{0};
  double r_norm_{1.0};
};

}  // namespace detail

/**
 * Solves a convex QP. `warm_start` (e.g. the previous sOpt iterate) seeds the order in
 * which violated constraints enter the active set; constraints active at the warm
 * start are preferred. The optimizer itself does not depend on it.
 */
inline QpSolution solve(const QpProblem & prob, const QpOptions & opts = {},
                        const std::optional<VectorXd> & warm_start = std::nullopt)
{
  validate(prob);
  if (!(opts.tolerance > 0.0)) throw ArgumentError("qp: tolerance must be positive");

  const Index n  = prob.n();
  const Index me = prob.E.rows();
  const Index mi = prob.G.rows();
  const double tol = opts.tolerance;

  QpSolution out;
  out.mu = VectorXd::Zero(mi);
  out.nu = VectorXd::Zero(me);

  // Cholesky of P; a PSD P gets a small diagonal shift.
  Eigen::LLT<MatrixXd> llt(prob.P);
  if (llt.info() != Eigen::Success) {
    const double shift = 1e-10 * std::max(1.0, prob.P.diagonal().cwiseAbs().maxCoeff());
    llt.compute(prob.P + shift * MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) throw ArgumentError("qp: P is not positive semidefinite");
  }
  MatrixXd jinit = MatrixXd::Identity(n, n);
  llt.matrixU().solveInPlace(jinit);  // J = L^{-T}
  detail::ActiveSet active(std::move(jinit));

  VectorXd x = -llt.solve(prob.q);

  // Active constraint bookkeeping: index >= 0 is inequality row, < 0 is equality -(i+1).
  std::vector<Index> act;
  std::vector<double> mult;
  act.reserve(static_cast<std::size_t>(me + n));
  mult.reserve(static_cast<std::size_t>(me + n));

  VectorXd d(n), z(n), r;

  auto fail = [&](QpStatus status) {
    out.status = status;
    out.u      = x;
    out.objective = objective(prob, x);
    return out;
  };

  // Equalities.
  for (Index i = 0; i < me; ++i) {
    const VectorXd np = prob.E.row(i).transpose();
    active.directions(np, d, z, r);
    const double residual = prob.d(i) - np.dot(x);
    const double ztn      = z.dot(np);
    const double scale    = std::max(1.0, np.cwiseAbs().maxCoeff() * std::max(1.0, x.cwiseAbs().maxCoeff()));
    if (!(std::abs(ztn) > 1e-14 * d.squaredNorm())) {
      // Dependent on earlier equalities: redundant if consistent.
      if (std::abs(residual) <= tol * scale) continue;
      return fail(QpStatus::infeasible);
    }
    const double t2 = residual / ztn;
    x += t2 * z;
    for (std::size_t k = 0; k < mult.size(); ++k) mult[k] -= t2 * r(static_cast<Index>(k));
    if (!active.add(d)) {
      if (std::abs(prob.d(i) - np.dot(x)) <= tol * scale) continue;
      return fail(QpStatus::infeasible);
    }
    act.push_back(-(i + 1));
    mult.push_back(t2);
  }

  std::vector<char> in_active(static_cast<std::size_t>(mi), 0);
  std::vector<char> preferred(static_cast<std::size_t>(mi), 0);
  if (warm_start && warm_start->size() == n && mi > 0) {
    const VectorXd s = prob.G * *warm_start - prob.h;
    for (Index i = 0; i < mi; ++i) {
      preferred[static_cast<std::size_t>(i)] = std::abs(s(i)) <= 1e-6 * std::max(1.0, std::abs(prob.h(i))) ? 1 : 0;
    }
  }

  const VectorXd row_norm = mi > 0 ? VectorXd(prob.G.rowwise().norm()) : VectorXd();
  int iter = 0;
  VectorXd s(mi);
  while (true) {
    if (mi == 0) break;
    s.noalias() = prob.G * x - prob.h;
    Index p           = -1;
    double worst      = 0.0;
    Index p_pref      = -1;
    double worst_pref = 0.0;
    for (Index i = 0; i < mi; ++i) {
      if (in_active[static_cast<std::size_t>(i)] || s(i) >= -0.1 * tol) continue;
      const double si = s(i) / std::max(1.0, row_norm(i));
      if (si < worst) {
        worst = si;
        p     = i;
      }
      if (preferred[static_cast<std::size_t>(i)] && si < worst_pref) {
        worst_pref = si;
        p_pref     = i;
      }
    }
    if (p_pref >= 0) p = p_pref;
    if (p < 0) break;
    if (++iter > opts.max_iter) {
      out.iterations = iter - 1;
      return fail(QpStatus::max_iter);
    }

    const VectorXd np = prob.G.row(p).transpose();
    double sp         = s(p);
    double u_new      = 0.0;
    // Inner loop: partial steps drop blocking constraints until p can be added.
    while (true) {
      active.directions(np, d, z, r);

      // Partial step: largest dual step keeping active inequality multipliers >= 0.
      double t1 = std::numeric_limits<double>::infinity();
      Index l   = -1;
      for (Index k = 0; k < active.size(); ++k) {
        if (act[static_cast<std::size_t>(k)] < 0) continue;
        if (r(k) > 0.0) {
          const double ratio = mult[static_cast<std::size_t>(k)] / r(k);
          if (ratio < t1) {
            t1 = ratio;
            l  = k;
          }
        }
      }
      const double ztn = z.dot(np);
      const double t2  = std::abs(ztn) > 1e-14 * d.squaredNorm() ? -sp / ztn : std::numeric_limits<double>::infinity();
      const double t   = std::min(t1, t2);

      if (!std::isfinite(t)) return fail(QpStatus::infeasible);

      if (!std::isfinite(t2)) {
        // Only a dual step is possible.
        for (Index k = 0; k < active.size(); ++k) mult[static_cast<std::size_t>(k)] -= t * r(k);
        u_new += t;
        in_active[static_cast<std::size_t>(act[static_cast<std::size_t>(l)])] = 0;
        active.remove(l);
        act.erase(act.begin() + l);
        mult.erase(mult.begin() + l);
        continue;
      }

      x += t * z;
      for (Index k = 0; k < active.size(); ++k) mult[static_cast<std::size_t>(k)] -= t * r(k);
      u_new += t;

      if (t == t2) {
        if (!active.add(d)) return fail(QpStatus::infeasible);
        act.push_back(p);
        mult.push_back(u_new);
        in_active[static_cast<std::size_t>(p)] = 1;
        break;
      }
      in_active[static_cast<std::size_t>(act[static_cast<std::size_t>(l)])] = 0;
      active.remove(l);
      act.erase(act.begin() + l);
      mult.erase(mult.begin() + l);
      sp = np.dot(x) - prob.h(p);
    }
  }

  for (std::size_t k = 0; k < act.size(); ++k) {
    if (act[k] >= 0) {
      out.mu(act[k]) = mult[k];
    } else {
      out.nu(-act[k] - 1) = mult[k];
    }
  }
  out.u            = x;
  out.objective    = objective(prob, x);
  out.iterations   = iter;
  out.kkt_residual = kkt_residual(prob, x, out.mu, out.nu);
  out.status       = out.kkt_residual <= tol ? QpStatus::optimal : QpStatus::max_iter;
  return out;
}

inline QpSolution solve(const QpProblem & prob, double tolerance, int max_iter,
                        const std::optional<VectorXd> & warm_start = std::nullopt)
{
  return solve(prob, QpOptions{tolerance, max_iter}, warm_start);
}

}  // namespace rrtsopt::qp
