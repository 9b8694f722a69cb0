#pragma once

// Test-only reference computations. Nothing here calls into the code paths it checks.

#include <rrtsopt/qp.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <random>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double uniform(std::mt19937_64 & rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline VectorXd random_vector(std::mt19937_64 & rng, Eigen::Index n, double lo = -1.0, double hi = 1.0)
{
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(rng, lo, hi);
  return v;
}

inline MatrixXd random_matrix(std::mt19937_64 & rng, Eigen::Index r, Eigen::Index c)
{
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform(rng, -1.0, 1.0);
  }
  return m;
}

/// Strictly convex QP with n <= 6, up to 8 inequalities and a strictly feasible point.
inline rrtsopt::qp::QpProblem random_feasible_qp(std::mt19937_64 & rng)
{
  const auto n  = std::uniform_int_distribution<Eigen::Index>(1, 6)(rng);
  const auto m  = std::uniform_int_distribution<Eigen::Index>(0, 8)(rng);
  const auto me = std::uniform_int_distribution<Eigen::Index>(0, std::min<Eigen::Index>(2, n - 1))(rng);

  rrtsopt::qp::QpProblem p;
  const MatrixXd a = random_matrix(rng, n, n);
  p.P              = a.transpose() * a + 0.1 * MatrixXd::Identity(n, n);
  p.q              = 3.0 * random_vector(rng, n);
  const VectorXd x0 = random_vector(rng, n);
  p.G = random_matrix(rng, m, n);
  p.h = p.G * x0 - random_vector(rng, m, 0.05, 1.0);
  p.E = random_matrix(rng, me, n);
  p.d = p.E * x0;
  return p;
}

struct EnumeratedOptimum
{
  VectorXd u;
  double objective;
};

/// Solves the equality-constrained KKT system for every subset of inequality rows
/// treated as active and keeps the best primal-feasible point.
inline std::optional<EnumeratedOptimum> enumerate_active_sets(const rrtsopt::qp::QpProblem & p)
{
  const Eigen::Index n  = p.q.size();
  const Eigen::Index m  = p.G.rows();
  const Eigen::Index me = p.E.rows();
  std::optional<EnumeratedOptimum> best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (mask & (1u << i)) rows.push_back(i);
    }
    const Eigen::Index k = me + static_cast<Eigen::Index>(rows.size());
    if (k > n) continue;
    MatrixXd a(k, n);
    VectorXd b(k);
    if (me > 0) {
      a.topRows(me) = p.E;
      b.head(me)    = p.d;
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      a.row(me + static_cast<Eigen::Index>(r)) = p.G.row(rows[r]);
      b(me + static_cast<Eigen::Index>(r))     = p.h(rows[r]);
    }
    MatrixXd kkt = MatrixXd::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n)    = p.P;
    kkt.topRightCorner(n, k)   = a.transpose();
    kkt.bottomLeftCorner(k, n) = a;
    VectorXd rhs(n + k);
    rhs.head(n) = -p.q;
    rhs.tail(k) = b;
    Eigen::FullPivLU<MatrixXd> lu(kkt);
    if (lu.rank() < n + k) continue;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd x   = sol.head(n);
    if (m > 0 && (p.G * x - p.h).minCoeff() < -1e-9) continue;
    const double f = 0.5 * x.dot(p.P * x) + p.q.dot(x);
    if (!best || f < best->objective) best = EnumeratedOptimum{x, f};
  }
  return best;
}

/// Central finite difference of a scalar function.
inline VectorXd fd_gradient(const std::function<double(const VectorXd &)> & f, const VectorXd & x, double h = 1e-6)
{
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x;
    VectorXd b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Central finite-difference Jacobian of a vector function.
inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd &)> & f, const VectorXd & x, double h = 1e-6)
{
  const VectorXd f0 = f(x);
  MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x;
    VectorXd b = x;
    a(i) += h;
    b(i) -= h;
    jac.col(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return jac;
}

}  // namespace oracle
