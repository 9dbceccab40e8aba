#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mcinv/types.hpp"

namespace mcinv {

// Non-negative linear least squares:  min ||y - A w||_2  s.t.  w >= 0.
//
// nnls_solve() is an active-set solver in the Lawson-Hanson style. Inner
// equality-constrained solves use normal equations with an LLT
// factorization and fall back to column-pivoted QR on the passive columns
// when the Gram matrix is numerically singular. Column selection ties are
// broken toward the lowest index, so identical inputs give identical
// outputs, bit for bit.
//
// nnls_solve_micro() is a closed-form path for problems with at most four
// variables: it enumerates all 2^K passive sets and keeps the feasible
// candidate with the smallest objective. Any point of the feasible cone has
// a representation over linearly independent columns, so skipping singular
// subsets loses nothing and the enumeration is exact.

struct NnlsOptions {
  // <= 0 selects the scale-aware default 1e-12 * max_j ||A_j||^2.
  double zero_tolerance = 0.0;
  // <= 0 selects the default 3 * cols. Must otherwise be >= cols.
  Index max_iterations = 0;
};

template <typename Scalar>
struct NnlsSolutionT {
  VectorX<Scalar> weights;
  Scalar residual_norm = Scalar(0);
  Index iterations = 0;
  std::vector<Index> support;  // indices with weights[j] > zero_tolerance
  bool converged = true;       // false when max_iterations was exhausted
  Scalar zero_tolerance = Scalar(0);  // the threshold actually applied
};

using NnlsSolution = NnlsSolutionT<double>;

template <typename Scalar>
struct KktReportT {
  Scalar max_dual_violation = Scalar(0);     // max_j max(0, -g_j), g = A^T(Aw - y)
  Scalar max_support_gradient = Scalar(0);   // max over {j : w_j > tol} of |g_j|
  bool pass = false;
};

using KktReport = KktReportT<double>;

namespace detail {

template <typename Scalar>
VectorX<Scalar> passive_least_squares(const MatrixX<Scalar>& A,
                                      const VectorX<Scalar>& y,
                                      const std::vector<Index>& passive) {
  const Index s = static_cast<Index>(passive.size());
  MatrixX<Scalar> ap(A.rows(), s);
  for (Index k = 0; k < s; ++k) ap.col(k) = A.col(passive[static_cast<std::size_t>(k)]);
  MatrixX<Scalar> gram = ap.transpose() * ap;
  VectorX<Scalar> rhs = ap.transpose() * y;
  Eigen::LLT<MatrixX<Scalar>> llt(gram);
  if (llt.info() == Eigen::Success) {
    VectorX<Scalar> z = llt.solve(rhs);
    if (z.allFinite()) return z;
  }
  return ap.colPivHouseholderQr().solve(y);
}

}  // namespace detail

template <typename DerivedA, typename DerivedY>
NnlsSolutionT<typename DerivedA::Scalar> nnls_solve(
    const Eigen::MatrixBase<DerivedA>& a_expr,
    const Eigen::MatrixBase<DerivedY>& y_expr, const NnlsOptions& opts = {}) {
  using Scalar = typename DerivedA::Scalar;
  const MatrixX<Scalar> A = a_expr;
  const VectorX<Scalar> y = y_expr;
  const Index m = A.rows();
  const Index n = A.cols();
  require_dims(y.size() == m, "nnls_solve: y length must equal A rows");

  Scalar max_colnorm2 = Scalar(0);
  for (Index j = 0; j < n; ++j)
    max_colnorm2 = std::max(max_colnorm2, A.col(j).squaredNorm());
  const Scalar tol = opts.zero_tolerance > 0
                         ? Scalar(opts.zero_tolerance)
                         : Scalar(1e-12) * std::max(max_colnorm2, Scalar(1e-300));
  Index max_iter = opts.max_iterations;
  if (max_iter <= 0) max_iter = 3 * n;
  require(max_iter >= n, "nnls_solve: max_iterations must be >= cols");

  NnlsSolutionT<Scalar> sol;
  sol.weights = VectorX<Scalar>::Zero(n);
  sol.zero_tolerance = tol;

  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  std::vector<Index> passive_list;
  VectorX<Scalar>& x = sol.weights;
  VectorX<Scalar> residual = y;

  while (true) {
    // Dual vector of the current iterate; the most positive entry over the
    // active set is the steepest descent candidate.
    VectorX<Scalar> dual = A.transpose() * residual;
    Index best = -1;
    Scalar best_value = tol;
    for (Index j = 0; j < n; ++j) {
      if (passive[static_cast<std::size_t>(j)]) continue;
      if (dual[j] > best_value) {
        best_value = dual[j];
        best = j;
      }
    }
    if (best < 0) break;  // KKT satisfied within tol

    passive[static_cast<std::size_t>(best)] = true;
    passive_list.push_back(best);

    while (true) {
      ++sol.iterations;
      if (sol.iterations > max_iter) {
        sol.converged = false;
        residual = y - A * x;
        sol.residual_norm = residual.norm();
        sol.support.clear();
        for (Index j = 0; j < n; ++j)
          if (x[j] > tol) sol.support.push_back(j);
        return sol;
      }

      VectorX<Scalar> z =
          detail::passive_least_squares<Scalar>(A, y, passive_list);

      Scalar min_z = z.size() > 0 ? z.minCoeff() : Scalar(1);
      if (min_z > Scalar(0)) {
        for (Index j = 0; j < n; ++j) x[j] = Scalar(0);
        for (std::size_t k = 0; k < passive_list.size(); ++k)
          x[passive_list[k]] = z[static_cast<Index>(k)];
        break;
      }

      // Step toward z until the first passive coordinate hits zero.
      Scalar alpha = Scalar(1);
      Index blocking = -1;
      for (std::size_t k = 0; k < passive_list.size(); ++k) {
        const Index j = passive_list[k];
        const Scalar zk = z[static_cast<Index>(k)];
        if (zk <= Scalar(0)) {
          const Scalar denom = x[j] - zk;
          const Scalar step = denom > Scalar(0) ? x[j] / denom : Scalar(0);
          if (step < alpha) {
            alpha = step;
            blocking = j;
          }
        }
      }
      for (std::size_t k = 0; k < passive_list.size(); ++k) {
        const Index j = passive_list[k];
        x[j] += alpha * (z[static_cast<Index>(k)] - x[j]);
      }
      if (blocking >= 0) x[blocking] = Scalar(0);

      std::vector<Index> kept;
      kept.reserve(passive_list.size());
      for (const Index j : passive_list) {
        if (x[j] > Scalar(0)) {
          kept.push_back(j);
        } else {
          x[j] = Scalar(0);
          passive[static_cast<std::size_t>(j)] = false;
        }
      }
      passive_list.swap(kept);
      if (passive_list.empty()) break;
    }

    residual = y - A * x;
  }

  sol.residual_norm = (y - A * x).norm();
  sol.support.clear();
  for (Index j = 0; j < n; ++j)
    if (x[j] > tol) sol.support.push_back(j);
  return sol;
}

template <typename DerivedA, typename DerivedY, typename DerivedW>
KktReportT<typename DerivedA::Scalar> kkt_report(
    const Eigen::MatrixBase<DerivedA>& a_expr,
    const Eigen::MatrixBase<DerivedY>& y_expr,
    const Eigen::MatrixBase<DerivedW>& w_expr,
    typename DerivedA::Scalar tol) {
  using Scalar = typename DerivedA::Scalar;
  const MatrixX<Scalar> A = a_expr;
  const VectorX<Scalar> y = y_expr;
  const VectorX<Scalar> w = w_expr;
  require_dims(y.size() == A.rows(), "kkt_report: y length must equal A rows");
  require_dims(w.size() == A.cols(), "kkt_report: w length must equal A cols");

  const VectorX<Scalar> grad = A.transpose() * (A * w - y);
  KktReportT<Scalar> report;
  for (Index j = 0; j < w.size(); ++j) {
    report.max_dual_violation =
        std::max(report.max_dual_violation, std::max(Scalar(0), -grad[j]));
    if (w[j] > tol)
      report.max_support_gradient =
          std::max(report.max_support_gradient, std::abs(grad[j]));
  }
  report.pass = report.max_dual_violation <= tol &&
                report.max_support_gradient <= tol;
  return report;
}

namespace detail {

// Allocation-free subset enumeration for K <= 4. Returns
// phi = w^T G w - 2 w^T b (= ||y - Aw||^2 - ||y||^2) of the best feasible
// candidate and fills w. Subsets scanned by increasing bitmask with strict
// improvement, so ties keep the earliest set.
template <typename Scalar>
Scalar micro_enumerate(const Scalar g[4][4], const Scalar b[4], int k,
                       Scalar w[4]) {
  Scalar best_phi = Scalar(0);  // empty support, w = 0
  Scalar best_w[4] = {0, 0, 0, 0};

  const unsigned masks = 1u << k;
  for (unsigned mask = 1; mask < masks; ++mask) {
    int idx[4];
    int s = 0;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) idx[s++] = i;

    // Gauss elimination with partial pivoting on the s x s subsystem.
    Scalar m[4][5];
    for (int r = 0; r < s; ++r) {
      for (int c = 0; c < s; ++c) m[r][c] = g[idx[r]][idx[c]];
      m[r][s] = b[idx[r]];
    }
    bool singular = false;
    for (int col = 0; col < s && !singular; ++col) {
      int piv = col;
      for (int r = col + 1; r < s; ++r)
        if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
      Scalar scale = Scalar(0);
      for (int c = col; c < s; ++c)
        scale = std::max(scale, std::abs(m[piv][c]));
      if (std::abs(m[piv][col]) <=
          Scalar(1e-13) * std::max(scale, Scalar(1e-300))) {
        singular = true;
        break;
      }
      if (piv != col)
        for (int c = col; c <= s; ++c) std::swap(m[piv][c], m[col][c]);
      for (int r = col + 1; r < s; ++r) {
        const Scalar factor = m[r][col] / m[col][col];
        for (int c = col; c <= s; ++c) m[r][c] -= factor * m[col][c];
      }
    }
    if (singular) continue;

    Scalar z[4];
    for (int r = s - 1; r >= 0; --r) {
      Scalar acc = m[r][s];
      for (int c = r + 1; c < s; ++c) acc -= m[r][c] * z[c];
      z[r] = acc / m[r][r];
    }

    bool feasible = true;
    for (int r = 0; r < s; ++r)
      if (!(z[r] > Scalar(0))) {
        feasible = false;
        break;
      }
    if (!feasible) continue;

    // phi = z^T G_SS z - 2 z^T b_S
    Scalar phi = Scalar(0);
    for (int r = 0; r < s; ++r) {
      Scalar gz = Scalar(0);
      for (int c = 0; c < s; ++c) gz += g[idx[r]][idx[c]] * z[c];
      phi += z[r] * (gz - Scalar(2) * b[idx[r]]);
    }
    if (phi < best_phi) {
      best_phi = phi;
      for (int r = 0; r < 4; ++r) best_w[r] = Scalar(0);
      for (int r = 0; r < s; ++r) best_w[idx[r]] = z[r];
    }
  }

  for (int i = 0; i < k; ++i) w[i] = best_w[i];
  return best_phi;
}

}  // namespace detail

// Closed-form NNLS for K <= 4 variables given the Gram matrix G = A^T A and
// rhs = A^T y. Minimizes phi(w) = w^T G w - 2 w^T rhs, which equals
// ||y - Aw||^2 - ||y||^2. Returns the feasible minimizer over all 2^K
// passive sets; any cone point has a representation over independent
// columns, so singular subsets are skipped without loss.
template <typename Scalar>
VectorX<Scalar> nnls_solve_micro(const MatrixX<Scalar>& gram,
                                 const VectorX<Scalar>& rhs,
                                 Scalar* objective = nullptr) {
  const Index k = rhs.size();
  require_dims(gram.rows() == k && gram.cols() == k,
               "nnls_solve_micro: gram must be K x K");
  require(k >= 1 && k <= 4, "nnls_solve_micro: K must be in [1, 4]");

  Scalar g[4][4];
  Scalar b[4];
  for (Index i = 0; i < k; ++i) {
    b[i] = rhs[i];
    for (Index j = 0; j < k; ++j) g[i][j] = gram(i, j);
  }
  Scalar w[4];
  const Scalar phi = detail::micro_enumerate(g, b, static_cast<int>(k), w);
  if (objective) *objective = phi;
  VectorX<Scalar> out(k);
  for (Index i = 0; i < k; ++i) out[i] = w[i];
  return out;
}

}  // namespace mcinv
