#include "lyapnet/lp.hpp"

#include <cmath>
#include <limits>

namespace lyapnet {

namespace {

class Tableau {
 public:
  Tableau(Matrix a, Vector rhs, std::vector<int> basis, int allowed_cols, double tol)
      : t_(a.rows(), a.cols() + 1), basis_(std::move(basis)), allowed_(allowed_cols), tol_(tol) {
    t_.leftCols(a.cols()) = a;
    t_.col(a.cols()) = rhs;
    active_.assign(static_cast<std::size_t>(a.rows()), true);
  }

  Eigen::Index cols() const { return t_.cols() - 1; }
  Eigen::Index rows() const { return t_.rows(); }

  void set_objective(const Vector& cost) {
    cost_ = cost;
    obj_ = Eigen::RowVectorXd::Zero(t_.cols());
    obj_.head(cols()) = cost.transpose();
    for (Eigen::Index i = 0; i < rows(); ++i) {
      if (!active_[static_cast<std::size_t>(i)]) continue;
      const double cb = cost(basis_[static_cast<std::size_t>(i)]);
      if (cb != 0.0) obj_ -= cb * t_.row(i);
    }
    scale_ = std::max(1.0, cost.cwiseAbs().maxCoeff());
  }

  /// Runs Bland-rule pivots until optimal. Returns false if unbounded.
  bool optimize() {
    for (;;) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < allowed_; ++j) {
        if (obj_(j) < -tol_ * scale_) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < rows(); ++i) {
        if (!active_[static_cast<std::size_t>(i)]) continue;
        const double piv = t_(i, enter);
        if (piv <= tol_) continue;
        const double ratio = t_(i, cols()) / piv;
        if (leave < 0 || ratio < best - tol_) {
          best = ratio;
          leave = i;
        } else if (ratio <= best + tol_ &&
                   basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)]) {
          best = std::min(best, ratio);
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
  }

  void pivot(Eigen::Index row, Eigen::Index col) {
    t_.row(row) /= t_(row, col);
    for (Eigen::Index i = 0; i < rows(); ++i) {
      if (i == row) continue;
      const double f = t_(i, col);
      if (f != 0.0) t_.row(i) -= f * t_.row(row);
    }
    const double f = obj_(col);
    if (f != 0.0) obj_ -= f * t_.row(row);
    basis_[static_cast<std::size_t>(row)] = static_cast<int>(col);
  }

  /// Pivots artificial columns (index >= first_artificial) out of the basis;
  /// rows where that is impossible are redundant and get deactivated.
  void drive_out_artificials(Eigen::Index first_artificial) {
    for (Eigen::Index i = 0; i < rows(); ++i) {
      if (basis_[static_cast<std::size_t>(i)] < first_artificial) continue;
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < first_artificial; ++j) {
        if (std::abs(t_(i, j)) > tol_) {
          col = j;
          break;
        }
      }
      if (col >= 0) {
        pivot(i, col);
      } else {
        active_[static_cast<std::size_t>(i)] = false;
      }
    }
  }

  double objective_value() const { return -obj_(cols()); }
  double rhs(Eigen::Index i) const { return t_(i, cols()); }
  const std::vector<int>& basis() const { return basis_; }
  const std::vector<bool>& active() const { return active_; }
  void set_allowed(Eigen::Index n) { allowed_ = n; }

 private:
  Matrix t_;
  Eigen::RowVectorXd obj_;
  Vector cost_;
  std::vector<int> basis_;
  std::vector<bool> active_;
  Eigen::Index allowed_;
  double tol_;
  double scale_ = 1.0;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, double tol) {
  const Eigen::Index n = lp.c.size();
  const Eigen::Index m_ub = lp.A_ub.rows();
  const Eigen::Index m_eq = lp.A_eq.rows();
  const Eigen::Index m = m_ub + m_eq;
  if ((m_ub > 0 && lp.A_ub.cols() != n) || (m_eq > 0 && lp.A_eq.cols() != n) ||
      lp.b_ub.size() != m_ub || lp.b_eq.size() != m_eq) {
    throw ContractError("solve_lp: dimension mismatch");
  }

  // Rows: [ub | eq]; columns: [x | slack(ub) | artificial].
  Vector sign = Vector::Ones(m);
  Vector rhs(m);
  rhs << lp.b_ub, lp.b_eq;
  std::vector<bool> needs_art(static_cast<std::size_t>(m), false);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (rhs(i) < 0.0) sign(i) = -1.0;
    needs_art[static_cast<std::size_t>(i)] = (i >= m_ub) || sign(i) < 0.0;
  }
  Eigen::Index n_art = 0;
  for (bool b : needs_art) n_art += b ? 1 : 0;

  const Eigen::Index first_art = n + m_ub;
  Matrix a = Matrix::Zero(m, first_art + n_art);
  if (m_ub > 0) a.block(0, 0, m_ub, n) = lp.A_ub;
  if (m_eq > 0) a.block(m_ub, 0, m_eq, n) = lp.A_eq;
  for (Eigen::Index i = 0; i < m_ub; ++i) a(i, n + i) = 1.0;
  std::vector<int> basis(static_cast<std::size_t>(m));
  Eigen::Index art = first_art;
  for (Eigen::Index i = 0; i < m; ++i) {
    a.row(i) *= sign(i);
    rhs(i) *= sign(i);
    if (needs_art[static_cast<std::size_t>(i)]) {
      a(i, art) = 1.0;
      basis[static_cast<std::size_t>(i)] = static_cast<int>(art++);
    } else {
      basis[static_cast<std::size_t>(i)] = static_cast<int>(n + i);
    }
  }
  const Matrix a0 = a.leftCols(first_art);

  Tableau tab(a, rhs, basis, a.cols(), tol);
  LpSolution sol;
  if (n_art > 0) {
    Vector phase1 = Vector::Zero(a.cols());
    phase1.tail(n_art).setOnes();
    tab.set_objective(phase1);
    tab.optimize();
    const double infeas = tab.objective_value();
    if (infeas > tol * std::max(1.0, rhs.cwiseAbs().maxCoeff())) {
      sol.status = LpSolution::Status::Infeasible;
      return sol;
    }
    tab.drive_out_artificials(first_art);
  }
  tab.set_allowed(first_art);
  Vector cost = Vector::Zero(a.cols());
  cost.head(n) = lp.c;
  tab.set_objective(cost);
  if (!tab.optimize()) {
    sol.status = LpSolution::Status::Unbounded;
    return sol;
  }

  sol.status = LpSolution::Status::Optimal;
  sol.x = Vector::Zero(n);
  const auto& b = tab.basis();
  const auto& active = tab.active();
  std::vector<Eigen::Index> rows_used;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    rows_used.push_back(i);
    if (b[static_cast<std::size_t>(i)] < n) sol.x(b[static_cast<std::size_t>(i)]) = std::max(0.0, tab.rhs(i));
  }
  sol.objective = lp.c.dot(sol.x);

  // Duals from B^T y = c_B over the non-redundant rows.
  const auto k = static_cast<Eigen::Index>(rows_used.size());
  Matrix basis_mat(k, k);
  Vector cb(k);
  for (Eigen::Index col = 0; col < k; ++col) {
    const int var = b[static_cast<std::size_t>(rows_used[static_cast<std::size_t>(col)])];
    for (Eigen::Index row = 0; row < k; ++row) basis_mat(row, col) = a0(rows_used[static_cast<std::size_t>(row)], var);
    cb(col) = cost(var);
  }
  const Vector y_used = basis_mat.transpose().fullPivLu().solve(cb);
  Vector y = Vector::Zero(m);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto row = rows_used[static_cast<std::size_t>(i)];
    y(row) = sign(row) * y_used(i);
  }
  sol.dual_ub = y.head(m_ub);
  sol.dual_eq = y.tail(m_eq);
  return sol;
}

}  // namespace lyapnet
