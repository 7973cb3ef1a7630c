#include <bezgraph/qp.hpp>

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <variant>

namespace bezgraph::qp
{
namespace
{
constexpr int kDenseLimit = 64;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoEqualityScale = 1e3;
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;
constexpr double kPolishDelta = 1e-7;
constexpr int kPolishRefine = 4;
constexpr int kPolishRounds = 8;
constexpr double kPolishFeasTol = 1e-10;

bool isFinite(const SparseMat& m)
{
  for (int k = 0; k < m.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(m, k); it; ++it)
    {
      if (!std::isfinite(it.value()))
      {
        return false;
      }
    }
  }
  return true;
}

double infNorm(const Vec& v)
{
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

double clampScale(double norm)
{
  if (norm < kScaleMin)
  {
    return 1.0;
  }
  return std::min(norm, kScaleMax);
}

Vec columnInfNorms(const SparseMat& m)
{
  Vec out = Vec::Zero(m.cols());
  for (int k = 0; k < m.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(m, k); it; ++it)
    {
      out(k) = std::max(out(k), std::abs(it.value()));
    }
  }
  return out;
}

Vec rowInfNorms(const SparseMat& m)
{
  Vec out = Vec::Zero(m.rows());
  for (int k = 0; k < m.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(m, k); it; ++it)
    {
      out(it.row()) = std::max(out(it.row()), std::abs(it.value()));
    }
  }
  return out;
}

/// Solver for the SPD reduced system, dense for small problems.
class SpdSolver
{
public:
  bool factor(const SparseMat& K)
  {
    if (K.rows() <= kDenseLimit)
    {
      dense_.compute(Mat(K));
      mode_ = Mode::Dense;
      return dense_.info() == Eigen::Success;
    }
    sparse_.compute(K);
    mode_ = Mode::Sparse;
    return sparse_.info() == Eigen::Success;
  }

  Vec solve(const Vec& rhs) const
  {
    return mode_ == Mode::Dense ? Vec(dense_.solve(rhs)) : Vec(sparse_.solve(rhs));
  }

private:
  enum class Mode { Dense, Sparse };
  Mode mode_ = Mode::Dense;
  Eigen::LLT<Mat> dense_;
  Eigen::SimplicialLLT<SparseMat> sparse_;
};

bool isPositiveSemidefinite(const SparseMat& P, double sigma)
{
  const int n = static_cast<int>(P.rows());
  if (n == 0)
  {
    return true;
  }
  SparseMat shifted = P;
  for (int i = 0; i < n; ++i)
  {
    shifted.coeffRef(i, i) += sigma;
  }
  if (n <= kDenseLimit)
  {
    Eigen::LDLT<Mat> ldlt{Mat(shifted)};
    if (ldlt.info() != Eigen::Success)
    {
      return false;
    }
    return (ldlt.vectorD().array() > 0.0).all();
  }
  Eigen::SimplicialLDLT<SparseMat> ldlt(shifted);
  if (ldlt.info() != Eigen::Success)
  {
    return false;
  }
  return (ldlt.vectorD().array() > 0.0).all();
}

struct Scaled
{
  SparseMat P;
  Vec q;
  SparseMat A;
  Vec l;
  Vec u;
  Vec D;     // variable scaling
  Vec E;     // constraint scaling
  double c;  // cost scaling
};

Scaled equilibrate(const Problem& prob, int iterations)
{
  const int n = prob.numVariables();
  const int m = prob.numConstraints();
  Scaled s{prob.P, prob.q, prob.A, prob.l, prob.u, Vec::Ones(n), Vec::Ones(m), 1.0};
  for (int it = 0; it < iterations; ++it)
  {
    Vec col_p = columnInfNorms(s.P);
    Vec col_a = columnInfNorms(s.A);
    Vec row_a = rowInfNorms(s.A);
    Vec d(n), e(m);
    for (int j = 0; j < n; ++j)
    {
      d(j) = 1.0 / std::sqrt(clampScale(std::max(col_p(j), col_a(j))));
    }
    for (int i = 0; i < m; ++i)
    {
      e(i) = 1.0 / std::sqrt(clampScale(row_a(i)));
    }
    s.P = d.asDiagonal() * s.P * d.asDiagonal();
    s.A = e.asDiagonal() * s.A * d.asDiagonal();
    s.q = d.cwiseProduct(s.q);
    s.D = s.D.cwiseProduct(d);
    s.E = s.E.cwiseProduct(e);

    const Vec col = columnInfNorms(s.P);
    const double mean_col = n > 0 ? col.mean() : 0.0;
    const double gamma = 1.0 / clampScale(std::max(mean_col, infNorm(s.q)));
    s.P *= gamma;
    s.q *= gamma;
    s.c *= gamma;
  }
  for (int i = 0; i < m; ++i)
  {
    s.l(i) = prob.l(i) <= -kInfinity ? -kInfinity : prob.l(i) * s.E(i);
    s.u(i) = prob.u(i) >= kInfinity ? kInfinity : prob.u(i) * s.E(i);
  }
  return s;
}

struct Residuals
{
  double primal = 0.0;
  double dual = 0.0;
  double eps_primal = 0.0;
  double eps_dual = 0.0;
  double primal_scale = 0.0;
  double dual_scale = 0.0;
  bool converged() const { return primal <= eps_primal && dual <= eps_dual; }
};

Residuals residuals(const Scaled& s, const Vec& x, const Vec& z, const Vec& y,
                    const Settings& cfg)
{
  const Vec Ax = s.A * x;
  const Vec Px = s.P * x;
  const Vec Aty = s.A.transpose() * y;
  const Vec Einv = s.E.cwiseInverse();
  const Vec Dinv = s.D.cwiseInverse();
  Residuals r;
  r.primal = infNorm(Einv.cwiseProduct(Ax - z));
  r.dual = infNorm(Dinv.cwiseProduct(Px + s.q + Aty)) / s.c;
  r.primal_scale = std::max(infNorm(Einv.cwiseProduct(Ax)), infNorm(Einv.cwiseProduct(z)));
  r.dual_scale = std::max({infNorm(Dinv.cwiseProduct(Px)), infNorm(Dinv.cwiseProduct(Aty)),
                           infNorm(Dinv.cwiseProduct(s.q))}) /
                 s.c;
  r.eps_primal = cfg.eps_abs + cfg.eps_rel * r.primal_scale;
  r.eps_dual = cfg.eps_abs + cfg.eps_rel * r.dual_scale;
  return r;
}

bool primalInfeasible(const Scaled& s, const Vec& dy_scaled, double eps)
{
  // Work with the unscaled certificate E * dy.
  const Vec dy = s.E.cwiseProduct(dy_scaled);
  const double norm = infNorm(dy);
  if (norm < eps)
  {
    return false;
  }
  const Vec Atdy = s.D.cwiseInverse().cwiseProduct(s.A.transpose() * dy_scaled);
  if (infNorm(Atdy) > eps * norm)
  {
    return false;
  }
  double support = 0.0;
  for (int i = 0; i < dy.size(); ++i)
  {
    const double v = std::abs(dy(i)) <= eps * norm ? 0.0 : dy(i);
    const double ui = s.u(i) >= kInfinity ? kInfinity : s.u(i) / s.E(i);
    const double li = s.l(i) <= -kInfinity ? -kInfinity : s.l(i) / s.E(i);
    if (v > 0.0)
    {
      if (ui >= kInfinity)
      {
        return false;
      }
      support += ui * v;
    }
    else if (v < 0.0)
    {
      if (li <= -kInfinity)
      {
        return false;
      }
      support += li * v;
    }
  }
  return support < -eps * norm;
}

/// Solves the reduced KKT system of the guessed active set exactly. Returns
/// false when the active set does not produce a valid KKT point.
/// Equality-constrained solve on the guessed active set. Returns false when
/// the reduced KKT system cannot be factored.
bool solveReduced(const Scaled& s, const std::vector<int>& rows, const std::vector<int>& kind,
                  Vec& x, Vec& y)
{
  const int n = static_cast<int>(s.q.size());
  const int m = static_cast<int>(s.l.size());
  const int r = static_cast<int>(rows.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(s.P.nonZeros() + 2 * s.A.nonZeros() + n + r);
  for (int k = 0; k < s.P.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(s.P, k); it; ++it)
    {
      trip.emplace_back(it.row(), it.col(), it.value());
    }
  }
  std::vector<int> local(m, -1);
  for (int k = 0; k < r; ++k)
  {
    local[rows[k]] = k;
  }
  for (int k = 0; k < s.A.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(s.A, k); it; ++it)
    {
      const int li = local[it.row()];
      if (li >= 0)
      {
        trip.emplace_back(n + li, it.col(), it.value());
        trip.emplace_back(it.col(), n + li, it.value());
      }
    }
  }
  SparseMat K(n + r, n + r);
  K.setFromTriplets(trip.begin(), trip.end());
  SparseMat Kreg = K;
  for (int i = 0; i < n; ++i)
  {
    Kreg.coeffRef(i, i) += kPolishDelta;
  }
  for (int i = 0; i < r; ++i)
  {
    Kreg.coeffRef(n + i, n + i) -= kPolishDelta;
  }
  Vec rhs(n + r);
  rhs.head(n) = -s.q;
  for (int k = 0; k < r; ++k)
  {
    rhs(n + k) = kind[k] == 1 ? s.u(rows[k]) : s.l(rows[k]);
  }

  Vec sol;
  if (n + r <= 2 * kDenseLimit)
  {
    Eigen::LDLT<Mat> ldlt{Mat(Kreg)};
    if (ldlt.info() != Eigen::Success)
    {
      return false;
    }
    sol = ldlt.solve(rhs);
    for (int it = 0; it < kPolishRefine; ++it)
    {
      sol += ldlt.solve(Vec(rhs - K * sol));
    }
  }
  else
  {
    Eigen::SimplicialLDLT<SparseMat> ldlt(Kreg);
    if (ldlt.info() != Eigen::Success)
    {
      return false;
    }
    sol = ldlt.solve(rhs);
    for (int it = 0; it < kPolishRefine; ++it)
    {
      sol += ldlt.solve(Vec(rhs - K * sol));
    }
  }
  if (!sol.allFinite())
  {
    return false;
  }
  x = sol.head(n);
  y = Vec::Zero(m);
  for (int k = 0; k < r; ++k)
  {
    y(rows[k]) = sol(n + k);
  }
  return true;
}

/// Active-set polish: guess the active rows from the ADMM iterate, solve
/// the reduced KKT system, then add violated rows and drop rows with a
/// wrong-signed multiplier for a few rounds.
bool polish(const Scaled& s, const Vec& z_admm, const Vec& y_admm, const Settings& cfg,
            Vec& x_out, Vec& y_out, Residuals& res_out)
{
  const int m = static_cast<int>(s.l.size());
  // 0 inactive, -1 lower, +1 upper, 2 equality
  std::vector<int> state(m, 0);
  for (int i = 0; i < m; ++i)
  {
    if (s.u(i) - s.l(i) < 1e-9 * std::max(1.0, std::abs(s.u(i))))
    {
      state[i] = 2;
    }
    else if (s.l(i) > -kInfinity && z_admm(i) - s.l(i) < -y_admm(i))
    {
      state[i] = -1;
    }
    else if (s.u(i) < kInfinity && s.u(i) - z_admm(i) < y_admm(i))
    {
      state[i] = 1;
    }
  }
  for (int round = 0; round < kPolishRounds; ++round)
  {
    std::vector<int> rows;
    std::vector<int> kind;
    for (int i = 0; i < m; ++i)
    {
      if (state[i] != 0)
      {
        rows.push_back(i);
        kind.push_back(state[i] == 2 ? 0 : state[i]);
      }
    }
    Vec x;
    Vec y;
    if (!solveReduced(s, rows, kind, x, y))
    {
      return false;
    }
    const Vec z = s.A * x;
    bool changed = false;
    for (std::size_t k = 0; k < rows.size(); ++k)
    {
      const int i = rows[k];
      const double yi = y(i) * s.E(i) / s.c;
      if ((kind[k] == -1 && yi > cfg.eps_abs) || (kind[k] == 1 && yi < -cfg.eps_abs))
      {
        state[i] = 0;
        changed = true;
      }
    }
    for (int i = 0; i < m; ++i)
    {
      if (state[i] != 0)
      {
        continue;
      }
      const double tol = kPolishFeasTol * std::max(1.0, std::abs(z(i)));
      if (z(i) > s.u(i) + tol)
      {
        state[i] = 1;
        changed = true;
      }
      else if (z(i) < s.l(i) - tol)
      {
        state[i] = -1;
        changed = true;
      }
    }
    if (changed)
    {
      continue;
    }
    const Vec zc = z.cwiseMax(s.l).cwiseMin(s.u);
    const Residuals res = residuals(s, x, zc, y, cfg);
    if (!res.converged())
    {
      return false;
    }
    x_out = x;
    y_out = y;
    res_out = res;
    return true;
  }
  return false;
}
}  // namespace

const char* name(Status status)
{
  switch (status)
  {
    case Status::Solved:
      return "solved";
    case Status::MaxIter:
      return "max_iter";
    case Status::Infeasible:
      return "infeasible";
    case Status::Invalid:
      return "invalid";
  }
  return "unknown";
}

std::ostream& operator<<(std::ostream& os, Status status) { return os << name(status); }

void Problem::validate() const
{
  const int n = numVariables();
  const int m = numConstraints();
  if (P.rows() != n || P.cols() != n)
  {
    throw QpError("P must be n x n with n = size(q)");
  }
  if (A.rows() != m || A.cols() != n || u.size() != m)
  {
    throw QpError("A, l, u shapes are inconsistent");
  }
  if (!q.allFinite() || !isFinite(P) || !isFinite(A) || l.hasNaN() || u.hasNaN())
  {
    throw QpError("problem data contains NaN or infinite entries");
  }
  for (int i = 0; i < m; ++i)
  {
    if (l(i) > u(i))
    {
      throw QpError("l > u in constraint row " + std::to_string(i));
    }
  }
  const SparseMat asym = SparseMat(P.transpose()) - P;
  for (int k = 0; k < asym.outerSize(); ++k)
  {
    for (SparseMat::InnerIterator it(asym, k); it; ++it)
    {
      if (std::abs(it.value()) > 1e-12 * std::max(1.0, std::abs(P.coeff(it.row(), it.col()))))
      {
        throw QpError("P is not symmetric");
      }
    }
  }
}

Solution solve(const Problem& problem, const Settings& cfg,
               const std::optional<WarmStart>& warm_start)
{
  problem.validate();
  const int n = problem.numVariables();
  const int m = problem.numConstraints();

  if (!isPositiveSemidefinite(problem.P, std::max(cfg.sigma, 1e-7)))
  {
    throw QpError("P is not positive semidefinite");
  }

  const Scaled s = equilibrate(problem, cfg.scaling_iterations);

  double rho_base = cfg.rho;
  Vec rho(m);
  const auto setRho = [&]() {
    for (int i = 0; i < m; ++i)
    {
      if (s.l(i) <= -kInfinity && s.u(i) >= kInfinity)
      {
        rho(i) = kRhoMin;
      }
      else if (s.u(i) - s.l(i) < 1e-4)
      {
        rho(i) = kRhoEqualityScale * rho_base;
      }
      else
      {
        rho(i) = rho_base;
      }
    }
  };
  SpdSolver kkt;
  const auto factor = [&]() {
    SparseMat K = s.P + SparseMat(s.A.transpose() * rho.asDiagonal() * s.A);
    for (int i = 0; i < n; ++i)
    {
      K.coeffRef(i, i) += cfg.sigma;
    }
    if (!kkt.factor(K))
    {
      throw QpError("KKT factorization failed; P is not positive semidefinite");
    }
  };
  setRho();
  factor();

  Vec x = Vec::Zero(n);
  Vec y = Vec::Zero(m);
  if (warm_start)
  {
    if (warm_start->x.size() == n)
    {
      x = s.D.cwiseInverse().cwiseProduct(warm_start->x);
    }
    if (warm_start->y.size() == m)
    {
      y = s.c * s.E.cwiseInverse().cwiseProduct(warm_start->y);
    }
  }
  Vec z = (s.A * x).cwiseMax(s.l).cwiseMin(s.u);

  Solution out;
  out.status = Status::MaxIter;
  Residuals res;
  Vec y_prev = y;
  int iter = 0;
  const SparseMat At = s.A.transpose();
  for (iter = 1; iter <= cfg.max_iter; ++iter)
  {
    y_prev = y;
    const Vec rhs = cfg.sigma * x - s.q + At * (rho.cwiseProduct(z) - y);
    const Vec x_tilde = kkt.solve(rhs);
    const Vec z_tilde = s.A * x_tilde;
    x = cfg.alpha * x_tilde + (1.0 - cfg.alpha) * x;
    const Vec z_relax = cfg.alpha * z_tilde + (1.0 - cfg.alpha) * z;
    const Vec z_next =
        (z_relax + y.cwiseQuotient(rho)).cwiseMax(s.l).cwiseMin(s.u);
    y += rho.cwiseProduct(z_relax - z_next);
    z = z_next;

    const bool adapt = cfg.adaptive_rho && iter % std::max(1, cfg.adaptive_rho_interval) == 0;
    if (adapt || iter % std::max(1, cfg.check_interval) == 0 || iter == cfg.max_iter)
    {
      res = residuals(s, x, z, y, cfg);
      if (res.converged())
      {
        out.status = Status::Solved;
        break;
      }
      if (primalInfeasible(s, y - y_prev, cfg.eps_infeasible))
      {
        out.status = Status::Infeasible;
        break;
      }
      if (adapt)
      {
        const double p = res.primal / std::max(res.primal_scale, 1e-30);
        const double d = res.dual / std::max(res.dual_scale, 1e-30);
        const double ratio = std::sqrt(p / std::max(d, 1e-30));
        const double next = std::clamp(rho_base * ratio, kRhoMin, 1.0 / kRhoMin);
        if (next > cfg.adaptive_rho_tolerance * rho_base ||
            next * cfg.adaptive_rho_tolerance < rho_base)
        {
          rho_base = next;
          setRho();
          factor();
        }
      }
    }
  }
  out.iterations = std::min(iter, cfg.max_iter);

  if (out.status != Status::Infeasible && cfg.polish)
  {
    Vec xp, yp;
    Residuals rp;
    if (polish(s, z, y, cfg, xp, yp, rp))
    {
      x = std::move(xp);
      y = std::move(yp);
      res = rp;
      out.status = Status::Solved;
      out.polished = true;
    }
  }

  out.x = s.D.cwiseProduct(x);
  out.y = s.E.cwiseProduct(y) / s.c;
  out.primal_residual = res.primal;
  out.dual_residual = res.dual;
  if (out.status == Status::Infeasible)
  {
    out.message = "primal infeasibility certificate found";
  }
  return out;
}

std::vector<Solution> solveBatch(std::span<const Problem> problems,
                                 const Settings& settings)
{
  std::vector<Solution> out(problems.size());
  parallelFor(problems.size(), [&](std::size_t i) {
    try
    {
      out[i] = solve(problems[i], settings);
    }
    catch (const std::exception& e)
    {
      out[i].status = Status::Invalid;
      out[i].message = e.what();
    }
  });
  return out;
}

SparseMat toSparse(const Mat& dense, double drop_tol)
{
  std::vector<Eigen::Triplet<double>> trip;
  for (int j = 0; j < dense.cols(); ++j)
  {
    for (int i = 0; i < dense.rows(); ++i)
    {
      if (std::abs(dense(i, j)) > drop_tol)
      {
        trip.emplace_back(i, j, dense(i, j));
      }
    }
  }
  SparseMat out(dense.rows(), dense.cols());
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}
}  // namespace bezgraph::qp
