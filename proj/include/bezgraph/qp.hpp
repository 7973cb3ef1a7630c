#pragma once

#include <bezgraph/types.hpp>

#include <Eigen/SparseCore>

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bezgraph::qp
{
using SparseMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Bounds at or beyond this magnitude are treated as infinite.
inline constexpr double kInfinity = 1e20;

class QpError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// minimize 1/2 x'Px + q'x  subject to  l <= A x <= u
struct Problem
{
  SparseMat P;
  Vec q;
  SparseMat A;
  Vec l;
  Vec u;

  int numVariables() const { return static_cast<int>(q.size()); }
  int numConstraints() const { return static_cast<int>(l.size()); }
  /// Throws QpError on shape mismatch, asymmetric P, l > u or NaN entries.
  void validate() const;
};

enum class Status
{
  Solved,
  MaxIter,
  Infeasible,
  Invalid,
};

const char* name(Status status);
std::ostream& operator<<(std::ostream& os, Status status);

struct Settings
{
  int max_iter = 4000;
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  double eps_infeasible = 1e-7;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int scaling_iterations = 10;
  int check_interval = 1;
  /// Rescale rho from the primal/dual residual balance every interval
  /// iterations when it moves by more than the tolerance factor.
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  double adaptive_rho_tolerance = 5.0;
  bool polish = true;
};

struct WarmStart
{
  Vec x;
  Vec y;
};

struct Solution
{
  Vec x;
  Vec y;
  Status status = Status::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
  std::string message;
};

/// ADMM operator splitting with adaptive step size and over-relaxation, Ruiz
/// equilibration and an optional active-set polish. Deterministic for fixed
/// inputs. Throws QpError for malformed problems or a P that is not positive
/// semidefinite.
Solution solve(const Problem& problem, const Settings& settings = {},
               const std::optional<WarmStart>& warm_start = std::nullopt);

/// Element-wise solve over a batch, data-parallel. A malformed instance is
/// reported with Status::Invalid and never aborts the batch.
std::vector<Solution> solveBatch(std::span<const Problem> problems,
                                 const Settings& settings = {});

/// Dense helper used by small problem builders.
SparseMat toSparse(const Mat& dense, double drop_tol = 0.0);
}  // namespace bezgraph::qp
