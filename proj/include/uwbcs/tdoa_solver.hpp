#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uwbcs/common.hpp"

namespace uwbcs {

/// Anchor coordinates in millimetres, one column per anchor; 2 or 3 rows.
struct AnchorSet {
  Eigen::MatrixXd positions;
  Index reference = 0;  // the "first" station of the range differences

  Index dim() const { return positions.rows(); }
  Index count() const { return positions.cols(); }
  Eigen::VectorXd centroid() const { return positions.rowwise().mean(); }
  void validate() const;

  /// Indices of the non-reference anchors, in ascending order.
  std::vector<Index> others() const;
};

/// Range travelled in time `tau` at speed `c` (mm/s): c * tau.
constexpr double range_from_time(double tau, double c = kSpeedOfLightMmPerS) { return c * tau; }
constexpr double time_from_range(double range, double c = kSpeedOfLightMmPerS) { return range / c; }

/// D_ri = ||a_ref - tag|| - ||a_i - tag||.
template <typename DerivedA, typename DerivedT>
double range_difference(const Eigen::MatrixBase<DerivedA>& anchors, const Eigen::MatrixBase<DerivedT>& tag,
                        Index reference, Index i) {
  const double d_ref = (anchors.col(reference) - tag).norm();
  const double d_i = (anchors.col(i) - tag).norm();
  if (d_ref == 0.0 || d_i == 0.0) throw InvalidArgument("range_difference: tag coincides with an anchor");
  return d_ref - d_i;
}

inline double range_difference(const AnchorSet& anchors, const Eigen::Ref<const Eigen::VectorXd>& tag, Index i) {
  return range_difference(anchors.positions, tag, anchors.reference, i);
}

/// Linearization rows alpha_i = (a_ref - p)/D_ref - (a_i - p)/D_i, one per
/// non-reference anchor. Each row equals the negated gradient of
/// range_difference(.., i) at p.
Eigen::MatrixXd tdoa_jacobian(const AnchorSet& anchors, const Eigen::Ref<const Eigen::VectorXd>& guess);

struct TdoaProblem {
  AnchorSet anchors;
  Eigen::VectorXd tau;  // tau_i = t_ref - t_i (s), one per non-reference anchor, ascending anchor order
  double c = kSpeedOfLightMmPerS;

  void validate() const;
};

/// Forward model: arrival-time differences for a known tag.
Eigen::VectorXd simulate_tdoa(const AnchorSet& anchors, const Eigen::Ref<const Eigen::VectorXd>& tag,
                              double c = kSpeedOfLightMmPerS);

struct TdoaOptions {
  double err_threshold = 1e-6;  // mm
  int max_iters = 100;
  int max_halvings = 10;
  // Optional axis-aligned region (mm) the tag is known to lie in. With
  // exactly dim + 1 anchors the range differences may admit two positions;
  // the one inside the region is preferred, then the one nearest the start.
  Eigen::VectorXd region_lo, region_hi;
};

struct PositionEstimate {
  Eigen::VectorXd position;
  int iterations = 0;
  double final_err = 0.0;  // norm of the last update (mm)
  bool converged = false;
  std::vector<double> err_trace;
  std::string diagnostics;
};

/// Closed-form positions reproducing the range differences exactly, for
/// dim + 1 anchors (the reference range r solves a quadratic). Returns zero,
/// one or two points; empty for other anchor counts or degenerate geometry.
std::vector<Eigen::VectorXd> tdoa_candidates(const TdoaProblem& problem);

/// Iterative linearized least squares (Gauss-Newton with step halving).
/// Throws NumericalError when the linearized system is rank deficient.
PositionEstimate solve_tdoa(const TdoaProblem& problem, std::optional<Eigen::VectorXd> initial_guess = std::nullopt,
                            const TdoaOptions& options = {});

}  // namespace uwbcs
