#include "uwbcs/tdoa_solver.hpp"

#include <cmath>
#include <utility>

#include <Eigen/LU>
#include <Eigen/QR>

namespace uwbcs {

void AnchorSet::validate() const {
  require(dim() == 2 || dim() == 3, "anchors must be 2D or 3D");
  require(count() >= dim() + 1, "need at least " + std::to_string(dim() + 1) + " anchors for " +
                                    std::to_string(dim()) + "D positioning, got " + std::to_string(count()));
  require(reference >= 0 && reference < count(), "reference anchor index out of range");
  require(positions.allFinite(), "anchor coordinates must be finite");
}

std::vector<Index> AnchorSet::others() const {
  std::vector<Index> out;
  for (Index i = 0; i < count(); ++i)
    if (i != reference) out.push_back(i);
  return out;
}

Eigen::MatrixXd tdoa_jacobian(const AnchorSet& anchors, const Eigen::Ref<const Eigen::VectorXd>& guess) {
  require(guess.size() == anchors.dim(), "tdoa_jacobian: guess dimension mismatch");
  const Eigen::VectorXd to_ref = anchors.positions.col(anchors.reference) - guess;
  const double d_ref = to_ref.norm();
  if (d_ref == 0.0) throw InvalidArgument("tdoa_jacobian: guess coincides with the reference anchor");
  const auto others = anchors.others();
  Eigen::MatrixXd jac(static_cast<Index>(others.size()), anchors.dim());
  for (std::size_t r = 0; r < others.size(); ++r) {
    const Eigen::VectorXd to_i = anchors.positions.col(others[r]) - guess;
    const double d_i = to_i.norm();
    if (d_i == 0.0) throw InvalidArgument("tdoa_jacobian: guess coincides with an anchor");
    jac.row(static_cast<Index>(r)) = (to_ref / d_ref - to_i / d_i).transpose();
  }
  return jac;
}

void TdoaProblem::validate() const {
  anchors.validate();
  require(tau.size() == anchors.count() - 1, "tdoa: need one time difference per non-reference anchor");
  require(tau.allFinite(), "tdoa: time differences must be finite");
  require(c > 0.0, "tdoa: propagation speed must be positive");
  double span = 0.0;
  for (Index i = 0; i < anchors.count(); ++i)
    for (Index j = i + 1; j < anchors.count(); ++j)
      span = std::max(span, (anchors.positions.col(i) - anchors.positions.col(j)).norm());
  // Slack covers noisy measurements near the hyperbola vertices.
  require((tau.cwiseAbs() * c).maxCoeff() <= 1.5 * span + 1.0,
          "tdoa: a range difference exceeds the anchor baseline");
}

Eigen::VectorXd simulate_tdoa(const AnchorSet& anchors, const Eigen::Ref<const Eigen::VectorXd>& tag, double c) {
  const auto others = anchors.others();
  Eigen::VectorXd tau(static_cast<Index>(others.size()));
  for (std::size_t r = 0; r < others.size(); ++r)
    tau[static_cast<Index>(r)] = time_from_range(range_difference(anchors, tag, others[r]), c);
  return tau;
}

namespace {

Eigen::VectorXd residual(const TdoaProblem& p, const Eigen::VectorXd& pos) {
  const auto others = p.anchors.others();
  Eigen::VectorXd r(static_cast<Index>(others.size()));
  for (std::size_t k = 0; k < others.size(); ++k)
    r[static_cast<Index>(k)] =
        range_from_time(p.tau[static_cast<Index>(k)], p.c) - range_difference(p.anchors, pos, others[k]);
  return r;
}

}  // namespace

std::vector<Eigen::VectorXd> tdoa_candidates(const TdoaProblem& problem) {
  problem.validate();
  const AnchorSet& an = problem.anchors;
  const Index dim = an.dim();
  std::vector<Eigen::VectorXd> out;
  if (an.count() != dim + 1) return out;

  const Eigen::VectorXd a_ref = an.positions.col(an.reference);
  const auto others = an.others();
  Eigen::MatrixXd m(dim, dim);
  Eigen::VectorXd b0(dim), b1(dim), d(dim);
  for (Index k = 0; k < dim; ++k) {
    const Eigen::VectorXd a_i = an.positions.col(others[static_cast<std::size_t>(k)]);
    d[k] = range_from_time(problem.tau[k], problem.c);
    m.row(k) = 2.0 * (a_ref - a_i).transpose();
    b0[k] = d[k] * d[k] - a_i.squaredNorm() + a_ref.squaredNorm();
    b1[k] = -2.0 * d[k];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) return out;
  // p = u + v r, with r the range to the reference anchor.
  const Eigen::VectorXd u = lu.solve(b0);
  const Eigen::VectorXd v = lu.solve(b1);
  const Eigen::VectorXd w = u - a_ref;
  const double qa = v.squaredNorm() - 1.0;
  const double qb = 2.0 * w.dot(v);
  const double qc = w.squaredNorm();

  std::vector<double> roots;
  if (std::abs(qa) < 1e-12) {
    if (qb != 0.0) roots.push_back(-qc / qb);
  } else {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc < 0.0) return out;
    const double sq = std::sqrt(disc);
    // numerically stable pair
    const double q = -0.5 * (qb + std::copysign(sq, qb));
    roots.push_back(q / qa);
    if (q != 0.0) roots.push_back(qc / q);
  }
  const double scale = 1e-9 * std::max(1.0, an.positions.cwiseAbs().maxCoeff());
  for (double r : roots) {
    if (!(r >= -scale)) continue;
    if (((r - d.array()) < -scale).any()) continue;
    Eigen::VectorXd p = u + v * r;
    bool dup = false;
    for (const auto& o : out) dup = dup || (o - p).norm() <= 1e3 * scale;
    if (!dup) out.push_back(std::move(p));
  }
  return out;
}

namespace {

PositionEstimate gauss_newton(const TdoaProblem& problem, Eigen::VectorXd start, const TdoaOptions& options) {
  PositionEstimate est;
  est.position = std::move(start);

  Eigen::VectorXd r = residual(problem, est.position);
  double r_norm = r.norm();
  int growing = 0;
  double prev_err = kInfinity;

  for (int it = 1; it <= options.max_iters; ++it) {
    const Eigen::MatrixXd jac = tdoa_jacobian(problem.anchors, est.position);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
    if (qr.rank() < problem.anchors.dim())
      throw NumericalError("tdoa: linearized system is rank deficient at iteration " + std::to_string(it));
    // The rows are the negated gradient, so the Gauss-Newton step solves J d = -r.
    Eigen::VectorXd step = qr.solve(-r);

    Eigen::VectorXd candidate = est.position + step;
    Eigen::VectorXd r_new = residual(problem, candidate);
    for (int h = 0; h < options.max_halvings && r_new.norm() > r_norm; ++h) {
      step *= 0.5;
      candidate = est.position + step;
      r_new = residual(problem, candidate);
    }

    const double err = step.norm();
    est.position = candidate;
    r = r_new;
    r_norm = r.norm();
    est.iterations = it;
    est.final_err = err;
    est.err_trace.push_back(err);

    if (err < options.err_threshold) {
      est.converged = true;
      return est;
    }
    growing = err > prev_err ? growing + 1 : 0;
    prev_err = err;
    if (growing >= 5) {
      est.diagnostics = "diverging: update norm grew for 5 consecutive iterations";
      return est;
    }
  }
  est.diagnostics = "iteration cap reached with update norm " + std::to_string(est.final_err) + " mm";
  return est;
}

bool inside(const Eigen::VectorXd& p, const TdoaOptions& o) {
  if (o.region_lo.size() != p.size() || o.region_hi.size() != p.size()) return true;
  return (p.array() >= o.region_lo.array()).all() && (p.array() <= o.region_hi.array()).all();
}

}  // namespace

PositionEstimate solve_tdoa(const TdoaProblem& problem, std::optional<Eigen::VectorXd> initial_guess,
                            const TdoaOptions& options) {
  problem.validate();
  require(options.err_threshold > 0.0 && options.max_iters >= 1, "tdoa: invalid solver options");
  const Index dim = problem.anchors.dim();
  require(options.region_lo.size() == options.region_hi.size() &&
              (options.region_lo.size() == 0 || options.region_lo.size() == dim),
          "tdoa: region bounds must both be empty or match the anchor dimension");

  const Eigen::VectorXd start = initial_guess.value_or(problem.anchors.centroid());
  require(start.size() == dim, "tdoa: initial guess dimension mismatch");
  // Collinear (2D) or coplanar (3D) anchors leave a direction unobservable.
  const Eigen::MatrixXd spread = problem.anchors.positions.colwise() - problem.anchors.centroid();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> geometry(spread);
  geometry.setThreshold(1e-9);
  if (geometry.rank() < dim)
    throw NumericalError(dim == 2 ? "tdoa: anchors are collinear" : "tdoa: anchors are coplanar");
  PositionEstimate est = gauss_newton(problem, start, options);
  if (!est.converged || problem.anchors.count() != dim + 1) return est;

  const auto roots = tdoa_candidates(problem);
  if (roots.size() < 2) return est;
  // Two exact solutions: rank by (outside region, distance from start).
  auto rank = [&](const Eigen::VectorXd& p) { return std::pair{!inside(p, options), (p - start).norm()}; };
  const Eigen::VectorXd* best = &est.position;
  for (const auto& p : roots)
    if ((p - est.position).norm() > 1e-3 && rank(p) < rank(*best)) best = &p;
  if (best == &est.position) {
    est.diagnostics = "ambiguous geometry: a mirror solution also fits";
    return est;
  }
  PositionEstimate refined = gauss_newton(problem, *best, options);
  refined.iterations += est.iterations;
  refined.err_trace.insert(refined.err_trace.begin(), est.err_trace.begin(), est.err_trace.end());
  refined.diagnostics = "ambiguous geometry: switched to the mirror solution";
  return refined;
}

}  // namespace uwbcs
