#include "uwbcs/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <Eigen/LU>

#include "uwbcs/arrival_detection.hpp"
#include "uwbcs/sequential_sampler.hpp"
#include "uwbcs/sparse_recovery.hpp"
#include "uwbcs/tdoa_solver.hpp"

namespace uwbcs {

namespace {

using Rng = std::mt19937_64;

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<>(std::log(lo), std::log(hi))(rng));
}

Eigen::MatrixXd gaussian_matrix(Rng& rng, Index rows, Index cols) {
  std::normal_distribution<> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m / std::sqrt(static_cast<double>(rows));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult verdict(std::string name, bool passed, std::string detail) {
  return CheckResult{std::move(name), passed, std::move(detail)};
}

// Golden-section maximization of f over [a, b].
double golden_max(const std::function<double(double)>& f, double a, double b) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-13 * std::max(1.0, std::abs(a)); ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// Minimizer of 0.5 ||y - Phi x||^2 + lambda ||x||_1 by brute force: for each
// support S and sign pattern s, x_S = (Phi_S' Phi_S)^-1 (Phi_S' y - lambda s)
// is optimal iff sign(x_S) = s and |Phi_j' r| <= lambda off the support.
Eigen::VectorXd lasso_by_enumeration(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double lambda) {
  const Index n = phi.cols();
  const Eigen::VectorXd corr0 = phi.transpose() * y;
  if (corr0.cwiseAbs().maxCoeff() <= lambda) return Eigen::VectorXd::Zero(n);
  for (Index k = 1; k <= phi.rows(); ++k) {
    std::vector<bool> mask(static_cast<std::size_t>(n), false);
    std::fill(mask.begin(), mask.begin() + k, true);
    do {
      std::vector<Index> support;
      for (Index j = 0; j < n; ++j)
        if (mask[static_cast<std::size_t>(j)]) support.push_back(j);
      Eigen::MatrixXd sub(phi.rows(), k);
      for (Index i = 0; i < k; ++i) sub.col(i) = phi.col(support[static_cast<std::size_t>(i)]);
      const Eigen::MatrixXd gram = sub.transpose() * sub;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd rhs = sub.transpose() * y;
      for (unsigned signs = 0; signs < (1u << k); ++signs) {
        Eigen::VectorXd s(k);
        for (Index i = 0; i < k; ++i) s[i] = (signs >> i) & 1u ? -1.0 : 1.0;
        const Eigen::VectorXd xs = lu.solve(rhs - lambda * s);
        if (((xs.array() * s.array()) <= 0.0).any()) continue;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
        for (Index i = 0; i < k; ++i) x[support[static_cast<std::size_t>(i)]] = xs[i];
        const Eigen::VectorXd corr = phi.transpose() * (y - phi * x);
        if (corr.cwiseAbs().maxCoeff() <= lambda * (1.0 + 1e-9)) return x;
      }
    } while (std::prev_permutation(mask.begin(), mask.end()));
  }
  throw NumericalError("lasso_by_enumeration: no support satisfies the optimality conditions");
}

AnchorSet room_anchors() {
  AnchorSet a;
  a.positions.resize(3, 4);
  a.positions << 0, 4000, 4410, 0,
                 0, 0, 4435, 4545,
                 170, 1855, 2860, 3260;
  return a;
}

}  // namespace

CheckResult check_alpha_closed_form(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 100;
  Rng rng(options.seed);
  double worst = 0.0;
  int interior_fail = 0;
  for (int k = 0; k < cases; ++k) {
    const double g = log_uniform(rng, 1e-2, 1e2);
    const double h = std::sqrt(g * (1.0 + log_uniform(rng, 1e-2, 1e3)));
    double closed = optimal_alpha(g, h);
    if (options.fault) closed *= 1.0 + 1e-4;

    // Maximize over u = log(alpha): coarse grid, then golden section
    // between the neighbours of the best grid point.
    auto l = [&](double u) { return likelihood_term(std::exp(u), g, h); };
    const int points = 4001;
    const double lo = -40.0, hi = 40.0, step = (hi - lo) / (points - 1);
    int best = 0;
    double best_val = -kInfinity;
    for (int i = 0; i < points; ++i) {
      const double v = l(lo + i * step);
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    if (best == 0 || best == points - 1) {
      ++interior_fail;
      continue;
    }
    const double u = golden_max(l, lo + (best - 1) * step, lo + (best + 1) * step);
    worst = std::max(worst, std::abs(std::exp(u) - closed) / closed);
  }

  // h^2 <= g: the term increases towards l(inf) = 0 along the whole grid.
  int boundary_fail = 0;
  for (int k = 0; k < cases; ++k) {
    const double g = log_uniform(rng, 1e-2, 1e2);
    const double h = std::sqrt(g * std::uniform_real_distribution<>(0.0, 1.0)(rng));
    if (!std::isinf(optimal_alpha(g, h))) ++boundary_fail;
    double prev = -kInfinity;
    for (int i = 0; i <= 400; ++i) {
      const double v = likelihood_term(std::exp(-20.0 + 0.1 * i), g, h);
      if (v < prev || v > 0.0) {
        ++boundary_fail;
        break;
      }
      prev = v;
    }
  }
  const bool ok = worst <= 1e-6 && interior_fail == 0 && boundary_fail == 0;
  return verdict("alpha_closed_form", ok,
                 "max rel diff " + fmt(worst) + " over " + std::to_string(cases) + " cases; " +
                     std::to_string(interior_fail) + " without interior max; " + std::to_string(boundary_fail) +
                     " boundary violations");
}

CheckResult check_jacobian(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 50;
  Rng rng(options.seed);
  const AnchorSet anchors = room_anchors();
  std::uniform_real_distribution<> x(0, 5000), z(0, 4000);
  const double h = 1e-2;
  double worst = 0.0;
  for (int k = 0; k < cases; ++k) {
    const Eigen::Vector3d p(x(rng), x(rng), z(rng));
    Eigen::MatrixXd jac = tdoa_jacobian(anchors, p);
    if (options.fault) jac = -jac;
    const auto others = anchors.others();
    for (std::size_t r = 0; r < others.size(); ++r) {
      Eigen::Vector3d grad;
      for (Index d = 0; d < 3; ++d) {
        Eigen::Vector3d plus = p, minus = p;
        plus[d] += h;
        minus[d] -= h;
        grad[d] = (range_difference(anchors, plus, others[r]) - range_difference(anchors, minus, others[r])) / (2 * h);
      }
      // Rows are the negated gradient.
      const Eigen::Vector3d row = jac.row(static_cast<Index>(r)).transpose();
      worst = std::max(worst, (row + grad).norm() / grad.norm());
    }
  }
  return verdict("jacobian_fd", worst <= 1e-6,
                 "max rel diff " + fmt(worst) + " over " + std::to_string(cases) + " guesses");
}

CheckResult check_bcs_consistency(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 100;
  Rng rng(options.seed);
  std::normal_distribution<> normal;
  double worst_identity = 0.0, worst_drop = 0.0;
  for (int k = 0; k < cases; ++k) {
    const Index n = 60 + static_cast<Index>(rng() % 60);
    const Index m = 20 + static_cast<Index>(rng() % 20);
    const Eigen::MatrixXd phi = gaussian_matrix(rng, m, n);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    const int nnz = 2 + static_cast<int>(rng() % 6);
    for (int j = 0; j < nnz; ++j) x[static_cast<Index>(rng() % n)] = normal(rng);
    const double beta = 0.01 + 0.1 * std::uniform_real_distribution<>(0, 1)(rng);
    Eigen::VectorXd y = phi * x;
    for (Index i = 0; i < m; ++i) y[i] += beta * normal(rng);

    const BcsOutcome out = bcs(y, phi, beta);
    const auto& st = out.state;
    const Index a = static_cast<Index>(st.active_set.size());
    Eigen::MatrixXd pa(m, a);
    Eigen::VectorXd alpha(a);
    for (Index i = 0; i < a; ++i) {
      pa.col(i) = phi.col(st.active_set[static_cast<std::size_t>(i)]);
      alpha[i] = st.alpha[st.active_set[static_cast<std::size_t>(i)]];
    }
    Eigen::MatrixXd sigma = st.sigma_cov;
    if (options.fault) sigma(0, 0) *= 1.0 + 1e-6;
    const Eigen::MatrixXd precision = pa.transpose() * pa / (beta * beta) + Eigen::MatrixXd(alpha.asDiagonal());
    worst_identity = std::max(worst_identity, (precision * sigma - Eigen::MatrixXd::Identity(a, a)).cwiseAbs().maxCoeff());
    for (std::size_t i = 1; i < out.likelihood_trace.size(); ++i) {
      const double drop = out.likelihood_trace[i - 1] - out.likelihood_trace[i];
      // Relative to the trace scale; allows last-bit rounding only.
      worst_drop = std::max(worst_drop, drop / std::max(1.0, std::abs(out.likelihood_trace[i - 1])));
    }
  }
  const bool ok = worst_identity <= 1e-8 && worst_drop <= 1e-12;
  return verdict("bcs_consistency", ok,
                 "max |(A + Phi'Phi/beta^2) Sigma - I| " + fmt(worst_identity) + ", max relative trace drop " +
                     fmt(worst_drop) + " over " + std::to_string(cases) + " problems");
}

CheckResult check_small_square(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 20;
  Rng rng(options.seed);
  std::normal_distribution<> normal;
  double worst[4] = {0, 0, 0, 0};
  for (int k = 0; k < cases; ++k) {
    const Index n = 4 + static_cast<Index>(rng() % 9);
    const Eigen::MatrixXd phi = gaussian_matrix(rng, n, n);

    // Sample-domain solvers: dense x, y = Phi x.
    Eigen::VectorXd x(n);
    for (Index i = 0; i < n; ++i) x[i] = normal(rng);
    const Eigen::VectorXd y = phi * x;
    const Eigen::VectorXd direct = phi.partialPivLu().solve(y);
    auto rel = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& ref) { return (v - ref).norm() / ref.norm(); };

    const double tiny = 1e-7 * y.norm() / std::sqrt(static_cast<double>(n));
    OmpStop stop;
    stop.residual_tol = 1e-12 * y.norm();
    Eigen::VectorXd got_omp = omp(y, phi, stop).s_hat;
    if (options.fault) got_omp[0] += 1e-3 * got_omp.norm();
    worst[0] = std::max(worst[0], rel(got_omp, direct));
    BpOptions bp;
    bp.lambda = 1e-10 * (phi.transpose() * y).cwiseAbs().maxCoeff();
    bp.tol = 1e-15;
    bp.max_iters = 200000;
    worst[1] = std::max(worst[1], rel(bp_denoise(y, phi, bp).s_hat, direct));
    // Noiseless: let the fixed point decide, not the relative-gain stop.
    BcsOptions exact;
    exact.gain_tol = 0.0;
    worst[2] = std::max(worst[2], rel(bcs(y, phi, tiny, exact).result.s_hat, direct));

    // Template solver: the frame is a combination of pulse shifts.
    PulseSpec pulse;
    pulse.sigma = 10e-12;
    const TemplateDictionary dict = TemplateDictionary::make(n, 10e-12, pulse);
    const Eigen::VectorXd frame = dict.columns * x;
    const Eigen::VectorXd yf = phi * frame;
    const Eigen::VectorXd direct_frame = phi.partialPivLu().solve(yf);
    const double tiny_f = 1e-7 * yf.norm() / std::sqrt(static_cast<double>(n));
    CsUwbOptions cs_opts;
    cs_opts.bcs = exact;
    const auto cs = cs_uwb(std::span(&yf, 1), std::span(&phi, 1), dict, tiny_f, cs_opts);
    worst[3] = std::max(worst[3], rel(cs.stations.front().s_hat, direct_frame));
  }
  const double max_err = *std::max_element(worst, worst + 4);
  return verdict("small_square", max_err <= 1e-6,
                 "max rel diff omp " + fmt(worst[0]) + ", bp " + fmt(worst[1]) + ", bcs " + fmt(worst[2]) +
                     ", cs_uwb " + fmt(worst[3]) + " over " + std::to_string(cases) + " systems");
}

CheckResult check_small_sparse(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 20;
  Rng rng(options.seed);
  std::normal_distribution<> normal;
  double worst_omp = 0.0, worst_bp = 0.0;
  for (int k = 0; k < cases; ++k) {
    const Index n = 8 + static_cast<Index>(rng() % 5);
    const Index m = n / 2;
    const Eigen::MatrixXd phi = gaussian_matrix(rng, m, n);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    x[static_cast<Index>(rng() % n)] = normal(rng) + (rng() % 2 ? 1.0 : -1.0);
    const Eigen::VectorXd y = phi * x;

    // OMP oracle: best single-atom least-squares fit.
    Eigen::VectorXd omp_oracle = Eigen::VectorXd::Zero(n);
    double best_res = kInfinity;
    for (Index j = 0; j < n; ++j) {
      const double c = phi.col(j).dot(y) / phi.col(j).squaredNorm();
      const double res = (y - c * phi.col(j)).norm();
      if (res < best_res) {
        best_res = res;
        omp_oracle.setZero();
        omp_oracle[j] = c;
      }
    }
    // BP oracle: the lasso solution at the solver's own lambda, found by
    // enumerating supports and sign patterns and keeping the one that
    // satisfies the optimality conditions.
    const double lambda = default_bp_lambda(y, phi);
    const Eigen::VectorXd bp_oracle = lasso_by_enumeration(phi, y, lambda);

    OmpStop stop;
    stop.max_nonzeros = 1;
    Eigen::VectorXd got_omp = omp(y, phi, stop).coeffs;
    if (options.fault) got_omp *= 1.0 + 1e-3;
    worst_omp = std::max(worst_omp, (got_omp - omp_oracle).norm() / omp_oracle.norm());
    BpOptions bp;
    bp.lambda = lambda;
    bp.tol = 1e-15;
    bp.max_iters = 200000;
    worst_bp = std::max(worst_bp, (bp_denoise(y, phi, bp).coeffs - bp_oracle).norm() / bp_oracle.norm());
  }
  return verdict("small_sparse", std::max(worst_omp, worst_bp) <= 1e-6,
                 "max rel diff omp " + fmt(worst_omp) + ", bp " + fmt(worst_bp) + " over " + std::to_string(cases) +
                     " systems");
}

CheckResult check_sequential_bias(const CheckOptions& options) {
  const int cases = options.cases > 0 ? options.cases : 20;
  Rng rng(options.seed);
  PulseSpec pulse;
  double worst_bins = 0.0;
  for (int k = 0; k < cases; ++k) {
    const double scale_error = std::uniform_real_distribution<>(-0.05, 0.05)(rng);
    const SequentialConfig cfg = SequentialConfig::with_scale_error(1e6, 1e6 / (1.0 + 1e-5), scale_error);
    const ExtensionScale scale = extension_scale(cfg);
    // Tag distance 0.3 m .. 2 m; the record must still hold the stretched peak.
    const double delay = std::uniform_real_distribution<>(1e-9, 6.5e-9)(rng);
    ChannelRealization ch;
    ch.paths.push_back(PropagationPath{delay, 1.0});
    const SignalFrame record = acquire_sequential(ch, pulse, cfg, kNoiseless, 0);
    double estimate = estimate_arrival_sequential(record, scale.nominal);
    if (options.fault) estimate = estimate * scale.nominal / scale.actual;
    const double expected = delay * scale.actual / scale.nominal;
    worst_bins = std::max(worst_bins, std::abs(estimate - expected) / cfg.nominal_step());
  }
  return verdict("sequential_bias", worst_bins <= 1.0,
                 "max |estimate - true * K_r / K| = " + fmt(worst_bins) + " bins over " + std::to_string(cases) +
                     " draws");
}

std::vector<std::string> selftest_names() {
  return {"alpha_closed_form", "jacobian_fd", "bcs_consistency", "small_square", "small_sparse", "sequential_bias"};
}

CheckResult run_check(const std::string& name, const CheckOptions& options) {
  if (name == "alpha_closed_form") return check_alpha_closed_form(options);
  if (name == "jacobian_fd") return check_jacobian(options);
  if (name == "bcs_consistency") return check_bcs_consistency(options);
  if (name == "small_square") return check_small_square(options);
  if (name == "small_sparse") return check_small_sparse(options);
  if (name == "sequential_bias") return check_sequential_bias(options);
  throw InvalidArgument("unknown check '" + name + "'");
}

}  // namespace uwbcs
