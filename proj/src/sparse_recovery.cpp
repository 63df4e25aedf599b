#include "uwbcs/sparse_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace uwbcs {

// ---------------------------------------------------------------- OMP

ReconResult omp(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                const OmpStop& stop) {
  require(phi.rows() == y.size(), "omp: measurement length does not match the matrix");
  const Index m = phi.rows();
  const Index n = phi.cols();

  ReconResult out;
  out.coeffs = Eigen::VectorXd::Zero(n);
  out.s_hat = out.coeffs;
  const double y_norm = y.norm();
  if (y_norm == 0.0) return out;

  const Eigen::VectorXd col_norms = phi.colwise().norm().transpose();
  const Index cap = std::min({m, n, stop.max_nonzeros.value_or(n)});
  const double floor_tol = 1e-12 * y_norm;
  const double tol = std::max(stop.residual_tol.value_or(0.0), floor_tol);

  std::vector<Index> support;
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd residual = y;
  Eigen::VectorXd x_active;

  while (static_cast<Index>(support.size()) < cap && residual.norm() > tol) {
    Eigen::VectorXd corr = (phi.transpose() * residual).cwiseAbs();
    for (Index j = 0; j < n; ++j)
      corr[j] = (chosen[static_cast<std::size_t>(j)] || col_norms[j] == 0.0) ? -1.0 : corr[j] / col_norms[j];
    Index best = 0;
    const double best_corr = corr.maxCoeff(&best);
    if (best_corr <= 1e-14 * y_norm) break;

    support.push_back(best);
    chosen[static_cast<std::size_t>(best)] = 1;
    const Index k = static_cast<Index>(support.size());
    Eigen::MatrixXd sub(m, k);
    for (Index c = 0; c < k; ++c) sub.col(c) = phi.col(support[static_cast<std::size_t>(c)]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) {
      ReconResult partial = out;
      partial.converged = false;
      partial.note = "rank-deficient active set";
      throw OmpRankDeficient("omp: active set of size " + std::to_string(k) + " is rank deficient", partial);
    }
    x_active = qr.solve(y);
    residual = y - sub * x_active;
    out.coeffs.setZero();
    for (Index c = 0; c < k; ++c) out.coeffs[support[static_cast<std::size_t>(c)]] = x_active[c];
    out.s_hat = out.coeffs;
    ++out.iterations;
  }
  return out;
}

// ------------------------------------------------------- BP denoising

double default_bp_lambda(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi) {
  return 0.1 * (phi.transpose() * y).cwiseAbs().maxCoeff();
}

double noise_aware_bp_lambda(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                             double beta) {
  require(beta >= 0.0, "bp lambda: beta must be non-negative");
  const double universal =
      beta * std::sqrt(2.0 * std::log(static_cast<double>(phi.cols()))) * phi.colwise().norm().maxCoeff();
  return std::min(universal, default_bp_lambda(y, phi));
}

namespace {

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
  return v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
}

double spectral_norm_sq(const Eigen::Ref<const Eigen::MatrixXd>& a) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.cols()) / std::sqrt(static_cast<double>(a.cols()));
  double est = 0.0;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd w = a.transpose() * (a * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    est = nw;
    v = w / nw;
  }
  return est;
}

}  // namespace

ReconResult bp_denoise(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                       const BpOptions& options) {
  require(phi.rows() == y.size(), "bp_denoise: measurement length does not match the matrix");
  const double lambda = options.lambda.value_or(default_bp_lambda(y, phi));
  require(lambda >= 0.0, "bp_denoise: lambda must be non-negative");
  require(options.max_iters >= 1, "bp_denoise: max_iters must be positive");

  const Index n = phi.cols();
  auto smooth = [&](const Eigen::VectorXd& x) { return 0.5 * (y - phi * x).squaredNorm(); };
  auto objective = [&](const Eigen::VectorXd& x) { return smooth(x) + lambda * x.lpNorm<1>(); };

  double lip = std::max(spectral_norm_sq(phi), 1e-300);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);

  // Continuation: small lambda converges slowly from zero, so walk lambda
  // down from a large value in factor-of-ten stages, warm starting each.
  const double lambda_top = 0.5 * (phi.transpose() * y).cwiseAbs().maxCoeff();
  std::vector<double> stages;
  for (double l = lambda_top; l > 10.0 * lambda; l *= 0.1) stages.push_back(l);
  stages.push_back(lambda);

  ReconResult out;
  out.converged = false;
  int it = 0;
  for (std::size_t st = 0; st < stages.size() && it < options.max_iters; ++st) {
    const double lam = stages[st];
    const bool final_stage = st + 1 == stages.size();
    auto obj = [&](const Eigen::VectorXd& v) { return smooth(v) + lam * v.lpNorm<1>(); };
    Eigen::VectorXd z = x;
    double t = 1.0;
    double f_old = obj(x);
    while (it < options.max_iters) {
      ++it;
      const Eigen::VectorXd az = phi * z;
      const Eigen::VectorXd grad = phi.transpose() * (az - y);
      const double fz = 0.5 * (y - az).squaredNorm();
      Eigen::VectorXd x_new;
      for (int bt = 0; bt < 60; ++bt) {
        x_new = soft_threshold(z - grad / lip, lam / lip);
        const Eigen::VectorXd d = x_new - z;
        if (smooth(x_new) <= fz + grad.dot(d) + 0.5 * lip * d.squaredNorm() + 1e-15 * std::abs(fz)) break;
        lip *= 2.0;
      }
      const double f_new = obj(x_new);
      const double step = (x_new - x).norm();

      if (f_new > f_old) {
        // Adaptive restart: drop the momentum and retry from the last iterate.
        t = 1.0;
        z = x;
        continue;
      }
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = x_new + ((t - 1.0) / t_new) * (x_new - x);
      t = t_new;
      const bool still = step == 0.0;
      x = std::move(x_new);
      const double change = std::abs(f_old - f_new);
      f_old = f_new;
      // intermediate stages only need a rough solution
      const double stage_tol = final_stage ? options.tol : std::max(options.tol, 1e-6);
      if (still || change <= stage_tol * std::max(f_new, 1e-300)) {
        if (final_stage) out.converged = true;
        break;
      }
    }
  }
  out.iterations = it;
  if (!out.converged) out.note = "bp_denoise: no convergence within max_iters";

  // Polish: with the support and signs settled, the optimum solves
  // Phi_S' Phi_S x_S = Phi_S' y - lambda sign(x_S). A candidate that is
  // sign-consistent and optimal off the support satisfies the optimality
  // conditions, so it is the minimizer. Supports are tried from the full
  // nonzero set down to the dominant entries, which rescues slow runs that
  // still carry small spurious coefficients.
  const double x_max = x.cwiseAbs().maxCoeff();
  Index last_k = -1;
  for (double frac : {0.0, 1e-9, 1e-6, 1e-3, 1e-2, 1e-1}) {
    if (x_max == 0.0) break;
    std::vector<Index> support;
    for (Index j = 0; j < n; ++j)
      if (x[j] != 0.0 && std::abs(x[j]) >= frac * x_max) support.push_back(j);
    const auto k = static_cast<Index>(support.size());
    if (k == last_k || k > phi.rows()) continue;
    last_k = k;
    Eigen::MatrixXd sub(phi.rows(), k);
    Eigen::VectorXd sgn(k);
    for (Index i = 0; i < k; ++i) {
      sub.col(i) = phi.col(support[static_cast<std::size_t>(i)]);
      sgn[i] = x[support[static_cast<std::size_t>(i)]] > 0.0 ? 1.0 : -1.0;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub.transpose() * sub);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
    const Eigen::VectorXd xs = ldlt.solve(sub.transpose() * y - lambda * sgn);
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(n);
    for (Index i = 0; i < k; ++i) cand[support[static_cast<std::size_t>(i)]] = xs[i];
    const double slack = (phi.transpose() * (y - phi * cand)).cwiseAbs().maxCoeff();
    if ((xs.array() * sgn.array() > 0.0).all() && slack <= lambda * (1.0 + 1e-6) && objective(cand) <= objective(x)) {
      x = cand;
      out.converged = true;
      out.note.clear();
      break;
    }
  }
  out.coeffs = x;
  out.s_hat = x;
  return out;
}

// --------------------------------------------- Bayesian sparse recovery

double likelihood_term(double alpha, double g, double h) {
  if (std::isinf(alpha)) return 0.0;
  return 0.5 * (-std::log1p(g / alpha) + h * h / (alpha + g));
}

double optimal_alpha(double g, double h) {
  const double theta = h * h - g;
  return theta > 0.0 ? g * g / theta : kInfinity;
}

double SummedStatistics::propose(std::span<const double> g, std::span<const double> h) const {
  double gs = 0.0, hs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gs += g[i];
    hs += h[i] * h[i];
  }
  const double theta = hs - gs;
  return theta > 0.0 ? gs * gs / theta : kInfinity;
}

double AveragedStatistics::propose(std::span<const double> g, std::span<const double> h) const {
  double gs = 0.0, hs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gs += g[i];
    hs += h[i] * h[i];
  }
  const double p = static_cast<double>(g.size());
  gs /= p;
  hs /= p;
  const double theta = hs - gs;
  return theta > 0.0 ? gs * gs / theta : kInfinity;
}

double JointMaximization::propose(std::span<const double> g, std::span<const double> h) const {
  double gs = 0.0, hs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gs += g[i];
    hs += h[i] * h[i];
  }
  if (hs <= gs) return kInfinity;
  // d/dalpha of the summed terms: positive near 0, negative for large alpha.
  auto slope = [&](double a) {
    double d = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double ag = a + g[i];
      d += 1.0 / a - 1.0 / ag - h[i] * h[i] / (ag * ag);
    }
    return d;
  };
  const double p = static_cast<double>(g.size());
  double guess = (gs / p) * (gs / p) / (hs / p - gs / p);
  double lo = guess, hi = guess;
  for (int k = 0; k < 200 && slope(lo) <= 0.0; ++k) lo *= 0.5;
  for (int k = 0; k < 200 && slope(hi) >= 0.0; ++k) hi *= 2.0;
  for (int k = 0; k < 100; ++k) {
    const double mid = std::sqrt(lo * hi);
    if (slope(mid) > 0.0) lo = mid; else hi = mid;
    if (hi / lo < 1.0 + 1e-14) break;
  }
  return std::sqrt(lo * hi);
}

std::unique_ptr<HyperparameterCoupling> make_coupling(const std::string& name) {
  if (name == "summed") return std::make_unique<SummedStatistics>();
  if (name == "averaged") return std::make_unique<AveragedStatistics>();
  if (name == "joint") return std::make_unique<JointMaximization>();
  throw InvalidArgument("unknown coupling rule '" + name + "' (expected summed, averaged or joint)");
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct StationModel {
  const Eigen::MatrixXd* psi = nullptr;
  const Eigen::MatrixXd* full_gram = nullptr;  // optional precomputed Psi^T Psi
  Eigen::VectorXd y;
  double beta = 1.0;
  double b = 1.0;  // beta^-2
  Eigen::VectorXd diag;
  Eigen::VectorXd psi_t_y;
  double y_sq = 0.0;
  Eigen::MatrixXd gram;  // N x capacity; column c = Psi^T psi_{active[c]}
  Eigen::MatrixXd sigma;
  Eigen::VectorXd mu;
  Eigen::VectorXd big_s, big_q;  // S_m = b d_m - b^2 g_m' Sigma g_m, Q_m = b (Psi'y)_m - b^2 g_m' Sigma (Psi'y)_a
  double log_det_h = 0.0;        // log |b G_aa + A|
  double log_likelihood = 0.0;
};

/// Shared-hyperparameter fast marginal likelihood maximization over one or
/// more stations. With a single station it is the standard sequential
/// sparse Bayesian learning update. Posterior and factors are updated with
/// rank-one formulas and recomputed from scratch every kRefreshEvery steps.
class BcsEngine {
 public:
  using Hook = std::function<bool(int, const std::vector<Eigen::VectorXd>&)>;
  static constexpr int kRefreshEvery = 200;

  BcsEngine(std::span<const Eigen::MatrixXd* const> psi, std::span<const Eigen::VectorXd> y,
            std::span<const double> beta, const HyperparameterCoupling& coupling, const BcsOptions& options,
            std::span<const Eigen::MatrixXd> grams = {})
      : coupling_(coupling), options_(options) {
    require(grams.empty() || grams.size() == psi.size(), "bcs: one gram matrix per station required");
    require(!psi.empty(), "bcs: need at least one station");
    require(psi.size() == y.size() && psi.size() == beta.size(), "bcs: station lists differ in length");
    m_ = psi.front()->rows();
    n_ = psi.front()->cols();
    for (std::size_t i = 0; i < psi.size(); ++i) {
      require(psi[i]->rows() == m_ && psi[i]->cols() == n_, "bcs: stations must share dimensions");
      require(y[i].size() == m_, "bcs: measurement length does not match the matrix");
      require(beta[i] > 0.0 && std::isfinite(beta[i]), "bcs: beta must be positive");
      StationModel st;
      st.psi = psi[i];
      if (!grams.empty()) st.full_gram = &grams[i];
      st.y = y[i];
      st.beta = beta[i];
      st.b = 1.0 / (beta[i] * beta[i]);
      st.diag = st.full_gram ? Eigen::VectorXd(st.full_gram->diagonal()) : Eigen::VectorXd(psi[i]->colwise().squaredNorm().transpose());
      st.psi_t_y = psi[i]->transpose() * y[i];
      st.y_sq = y[i].squaredNorm();
      st.gram.resize(n_, 8);
      stations_.push_back(std::move(st));
    }
    alpha_ = Eigen::VectorXd::Constant(n_, kInfinity);
    position_.assign(static_cast<std::size_t>(n_), -1);
    max_iters_ = options.max_iters > 0 ? options.max_iters : static_cast<int>(4 * m_ + 100);
  }

  void run(const Hook& hook) {
    full_refresh();
    trace_.push_back(total_likelihood());
    std::vector<double> gs(stations_.size()), hs(stations_.size());

    for (iterations_ = 0; iterations_ < max_iters_;) {
      Index best = -1;
      double best_gain = std::max(options_.gain_tol * (trace_.back() - trace_.front()), 1e-12);
      double best_alpha = kInfinity;
      const bool full = static_cast<Index>(active_.size()) >= m_;
      for (Index j = 0; j < n_; ++j) {
        const int pos = position_[static_cast<std::size_t>(j)];
        const bool is_active = pos >= 0;
        if (!is_active && full) continue;
        bool usable = true;
        for (std::size_t i = 0; i < stations_.size(); ++i) {
          factors(stations_[i], j, pos, gs[i], hs[i]);
          if (!(gs[i] > 0.0) || !std::isfinite(hs[i])) usable = false;
        }
        if (!usable) continue;
        const double proposed = coupling_.propose(gs, hs);
        if (!is_active && std::isinf(proposed)) continue;
        if (is_active && std::isfinite(proposed) &&
            std::abs(std::log(proposed / alpha_[j])) < options_.alpha_tol)
          continue;
        double gain = 0.0;
        for (std::size_t i = 0; i < stations_.size(); ++i)
          gain += likelihood_term(proposed, gs[i], hs[i]) - likelihood_term(alpha_[j], gs[i], hs[i]);
        if (gain > best_gain) {
          best_gain = gain;
          best = j;
          best_alpha = proposed;
        }
      }
      if (best < 0) {
        converged_ = true;
        break;
      }
      ++iterations_;
      if (!apply(best, best_alpha) || iterations_ % kRefreshEvery == 0) full_refresh();
      trace_.push_back(total_likelihood());
      if (hook && !hook(iterations_, coefficients())) {
        stopped_ = true;
        break;
      }
    }
    full_refresh();
    trace_.back() = total_likelihood();
  }

  std::vector<Eigen::VectorXd> coefficients() const {
    std::vector<Eigen::VectorXd> out;
    out.reserve(stations_.size());
    for (const auto& st : stations_) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(n_);
      for (std::size_t r = 0; r < active_.size(); ++r) x[active_[r]] = st.mu[static_cast<Index>(r)];
      out.push_back(std::move(x));
    }
    return out;
  }

  BcsState state(std::size_t station) const {
    const auto& st = stations_[station];
    BcsState s;
    s.alpha = alpha_;
    s.beta = st.beta;
    s.mu = st.mu;
    s.sigma_cov = st.sigma;
    s.active_set = active_;
    s.g.resize(n_);
    s.h.resize(n_);
    for (Index j = 0; j < n_; ++j) factors(st, j, position_[static_cast<std::size_t>(j)], s.g[j], s.h[j]);
    s.log_likelihood = st.log_likelihood;
    return s;
  }

  const std::vector<double>& trace() const { return trace_; }
  int iterations() const { return iterations_; }
  bool converged() const { return converged_; }
  bool stopped() const { return stopped_; }

 private:
  // Leave-one-out sparsity and quality factors of candidate j.
  void factors(const StationModel& st, Index j, int pos, double& g, double& h) const {
    if (pos < 0) {
      g = st.big_s[j];
      h = st.big_q[j];
      return;
    }
    const double srr = st.sigma(pos, pos);
    g = 1.0 / srr - alpha_[j];
    h = st.mu[pos] / srr;
  }

  bool apply(Index j, double new_alpha) {
    const int pos = position_[static_cast<std::size_t>(j)];
    bool ok = true;
    if (pos < 0) {
      const Index k = static_cast<Index>(active_.size());
      for (auto& st : stations_) {
        if (st.gram.cols() <= k) st.gram.conservativeResize(Eigen::NoChange, std::max<Index>(2 * k, 8));
        if (st.full_gram)
          st.gram.col(k) = st.full_gram->col(j);
        else
          st.gram.col(k).noalias() = st.psi->transpose() * st.psi->col(j);
        ok = add_station(st, j, k, new_alpha) && ok;
      }
      active_.push_back(j);
      position_[static_cast<std::size_t>(j)] = static_cast<int>(k);
      alpha_[j] = new_alpha;
    } else if (std::isfinite(new_alpha)) {
      for (auto& st : stations_) ok = reestimate_station(st, pos, alpha_[j], new_alpha) && ok;
      alpha_[j] = new_alpha;
    } else {
      for (auto& st : stations_) ok = delete_station(st, pos) && ok;
      const Index last = static_cast<Index>(active_.size()) - 1;
      if (pos != last) {
        for (auto& st : stations_) swap_last(st, pos, last);
        active_[static_cast<std::size_t>(pos)] = active_[static_cast<std::size_t>(last)];
        position_[static_cast<std::size_t>(active_[static_cast<std::size_t>(pos)])] = pos;
      }
      for (auto& st : stations_) {
        st.sigma.conservativeResize(last, last);
        st.mu.conservativeResize(last);
      }
      active_.pop_back();
      position_[static_cast<std::size_t>(j)] = -1;
      alpha_[j] = kInfinity;
    }
    for (auto& st : stations_) update_likelihood(st);
    return ok;
  }

  bool add_station(StationModel& st, Index j, Index k, double alpha) {
    const double denom = alpha + st.big_s[j];
    if (!(denom > 0.0)) return false;
    const double sjj = 1.0 / denom;
    const double mj = sjj * st.big_q[j];
    const auto g = st.gram.leftCols(k);
    Eigen::VectorXd z(k);
    if (k > 0) z.noalias() = st.b * (st.sigma * g.row(j).transpose());
    Eigen::VectorXd e = st.b * st.gram.col(k);
    if (k > 0) e.noalias() -= st.b * (g * z);

    Eigen::MatrixXd sigma(k + 1, k + 1);
    sigma.topLeftCorner(k, k) = st.sigma + sjj * z * z.transpose();
    sigma.topRightCorner(k, 1) = -sjj * z;
    sigma.bottomLeftCorner(1, k) = -sjj * z.transpose();
    sigma(k, k) = sjj;
    st.sigma = std::move(sigma);
    Eigen::VectorXd mu(k + 1);
    mu.head(k) = st.mu - mj * z;
    mu[k] = mj;
    st.mu = std::move(mu);
    st.big_s.array() -= sjj * e.array().square();
    st.big_q -= mj * e;
    st.log_det_h += std::log(denom);
    return true;
  }

  bool reestimate_station(StationModel& st, int pos, double old_alpha, double new_alpha) {
    const double srr = st.sigma(pos, pos);
    const double factor = 1.0 + (new_alpha - old_alpha) * srr;
    if (!(factor > 0.0)) return false;
    const double kappa = (new_alpha - old_alpha) / factor;  // = 1 / (srr + 1/(new - old))
    const Eigen::VectorXd col = st.sigma.col(pos);
    const double mr = st.mu[pos];
    const Index k = static_cast<Index>(active_.size());
    const Eigen::VectorXd e = st.b * (st.gram.leftCols(k) * col);
    st.sigma.noalias() -= kappa * col * col.transpose();
    st.mu -= kappa * mr * col;
    st.big_s.array() += kappa * e.array().square();
    st.big_q += kappa * mr * e;
    st.log_det_h += std::log(factor);
    return true;
  }

  bool delete_station(StationModel& st, int pos) {
    const double srr = st.sigma(pos, pos);
    if (!(srr > 0.0)) return false;
    const Eigen::VectorXd col = st.sigma.col(pos);
    const double mr = st.mu[pos];
    const Index k = static_cast<Index>(active_.size());
    const Eigen::VectorXd e = st.b * (st.gram.leftCols(k) * col);
    st.sigma.noalias() -= (col * col.transpose()) / srr;
    st.mu -= (mr / srr) * col;
    st.big_s.array() += e.array().square() / srr;
    st.big_q += (mr / srr) * e;
    st.log_det_h += std::log(srr);
    return true;
  }

  static void swap_last(StationModel& st, int pos, Index last) {
    st.gram.col(pos) = st.gram.col(last);
    st.sigma.row(pos).swap(st.sigma.row(last));
    st.sigma.col(pos).swap(st.sigma.col(last));
    std::swap(st.mu[pos], st.mu[last]);
  }

  void update_likelihood(StationModel& st) const {
    const double base = static_cast<double>(m_) * (kLog2Pi + 2.0 * std::log(st.beta));
    double log_alpha = 0.0;
    double fit = 0.0;
    for (std::size_t r = 0; r < active_.size(); ++r) {
      log_alpha += std::log(alpha_[active_[r]]);
      fit += st.psi_t_y[active_[r]] * st.mu[static_cast<Index>(r)];
    }
    st.log_likelihood = -0.5 * (base - log_alpha + st.log_det_h + st.b * (st.y_sq - fit));
  }

  void full_refresh() {
    const Index k = static_cast<Index>(active_.size());
    for (auto& st : stations_) {
      st.big_s = st.b * st.diag;
      st.big_q = st.b * st.psi_t_y;
      if (k == 0) {
        st.sigma.resize(0, 0);
        st.mu.resize(0);
        st.log_det_h = 0.0;
        update_likelihood(st);
        continue;
      }
      Eigen::MatrixXd hess(k, k);
      Eigen::VectorXd rhs(k);
      for (Index r = 0; r < k; ++r) {
        for (Index c = 0; c < k; ++c) hess(r, c) = st.b * st.gram(active_[static_cast<std::size_t>(r)], c);
        hess(r, r) += alpha_[active_[static_cast<std::size_t>(r)]];
        rhs[r] = st.psi_t_y[active_[static_cast<std::size_t>(r)]];
      }
      hess = 0.5 * (hess + hess.transpose()).eval();
      Eigen::LLT<Eigen::MatrixXd> llt(hess);
      if (llt.info() != Eigen::Success)
        throw NumericalError("bcs: posterior precision is not positive definite");
      st.sigma = llt.solve(Eigen::MatrixXd::Identity(k, k));
      st.mu = st.b * (st.sigma * rhs);
      st.log_det_h = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const auto g = st.gram.leftCols(k);
      const Eigen::MatrixXd gs = g * st.sigma;
      st.big_s.array() -= st.b * st.b * (gs.cwiseProduct(g)).rowwise().sum().array();
      st.big_q.noalias() -= st.b * st.b * (gs * rhs);
      update_likelihood(st);
    }
  }

  double total_likelihood() const {
    double sum = 0.0;
    for (const auto& st : stations_) sum += st.log_likelihood;
    return sum;
  }

  const HyperparameterCoupling& coupling_;
  BcsOptions options_;
  Index m_ = 0, n_ = 0;
  int max_iters_ = 0;
  std::vector<StationModel> stations_;
  Eigen::VectorXd alpha_;
  std::vector<Index> active_;
  std::vector<int> position_;
  std::vector<double> trace_;
  int iterations_ = 0;
  bool converged_ = false;
  bool stopped_ = false;
};

}  // namespace

BcsOutcome bcs(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi, double beta,
               const BcsOptions& options) {
  require(phi.rows() == y.size(), "bcs: measurement length does not match the matrix");
  require(beta > 0.0, "bcs: beta must be positive");
  const Eigen::MatrixXd psi = phi;
  const Eigen::MatrixXd* psi_ptr = &psi;
  const Eigen::VectorXd yv = y;
  const SummedStatistics rule;
  BcsEngine engine(std::span<const Eigen::MatrixXd* const>(&psi_ptr, 1), std::span<const Eigen::VectorXd>(&yv, 1),
                   std::span<const double>(&beta, 1), rule, options);
  engine.run({});

  BcsOutcome out;
  out.result.coeffs = engine.coefficients().front();
  out.result.s_hat = out.result.coeffs;
  out.result.iterations = engine.iterations();
  out.result.converged = engine.converged();
  if (!engine.converged()) out.result.note = "bcs: iteration cap reached";
  out.state = engine.state(0);
  out.likelihood_trace = engine.trace();
  return out;
}

TemplateDictionary TemplateDictionary::make(Index n, double dt, const PulseSpec& pulse, Index oversample) {
  require(n >= 1, "template dictionary: frame length must be positive");
  require(dt > 0.0, "template dictionary: grid spacing must be positive");
  require(oversample >= 1, "template dictionary: oversample must be positive");
  pulse.validate();
  TemplateDictionary d;
  d.pulse = pulse;
  d.dt = dt;
  d.oversample = oversample;
  const Index atoms = n * oversample;
  d.columns.resize(n, atoms);
  const Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(n, 0.0, static_cast<double>(n - 1)) * dt;
  PulseSpec unit = pulse;
  unit.amplitude = 1.0;
  for (Index k = 0; k < atoms; ++k) {
    d.columns.col(k) = gaussian_pulse((grid - d.atom_delay(k)).eval(), unit).matrix();
    d.columns.col(k).normalize();
  }
  // Far tails are below any meaningful precision; zeroing them keeps the
  // products with the dictionary out of subnormal arithmetic.
  d.columns = d.columns.unaryExpr([](double v) { return std::abs(v) < 1e-30 ? 0.0 : v; });
  return d;
}

CsUwbOperator::CsUwbOperator(std::span<const Eigen::MatrixXd> phi_per_station, TemplateDictionary dictionary)
    : dict_(std::move(dictionary)) {
  require(!phi_per_station.empty(), "cs_uwb: need at least one station");
  for (const auto& phi : phi_per_station) {
    require(phi.cols() == dict_.rows(), "cs_uwb: every station must share the frame length of the dictionary");
    psi_.push_back(phi * dict_.columns);
    Eigen::MatrixXd gram(psi_.back().cols(), psi_.back().cols());
    gram.setZero();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(psi_.back().transpose());
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    gram_.push_back(std::move(gram));
  }
}

CsUwbOutcome CsUwbOperator::solve(std::span<const Eigen::VectorXd> y_per_station,
                                  std::span<const double> beta_per_station, const CsUwbOptions& options) const {
  require(y_per_station.size() == psi_.size(), "cs_uwb: one measurement vector per station required");
  require(beta_per_station.size() == psi_.size(), "cs_uwb: one beta per station required");
  std::vector<const Eigen::MatrixXd*> ptrs;
  for (const auto& p : psi_) ptrs.push_back(&p);

  const SummedStatistics default_rule;
  const HyperparameterCoupling& rule = options.coupling ? *options.coupling : default_rule;
  BcsEngine engine(ptrs, y_per_station, beta_per_station, rule, options.bcs, gram_);

  BcsEngine::Hook hook;
  if (options.observer) {
    hook = [&](int it, const std::vector<Eigen::VectorXd>& coeffs) {
      std::vector<Eigen::VectorXd> frames;
      frames.reserve(coeffs.size());
      for (const auto& x : coeffs) frames.push_back(dict_.columns * x);
      return options.observer(it, frames);
    };
  }
  engine.run(hook);

  CsUwbOutcome out;
  out.iterations = engine.iterations();
  out.stopped_by_observer = engine.stopped();
  out.likelihood_trace = engine.trace();
  const auto coeffs = engine.coefficients();
  for (std::size_t i = 0; i < psi_.size(); ++i) {
    ReconResult r;
    r.coeffs = coeffs[i];
    r.s_hat = dict_.columns * coeffs[i];
    r.iterations = engine.iterations();
    r.converged = engine.converged() || engine.stopped();
    if (!r.converged) r.note = "cs_uwb: iteration cap reached";
    out.stations.push_back(std::move(r));
    out.states.push_back(engine.state(i));
  }
  return out;
}

CsUwbOutcome cs_uwb(std::span<const Eigen::VectorXd> y_per_station, std::span<const Eigen::MatrixXd> phi_per_station,
                    const TemplateDictionary& dictionary, double beta, const CsUwbOptions& options) {
  require(!y_per_station.empty(), "cs_uwb: need at least one station");
  require(y_per_station.size() == phi_per_station.size(), "cs_uwb: one projection per station required");
  const CsUwbOperator op(phi_per_station, dictionary);
  const std::vector<double> betas(y_per_station.size(), beta);
  return op.solve(y_per_station, betas, options);
}

}  // namespace uwbcs
