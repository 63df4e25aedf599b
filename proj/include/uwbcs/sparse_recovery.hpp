#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uwbcs/signal_model.hpp"

namespace uwbcs {

struct ReconResult {
  Eigen::VectorXd s_hat;   // reconstructed frame samples
  Eigen::VectorXd coeffs;  // sparse coefficients (equal to s_hat for sample-domain solvers)
  int iterations = 0;
  bool converged = true;
  std::optional<double> p_re;
  std::vector<double> arrival_trace;  // filled by callers that track arrivals per iteration
  std::string note;
};

/// P_re = 1 - ||s - s_hat|| / ||s||.
template <typename DerivedA, typename DerivedB>
double recon_percentage(const Eigen::MatrixBase<DerivedA>& s, const Eigen::MatrixBase<DerivedB>& s_hat) {
  require(s.size() == s_hat.size(), "recon_percentage: length mismatch");
  const double norm = s.norm();
  require(norm > 0.0, "recon_percentage: true signal is zero");
  return 1.0 - (s - s_hat).norm() / norm;
}

// ---------------------------------------------------------------- OMP

struct OmpStop {
  std::optional<Index> max_nonzeros;
  std::optional<double> residual_tol;  // stop once ||y - Phi x|| <= tol
};

/// Raised when the least-squares refit on the active set loses rank.
class OmpRankDeficient : public NumericalError {
 public:
  OmpRankDeficient(const std::string& what, ReconResult partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const ReconResult& partial() const { return partial_; }

 private:
  ReconResult partial_;
};

ReconResult omp(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                const OmpStop& stop = {});

// ------------------------------------------------------- BP denoising

struct BpOptions {
  std::optional<double> lambda;  // default 0.1 * ||Phi^T y||_inf
  double tol = 1e-9;             // relative objective change
  int max_iters = 5000;
};

/// Accelerated proximal gradient (FISTA with backtracking and adaptive
/// restart) on 0.5 ||y - Phi x||^2 + lambda ||x||_1.
ReconResult bp_denoise(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                       const BpOptions& options = {});

double default_bp_lambda(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi);

/// Lambda for a known noise scale: the universal threshold
/// beta * sqrt(2 ln N) * max column norm, capped at default_bp_lambda.
double noise_aware_bp_lambda(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
                             double beta);

// --------------------------------------------- Bayesian sparse recovery

/// Contribution of coefficient j to the marginal log-likelihood,
/// l(alpha) = 0.5 (log alpha - log(alpha + g) + h^2 / (alpha + g)); l(inf) = 0.
double likelihood_term(double alpha, double g, double h);

/// Maximizer of likelihood_term over alpha > 0: g^2 / (h^2 - g) when
/// h^2 > g, +inf otherwise.
double optimal_alpha(double g, double h);

struct BcsState {
  Eigen::VectorXd alpha;      // per coefficient; +inf = excluded
  double beta = 0.0;
  Eigen::VectorXd mu;         // posterior mean over active_set (same order)
  Eigen::MatrixXd sigma_cov;  // posterior covariance over active_set
  std::vector<Index> active_set;
  Eigen::VectorXd g;          // sparsity factor per candidate (leave-one-out)
  Eigen::VectorXd h;          // quality factor per candidate (leave-one-out)
  double log_likelihood = 0.0;
};

struct BcsOptions {
  int max_iters = 0;         // 0: 4 * M + 100
  double gain_tol = 1e-5;    // stop when no action gains more than this fraction of the total gain so far
  double alpha_tol = 1e-3;   // re-estimates changing |log alpha| by less are ignored
};

struct BcsOutcome {
  ReconResult result;
  BcsState state;
  std::vector<double> likelihood_trace;  // one entry per accepted update (first: empty model)
};

/// Fast marginal-likelihood BCS with known noise scale beta: sequential
/// add / re-estimate / delete of candidates, each step taking the action with
/// the largest likelihood gain (lowest index on ties).
BcsOutcome bcs(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::MatrixXd>& phi,
               double beta, const BcsOptions& options = {});

/// Rule choosing the shared hyperparameter of one candidate from the
/// per-station sparsity (g) and quality (h) factors. Returns +inf to exclude.
class HyperparameterCoupling {
 public:
  virtual ~HyperparameterCoupling() = default;
  virtual double propose(std::span<const double> g, std::span<const double> h) const = 0;
  virtual std::string name() const = 0;
};

/// alpha = G^2 / (H2 - G) with G = sum g_i and H2 = sum h_i^2.
class SummedStatistics final : public HyperparameterCoupling {
 public:
  double propose(std::span<const double> g, std::span<const double> h) const override;
  std::string name() const override { return "summed"; }
};

/// Same closed form on station-averaged statistics; equals the joint
/// maximizer whenever all stations share g.
class AveragedStatistics final : public HyperparameterCoupling {
 public:
  double propose(std::span<const double> g, std::span<const double> h) const override;
  std::string name() const override { return "averaged"; }
};

/// Numerical maximizer of the summed per-station likelihood terms.
class JointMaximization final : public HyperparameterCoupling {
 public:
  double propose(std::span<const double> g, std::span<const double> h) const override;
  std::string name() const override { return "joint"; }
};

std::unique_ptr<HyperparameterCoupling> make_coupling(const std::string& name);

/// Shifted copies of the transmitted pulse, one unit-norm column per shift.
/// Shifts are spaced dt / oversample apart, so atom k is centred at
/// k / oversample samples.
struct TemplateDictionary {
  Eigen::MatrixXd columns;  // N x (N * oversample)
  PulseSpec pulse;
  double dt = 10e-12;
  Index oversample = 1;

  static TemplateDictionary make(Index n, double dt, const PulseSpec& pulse, Index oversample = 1);
  double atom_delay(Index k) const { return static_cast<double>(k) * dt / static_cast<double>(oversample); }
  Index rows() const { return columns.rows(); }
  Index atoms() const { return columns.cols(); }
};

/// Called after each accepted update with the current per-station frames.
/// Return false to stop the reconstruction early.
using IterationObserver = std::function<bool(int iteration, const std::vector<Eigen::VectorXd>& s_hat)>;

struct CsUwbOptions {
  BcsOptions bcs;
  std::shared_ptr<const HyperparameterCoupling> coupling;  // default: SummedStatistics
  IterationObserver observer;
};

struct CsUwbOutcome {
  std::vector<ReconResult> stations;
  std::vector<BcsState> states;
  std::vector<double> likelihood_trace;  // joint log-likelihood per accepted update
  int iterations = 0;
  bool stopped_by_observer = false;
};

/// Precomputed per-station effective dictionaries Psi_i = Phi_i * D.
class CsUwbOperator {
 public:
  CsUwbOperator(std::span<const Eigen::MatrixXd> phi_per_station, TemplateDictionary dictionary);

  Index stations() const { return static_cast<Index>(psi_.size()); }
  const TemplateDictionary& dictionary() const { return dict_; }
  const Eigen::MatrixXd& effective(Index station) const { return psi_[static_cast<std::size_t>(station)]; }

  CsUwbOutcome solve(std::span<const Eigen::VectorXd> y_per_station, std::span<const double> beta_per_station,
                     const CsUwbOptions& options = {}) const;

 private:
  TemplateDictionary dict_;
  std::vector<Eigen::MatrixXd> psi_;
  std::vector<Eigen::MatrixXd> gram_;  // Psi_i^T Psi_i
};

/// Template- and spatially-informed reconstruction of several stations that
/// observe the same pulse: sparsity over template shifts with a hyperparameter
/// vector shared by all stations.
CsUwbOutcome cs_uwb(std::span<const Eigen::VectorXd> y_per_station, std::span<const Eigen::MatrixXd> phi_per_station,
                    const TemplateDictionary& dictionary, double beta, const CsUwbOptions& options = {});

}  // namespace uwbcs
