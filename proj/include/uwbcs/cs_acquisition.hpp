#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

#include "uwbcs/signal_model.hpp"

namespace uwbcs {

enum class ProjectionKind { gaussian, bernoulli, identity };

struct ProjectionMatrix {
  Eigen::MatrixXd entries;
  ProjectionKind kind = ProjectionKind::gaussian;
  std::uint64_t seed = 0;

  Index rows() const { return entries.rows(); }
  Index cols() const { return entries.cols(); }
};

/// i.i.d. entries: N(0, 1/M) for gaussian, +-1/sqrt(M) for bernoulli.
/// The identity kind requires M == N and ignores the seed.
ProjectionMatrix make_projection(Index m, Index n, ProjectionKind kind, std::uint64_t seed);

struct MeasurementVector {
  Eigen::VectorXd y;
  double beta = 0.0;  // std of the combined noise Phi*n1 + n2 per measurement
};

/// Absolute noise standard deviations for the two noise sources.
struct NoiseLevels {
  double signal_sigma = 0.0;       // n1, added to s before projection
  double measurement_sigma = 0.0;  // n2, added to y after projection
};

/// y = Phi (s + n1) + n2 with fixed noise standard deviations.
MeasurementVector measure(const ProjectionMatrix& phi, const Eigen::Ref<const Eigen::VectorXd>& s,
                          const NoiseLevels& noise, std::uint64_t seed);

/// SNR-calibrated form: n1 relative to the mean power of s, n2 relative to the
/// mean power of Phi*s. Either SNR may be +inf.
MeasurementVector measure(const ProjectionMatrix& phi, const SignalFrame& s, double n1_snr_db,
                          double n2_snr_db, std::uint64_t seed);

/// Expected per-measurement std of Phi*n1 + n2.
double effective_beta(const ProjectionMatrix& phi, const NoiseLevels& noise);

/// R_r = M / N.
double reduction_ratio(Index m, Index n);

/// Number of measurements for a reduction ratio, rounded to nearest, at least 1.
Index measurements_for_ratio(double ratio, Index n);

/// Row-major, comma-separated, shortest round-trip decimal.
void save_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path);
Eigen::MatrixXd load_matrix_csv(const std::filesystem::path& path);

}  // namespace uwbcs
