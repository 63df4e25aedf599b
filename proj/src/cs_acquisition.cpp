#include "uwbcs/cs_acquisition.hpp"

#include <random>
#include <sstream>

#include "uwbcs/io.hpp"

namespace uwbcs {

ProjectionMatrix make_projection(Index m, Index n, ProjectionKind kind, std::uint64_t seed) {
  require(m >= 1 && n >= 1, "projection dimensions must be positive");
  require(m <= n, "projection must not have more rows than columns (M <= N)");

  ProjectionMatrix phi;
  phi.kind = kind;
  phi.seed = seed;
  if (kind == ProjectionKind::identity) {
    require(m == n, "identity projection requires M == N");
    phi.entries = Eigen::MatrixXd::Identity(m, n);
    return phi;
  }

  std::mt19937_64 rng(seed);
  phi.entries.resize(m, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  // Filled row by row so a given seed fixes the matrix independent of storage order.
  if (kind == ProjectionKind::gaussian) {
    std::normal_distribution<double> normal(0.0, scale);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) phi.entries(i, j) = normal(rng);
  } else {
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) phi.entries(i, j) = coin(rng) ? scale : -scale;
  }
  return phi;
}

double effective_beta(const ProjectionMatrix& phi, const NoiseLevels& noise) {
  const double folded = noise.signal_sigma * noise.signal_sigma * phi.entries.squaredNorm() /
                        static_cast<double>(phi.rows());
  return std::sqrt(folded + noise.measurement_sigma * noise.measurement_sigma);
}

MeasurementVector measure(const ProjectionMatrix& phi, const Eigen::Ref<const Eigen::VectorXd>& s,
                          const NoiseLevels& noise, std::uint64_t seed) {
  require(phi.cols() == s.size(), "projection has " + std::to_string(phi.cols()) +
                                      " columns but the frame has " + std::to_string(s.size()) + " samples");
  require(noise.signal_sigma >= 0.0 && noise.measurement_sigma >= 0.0, "noise levels must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd n1(s.size());
  for (Index i = 0; i < n1.size(); ++i) n1[i] = noise.signal_sigma * normal(rng);
  Eigen::VectorXd n2(phi.rows());
  for (Index i = 0; i < n2.size(); ++i) n2[i] = noise.measurement_sigma * normal(rng);

  MeasurementVector out;
  out.y.noalias() = phi.entries * (s + n1);
  out.y += n2;
  out.beta = effective_beta(phi, noise);
  return out;
}

MeasurementVector measure(const ProjectionMatrix& phi, const SignalFrame& s, double n1_snr_db,
                          double n2_snr_db, std::uint64_t seed) {
  require(phi.cols() == s.size(), "projection has " + std::to_string(phi.cols()) +
                                      " columns but the frame has " + std::to_string(s.size()) + " samples");
  NoiseLevels noise;
  const bool n1_off = std::isinf(n1_snr_db) && n1_snr_db > 0;
  const bool n2_off = std::isinf(n2_snr_db) && n2_snr_db > 0;
  if (!n1_off) noise.signal_sigma = noise_sigma_for_snr(mean_power(s.samples), n1_snr_db);
  if (!n2_off) {
    const Eigen::VectorXd clean = phi.entries * s.samples;
    noise.measurement_sigma = noise_sigma_for_snr(mean_power(clean), n2_snr_db);
  }
  return measure(phi, s.samples, noise, seed);
}

double reduction_ratio(Index m, Index n) {
  require(n > 0, "reduction ratio needs N > 0");
  return static_cast<double>(m) / static_cast<double>(n);
}

Index measurements_for_ratio(double ratio, Index n) {
  require(ratio > 0.0 && ratio <= 1.0, "reduction ratio must lie in (0, 1]");
  return std::clamp<Index>(static_cast<Index>(std::llround(ratio * static_cast<double>(n))), 1, n);
}

void save_matrix_csv(const Eigen::MatrixXd& matrix, const std::filesystem::path& path) {
  std::string out;
  for (Index i = 0; i < matrix.rows(); ++i) {
    for (Index j = 0; j < matrix.cols(); ++j) {
      if (j) out += ',';
      out += format_double(matrix(i, j));
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Eigen::MatrixXd load_matrix_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      row.push_back(parse_double(std::string_view(line).substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw InvalidArgument("matrix file " + path.string() + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("matrix file " + path.string() + " is empty");
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace uwbcs
