#include <doctest.h>

#include <cmath>
#include <limits>

#include "uwbcs/cs_acquisition.hpp"
#include "uwbcs/selftest.hpp"
#include "uwbcs/sparse_recovery.hpp"

using namespace uwbcs;

namespace {

Eigen::MatrixXd gaussian(Index m, Index n, std::uint64_t seed) {
  return make_projection(m, n, ProjectionKind::gaussian, seed).entries;
}

Eigen::VectorXd spike(Index n, Index at, double amplitude) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
  s[at] = amplitude;
  return s;
}

Index nonzeros(const Eigen::VectorXd& v) { return static_cast<Index>((v.array() != 0.0).count()); }

}  // namespace

TEST_CASE("recon_percentage") {
  const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(10, -1.0, 2.0);
  CHECK(recon_percentage(s, s) == 1.0);
  CHECK(recon_percentage(s, Eigen::VectorXd::Zero(10)) == 0.0);
  CHECK(recon_percentage(s, (2.0 * s).eval()) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(recon_percentage(Eigen::VectorXd::Zero(3), s.head(3)), InvalidArgument);
  CHECK_THROWS_AS(recon_percentage(s, s.head(3)), InvalidArgument);
}

TEST_CASE("omp") {
  SUBCASE("noiseless 1-sparse, M = 8, N = 32") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Eigen::MatrixXd phi = gaussian(8, 32, seed);
      const Index at = static_cast<Index>(seed * 3 % 32);
      const Eigen::VectorXd s = spike(32, at, -1.7);
      const ReconResult r = omp(phi * s, phi);
      CHECK(nonzeros(r.coeffs) == 1);
      CHECK(std::abs(r.coeffs[at] + 1.7) < 1e-10);
    }
  }
  SUBCASE("zero measurements") {
    const ReconResult r = omp(Eigen::VectorXd::Zero(8), gaussian(8, 32, 1));
    CHECK(r.iterations == 0);
    CHECK(r.coeffs.isZero(0.0));
  }
  SUBCASE("max_nonzeros caps the support") {
    const Eigen::MatrixXd phi = gaussian(20, 50, 3);
    const Eigen::VectorXd y = phi * Eigen::VectorXd::LinSpaced(50, 0.1, 1.0);
    for (Index k : {1, 3, 7}) {
      OmpStop stop;
      stop.max_nonzeros = k;
      CHECK(nonzeros(omp(y, phi, stop).coeffs) <= k);
    }
  }
  SUBCASE("residual tolerance") {
    const Eigen::MatrixXd phi = gaussian(20, 50, 3);
    const Eigen::VectorXd y = phi * Eigen::VectorXd::LinSpaced(50, 0.1, 1.0);
    OmpStop stop;
    stop.residual_tol = 0.5 * y.norm();
    const ReconResult r = omp(y, phi, stop);
    CHECK((y - phi * r.coeffs).norm() <= 0.5 * y.norm());
    CHECK(r.iterations < 20);
  }
  SUBCASE("nearly collinear active set reports a partial result") {
    Eigen::MatrixXd phi(2, 2);
    phi << 1.0, 1.0, 0.0, 1e-12;
    Eigen::VectorXd y(2);
    y << 0.0, 1.0;
    try {
      omp(y, phi);
      FAIL("expected OmpRankDeficient");
    } catch (const OmpRankDeficient& e) {
      CHECK_FALSE(e.partial().converged);
      CHECK(e.partial().iterations == 1);
      CHECK(nonzeros(e.partial().coeffs) == 1);
    }
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(omp(Eigen::VectorXd::Zero(5), gaussian(8, 32, 1)), InvalidArgument); }
}

TEST_CASE("bp_denoise") {
  SUBCASE("lambda at least ||Phi^T y||_inf gives zero") {
    const Eigen::MatrixXd phi = gaussian(10, 30, 4);
    const Eigen::VectorXd y = phi * spike(30, 4, 1.0);
    BpOptions opts;
    opts.lambda = (phi.transpose() * y).cwiseAbs().maxCoeff();
    CHECK(bp_denoise(y, phi, opts).coeffs.isZero(0.0));
  }
  SUBCASE("small lambda on an invertible square system approaches the inverse") {
    const Eigen::MatrixXd phi = gaussian(8, 8, 5);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
    const Eigen::VectorXd y = phi * x;
    BpOptions opts;
    opts.lambda = 1e-10 * (phi.transpose() * y).cwiseAbs().maxCoeff();
    opts.tol = 1e-15;
    opts.max_iters = 200000;
    const ReconResult r = bp_denoise(y, phi, opts);
    CHECK((r.coeffs - x).norm() <= 1e-6 * x.norm());
  }
  SUBCASE("1-sparse, N = 16, M = 8, lambda = 1e-6 matches the best 1-sparse candidate") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Eigen::MatrixXd phi = gaussian(8, 16, 100 + seed);
      const Index at = static_cast<Index>(seed % 16);
      const Eigen::VectorXd y = phi * spike(16, at, 0.9);
      const double lambda = 1e-6;
      // exhaustive over 1-sparse candidates: x_j = soft(phi_j^T y, lambda) / ||phi_j||^2
      double best_obj = std::numeric_limits<double>::infinity();
      Index best = -1;
      for (Index j = 0; j < 16; ++j) {
        const double c = phi.col(j).dot(y);
        const double v = std::copysign(std::max(std::abs(c) - lambda, 0.0), c) / phi.col(j).squaredNorm();
        const double obj = 0.5 * (y - v * phi.col(j)).squaredNorm() + lambda * std::abs(v);
        if (obj < best_obj) {
          best_obj = obj;
          best = j;
        }
      }
      BpOptions opts;
      opts.lambda = lambda;
      const ReconResult r = bp_denoise(y, phi, opts);
      Index peak = 0;
      r.coeffs.cwiseAbs().maxCoeff(&peak);
      CHECK(peak == best);
      CHECK(best == at);
      CHECK(r.converged);
      CHECK(r.coeffs.cwiseAbs().sum() - std::abs(r.coeffs[peak]) < 1e-6);
    }
  }
  SUBCASE("negative lambda rejected") {
    BpOptions opts;
    opts.lambda = -1.0;
    CHECK_THROWS_AS(bp_denoise(Eigen::VectorXd::Ones(4), gaussian(4, 8, 1), opts), InvalidArgument);
  }
  SUBCASE("iteration cap is flagged") {
    const Eigen::MatrixXd phi = gaussian(30, 60, 6);
    const Eigen::VectorXd y = phi * Eigen::VectorXd::LinSpaced(60, -1.0, 1.0);
    BpOptions opts;
    opts.lambda = 1e-6;
    opts.tol = 0.0;
    opts.max_iters = 3;
    const ReconResult r = bp_denoise(y, phi, opts);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 3);
  }
}

TEST_CASE("likelihood term and closed-form alpha") {
  CHECK(optimal_alpha(1.0, 0.5) == std::numeric_limits<double>::infinity());
  CHECK(optimal_alpha(1.0, 1.0) == std::numeric_limits<double>::infinity());
  CHECK(optimal_alpha(2.0, 3.0) == doctest::Approx(4.0 / 7.0));
  CHECK(likelihood_term(std::numeric_limits<double>::infinity(), 1.0, 2.0) == 0.0);
  const double a = optimal_alpha(2.0, 3.0);
  for (double f : {0.5, 0.9, 1.1, 2.0}) CHECK(likelihood_term(a, 2.0, 3.0) > likelihood_term(a * f, 2.0, 3.0));
  const CheckResult r = run_check("alpha_closed_form", {});
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("bcs") {
  SUBCASE("noiseless 1-sparse, beta = 1e-6, M = 10, N = 32") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const Eigen::MatrixXd phi = gaussian(10, 32, 200 + seed);
      const Index at = static_cast<Index>(seed * 5 % 32);
      const BcsOutcome out = bcs(phi * spike(32, at, 1.3), phi, 1e-6);
      REQUIRE(out.state.active_set.size() == 1);
      CHECK(out.state.active_set.front() == at);
      CHECK(std::abs(out.result.coeffs[at] - 1.3) < 1e-3);
    }
  }
  SUBCASE("zero measurements give an empty model") {
    const BcsOutcome out = bcs(Eigen::VectorXd::Zero(10), gaussian(10, 32, 1), 0.1);
    CHECK(out.state.active_set.empty());
    CHECK(out.result.s_hat.isZero(0.0));
  }
  SUBCASE("likelihood trace is non-decreasing") {
    const Eigen::MatrixXd phi = gaussian(40, 120, 7);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(120);
    x[3] = 1.0;
    x[50] = -0.6;
    x[51] = 0.4;
    x[99] = 0.8;
    const auto meas = measure(ProjectionMatrix{phi, ProjectionKind::gaussian, 7}, x, NoiseLevels{0.0, 0.05}, 3);
    const BcsOutcome out = bcs(meas.y, phi, 0.05);
    REQUIRE(out.likelihood_trace.size() > 1);
    for (std::size_t k = 1; k < out.likelihood_trace.size(); ++k)
      CHECK(out.likelihood_trace[k] >= out.likelihood_trace[k - 1]);
  }
  SUBCASE("non-positive beta rejected") {
    CHECK_THROWS_AS(bcs(Eigen::VectorXd::Ones(4), gaussian(4, 8, 1), 0.0), InvalidArgument);
  }
  SUBCASE("posterior consistency on random problems") {
    const CheckResult r = run_check("bcs_consistency", {});
    INFO(r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("template dictionary") {
  const TemplateDictionary d = TemplateDictionary::make(128, 10e-12, PulseSpec{});
  CHECK(d.atoms() == 128);
  for (Index k : {0, 5, 64, 127}) {
    CHECK(d.columns.col(k).norm() == doctest::Approx(1.0).epsilon(1e-12));
    Index peak = 0;
    d.columns.col(k).maxCoeff(&peak);
    CHECK(peak == k);
  }
  const TemplateDictionary fine = TemplateDictionary::make(128, 10e-12, PulseSpec{}, 2);
  CHECK(fine.atoms() == 256);
  CHECK(fine.atom_delay(3) == doctest::Approx(15e-12));
}

TEST_CASE("cs_uwb") {
  const Index n = 256;
  const double dt = 10e-12;
  const PulseSpec pulse;
  const TemplateDictionary dict = TemplateDictionary::make(n, dt, pulse);
  const Index m = measurements_for_ratio(0.25, n);

  SUBCASE("single station recovers the peak index") {
    for (double delay : {0.5e-9, 1.23e-9, 2.0e-9}) {
      ChannelRealization ch;
      ch.paths = {{delay, 1.0}};
      const Eigen::VectorXd s = synthesize_frame(ch, pulse, n, dt).samples;
      const std::vector<Eigen::MatrixXd> phi{gaussian(m, n, 31)};
      const std::vector<Eigen::VectorXd> y{phi[0] * s};
      const CsUwbOutcome out = cs_uwb(y, phi, dict, 1e-6);
      Index truth = 0, got = 0;
      s.maxCoeff(&truth);
      out.stations[0].s_hat.maxCoeff(&got);
      CHECK(got == truth);
    }
  }

  SUBCASE("three stations share support, amplitudes stay per station") {
    ChannelRealization pattern;
    pattern.paths = {{0.4e-9, 1.0}, {0.9e-9, -0.5}, {1.5e-9, 0.3}};
    std::vector<Eigen::MatrixXd> phi;
    std::vector<Eigen::VectorXd> y, truth;
    const double scale[] = {1.0, 0.8, 0.6};
    for (int i = 0; i < 3; ++i) {
      ChannelRealization ch = pattern;
      for (auto& p : ch.paths) p.amplitude *= scale[i];
      truth.push_back(synthesize_frame(ch, pulse, n, dt).samples);
      phi.push_back(gaussian(m, n, 40 + static_cast<std::uint64_t>(i)));
      y.push_back(phi.back() * truth.back());
    }
    const CsUwbOutcome out = cs_uwb(y, phi, dict, 1e-6);
    REQUIRE(out.states.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(out.states[static_cast<std::size_t>(i)].active_set == out.states[0].active_set);
      CHECK(recon_percentage(truth[static_cast<std::size_t>(i)], out.stations[static_cast<std::size_t>(i)].s_hat) > 0.99);
    }
    const double ratio = out.stations[2].s_hat.maxCoeff() / out.stations[0].s_hat.maxCoeff();
    CHECK(ratio == doctest::Approx(0.6).epsilon(0.01));
  }

  SUBCASE("reconstructions lie in the dictionary span") {
    ChannelProfile prof;
    prof.first_delay = 0.3e-9;
    const ChannelRealization ch = generate_channel(prof, 5);
    const SignalFrame f = synthesize_frame(ch, pulse, n, dt, 0.0, OutOfFrame::clip);
    const ProjectionMatrix p = make_projection(m, n, ProjectionKind::gaussian, 50);
    const auto meas = measure(p, f, 10.0, 10.0, 9);
    const std::vector<Eigen::MatrixXd> phi{p.entries};
    const std::vector<Eigen::VectorXd> y{meas.y};
    const CsUwbOutcome out = cs_uwb(y, phi, dict, meas.beta);
    const ReconResult& r = out.stations[0];
    CHECK(r.coeffs.size() == dict.atoms());
    CHECK((dict.columns * r.coeffs - r.s_hat).norm() < 1e-10);
  }

  SUBCASE("operator matches the free function") {
    const std::vector<Eigen::MatrixXd> phi{gaussian(m, n, 60), gaussian(m, n, 61)};
    ChannelRealization ch;
    ch.paths = {{1e-9, 1.0}};
    const Eigen::VectorXd s = synthesize_frame(ch, pulse, n, dt).samples;
    const std::vector<Eigen::VectorXd> y{phi[0] * s, phi[1] * s};
    const std::vector<double> betas{0.01, 0.01};
    const CsUwbOperator op(phi, dict);
    const CsUwbOutcome a = op.solve(y, betas);
    const CsUwbOutcome b = cs_uwb(y, phi, dict, 0.01);
    CHECK(a.stations[1].s_hat == b.stations[1].s_hat);
  }

  SUBCASE("observer can stop the reconstruction") {
    const std::vector<Eigen::MatrixXd> phi{gaussian(m, n, 70)};
    const std::vector<Eigen::VectorXd> y{phi[0] * Eigen::VectorXd::LinSpaced(n, 0.0, 1.0)};
    CsUwbOptions opts;
    int calls = 0;
    opts.observer = [&](int, const std::vector<Eigen::VectorXd>&) { return ++calls < 3; };
    const CsUwbOutcome out = cs_uwb(y, phi, dict, 0.01, opts);
    CHECK(out.stopped_by_observer);
    CHECK(calls == 3);
  }

  SUBCASE("mismatched stations rejected") {
    const std::vector<Eigen::MatrixXd> phi{gaussian(m, n, 1), gaussian(m, n - 1, 2)};
    const std::vector<Eigen::VectorXd> y{Eigen::VectorXd::Ones(m), Eigen::VectorXd::Ones(m)};
    CHECK_THROWS_AS(cs_uwb(y, phi, dict, 0.1), InvalidArgument);
  }
}

TEST_CASE("hyperparameter couplings") {
  const SummedStatistics summed;
  const AveragedStatistics averaged;
  const JointMaximization joint;
  SUBCASE("one station reduces to the closed form") {
    const double g[] = {2.0}, h[] = {3.0};
    CHECK(summed.propose(g, h) == doctest::Approx(optimal_alpha(2.0, 3.0)));
    CHECK(averaged.propose(g, h) == doctest::Approx(optimal_alpha(2.0, 3.0)));
    CHECK(joint.propose(g, h) == doctest::Approx(optimal_alpha(2.0, 3.0)).epsilon(1e-6));
  }
  SUBCASE("joint maximizer equals the averaged rule when g is shared") {
    const double g[] = {1.5, 1.5, 1.5}, h[] = {2.0, -1.0, 3.0};
    CHECK(joint.propose(g, h) == doctest::Approx(averaged.propose(g, h)).epsilon(1e-6));
  }
  SUBCASE("no support when every station lacks evidence") {
    const double g[] = {2.0, 3.0}, h[] = {0.1, -0.2};
    CHECK(std::isinf(summed.propose(g, h)));
    CHECK(std::isinf(averaged.propose(g, h)));
    CHECK(std::isinf(joint.propose(g, h)));
  }
  SUBCASE("factory") {
    for (const char* name : {"summed", "averaged", "joint"}) CHECK(make_coupling(name)->name() == name);
    CHECK_THROWS_AS(make_coupling("median"), InvalidArgument);
  }
}

TEST_CASE("oracle checks on small instances") {
  for (const char* name : {"small_square", "small_sparse"}) {
    const CheckResult r = run_check(name, {});
    INFO(name << ": " << r.detail);
    CHECK(r.passed);
  }
}
