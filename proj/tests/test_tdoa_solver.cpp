#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "uwbcs/selftest.hpp"
#include "uwbcs/tdoa_solver.hpp"

using namespace uwbcs;

namespace {

AnchorSet anchors_2d(std::initializer_list<std::pair<double, double>> pts) {
  AnchorSet a;
  a.positions.resize(2, static_cast<Index>(pts.size()));
  Index i = 0;
  for (auto [x, y] : pts) a.positions.col(i++) << x, y;
  return a;
}

AnchorSet room_anchors() {
  AnchorSet a;
  a.positions.resize(3, 4);
  a.positions << 0, 4000, 4410, 0,  //
      0, 0, 4435, 4545,             //
      170, 1855, 2860, 3260;
  return a;
}

TdoaProblem problem_for(const AnchorSet& a, const Eigen::VectorXd& tag) {
  return TdoaProblem{a, simulate_tdoa(a, tag)};
}

}  // namespace

TEST_CASE("range conversions") {
  CHECK(range_from_time(1e-9) == doctest::Approx(299.792458));
  CHECK(time_from_range(range_from_time(3.7e-9)) == doctest::Approx(3.7e-9));
}

TEST_CASE("range_difference") {
  const AnchorSet a = anchors_2d({{0, 0}, {10, 0}, {0, 10}});
  CHECK(range_difference(a, Eigen::Vector2d(5, 5), 1) == doctest::Approx(0.0));
  CHECK(range_difference(a, Eigen::Vector2d(0, 5), 1) == doctest::Approx(5.0 - std::sqrt(125.0)));
  CHECK(range_difference(a, Eigen::Vector2d(0, 5), 1) == doctest::Approx(-6.1803).epsilon(1e-5));
  CHECK_THROWS_AS(range_difference(a, Eigen::Vector2d(10, 0), 1), InvalidArgument);
}

TEST_CASE("tdoa_jacobian") {
  const AnchorSet a = anchors_2d({{0, 0}, {10, 0}, {0, 10}});
  SUBCASE("on the baseline") {
    const Eigen::MatrixXd j = tdoa_jacobian(a, Eigen::Vector2d(5, 0));
    CHECK(j.rows() == 2);
    CHECK(j.cols() == 2);
    CHECK(j(0, 0) == doctest::Approx(-2.0));
  }
  SUBCASE("symmetric guess") {
    const Eigen::MatrixXd j = tdoa_jacobian(a, Eigen::Vector2d(5, 5));
    CHECK(j(0, 0) == doctest::Approx(-10.0 / std::sqrt(50.0)));
    CHECK(j(0, 0) == doctest::Approx(-1.4142).epsilon(1e-4));
  }
  SUBCASE("rows are the negated gradient") {
    const Eigen::Vector2d p(3.3, 7.1);
    const Eigen::MatrixXd j = tdoa_jacobian(a, p);
    const double h = 1e-6;
    for (Index i = 1; i <= 2; ++i)
      for (Index d = 0; d < 2; ++d) {
        Eigen::Vector2d lo = p, hi = p;
        lo[d] -= h;
        hi[d] += h;
        const double fd = (range_difference(a, hi, i) - range_difference(a, lo, i)) / (2 * h);
        CHECK(j(i - 1, d) == doctest::Approx(-fd).epsilon(1e-6));
      }
  }
  SUBCASE("guess on an anchor") { CHECK_THROWS_AS(tdoa_jacobian(a, Eigen::Vector2d(0, 10)), InvalidArgument); }
  SUBCASE("finite-difference check at 50 guesses") {
    const CheckResult r = run_check("jacobian_fd", {});
    INFO(r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("solve_tdoa") {
  SUBCASE("2D square example") {
    const AnchorSet a = anchors_2d({{0, 0}, {10000, 0}, {0, 10000}});
    const PositionEstimate e = solve_tdoa(problem_for(a, Eigen::Vector2d(5000, 5000)), Eigen::VectorXd(Eigen::Vector2d(4000, 4000)));
    CHECK(e.converged);
    CHECK((e.position - Eigen::Vector2d(5000, 5000)).norm() < 1e-6);
    CHECK(e.final_err < 1e-6);
  }

  SUBCASE("3D tags inside the anchor hull") {
    const AnchorSet a = room_anchors();
    std::mt19937_64 rng(7);
    std::gamma_distribution<double> expo(1.0, 1.0);
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    int max_iters = 0;
    for (int k = 0; k < 200; ++k) {
      // uniform convex weights
      Eigen::Vector4d w;
      for (Index i = 0; i < 4; ++i) w[i] = expo(rng);
      w /= w.sum();
      const Eigen::VectorXd tag = a.positions * w;
      const PositionEstimate e = solve_tdoa(problem_for(a, tag));
      CHECK(e.converged);
      worst = std::max(worst, (e.position - tag).norm());
      max_iters = std::max(max_iters, e.iterations);
    }
    CHECK(worst < 1e-3);
    CHECK(max_iters < 25);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 10.0);
  }

  SUBCASE("start at the answer") {
    const AnchorSet a = room_anchors();
    const Eigen::Vector3d tag(1200, 2500, 900);
    const PositionEstimate e = solve_tdoa(problem_for(a, tag), Eigen::VectorXd(tag));
    CHECK(e.iterations == 1);
    CHECK(e.final_err < 1e-9);
    CHECK((e.position - tag).norm() < 1e-9);
  }

  SUBCASE("translation equivariance") {
    const AnchorSet a = room_anchors();
    AnchorSet moved = a;
    const Eigen::Vector3d v(-700, 1234.5, 55);
    moved.positions.colwise() += v;
    const Eigen::Vector3d tag(2100, 1900, 1500);
    const PositionEstimate e0 = solve_tdoa(problem_for(a, tag));
    const PositionEstimate e1 = solve_tdoa(problem_for(moved, tag + v));
    CHECK(e0.iterations == e1.iterations);
    CHECK((e1.position - e0.position - v).norm() < 1e-6);
  }

  SUBCASE("overdetermined 2D") {
    const AnchorSet a = anchors_2d({{0, 0}, {4000, 0}, {4000, 4000}, {0, 4000}, {2000, -500}});
    const Eigen::Vector2d tag(1300, 2900);
    const PositionEstimate e = solve_tdoa(problem_for(a, tag));
    CHECK((e.position - tag).norm() < 1e-4);
  }

  SUBCASE("collinear anchors") {
    const AnchorSet a = anchors_2d({{0, 0}, {1000, 0}, {3000, 0}});
    TdoaProblem p{a, Eigen::Vector2d(1e-9, -2e-9)};
    CHECK_THROWS_AS(solve_tdoa(p, Eigen::VectorXd(Eigen::Vector2d(500, 500))), NumericalError);
  }

  SUBCASE("bad problems") {
    const AnchorSet a = anchors_2d({{0, 0}, {1000, 0}, {0, 1000}});
    CHECK_THROWS_AS(solve_tdoa(TdoaProblem{a, Eigen::VectorXd::Zero(3)}), InvalidArgument);
    CHECK_THROWS_AS(solve_tdoa(TdoaProblem{anchors_2d({{0, 0}, {1000, 0}}), Eigen::VectorXd::Zero(1)}),
                    InvalidArgument);
  }
}

TEST_CASE("tdoa_candidates") {
  const AnchorSet a = room_anchors();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0, 5000), uz(0, 4000);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Vector3d tag(ux(rng), ux(rng), uz(rng));
    const auto cands = tdoa_candidates(problem_for(a, tag));
    REQUIRE_FALSE(cands.empty());
    double best = 1e300;
    for (const auto& c : cands) {
      best = std::min(best, (c - tag).norm());
      // every candidate reproduces the measured differences
      CHECK((simulate_tdoa(a, c) - simulate_tdoa(a, tag)).norm() * kSpeedOfLightMmPerS < 1e-6);
    }
    CHECK(best < 1e-6);
  }
  AnchorSet five = a;
  five.positions.conservativeResize(3, 5);
  five.positions.col(4) << 2500, 2500, 4000;
  CHECK(tdoa_candidates(problem_for(five, Eigen::Vector3d(100, 200, 300))).empty());
}
