#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "uwbcs/harness.hpp"
#include "uwbcs/io.hpp"

using namespace uwbcs;

namespace {

// Short frames keep these runs cheap.
ExperimentSpec small_recon(std::vector<Mode> algs, int trials) {
  ExperimentSpec s = ExperimentSpec::defaults(ExperimentKind::recon_1d);
  s.algorithms = std::move(algs);
  s.reduction_ratios = {0.2, 0.3};
  s.trials = trials;
  s.acquisition.n = 256;
  s.acquisition.gate_lead = 40;
  s.channel.delay_spread = 1.5e-9;
  s.seed = 5;
  return s;
}

ExperimentSpec small_grid(std::vector<Mode> algs, int res) {
  ExperimentSpec s = ExperimentSpec::defaults(ExperimentKind::grid_2d);
  s.algorithms = std::move(algs);
  s.resolution = res;
  s.trials = 2;
  s.seed = 3;
  return s;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_CASE("experiment kinds") {
  for (auto k : {ExperimentKind::recon_1d, ExperimentKind::grid_2d, ExperimentKind::room_3d})
    CHECK(parse_experiment_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_experiment_kind("grid"), InvalidArgument);
}

TEST_CASE("spec validation") {
  ExperimentSpec s = ExperimentSpec::defaults(ExperimentKind::recon_1d);
  CHECK_NOTHROW(s.validate());
  SUBCASE("trials") {
    s.trials = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
  }
  SUBCASE("reduction ratio") {
    s.reduction_ratios = {0.2, 1.5};
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
  }
  SUBCASE("sequential is not a reconstruction algorithm") {
    s.algorithms = {Mode::sequential};
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
  }
  SUBCASE("grid resolution") {
    ExperimentSpec g = ExperimentSpec::defaults(ExperimentKind::grid_2d);
    g.resolution = 0;
    CHECK_THROWS_AS(g.validate(), InvalidArgument);
  }
  SUBCASE("room needs four 3D anchors") {
    ExperimentSpec r = ExperimentSpec::defaults(ExperimentKind::room_3d);
    r.anchors.positions.conservativeResize(3, 3);
    CHECK_THROWS_AS(r.validate(), InvalidArgument);
  }
  SUBCASE("room defaults") {
    const ExperimentSpec r = ExperimentSpec::defaults(ExperimentKind::room_3d);
    CHECK(r.anchors.count() == 4);
    CHECK(r.anchors.positions.col(2) == Eigen::Vector3d(4410, 4435, 2860));
    CHECK(r.room_hi == Eigen::Vector3d(5000, 5000, 4000));
  }
}

TEST_CASE("summarize") {
  const Summary s = summarize({3.0, 1.0, 2.0});
  CHECK(s.median == 2.0);
  CHECK(s.mean == 2.0);
  CHECK(s.std == doctest::Approx(1.0));
  CHECK(s.count == 3);
  CHECK(summarize({4.0, 1.0, 2.0, 3.0}).median == 2.5);
  CHECK(summarize({7.0}).std == 0.0);
  CHECK(std::isnan(summarize({}).median));
}

TEST_CASE("equal_distance_point") {
  AnchorSet a;
  a.positions.resize(2, 3);
  a.positions << 0, 4000, 2000, 0, 0, 4000;
  const Eigen::VectorXd c = equal_distance_point(a);
  const double r0 = (c - a.positions.col(0)).norm();
  for (Index i = 1; i < 3; ++i) CHECK((c - a.positions.col(i)).norm() == doctest::Approx(r0));
  CHECK(c[0] == doctest::Approx(2000.0));
  CHECK(c[1] == doctest::Approx(1500.0));
  a.positions << 0, 1000, 3000, 0, 0, 0;
  CHECK_THROWS_AS(equal_distance_point(a), InvalidArgument);
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += static_cast<int>(i); });
  for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i] == static_cast<int>(i));
  CHECK_THROWS_AS(parallel_for(50, 3,
                               [](std::size_t i) {
                                 if (i == 17) throw NumericalError("boom");
                               }),
                  NumericalError);
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("csv") {
  const ResultTable t = run_recon_1d(small_recon({Mode::cs_uwb, Mode::omp}, 2));
  REQUIRE_FALSE(t.empty());

  SUBCASE("header and layout") {
    const std::string csv = to_csv(t);
    CHECK(csv.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
    CHECK(csv.find('\r') == std::string::npos);
    CHECK(csv.find("recon_1d,cs_uwb,0.2,10,,,,0,p_re,") != std::string::npos);
  }
  SUBCASE("round trip") {
    CHECK(same_table(parse_csv(to_csv(t)), t));
    const auto path = std::filesystem::temp_directory_path() / "uwbcs_harness_rt.csv";
    export_csv(t, path);
    CHECK(same_table(import_csv(path), t));
    CHECK(read_file(path) == to_csv(t));
    std::filesystem::remove(path);
  }
  SUBCASE("empty table") {
    CHECK_THROWS_AS(export_csv(ResultTable{}, std::filesystem::temp_directory_path() / "uwbcs_empty.csv"),
                    InvalidArgument);
    CHECK_THROWS_AS(to_gnuplot(ResultTable{}), InvalidArgument);
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_csv(""), IoError);
    CHECK_THROWS_AS(parse_csv("a,b\n"), IoError);
    CHECK_THROWS_AS(parse_csv(std::string(kCsvHeader) + "\nrecon_1d,omp,0.2\n"), IoError);
    CHECK_THROWS_AS(parse_csv(std::string(kCsvHeader) + "\nrecon_1d,omp,zz,10,,,,0,p_re,1\n"), IoError);
  }
  SUBCASE("text fields may not break the format") {
    ResultTable bad = t;
    bad.rows.front().metric = "a,b";
    CHECK_THROWS_AS(to_csv(bad), InvalidArgument);
  }
}

TEST_CASE("recon_1d determinism") {
  const ExperimentSpec s = small_recon({Mode::cs_uwb, Mode::bp, Mode::omp, Mode::bcs}, 3);
  const std::string once = to_csv(run_recon_1d(s));
  CHECK(to_csv(run_recon_1d(s)) == once);
  ExperimentSpec threaded = s;
  threaded.threads = 3;
  CHECK(to_csv(run_recon_1d(threaded)) == once);
  ExperimentSpec other = s;
  other.seed = 6;
  CHECK(to_csv(run_recon_1d(other)) != once);
}

TEST_CASE("recon_1d coverage") {
  const ExperimentSpec s = small_recon({Mode::omp, Mode::direct}, 4);
  const ResultTable t = run_recon_1d(s);
  for (const char* alg : {"omp", "direct"}) {
    for (double rr : s.reduction_ratios) {
      int trials = 0;
      for (const auto* r : t.select(alg, "p_re"))
        if (r->reduction_ratio == rr && r->trial != "median" && r->trial != "mean" && r->trial != "std") ++trials;
      CHECK(trials == s.trials);
      int summaries = 0;
      for (const auto* r : t.select(alg, "p_re"))
        if (r->reduction_ratio == rr && (r->trial == "median" || r->trial == "mean" || r->trial == "std"))
          ++summaries;
      CHECK(summaries == 3);
    }
  }
}

TEST_CASE("more trials shrink the standard error of the median") {
  // std-error of the median estimated as 1.2533 * std / sqrt(n)
  auto se = [](int trials) {
    ExperimentSpec s = ExperimentSpec::defaults(ExperimentKind::recon_1d);
    s.algorithms = {Mode::direct};
    s.reduction_ratios = {1.0};
    s.trials = trials;
    s.seed = 11;
    const ResultTable t = run_recon_1d(s);
    const double sd = t.select("direct", "p_re", "std").front()->value;
    return 1.2533 * sd / std::sqrt(static_cast<double>(trials));
  };
  const double se10 = se(10), se100 = se(100);
  CHECK(se100 < se10);
  CHECK(se100 < 0.6 * se10);
}

TEST_CASE("grid_2d") {
  const ExperimentSpec s = small_grid({Mode::direct, Mode::sequential}, 3);
  const ResultTable t = run_grid_2d(s);

  SUBCASE("one mean row per cell and mode, plus the equal-distance point") {
    CHECK(t.select("direct", "error_mm", "mean").size() == 9);
    CHECK(t.select("sequential", "error_mm", "mean").size() == 9);
    REQUIRE(t.select("sequential", "equal_point_error_mm", "mean").size() == 1);
    const auto* eq = t.select("sequential", "equal_point_error_mm", "mean").front();
    CHECK(eq->x == doctest::Approx(2000.0));
    CHECK(eq->y == doctest::Approx(1500.0));
    CHECK(std::isnan(eq->z));
  }
  SUBCASE("gnuplot matrix is resolution x resolution per mode") {
    const std::string g = to_gnuplot(t);
    std::istringstream in(g);
    std::vector<std::vector<int>> blocks(1);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) {
        if (!blocks.back().empty()) blocks.emplace_back();
        continue;
      }
      if (line[0] == '#') continue;
      std::istringstream ls(line);
      int cols = 0;
      for (std::string f; ls >> f;) {
        CHECK(std::isfinite(parse_double(f)));
        ++cols;
      }
      blocks.back().push_back(cols);
    }
    REQUIRE(blocks.size() == 2);
    for (const auto& b : blocks) CHECK(b == std::vector<int>{3, 3, 3});
  }
  SUBCASE("threads do not change the table") {
    ExperimentSpec threaded = s;
    threaded.threads = 4;
    CHECK(to_csv(run_grid_2d(threaded)) == to_csv(t));
  }
}

TEST_CASE("room_3d") {
  ExperimentSpec s = ExperimentSpec::defaults(ExperimentKind::room_3d);
  s.algorithms = {Mode::sequential};
  s.tags = 40;
  s.seed = 4;
  s.threads = 0;
  const ResultTable t = run_room_3d(s);

  const auto geom = t.select("geometry", "max_range_difference_mm");
  REQUIRE(geom.size() == 40);
  std::vector<double> dist, err;
  for (const auto* g : geom) {
    for (const auto* r : t.select("sequential", "error_mm", "0"))
      if (r->x == g->x && r->y == g->y && r->z == g->z) {
        dist.push_back(g->value);
        err.push_back(r->value);
      }
  }
  REQUIRE(dist.size() == 40);
  for (std::size_t i = 0; i < geom.size(); ++i) {
    CHECK(geom[i]->x >= 0.0);
    CHECK(geom[i]->x <= 5000.0);
    CHECK(geom[i]->z <= 4000.0);
  }
  // drift grows with the distance from the equal-delay locus
  CHECK(spearman(dist, err) > 0.3);
  int overall = 0;
  for (const auto* r : t.select("sequential", "error_mm", "mean")) overall += std::isnan(r->x);
  CHECK(overall == 1);
  CHECK(t.select("sequential", "error_mm", "mean").size() == 41);
  std::istringstream g(to_gnuplot(t));
  int lines = 0;
  for (std::string line; std::getline(g, line);) lines += !line.empty() && line[0] != '#';
  CHECK(lines == 40);
}

TEST_CASE("run_experiment dispatch") {
  ExperimentSpec s = small_recon({Mode::direct}, 1);
  CHECK(same_table(run_experiment(s), run_recon_1d(s)));
  s.kind = ExperimentKind::grid_2d;
  CHECK_THROWS_AS(run_experiment(s), InvalidArgument);
}
