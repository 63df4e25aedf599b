// Runs the uwbsim binary end to end.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "uwbcs/io.hpp"
#include "uwbcs/selftest.hpp"

namespace fs = std::filesystem;
using uwbcs::read_file;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "uwbsim_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code = -1;
  std::string out, err;
};

// `env` is prefixed to the command line, e.g. "UWBSIM_TRIALS=3".
Run uwbsim(const std::string& args, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = "cd '" + work_dir().string() + "' && env -u UWBSIM_CONFIG " + env + " '" UWBSIM_PATH "' " +
                          args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

fs::path write(const std::string& name, const std::string& text) {
  const fs::path p = work_dir() / name;
  uwbcs::write_file_atomic(p, text);
  return p;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

const std::string kSmallRecon = "recon --rr 0.2,0.3 --algs cs_uwb,omp --trials 3 --n 256 --gate-lead 40 ";

}  // namespace

TEST_CASE("help matches the golden file") {
  const Run r = uwbsim("--help");
  CHECK(r.code == 0);
  CHECK(r.out == read_file(GOLDEN_DIR "/help.txt"));
  for (const char* cmd : {"recon", "locate2d", "locate3d", "selftest"}) CHECK(contains(r.out, cmd));
}

TEST_CASE("usage errors exit 2") {
  CHECK(uwbsim("").code == 2);
  CHECK(uwbsim("frobnicate").code == 2);
  CHECK(uwbsim("recon --no-such-flag").code == 2);
  const Run r = uwbsim("recon --rr 1.5");
  CHECK(r.code == 2);
  CHECK(contains(r.err, "rr"));
  CHECK(uwbsim("recon --trials 0").code == 2);
  CHECK(uwbsim("recon --trials three").code == 2);
  CHECK(uwbsim("recon --algs cs_uwb,fft").code == 2);
  CHECK(uwbsim("recon --algs sequential").code == 2);
  CHECK(uwbsim("locate2d --room '0,0;0,10'").code == 2);
}

TEST_CASE("recon") {
  SUBCASE("reference invocation") {
    const Run r = uwbsim("recon --rr 0.15 --snr 10 --algs cs_uwb,bp --trials 50 --seed 7 --out r.csv --threads 0");
    CHECK(r.code == 0);
    CHECK(fs::exists(work_dir() / "r.csv"));
    CHECK(contains(r.out, "cs_uwb"));
    CHECK(contains(r.out, "wrote r.csv"));
  }
  SUBCASE("same flags, same bytes, any thread count") {
    REQUIRE(uwbsim(kSmallRecon + "--seed 9 --out a.csv --quiet").code == 0);
    REQUIRE(uwbsim(kSmallRecon + "--seed 9 --out b.csv --quiet").code == 0);
    REQUIRE(uwbsim(kSmallRecon + "--seed 9 --out c.csv --quiet --threads 3").code == 0);
    const std::string a = read_file(work_dir() / "a.csv");
    CHECK(a == read_file(work_dir() / "b.csv"));
    CHECK(a == read_file(work_dir() / "c.csv"));
    REQUIRE(uwbsim(kSmallRecon + "--seed 10 --out d.csv --quiet").code == 0);
    CHECK(a != read_file(work_dir() / "d.csv"));
  }
  SUBCASE("quiet prints nothing") {
    const Run r = uwbsim(kSmallRecon + "--out q.csv --quiet");
    CHECK(r.code == 0);
    CHECK(r.out.empty());
    CHECK(r.err.empty());
  }
  SUBCASE("default output name and gnuplot file") {
    const Run r = uwbsim("locate2d --mode direct --resolution 2 --trials 1 --quiet --gnuplot map.dat");
    CHECK(r.code == 0);
    CHECK(fs::exists(work_dir() / "locate2d.csv"));
    CHECK(fs::exists(work_dir() / "map.dat"));
  }
  SUBCASE("unwritable output is a runtime failure") {
    write("blocker", "x");
    CHECK(uwbsim(kSmallRecon + "--quiet --out blocker/out.csv").code == 1);
  }
}

TEST_CASE("locate") {
  SUBCASE("locate3d defaults to the four room anchors") {
    const Run r = uwbsim("locate3d --tags 1 --mode direct --out l3.csv");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "anchors: 0,0,170; 4000,0,1855; 4410,4435,2860; 0,4545,3260"));
  }
  SUBCASE("two inline anchors are too few in 3D") {
    const Run r = uwbsim("locate3d --anchors '0,0,0;1000,0,0' --tags 1");
    CHECK(r.code == 2);
    CHECK(contains(r.err, "anchors"));
  }
  SUBCASE("anchors from a file") {
    const fs::path f = write("anchors.txt", "# x, y\n0,0\n3000,0\n1500,3000\n");
    const Run r = uwbsim("locate2d --anchors '" + f.string() + "' --room '0,0;3000,3000' --mode direct --resolution 2 "
                         "--trials 1 --out a2.csv");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "anchors: 0,0; 3000,0; 1500,3000"));
  }
  SUBCASE("mixed dimensions are rejected") {
    CHECK(uwbsim("locate2d --anchors '0,0;1,1,1;2,0'").code == 2);
    CHECK(uwbsim("locate2d --anchors '0,0,0;1000,0,0;0,1000,0'").code == 2);
  }
  SUBCASE("sequential mode with a 3% extension-scale error") {
    const Run r = uwbsim("locate3d --mode sequential --drift-ppm 30000 --tags 2 --out seq.csv");
    CHECK(r.code == 0);
    CHECK(contains(read_file(work_dir() / "seq.csv"), "room_3d,sequential,"));
  }
  SUBCASE("interleaved cs_uwb") {
    CHECK(uwbsim("locate2d --mode cs_uwb --interleave --resolution 1 --trials 1 --quiet --out il.csv").code == 0);
  }
}

TEST_CASE("selftest") {
  const Run all = uwbsim("selftest");
  CHECK(all.code == 0);
  CHECK(contains(all.out, "PASS jacobian_fd"));
  CHECK_FALSE(contains(all.out, "FAIL"));

  const Run list = uwbsim("selftest --list");
  CHECK(list.code == 0);
  std::string expected;
  for (const auto& n : uwbcs::selftest_names()) expected += n + "\n";
  CHECK(list.out == expected);

  for (const auto& n : uwbcs::selftest_names()) {
    INFO(n);
    const Run bad = uwbsim("selftest --inject-fault " + n);
    CHECK(bad.code == 1);
    CHECK(contains(bad.out, "FAIL " + n));
  }
  const Run one = uwbsim("selftest --check small_sparse");
  CHECK(one.code == 0);
  CHECK(one.out.find("PASS") == one.out.rfind("PASS"));
  CHECK(uwbsim("selftest --check nonsense").code == 2);
  CHECK(uwbsim("selftest --quiet").out.empty());
}

TEST_CASE("config file and environment") {
  const fs::path cfg = write("run.ini",
                            "[cli]\nquiet = true\n\n"
                            "[experiment-harness]\ntrials = 2\nseed = 4\nalgs = omp\nrr = 0.2\n\n"
                            "[signal-model]\nn = 256\n\n"
                            "[cs-acquisition]\ngate_lead = 40\n\n"
                            "[sequential-sampler]\ndrift_ppm = 20000\n");
  const std::string base = "recon --config '" + cfg.string() + "' ";

  SUBCASE("file values apply") {
    REQUIRE(uwbsim(base + "--out f.csv").code == 0);
    const std::string csv = read_file(work_dir() / "f.csv");
    CHECK(contains(csv, "recon_1d,omp,0.2,10,,,,1,p_re,"));
    CHECK_FALSE(contains(csv, ",2,p_re,"));
  }
  SUBCASE("flag beats environment beats file") {
    REQUIRE(uwbsim(base + "--out e.csv", "UWBSIM_TRIALS=3").code == 0);
    CHECK(contains(read_file(work_dir() / "e.csv"), ",2,p_re,"));
    REQUIRE(uwbsim(base + "--out g.csv --trials 1", "UWBSIM_TRIALS=3").code == 0);
    CHECK_FALSE(contains(read_file(work_dir() / "g.csv"), ",1,p_re,"));
    const Run loud = uwbsim(base + "--out l.csv --quiet=false");
    CHECK(loud.code == 0);
    CHECK(contains(loud.out, "wrote l.csv"));
  }
  SUBCASE("config path from the environment") {
    REQUIRE(uwbsim("recon --out h.csv", "UWBSIM_CONFIG='" + cfg.string() + "'").code == 0);
    CHECK(read_file(work_dir() / "h.csv") == read_file(work_dir() / "f.csv"));
  }
  SUBCASE("every flag has a file key") {
    const fs::path all = write("all.ini",
                               "[cli]\nthreads = 2\nout = all.csv\nquiet = yes\n"
                               "[experiment-harness]\nseed = 1\ntrials = 1\nsnr = 12\nrr = 0.25\nmode = direct\n"
                               "anchors = 0,0;4000,0;2000,4000\nroom = 0,0;4000,4000\nresolution = 2\n"
                               "[signal-model]\nn = 512\ndt_ps = 10\nsigma_ps = 50\nmin_paths = 5\nmax_paths = 8\n"
                               "decay_ns = 2\ndelay_spread_ns = 3\nfading = 0.2\njitter = 0.05\necho_ceiling = 0.6\n"
                               "[cs-acquisition]\nprojection = bernoulli\nprojection_seed = 3\ngate_lead = 100\n"
                               "[sparse-recovery]\ncoupling = averaged\n"
                               "[sequential-sampler]\ndrift_ppm = 0\n"
                               "[positioning-pipeline]\ninterleave = false\n");
    CHECK(uwbsim("locate2d --config '" + all.string() + "'").code == 0);
    CHECK(fs::exists(work_dir() / "all.csv"));
  }
  SUBCASE("unknown keys and bad values") {
    const fs::path typo = write("typo.ini", "[experiment-harness]\ntrails = 2\n");
    const Run r = uwbsim("recon --config '" + typo.string() + "'");
    CHECK(r.code == 2);
    CHECK(contains(r.err, "trails"));
    const fs::path wrong_section = write("section.ini", "[signal-model]\ntrials = 2\n");
    CHECK(uwbsim("recon --config '" + wrong_section.string() + "'").code == 2);
    const fs::path bad = write("bad.ini", "[experiment-harness]\ntrials = many\n");
    CHECK(uwbsim("recon --config '" + bad.string() + "'").code == 2);
    CHECK(uwbsim("recon --config '" + (work_dir() / "absent.ini").string() + "'").code == 2);
    CHECK(uwbsim(kSmallRecon + "--quiet", "UWBSIM_THREADS=-1").code == 2);
  }
}
