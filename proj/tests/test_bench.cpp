#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sdclab/report.hpp"
#include "sdclab/sdc_data.hpp"
#include "sdclab/training.hpp"

using namespace sdclab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(SDCLAB_TEST_TMP) / "bench" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Result cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = fs::path(SDCLAB_TEST_TMP) / "bench" / ("out" + std::to_string(counter++) + ".txt");
  fs::create_directories(log.parent_path());
  const std::string cmd =
      std::string("\"") + SDCLAB_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

struct Line {
  std::string cls;
  std::vector<std::pair<double, double>> pts;
};

std::vector<Line> polylines(const std::string& svg) {
  std::vector<Line> out;
  std::regex re("<polyline class=\"([^\"]*)\"[^>]*points=\"([^\"]*)\"");
  for (std::sregex_iterator it(svg.begin(), svg.end(), re), end; it != end; ++it) {
    Line l;
    l.cls = (*it)[1];
    std::istringstream ps((*it)[2].str());
    std::string tok;
    while (ps >> tok) {
      auto comma = tok.find(',');
      l.pts.emplace_back(std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1)));
    }
    out.push_back(std::move(l));
  }
  return out;
}

// Plot frame: 480 px tall with 56 px margins, y axis over [0, 1].
double unit_y(double py) { return (480.0 - 56.0 - py) / (480.0 - 2.0 * 56.0); }

}  // namespace

TEST_CASE("generate") {
  auto dir = scratch("generate");
  auto a = cli("generate --preset synth-appdx-d --n 6000 --seed 0 --out " + q(dir / "a.csv"));
  REQUIRE(a.code == 0);
  auto b = cli("generate --preset synth-appdx-d --n 6000 --seed 0 --out " + q(dir / "b.csv"));
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  auto ds = load_dataset(dir / "a.csv");
  CHECK(ds.dims() == SdcDims{2, 9, 3});
  CHECK(ds.size() == 6000);
  CHECK(ds.n_test() == 3000);

  auto em = cli("generate --preset em1 --n 200 --seed 1 --out " + q(dir / "em1.csv"));
  REQUIRE(em.code == 0);
  auto e = load_dataset(dir / "em1.csv");
  CHECK(e.size() == 200);
  CHECK(e.n_train() == 200);

  auto bad = cli("generate --preset nope --n 10 --out " + q(dir / "x.csv"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("synth-appdx-d") != std::string::npos);
  CHECK(cli("generate --n 10").code == 2);
  CHECK(cli("frobnicate").code == 2);
}

TEST_CASE("generate from a config file") {
  auto dir = scratch("genconfig");
  std::ofstream(dir / "gen.cfg") << "# three-dimensional segments\n"
                                    "d = 3\nm = 4\nk = 2\n"
                                    "background = {\"gaussian\": {\"mean\": [0, 0, 0], \"stddev\": 1}}\n"
                                    "foreground.1 = {\"point\": [5, 5, 5]}\n"
                                    "foreground.2 = {\"point\": [-5, -5, -5]}\n";
  auto r = cli("generate --config " + q(dir / "gen.cfg") + " --n 20 --seed 3 --out " + q(dir / "d3.csv"));
  REQUIRE(r.code == 0);
  auto ds = load_dataset(dir / "d3.csv");
  CHECK(ds.dims() == SdcDims{3, 4, 2});
  CHECK(ds.n_test() == 10);

  std::ofstream(dir / "bad.cfg") << "d = 3\nm = 4\n";
  CHECK(cli("generate --config " + q(dir / "bad.cfg") + " --n 20 --out " + q(dir / "x.csv")).code == 2);
}

TEST_CASE("run, rerun and plots") {
  auto dir = scratch("run");
  REQUIRE(cli("generate --preset synth-appdx-d --n 400 --seed 2 --out " + q(dir / "ds.csv")).code == 0);
  const std::string common = "run --dataset " + q(dir / "ds.csv") + " --seed 4 --epochs 3";
  auto first = cli(common + " --variant SM-0 --out " + q(dir / "sm0"));
  REQUIRE(first.code == 0);
  for (const char* f : {"model.txt", "params.bin", "params.init.bin", "dynamics.csv", "metrics.csv",
                        "threshold.csv", "run.txt"})
    CHECK(fs::exists(dir / "sm0" / f));
  auto log = DynamicsLog::read_csv(dir / "sm0" / "dynamics.csv");
  CHECK(log.records.size() == 3);

  auto second = cli(common + " --variant SM-0 --out " + q(dir / "sm0b"));
  REQUIRE(second.code == 0);
  CHECK(first.out == second.out);
  CHECK(slurp(dir / "sm0" / "metrics.csv") == slurp(dir / "sm0b" / "metrics.csv"));
  CHECK(slurp(dir / "sm0" / "params.bin") == slurp(dir / "sm0b" / "params.bin"));

  SUBCASE("hard attention counts m classifier evaluations") {
    auto ha = cli(common + " --variant HA-0 --out " + q(dir / "ha0"));
    REQUIRE(ha.code == 0);
    auto run = slurp(dir / "ha0" / "run.txt");
    CHECK(run.find("classifier_evals_per_instance=9") != std::string::npos);
  }

  SUBCASE("dynamics plot curves sum to one") {
    REQUIRE(cli("plot " + q(dir / "sm0") + " --plot-kind dynamics").code == 0);
    auto lines = polylines(slurp(dir / "sm0" / "dynamics.svg"));
    REQUIRE(lines.size() == 4);
    CHECK(lines[0].cls == "FTPT");
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (const auto& l : lines) {
        REQUIRE(l.pts.size() == 3);
        const double v = unit_y(l.pts[i].second);
        CHECK(v >= -1e-3);
        CHECK(v <= 1.0 + 1e-3);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  SUBCASE("threshold plot is non-increasing") {
    REQUIRE(cli("plot " + q(dir / "sm0") + " --plot-kind threshold").code == 0);
    auto lines = polylines(slurp(dir / "sm0" / "threshold.svg"));
    REQUIRE(lines.size() == 1);
    REQUIRE(lines[0].pts.size() == 101);
    for (std::size_t i = 0; i + 1 < 101; ++i)
      CHECK(unit_y(lines[0].pts[i + 1].second) <= unit_y(lines[0].pts[i].second) + 1e-9);
  }

  SUBCASE("spatial plots") {
    REQUIRE(cli("plot " + q(dir / "sm0") + " --plot-kind focus-heatmap").code == 0);
    CHECK(fs::exists(dir / "sm0" / "focus-heatmap.svg"));
    REQUIRE(cli("plot " + q(dir / "sm0") + " --plot-kind decision-boundary").code == 0);
    CHECK(slurp(dir / "sm0" / "decision-boundary.svg").find("<circle") != std::string::npos);
    CHECK(cli("plot " + q(dir / "sm0") + " --plot-kind pie").code == 2);
  }

  SUBCASE("incompatible dataset exits 2") {
    std::ofstream(dir / "gen.cfg") << "d = 3\nm = 4\nk = 2\n"
                                      "background = {\"gaussian\": {\"mean\": [0, 0, 0], \"stddev\": 1}}\n"
                                      "foreground.1 = {\"point\": [5, 5, 5]}\n"
                                      "foreground.2 = {\"point\": [-5, -5, -5]}\n";
    REQUIRE(cli("generate --config " + q(dir / "gen.cfg") + " --n 40 --out " + q(dir / "d3.csv")).code == 0);
    REQUIRE(cli("run --dataset " + q(dir / "d3.csv") + " --variant SM-0 --epochs 1 --out " + q(dir / "d3run"))
                .code == 0);
    CHECK(cli("plot " + q(dir / "d3run") + " --plot-kind focus-heatmap").code == 2);
    CHECK(cli("plot " + q(dir / "d3run") + " --plot-kind dynamics").code == 0);
    CHECK(cli(common + " --variant XX-0 --out " + q(dir / "bad")).code == 2);
    CHECK(cli("run --dataset " + q(dir / "missing.csv") + " --variant SM-0 --out " + q(dir / "bad")).code == 1);
  }
}

TEST_CASE("error-mode heatmap at initialization is flat") {
  auto dir = scratch("em3");
  REQUIRE(cli("run --preset em3 --n 200 --variant SM-0 --seed 0 --epochs 1 --out " + q(dir / "run")).code == 0);
  REQUIRE(cli("plot " + q(dir / "run") + " --plot-kind focus-heatmap --stage init").code == 0);
  auto svg = slurp(dir / "run" / "focus-heatmap-init.svg");
  auto start = svg.find("<g class=\"field\"");
  auto stop = svg.find("</g>", start);
  REQUIRE(start != std::string::npos);
  auto field = svg.substr(start, stop - start);
  std::regex fill("fill=\"(#[0-9a-f]{6})\"");
  std::set<std::string> colors;
  std::size_t rects = 0;
  for (std::sregex_iterator it(field.begin(), field.end(), fill), end; it != end; ++it) {
    colors.insert((*it)[1]);
    ++rects;
  }
  CHECK(rects == 200);
  CHECK(colors.size() == 1);
}

TEST_CASE("sweep and report") {
  auto dir = scratch("sweep");
  auto r = cli("sweep --preset synth-appdx-d --n 300 --variant SM-0,SpMax-2 --seeds 0-2 --epochs 2 --workers 2 --out " +
               q(dir / "out"));
  REQUIRE(r.code == 0);
  auto report = RunReport::parse_csv(dir / "out" / "report.csv");
  CHECK(report.seed_rows().size() == 6);
  CHECK(report.mean_rows().size() == 2);
  for (const char* alg : {"SM-0", "SpMax-2"}) {
    const auto& mean = report.mean_of(alg);
    double acc = 0.0, ft = 0.0, nnz = 0.0, dist = 0.0, ent = 0.0;
    int n = 0;
    for (const auto& row : report.seed_rows()) {
      if (row.algorithm != alg) continue;
      acc += row.accuracy;
      ft += row.ft;
      nnz += row.nnz;
      dist += row.dist;
      ent += row.ent;
      ++n;
    }
    REQUIRE(n == 3);
    CHECK(std::abs(mean.accuracy - acc / 3) <= 1e-9);
    CHECK(std::abs(mean.ft - ft / 3) <= 1e-9);
    CHECK(std::abs(mean.nnz - nnz / 3) <= 1e-9);
    CHECK(std::abs(mean.dist - dist / 3) <= 1e-9);
    CHECK(std::abs(mean.ent - ent / 3) <= 1e-9);
  }
  CHECK(report.mean_of("SpMax-2").averaging_layer == 2);
  CHECK(report.mean_of("SpMax-2").attention_mechanism == "Sparsemax");

  // parallel rows equal a sequential single run
  auto single = cli("run --dataset " + q(dir / "out" / "dataset.csv") +
                    " --variant SpMax-2 --seed 1 --epochs 2 --out " + q(dir / "single"));
  REQUIRE(single.code == 0);
  auto seq = slurp(dir / "single" / "metrics.csv");
  auto par = slurp(dir / "out" / "SpMax-2" / "seed-1" / "metrics.csv");
  CHECK(seq == par);

  std::stringstream ss;
  report.write_csv(ss);
  CHECK(ss.str() == slurp(dir / "out" / "report.csv"));
  auto back = RunReport::parse_csv(ss);
  CHECK(back == report);

  auto shown = cli("report " + q(dir / "out"));
  CHECK(shown.code == 0);
  CHECK(shown.out.find("SpMax-2") != std::string::npos);
  CHECK(cli("report " + q(dir / "nothing")).code != 0);

  REQUIRE(cli("plot " + q(dir / "out") + " --plot-kind threshold").code == 0);
  CHECK(polylines(slurp(dir / "out" / "threshold.svg")).size() == 2);
}

TEST_CASE("sweep config file and failed runs") {
  auto dir = scratch("sweepcfg");
  std::ofstream(dir / "exp.cfg") << "preset = synth-appdx-d\nn = 200\nvariants = HA-0\nseeds = 5\n"
                                    "epochs = 1\nout = " + (dir / "out").string() + "\n";
  auto r = cli("sweep --config " + q(dir / "exp.cfg"));
  REQUIRE(r.code == 0);
  auto report = RunReport::parse_csv(dir / "out" / "report.csv");
  CHECK(report.seed_rows().size() == 1);
  CHECK(report.mean_rows().size() == 1);

  std::ofstream(dir / "typo.cfg") << "preset = synth-appdx-d\nvariantz = SM-0\n";
  CHECK(cli("sweep --config " + q(dir / "typo.cfg")).code == 2);

  auto failing = cli("sweep --preset synth-appdx-d --n 200 --variant SM-0 --seeds 0 --epochs 1 --lr 1e300 --out " +
                     q(dir / "fail"));
  CHECK(failing.code == 1);
  auto partial = RunReport::parse_csv(dir / "fail" / "report.csv");
  REQUIRE(partial.seed_rows().size() == 1);
  CHECK(partial.seed_rows()[0].failed);
}

TEST_CASE("seed from the environment") {
  auto dir = scratch("env");
  REQUIRE(cli("generate --preset em2 --n 50 --seed 9 --out " + q(dir / "a.csv")).code == 0);
  setenv("SDC_LAB_SEED", "9", 1);
  REQUIRE(cli("generate --preset em2 --n 50 --out " + q(dir / "b.csv")).code == 0);
  setenv("SDC_LAB_SEED", "x", 1);
  CHECK(cli("generate --preset em2 --n 50 --out " + q(dir / "c.csv")).code == 2);
  unsetenv("SDC_LAB_SEED");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
}
