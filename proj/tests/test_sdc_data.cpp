#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <type_traits>

#include "doctest.h"
#include "sdclab/error.hpp"
#include "sdclab/sdc_data.hpp"

using namespace sdclab;
namespace fs = std::filesystem;

namespace {

template <class V>
concept HasFgIndex = requires(const V& v) { v.fg_index(0); };

fs::path tmp_dir(const std::string& name) {
  fs::path p = fs::path(SDCLAB_TEST_TMP) / "sdc_data" / name;
  fs::create_directories(p);
  return p;
}

SdcConfig point_config(std::size_t m) {
  SdcConfig c;
  c.d = 3;
  c.m = m;
  c.k = 3;
  c.background.kind = PointMass{{0.0, 0.0, 0.0}};
  for (std::size_t y = 0; y < 3; ++y) {
    std::vector<double> e(3, 0.0);
    e[y] = 1.0;
    c.foregrounds.push_back({PointMass{e}});
  }
  return c;
}

SdcConfig gaussian_config(std::size_t m, double bg_sd) {
  SdcConfig c;
  c.d = 2;
  c.m = m;
  c.k = 3;
  c.background.kind = Gaussian{{0.0, 0.0}, bg_sd};
  c.foregrounds.push_back({Gaussian{{3.0, 3.0}, 0.5}});
  c.foregrounds.push_back({Gaussian{{-3.0, 3.0}, 0.5}});
  c.foregrounds.push_back({Gaussian{{3.0, -3.0}, 0.5}});
  return c;
}

double chi_square(const std::vector<double>& counts, double expected) {
  double s = 0.0;
  for (double c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

}  // namespace

TEST_CASE("m = 1 gives a single foreground segment") {
  auto c = point_config(1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    CounterRng rng(s);
    auto inst = sample_instance(c, rng);
    CHECK(inst.fg_index == 0);
    CHECK(inst.segments.size() == 3);
    CHECK(inst.segments[inst.label] == 1.0);
  }
}

TEST_CASE("point masses put e_y at fg_index and zeros elsewhere") {
  auto c = point_config(5);
  for (std::uint64_t s = 0; s < 50; ++s) {
    CounterRng rng(s);
    auto inst = sample_instance(c, rng);
    std::size_t nonzero_segments = 0;
    for (std::size_t j = 0; j < inst.m; ++j) {
      auto seg = inst.segment(j);
      bool nz = seg[0] != 0.0 || seg[1] != 0.0 || seg[2] != 0.0;
      if (!nz) continue;
      ++nonzero_segments;
      CHECK(j == inst.fg_index);
      for (std::size_t i = 0; i < 3; ++i) CHECK(seg[i] == (i == inst.label ? 1.0 : 0.0));
    }
    CHECK(nonzero_segments == 1);
  }
}

TEST_CASE("fg_index and label are uniform") {
  auto c = gaussian_config(9, 1.0);
  const std::size_t n = 20000;
  std::vector<double> fg(9, 0.0), lab(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(CounterRng::derive(11, {i}));
    auto inst = sample_instance(c, rng);
    fg[inst.fg_index] += 1.0;
    lab[inst.label] += 1.0;
  }
  // chi-square critical values at 0.01 for 8 and 2 degrees of freedom
  CHECK(chi_square(fg, n / 9.0) < 20.090);
  CHECK(chi_square(lab, n / 3.0) < 9.210);
}

TEST_CASE("background coordinates are uncorrelated across segments") {
  auto c = gaussian_config(9, 1.0);
  const std::size_t n = 20000;
  double sab = 0.0, sa = 0.0, sb = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(CounterRng::derive(12, {i}));
    auto inst = sample_instance(c, rng);
    std::size_t a = inst.fg_index == 0 ? 1 : 0;
    std::size_t b = inst.fg_index == 8 ? 7 : 8;
    if (a == b) continue;
    double x = inst.segment(a)[0], y = inst.segment(b)[1];
    sab += x * y;
    sa += x;
    sb += y;
    ++used;
  }
  const double nn = static_cast<double>(used);
  const double cov = sab / nn - (sa / nn) * (sb / nn);
  CHECK(std::abs(cov) <= 3.0 / std::sqrt(nn));
}

TEST_CASE("gaussian foreground means converge") {
  auto c = gaussian_config(4, 1.0);
  const std::size_t n = 9000;
  std::vector<std::array<double, 2>> sum(3, {0.0, 0.0});
  std::vector<double> count(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(CounterRng::derive(13, {i}));
    auto inst = sample_instance(c, rng);
    auto seg = inst.segment(inst.fg_index);
    sum[inst.label][0] += seg[0];
    sum[inst.label][1] += seg[1];
    count[inst.label] += 1.0;
  }
  for (std::size_t y = 0; y < 3; ++y) {
    const auto& g = std::get<Gaussian>(c.foregrounds[y].kind);
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(std::abs(sum[y][i] / count[y] - g.mean[i]) <= 4.0 * g.stddev / std::sqrt(count[y]));
  }
}

TEST_CASE("mixture backgrounds draw every component") {
  SdcConfig c = gaussian_config(9, 1.0);
  c.background.kind = Mixture{{Gaussian{{-10.0, 0.0}, 0.01}, Gaussian{{10.0, 0.0}, 0.01}}, {0.25, 0.75}};
  std::size_t left = 0, total = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    CounterRng rng(CounterRng::derive(14, {i}));
    auto inst = sample_instance(c, rng);
    for (std::size_t j = 0; j < inst.m; ++j) {
      if (j == inst.fg_index) continue;
      ++total;
      if (inst.segment(j)[0] < 0.0) ++left;
    }
  }
  const double frac = static_cast<double>(left) / static_cast<double>(total);
  CHECK(frac == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("config validation") {
  auto c = gaussian_config(9, 1.0);
  CHECK_NOTHROW(c.validate());

  auto bad = c;
  bad.foregrounds.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.k = 1;
  bad.foregrounds.resize(1);
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.m = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.background.kind = Gaussian{{0.0, 0.0}, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.background.kind = Gaussian{{0.0}, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.background.kind = Mixture{{Gaussian{{0.0, 0.0}, 1.0}, Gaussian{{1.0, 0.0}, 1.0}}, {0.5, 0.6}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.background.kind = Mixture{{Gaussian{{0.0, 0.0}, 1.0}, Gaussian{{1.0, 0.0}, 1.0}}, {1.2, -0.2}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.background.kind =
      Mixture{{Gaussian{{0.0, 0.0}, 1.0}, Gaussian{{1.0, 0.0}, 1.0}}, {0.5, 0.5 + 1e-12}};
  CHECK_NOTHROW(bad.validate());
}

TEST_CASE("make_dataset is deterministic") {
  auto c = preset_config("synth-appdx-d");
  auto a = make_dataset(c, 6000, 0.5, 7);
  auto b = make_dataset(c, 6000, 0.5, 7);
  CHECK(a == b);
  CHECK(dataset_to_string(a) == dataset_to_string(b));
  auto other = make_dataset(c, 6000, 0.5, 8);
  CHECK_FALSE(a == other);
}

TEST_CASE("appendix preset sizes") {
  const auto& info = preset_info("synth-appdx-d");
  CHECK(info.default_n == 6000);
  auto c = preset_config("synth-appdx-d");
  CHECK(c.d == 2);
  CHECK(c.m == 9);
  CHECK(c.k == 3);
  auto ds = make_dataset(c, info.default_n, info.default_test_fraction, 0);
  CHECK(ds.size() == 6000);
  CHECK(ds.n_test() == 3000);
  CHECK(ds.n_train() == 3000);
  CHECK(ds.training_view(Split::train).size() == 3000);
  CHECK(ds.evaluation_view(Split::test).size() == 3000);
  CHECK(ds.evaluation_view(Split::all).size() == 6000);
}

TEST_CASE("split sizes are floor-exact") {
  auto c = gaussian_config(9, 1.0);
  auto ds = make_dataset(c, 10, 0.0, 3);
  CHECK(ds.n_train() == 10);
  CHECK(ds.n_test() == 0);
  CHECK(ds.evaluation_view(Split::test).size() == 0);
  auto ds2 = make_dataset(c, 7, 0.5, 3);
  CHECK(ds2.n_test() == 3);
  CHECK(ds2.n_train() == 4);
  CHECK_THROWS_AS(make_dataset(c, 10, 1.0, 3), ConfigError);
  CHECK_THROWS_AS(make_dataset(c, 0, 0.0, 3), ConfigError);
}

TEST_CASE("instances are independent of how many are generated") {
  auto c = gaussian_config(9, 1.0);
  auto small = make_dataset(c, 5, 0.0, 21);
  auto large = make_dataset(c, 50, 0.0, 21);
  for (std::size_t i = 0; i < 5; ++i) CHECK(small.instances()[i] == large.instances()[i]);
}

TEST_CASE("training view hides the foreground index") {
  static_assert(!HasFgIndex<TrainingView>);
  static_assert(HasFgIndex<EvaluationView>);
  auto ds = make_dataset(gaussian_config(9, 1.0), 20, 0.25, 1);
  auto ev = ds.evaluation_view(Split::test);
  auto tv = ev.without_foreground();
  REQUIRE(tv.size() == ev.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    CHECK(tv.label(i) == ev.label(i));
    CHECK(tv.segments(i).data() == ev.segments(i).data());
  }
}

TEST_CASE("save and load round-trip") {
  auto dir = tmp_dir("roundtrip");
  auto ds = make_dataset(preset_config("synth-appdx-d"), 300, 0.5, 5, "synth-appdx-d");
  save_dataset(ds, dir / "ds.csv");
  auto back = load_dataset(dir / "ds.csv");
  CHECK(back == ds);
  CHECK(back.seed() == 5);
  CHECK(back.test_fraction() == 0.5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.instances()[i].fg_index == ds.instances()[i].fg_index);
    CHECK(back.instances()[i].segments == ds.instances()[i].segments);
  }
  CHECK(dataset_to_string(back) == dataset_to_string(ds));

  auto expected = SdcDims{2, 9, 3};
  CHECK_NOTHROW(load_dataset(dir / "ds.csv", expected));
  CHECK_THROWS_AS(load_dataset(dir / "ds.csv", SdcDims{2, 8, 3}), SchemaError);
}

TEST_CASE("header carries version 1") {
  auto ds = make_dataset(gaussian_config(2, 1.0), 3, 0.0, 0);
  auto text = dataset_to_string(ds);
  auto header = text.substr(0, text.find('\n'));
  CHECK(header.find("\"version\":1") != std::string::npos);
  CHECK(header.find("\"d\":2") != std::string::npos);
  CHECK(header.find("\"m\":2") != std::string::npos);
  CHECK(header.find("\"k\":3") != std::string::npos);
  CHECK_NOTHROW(dataset_from_string(text));
}

TEST_CASE("malformed files raise parse errors") {
  auto ds = make_dataset(gaussian_config(9, 1.0), 20, 0.0, 2);
  auto text = dataset_to_string(ds);

  auto truncated = text.substr(0, text.size() - 40);
  CHECK_THROWS_AS(dataset_from_string(truncated), ParseError);

  auto lost_line = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  CHECK_THROWS_AS(dataset_from_string(lost_line), ParseError);

  CHECK_THROWS_AS(dataset_from_string(""), ParseError);
  CHECK_THROWS_AS(dataset_from_string("{not json\n"), ParseError);

  auto garbage = text;
  auto pos = garbage.find('\n') + 1;
  garbage.replace(garbage.find(',', pos) + 1, 1, "x");
  try {
    dataset_from_string(garbage);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= pos);
    CHECK(e.offset() < garbage.size());
  }

  auto version = text;
  version.replace(version.find("\"version\":1"), 11, "\"version\":9");
  CHECK_THROWS_AS(dataset_from_string(version), SchemaError);

  CHECK_THROWS_AS(load_dataset(tmp_dir("missing") / "nope.csv"), Error);
}

TEST_CASE("file pools") {
  auto dir = tmp_dir("pool");
  {
    std::ofstream out(dir / "pool.csv");
    out << "bg,0.0,0.0\nbg,0.1,0.1\nbg,0.2,0.2\nbg,0.3,0.3\n"
        << "a,1.0,1.0\na,1.1,1.1\nb,2.0,2.0\nc,3.0,3.0\n";
  }
  SdcConfig c;
  c.d = 2;
  c.m = 2;
  c.k = 3;
  c.background.kind = FromFile{dir / "pool.csv", {"bg"}};
  c.foregrounds = {{FromFile{dir / "pool.csv", {"a"}}},
                   {FromFile{dir / "pool.csv", {"b"}}},
                   {FromFile{dir / "pool.csv", {"c"}}}};
  CHECK_NOTHROW(c.validate());

  SUBCASE("without replacement exhausts") {
    MosaicSampler sampler(c, 0);
    bool exhausted = false;
    std::size_t drawn = 0;
    try {
      for (std::size_t i = 0; i < 10; ++i) {
        CounterRng rng(CounterRng::derive(1, {i}));
        auto inst = sampler.sample(rng);
        auto fg = inst.segment(inst.fg_index);
        CHECK(std::floor(fg[0]) == static_cast<double>(inst.label + 1));
        ++drawn;
      }
    } catch (const PoolExhaustedError&) {
      exhausted = true;
    }
    CHECK(exhausted);
    CHECK(drawn <= 4);
  }

  SUBCASE("with replacement keeps drawing") {
    c.sample_with_replacement = true;
    MosaicSampler sampler(c, 0);
    for (std::size_t i = 0; i < 50; ++i) {
      CounterRng rng(CounterRng::derive(1, {i}));
      auto inst = sampler.sample(rng);
      for (std::size_t j = 0; j < inst.m; ++j)
        if (j != inst.fg_index) CHECK(inst.segment(j)[0] < 0.5);
    }
  }

  SUBCASE("unknown tag") {
    c.foregrounds[2] = {FromFile{dir / "pool.csv", {"zzz"}}};
    CHECK_THROWS_AS(MosaicSampler(c, 0), ConfigError);
  }

  SUBCASE("bad dimension") {
    std::ofstream(dir / "bad.csv") << "bg,0.0\n";
    c.background.kind = FromFile{dir / "bad.csv", {"bg"}};
    CHECK_THROWS_AS(MosaicSampler(c, 0), ParseError);
  }
}

TEST_CASE("presets") {
  CHECK(presets().size() >= 4);
  for (const auto& p : presets()) {
    auto c = preset_config(p.name);
    CHECK_NOTHROW(c.validate());
  }
  CHECK(preset_config("em3").k == 6);
  try {
    preset_info("nope");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("synth-appdx-d") != std::string::npos);
  }
}
