#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <unistd.h>

#include "doctest.h"
#include "mtpfn/dataio.hpp"
#include "mtpfn/metrics.hpp"
#include "oracles.hpp"

using namespace mtpfn;
using oracle::error_code_of;
namespace fs = std::filesystem;

namespace {

struct TempCsv {
  fs::path path;
  explicit TempCsv(const std::string& text) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mtpfn_dataio_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".csv");
    std::ofstream(path, std::ios::binary) << text;
  }
  ~TempCsv() { fs::remove(path); }
};

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("load_csv reads a small file") {
  TempCsv f("a,b,t\n1,2,3\n4.5,-1e-3,6\n7,8,9\n");
  const TabularDataset ds = load_csv(f.path, 1);
  CHECK(ds.rows() == 3);
  CHECK(ds.features() == 2);
  CHECK(ds.tasks() == 1);
  CHECK(ds.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(ds.target_names == std::vector<std::string>{"t"});
  CHECK(ds.x(1, 1) == -1e-3);
  CHECK(ds.y(2, 0) == 9.0);
}

TEST_CASE("load_csv tolerates BOM, CRLF, padding and blank lines; empty features are missing") {
  TempCsv f("\xEF\xBB\xBFx1, x2 ,y1,y2\r\n1, ,3,4\r\n\r\n5,6,7,8\r\n");
  const TabularDataset ds = load_csv(f.path, 2);
  CHECK(ds.feature_names == std::vector<std::string>{"x1", "x2"});
  CHECK(ds.rows() == 2);
  CHECK(std::isnan(ds.x(0, 1)));
  CHECK(ds.y(1, 1) == 8.0);
}

TEST_CASE("load_csv errors") {
  TempCsv header_only("a,b,t\n");
  CHECK(error_code_of([&] { load_csv(header_only.path, 1); }) == ErrorCode::EmptyDataset);
  TempCsv empty("");
  CHECK(error_code_of([&] { load_csv(empty.path, 1); }) == ErrorCode::EmptyDataset);
  TempCsv bad("a,b,t\n1,2,3\n1,abc,3\n");
  try {
    load_csv(bad.path, 1);
    FAIL("expected NonNumericCell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonNumericCell);
    CHECK(std::string(e.what()).find("line 3, column 2") != std::string::npos);
  }
  TempCsv short_row("a,b,t\n1,2\n");
  CHECK(error_code_of([&] { load_csv(short_row.path, 1); }) == ErrorCode::MalformedRow);
  TempCsv narrow("a,t\n1,2\n");
  CHECK(error_code_of([&] { load_csv(narrow.path, 2); }) == ErrorCode::TooFewColumns);
  TempCsv missing_target("a,t\n1,\n");
  CHECK(error_code_of([&] { load_csv(missing_target.path, 1); }) == ErrorCode::NonNumericCell);
  TempCsv dup("a,a,t\n1,2,3\n");
  CHECK(error_code_of([&] { load_csv(dup.path, 1); }) == ErrorCode::InvalidConfig);
  TempCsv inf("a,t\ninf,2\n");
  CHECK(error_code_of([&] { load_csv(inf.path, 1); }) == ErrorCode::NonNumericCell);
  CHECK(error_code_of([] { load_csv("/nonexistent/dir/file.csv", 1); }) == ErrorCode::IoError);
}

TEST_CASE("save_csv round trips exactly") {
  SynthConfig cfg;
  cfg.n = 30;
  cfg.d = 4;
  cfg.seed = 11;
  TabularDataset ds = gen_synthetic_steel(cfg);
  ds.x(3, 2) = std::nan("");
  TempCsv f("");
  save_csv(ds, f.path);
  const TabularDataset back = load_csv(f.path, ds.tasks());
  CHECK(back.feature_names == ds.feature_names);
  CHECK(back.target_names == ds.target_names);
  CHECK(back.y.data == ds.y.data);
  CHECK(std::isnan(back.x(3, 2)));
  for (std::size_t i = 0; i < ds.x.data.size(); ++i) {
    if (!std::isnan(ds.x.data[i])) CHECK(back.x.data[i] == ds.x.data[i]);
  }
}

TEST_CASE("split is a seeded partition with floor sizing") {
  TabularDataset ds;
  ds.x = Matrix(10, 1);
  ds.y = Matrix(10, 1);
  const Split s = split(ds, {0.7, 4});
  CHECK(s.train.size() == 7);
  CHECK(s.test.size() == 3);
  std::set<std::size_t> all = as_set(s.train);
  for (std::size_t i : s.test) CHECK(all.insert(i).second);
  CHECK(all.size() == 10);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  const Split again = split(ds, {0.7, 4});
  CHECK(again.train == s.train);
  CHECK(split(ds, {0.7, 5}).train != s.train);

  ds.x = Matrix(7, 1);
  ds.y = Matrix(7, 1);
  CHECK(split(ds, {0.7, 0}).train.size() == 4);  // floor(4.9)
  CHECK(split(ds, {0.01, 0}).train.size() == 1);
  CHECK(error_code_of([&] { split(ds, {1.0, 0}); }) == ErrorCode::InvalidConfig);
  ds.x = Matrix(1, 1);
  ds.y = Matrix(1, 1);
  CHECK(error_code_of([&] { split(ds, {0.7, 0}); }) == ErrorCode::PreconditionFailed);
}

TEST_CASE("imputation uses train-split means only") {
  TabularDataset ds;
  ds.feature_names = {"a", "b"};
  ds.target_names = {"t"};
  const double nan = std::nan("");
  ds.x = Matrix(4, 2, {1, nan, 3, 4, nan, 10, 100, nan});
  ds.y = Matrix(4, 1, {1, 2, 3, 4});
  const std::vector<std::size_t> train = {0, 1, 2};
  const Prepared p = impute_and_stats(ds, train);
  CHECK(p.features.mean[0] == 2.0);
  CHECK(p.features.mean[1] == 7.0);
  CHECK(p.data.x(2, 0) == 2.0);
  CHECK(p.data.x(0, 1) == 7.0);
  CHECK(p.data.x(3, 1) == 7.0);
  CHECK(p.data.x(3, 0) == 100.0);
  CHECK(p.targets.mean[0] == 2.0);
  for (double v : p.data.x.data) CHECK(std::isfinite(v));
}

TEST_CASE("no missing cells leaves x unchanged; constant columns get unit std") {
  TabularDataset ds;
  ds.feature_names = {"a", "c"};
  ds.target_names = {"t"};
  ds.x = Matrix(3, 2, {1, 5, 2, 5, 3, 5});
  ds.y = Matrix(3, 1, {1, 2, 4});
  const std::vector<std::size_t> all = {0, 1, 2};
  const Prepared p = impute_and_stats(ds, all);
  CHECK(p.data.x.data == ds.x.data);
  CHECK(p.features.std[1] == 1.0);
  const Matrix z = standardize_features(p.data.x, p.features);
  CHECK(z(0, 1) == 0.0);
  CHECK(z(0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0 / 3.0)));
}

TEST_CASE("imputation errors") {
  TabularDataset ds;
  ds.feature_names = {"a"};
  ds.target_names = {"t"};
  const double nan = std::nan("");
  ds.x = Matrix(3, 1, {nan, nan, 1});
  ds.y = Matrix(3, 1, {1, 2, 3});
  const std::vector<std::size_t> train = {0, 1};
  CHECK(error_code_of([&] { impute_and_stats(ds, train); }) == ErrorCode::DegenerateColumn);
  ds.x = Matrix(3, 1, {1, 2, 3});
  ds.y = Matrix(3, 1, {5, 5, 3});
  CHECK(error_code_of([&] { impute_and_stats(ds, train); }) == ErrorCode::ZeroVarianceTask);
  CHECK(error_code_of([&] { impute_and_stats(ds, {}); }) == ErrorCode::EmptyBatch);
}

TEST_CASE("statistics ignore test rows") {
  SynthConfig cfg;
  cfg.n = 50;
  cfg.d = 3;
  TabularDataset ds = gen_synthetic_steel(cfg);
  ds.x(7, 1) = std::nan("");
  const Split s = split(ds, {0.7, 1});
  const Prepared before = impute_and_stats(ds, s.train);
  for (std::size_t r : s.test) {
    for (std::size_t c = 0; c < ds.features(); ++c) ds.x(r, c) = 1e6 * static_cast<double>(c + 1);
    for (std::size_t c = 0; c < ds.tasks(); ++c) ds.y(r, c) = -1e6;
  }
  const Prepared after = impute_and_stats(ds, s.train);
  CHECK(after.features.mean == before.features.mean);
  CHECK(after.features.std == before.features.std);
  CHECK(after.targets == before.targets);
}

TEST_CASE("synthetic generator shape, names and determinism") {
  SynthConfig cfg;
  cfg.n = 100;
  cfg.d = 6;
  cfg.seed = 2;
  const TabularDataset a = gen_synthetic_steel(cfg);
  CHECK(a.rows() == 100);
  CHECK(a.features() == 6);
  CHECK(a.tasks() == 5);
  CHECK(a.target_names.back() == "elongation1");
  const TabularDataset b = gen_synthetic_steel(cfg);
  CHECK(a.x.data == b.x.data);
  CHECK(a.y.data == b.y.data);
  cfg.seed = 3;
  CHECK(gen_synthetic_steel(cfg).y.data != a.y.data);
  cfg.strength_tasks = 1;
  cfg.elongation_tasks = 0;
  CHECK(error_code_of([&] { gen_synthetic_steel(cfg); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("synthetic correlation structure holds across seeds") {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    const Matrix s = spearman_matrix(gen_synthetic_steel(cfg).y);
    bool pass = true;
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = a + 1; b < 4; ++b) pass = pass && s(a, b) > 0.9;
      pass = pass && s(a, 4) < -0.7;
    }
    ok += pass;
  }
  CHECK(ok >= 19);
}
