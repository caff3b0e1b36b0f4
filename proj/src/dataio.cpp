#include "mtpfn/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "mtpfn/error.hpp"
#include "mtpfn/prior.hpp"

namespace mtpfn {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::string location(std::size_t line, std::size_t col) {
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

TabularDataset load_csv(const std::filesystem::path& path, std::size_t n_targets) {
  if (n_targets < 1) throw Error(ErrorCode::InvalidConfig, "n_targets must be >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw Error(ErrorCode::EmptyDataset, path.string() + " has no header row");
  if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const auto header = split_fields(line);
  if (header.size() < n_targets + 1) {
    throw Error(ErrorCode::TooFewColumns, std::to_string(header.size()) + " columns cannot hold " +
                                              std::to_string(n_targets) + " targets and a feature");
  }
  const std::size_t cols = header.size();
  const std::size_t d = cols - n_targets;
  TabularDataset ds;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < cols; ++c) {
    std::string name(trim(header[c]));
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::InvalidConfig, "duplicate column name '" + name + "'");
    }
    (c < d ? ds.feature_names : ds.target_names).push_back(std::move(name));
  }

  std::vector<double> xs, ys;
  std::size_t n = 0;
  while (next_line()) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != cols) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(line_no) + " has " +
                                               std::to_string(fields.size()) + " fields, expected " +
                                               std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string_view cell = trim(fields[c]);
      double v = std::numeric_limits<double>::quiet_NaN();
      if (cell.empty()) {
        if (c >= d) {
          throw Error(ErrorCode::NonNumericCell, "missing target at " + location(line_no, c + 1));
        }
      } else {
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
          throw Error(ErrorCode::NonNumericCell,
                      "'" + std::string(cell) + "' at " + location(line_no, c + 1));
        }
      }
      (c < d ? xs : ys).push_back(v);
    }
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyDataset, path.string() + " has no data rows");
  ds.x = Matrix(n, d, std::move(xs));
  ds.y = Matrix(n, n_targets, std::move(ys));
  return ds;
}

void save_csv(const TabularDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  bool first = true;
  for (const auto* names : {&ds.feature_names, &ds.target_names}) {
    for (const auto& n : *names) {
      out << (first ? "" : ",") << n;
      first = false;
    }
  }
  out << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < ds.features(); ++c) {
      if (c > 0) out << ',';
      if (!std::isnan(ds.x(r, c))) out << ds.x(r, c);
    }
    for (std::size_t c = 0; c < ds.tasks(); ++c) out << ',' << ds.y(r, c);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

Split split(const TabularDataset& ds, const SplitSpec& spec) {
  const std::size_t n = ds.rows();
  if (n < 2) throw Error(ErrorCode::PreconditionFailed, "splitting needs at least 2 rows");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  // The small offset keeps products such as 0.7 * 10 from flooring to 6.
  auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Prepared impute_and_stats(const TabularDataset& ds, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw Error(ErrorCode::EmptyBatch, "no train rows");
  Prepared p;
  p.data = ds;
  const std::size_t d = ds.features();
  p.features.mean.assign(d, 0.0);
  p.features.std.assign(d, 1.0);
  for (std::size_t c = 0; c < d; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r : train_rows) {
      const double v = ds.x(r, c);
      if (!std::isnan(v)) {
        sum += v;
        ++count;
      }
    }
    if (count == 0) {
      throw Error(ErrorCode::DegenerateColumn,
                  "feature '" + ds.feature_names[c] + "' is missing on every train row");
    }
    const double mean = sum / static_cast<double>(count);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      if (std::isnan(p.data.x(r, c))) p.data.x(r, c) = mean;
    }
    double ss = 0.0;
    for (std::size_t r : train_rows) ss += (p.data.x(r, c) - mean) * (p.data.x(r, c) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(train_rows.size()));
    p.features.mean[c] = mean;
    p.features.std[c] = sd > 0.0 ? sd : 1.0;
  }
  p.targets = compute_target_stats(ds.y, train_rows);
  return p;
}

Matrix standardize_features(const Matrix& x, const FeatureStats& stats) {
  if (stats.mean.size() != x.cols || stats.std.size() != x.cols) {
    throw Error(ErrorCode::ShapeMismatch, "feature stats do not match the column count");
  }
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = (x(r, c) - stats.mean[c]) / stats.std[c];
  }
  return out;
}

void SynthConfig::validate() const {
  if (n < 2 || d < 1 || teacher_hidden < 1) {
    throw Error(ErrorCode::InvalidConfig, "synthetic data needs n >= 2, d >= 1, teacher_hidden >= 1");
  }
  if (tasks() < 2) throw Error(ErrorCode::InvalidConfig, "synthetic data needs at least 2 tasks");
  if (!(noise_std >= 0.0) || !(elongation_noise_factor >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "noise levels must be >= 0");
  }
}

TabularDataset gen_synthetic_steel(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  TabularDataset ds;
  ds.x = Matrix(cfg.n, cfg.d);
  for (auto& v : ds.x.data) v = normal(rng);
  for (std::size_t c = 0; c < cfg.d; ++c) ds.feature_names.push_back("x" + std::to_string(c + 1));

  std::vector<double> z;
  do {
    z = sample_teacher(rng, cfg.d, cfg.teacher_hidden, Activation::Tanh).apply(ds.x);
  } while (!standardize_in_place(z));

  ds.y = Matrix(cfg.n, cfg.tasks());
  std::uniform_real_distribution<double> strength_slope(30.0, 60.0);
  std::uniform_real_distribution<double> strength_level(300.0, 600.0);
  std::uniform_real_distribution<double> elong_slope(2.0, 4.0);
  std::uniform_real_distribution<double> elong_level(20.0, 30.0);
  for (std::size_t t = 0; t < cfg.tasks(); ++t) {
    const bool strength = t < cfg.strength_tasks;
    const double a = strength ? strength_slope(rng) : -elong_slope(rng);
    const double b = strength ? strength_level(rng) : elong_level(rng);
    const double sigma =
        cfg.noise_std * std::abs(a) * (strength ? 1.0 : cfg.elongation_noise_factor);
    for (std::size_t r = 0; r < cfg.n; ++r) ds.y(r, t) = a * z[r] + b + sigma * normal(rng);
    ds.target_names.push_back(strength ? "strength" + std::to_string(t + 1)
                                       : "elongation" + std::to_string(t - cfg.strength_tasks + 1));
  }
  return ds;
}

}  // namespace mtpfn
