#pragma once

// Tabular datasets: CSV ingestion, train/test splitting, mean imputation and
// standardization statistics, and a synthetic multitask generator with four
// positively correlated strength targets and an anti-correlated elongation
// target.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtpfn/matrix.hpp"
#include "mtpfn/targets.hpp"

namespace mtpfn {

struct TabularDataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  Matrix x;  // n x D; NaN marks a missing cell before imputation
  Matrix y;  // n x T

  std::size_t rows() const noexcept { return x.rows; }
  std::size_t features() const noexcept { return x.cols; }
  std::size_t tasks() const noexcept { return y.cols; }
};

// Comma separated, header first, '.' decimal point; the last n_targets
// columns are targets. An empty feature cell is missing; targets must be
// present. Throws IoError, TooFewColumns, MalformedRow, NonNumericCell,
// EmptyDataset, InvalidConfig (duplicate names).
TabularDataset load_csv(const std::filesystem::path& path, std::size_t n_targets);

// Writes the dataset in the format read by load_csv (17 significant digits).
void save_csv(const TabularDataset& ds, const std::filesystem::path& path);

struct SplitSpec {
  double train_fraction = 0.70;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle; floor(fraction * n) train rows (at least 1), the rest test,
// both sorted. Throws PreconditionFailed (n < 2), InvalidConfig.
Split split(const TabularDataset& ds, const SplitSpec& spec);

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;  // population std; 1 for a constant column
};

struct Prepared {
  TabularDataset data;  // missing cells replaced by the train-split mean
  FeatureStats features;
  TargetStats targets;
};

// All statistics come from the train rows only. Throws EmptyBatch,
// DegenerateColumn (a feature missing on every train row), ZeroVarianceTask.
Prepared impute_and_stats(const TabularDataset& ds, std::span<const std::size_t> train_rows);

// (x - mean) / std per column.
Matrix standardize_features(const Matrix& x, const FeatureStats& stats);

struct SynthConfig {
  std::size_t n = 2000;
  std::size_t d = 20;
  std::size_t strength_tasks = 4;
  std::size_t elongation_tasks = 1;
  // Noise std relative to each task's signal amplitude; elongation targets get
  // elongation_noise_factor times as much.
  double noise_std = 0.15;
  double elongation_noise_factor = 3.0;
  std::size_t teacher_hidden = 32;
  std::uint64_t seed = 0;

  std::size_t tasks() const noexcept { return strength_tasks + elongation_tasks; }
  // Throws InvalidConfig.
  void validate() const;
};

TabularDataset gen_synthetic_steel(const SynthConfig& cfg);

}  // namespace mtpfn
