#include "mtpfn/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtpfn/baseline.hpp"
#include "mtpfn/checkpoint.hpp"
#include "mtpfn/inference.hpp"
#include "mtpfn/prior.hpp"

namespace mtpfn::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidConfig:
      return kExitConfig;
    case ErrorCode::DivergenceDetected:
    case ErrorCode::NonFiniteGradient:
      return kExitDivergence;
    case ErrorCode::MissingResults:
      return kExitMissingResults;
    default:
      return kExitData;
  }
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::string curve_csv(const std::vector<double>& curve) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) ss << i << ',' << curve[i] << '\n';
  return ss.str();
}

json report_json(const std::vector<ModelResult>& results, const std::vector<std::string>& names,
                 const std::vector<double>& eps_list, const std::map<std::string, double>* mean_delta) {
  json models = json::array();
  for (const auto& r : results) {
    json tasks = json::array();
    for (std::size_t t = 0; t < r.report.tasks.size(); ++t) {
      const TaskMetrics& m = r.report.tasks[t];
      json pam = json::object();
      for (std::size_t e = 0; e < eps_list.size(); ++e) pam[pam_label(eps_list[e])] = m.pam[e];
      tasks.push_back({{"task", names[t]}, {"mae_pct", m.mae_pct}, {"pam", pam}, {"ev", m.ev}});
    }
    json row = {{"model", r.model}, {"seed", r.seed}, {"tasks", tasks}};
    row["delta_m"] = r.report.delta_m ? json(*r.report.delta_m) : json(nullptr);
    models.push_back(std::move(row));
  }
  json doc = {{"schema_version", 1}, {"targets", names}, {"eps_list", eps_list}, {"results", models}};
  if (mean_delta) doc["mean_delta_m"] = *mean_delta;
  return doc;
}

}  // namespace

TabularDataset load_dataset(const DataConfig& cfg) {
  if (cfg.path) return load_csv(*cfg.path, cfg.n_targets);
  return gen_synthetic_steel(cfg.synth);
}

PreparedData prepare_data(const TabularDataset& ds, const DataConfig& cfg, std::uint64_t split_seed) {
  const Split s = split(ds, {cfg.train_fraction, split_seed});
  const Prepared p = impute_and_stats(ds, s.train);
  const Matrix x = standardize_features(p.data.x, p.features);
  PreparedData out;
  out.target_names = ds.target_names;
  out.x_train = select_rows(x, s.train);
  out.x_test = select_rows(x, s.test);
  out.y_train = select_rows(ds.y, s.train);
  out.y_test = select_rows(ds.y, s.test);
  out.stats = p.targets;
  out.finetune.x = out.x_train;
  out.finetune.y_std = standardize_targets(out.y_train, out.stats);
  return out;
}

ModelParams base_params(const RunConfig& cfg, std::vector<double>* curve) {
  if (cfg.pretrained) return load_checkpoint(*cfg.pretrained).params;
  ModelParams p = init_params(cfg.model, cfg.pretrain.seed);
  std::vector<double> c = pretrain(p, cfg.pretrain.prior, cfg.pretrain.steps, cfg.pretrain.lr, cfg.pretrain.seed);
  if (curve) *curve = std::move(c);
  return p;
}

Matrix predict_test(const FineTunedBundle& bundle, const PreparedData& data, const EvalConfig& eval,
                    std::uint64_t seed) {
  InferenceConfig icfg;
  icfg.context_cap = eval.context_cap;
  icfg.seed = seed;
  return predict_all_tasks(bundle.params, data.x_train, data.y_train, data.stats, data.x_test, icfg);
}

std::string results_csv(const std::vector<ModelResult>& results,
                        const std::vector<std::string>& target_names,
                        const std::vector<double>& eps_list) {
  std::ostringstream ss;
  ss << "model,seed,task,mae_pct";
  for (double e : eps_list) ss << ',' << pam_label(e);
  ss << ",ev\n";
  auto row = [&](const std::string& model, const std::string& seed, std::size_t t, const TaskMetrics& m) {
    ss << model << ',' << seed << ',' << target_names[t] << ',' << num(m.mae_pct);
    for (double p : m.pam) ss << ',' << num(p);
    ss << ',' << num(m.ev) << '\n';
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ModelResult*>> by_model;
  for (const auto& r : results) {
    if (!by_model.contains(r.model)) order.push_back(r.model);
    by_model[r.model].push_back(&r);
    for (std::size_t t = 0; t < r.report.tasks.size(); ++t) row(r.model, std::to_string(r.seed), t, r.report.tasks[t]);
  }
  for (const auto& model : order) {
    const auto& rs = by_model[model];
    const double n = static_cast<double>(rs.size());
    for (std::size_t t = 0; t < target_names.size(); ++t) {
      TaskMetrics mean;
      mean.pam.assign(eps_list.size(), 0.0);
      for (const ModelResult* r : rs) {
        const TaskMetrics& m = r->report.tasks[t];
        mean.mae_pct += m.mae_pct / n;
        for (std::size_t e = 0; e < eps_list.size(); ++e) mean.pam[e] += m.pam[e] / n;
        mean.ev += m.ev / n;
      }
      row(model, "mean", t, mean);
    }
  }
  return ss.str();
}

namespace {

struct Options {
  fs::path config;
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  fs::path out;
  std::vector<fs::path> checkpoints;
};

RunConfig load_config(const Options& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.deterministic) cfg.finetune.deterministic = true;
  if (o.seed) cfg.seeds = {*o.seed};
  return cfg;
}

int cmd_pretrain(const Options& o, CliIo& io) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) cfg.pretrain.seed = *o.seed;
  ModelParams p = init_params(cfg.model, cfg.pretrain.seed);
  const fs::path curve_path = with_suffix(o.out, ".loss.csv");
  const auto log = [&](std::size_t step, double loss) {
    if ((step + 1) % 1000 == 0) io.err << "step " << step + 1 << " loss " << loss << '\n';
  };
  try {
    const auto curve = pretrain(p, cfg.pretrain.prior, cfg.pretrain.steps, cfg.pretrain.lr, cfg.pretrain.seed, log);
    write_text(curve_path, curve_csv(curve));
  } catch (const TrainingDiverged& e) {
    write_text(curve_path, curve_csv(e.partial_curve()));
    throw;
  }
  Checkpoint ck;
  ck.params = std::move(p);
  save_checkpoint(ck, o.out);
  io.out << "wrote " << o.out.string() << " and " << curve_path.string() << '\n';
  return kExitOk;
}

int cmd_finetune(const Options& o, CliIo& io) {
  const RunConfig cfg = load_config(o);
  if (!o.strategy) throw Error(ErrorCode::ConfigError, "--strategy is required");
  if (o.checkpoints.size() != 1) throw Error(ErrorCode::ConfigError, "finetune takes exactly one --checkpoint");
  const FineTuneStrategy strategy = parse_strategy(*o.strategy);
  const std::uint64_t seed = cfg.seeds.front();
  const PreparedData data = prepare_data(load_dataset(cfg.data), cfg.data, seed);
  const Checkpoint in = load_checkpoint(o.checkpoints.front());
  FineTuneConfig ft = cfg.finetune;
  ft.seed = seed;
  const FineTunedBundle bundle = run_strategy(in.params, data.finetune, strategy, ft);

  json files = json::array();
  for (std::size_t i = 0; i < bundle.params.size(); ++i) {
    const bool per_task = bundle.params.size() > 1;
    const fs::path path = per_task ? with_suffix(o.out, ".task" + std::to_string(i)) : o.out;
    Checkpoint ck;
    ck.params = bundle.params[i];
    ck.target_stats = data.stats;
    save_checkpoint(ck, path);
    files.push_back(path.string());
  }
  json runs = json::array();
  for (const auto& r : bundle.runs) {
    runs.push_back({{"task", r.task}, {"steps", r.steps}, {"elapsed_seconds", r.elapsed_seconds},
                    {"final_loss", r.final_loss}});
  }
  const json meta = {{"strategy", std::string(strategy.short_name())},
                     {"seed", seed},
                     {"deterministic", ft.deterministic},
                     {"total_steps", bundle.total_steps()},
                     {"total_seconds", bundle.total_seconds()},
                     {"checkpoints", files},
                     {"runs", runs}};
  write_text(with_suffix(o.out, ".meta.json"), meta.dump(2) + "\n");
  io.out << "wrote " << files.size() << " checkpoint(s)\n";
  return kExitOk;
}

int cmd_eval(const Options& o, CliIo& io) {
  const RunConfig cfg = load_config(o);
  if (o.checkpoints.empty()) throw Error(ErrorCode::ConfigError, "eval needs --checkpoint");
  FineTunedBundle bundle;
  for (const auto& c : o.checkpoints) bundle.params.push_back(load_checkpoint(c).params);
  const std::string label = o.strategy.value_or("model");
  const TabularDataset ds = load_dataset(cfg.data);
  std::vector<ModelResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    const PreparedData data = prepare_data(ds, cfg.data, seed);
    Matrix yhat = predict_test(bundle, data, cfg.eval, seed);
    if (io.eval_hook) io.eval_hook(yhat, data.y_test);
    results.push_back({label, seed, evaluate(data.y_test, yhat, cfg.eval.eps_list)});
  }
  fs::create_directories(o.out);
  write_text(o.out / "results.csv", results_csv(results, ds.target_names, cfg.eval.eps_list));
  write_text(o.out / "report.json", report_json(results, ds.target_names, cfg.eval.eps_list, nullptr).dump(2) + "\n");
  io.out << "evaluated " << results.size() << " seed(s)\n";
  return kExitOk;
}

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"nft", "sft", "mft", "maft"};
  return names;
}

int cmd_benchmark(const Options& o, CliIo& io) {
  const RunConfig cfg = load_config(o);
  fs::create_directories(o.out);
  const TabularDataset ds = load_dataset(cfg.data);
  const auto names = ds.target_names;
  const auto& eps = cfg.eval.eps_list;
  write_text(o.out / "spearman.csv", [&] {
    const Matrix s = spearman_matrix(ds.y);
    std::ostringstream ss;
    ss << "task";
    for (const auto& n : names) ss << ',' << n;
    ss << '\n';
    for (std::size_t a = 0; a < s.rows; ++a) {
      ss << names[a];
      for (std::size_t b = 0; b < s.cols; ++b) ss << ',' << num(s(a, b));
      ss << '\n';
    }
    return ss.str();
  }());

  std::vector<double> curve;
  const ModelParams base = base_params(cfg, &curve);
  if (!cfg.pretrained) {
    Checkpoint ck;
    ck.params = base;
    save_checkpoint(ck, o.out / "pretrained.json");
    write_text(o.out / "pretrain_loss.csv", curve_csv(curve));
  }

  const double max_budget =
      cfg.eval.budget_sweep.empty() ? 0.0 : *std::max_element(cfg.eval.budget_sweep.begin(), cfg.eval.budget_sweep.end());
  std::vector<ModelResult> results;
  std::vector<std::pair<std::string, std::uint64_t>> deltas_key;
  std::vector<std::array<double, 2>> deltas;  // vs stl_mlp, vs nft
  std::map<std::pair<double, std::string>, std::vector<double>> gain;
  json runs_meta = json::array();
  json failures = json::array();
  std::size_t completed = 0;

  for (std::uint64_t seed : cfg.seeds) {
    try {
      const PreparedData data = prepare_data(ds, cfg.data, seed);
      std::vector<ModelResult> seed_results;
      const auto stl = train_stl_mlp(data.x_train, data.finetune.y_std, cfg.baseline, seed);
      const Matrix stl_pred = destandardize_targets(predict_stl(stl, data.x_test), data.stats);
      seed_results.push_back({"stl_mlp", seed, evaluate(data.y_test, stl_pred, eps)});
      const std::vector<double> stl_mae = seed_results.front().report.mae_column();

      FineTuneConfig ft = cfg.finetune;
      ft.seed = seed;
      std::vector<double> nft_mae;
      for (const auto& name : strategy_names()) {
        const FineTunedBundle b = run_strategy(base, data.finetune, parse_strategy(name), ft);
        const Matrix yhat = predict_test(b, data, cfg.eval, seed);
        seed_results.push_back({name, seed, evaluate(data.y_test, yhat, eps)});
        if (name == "nft") nft_mae = seed_results.back().report.mae_column();
        runs_meta.push_back({{"model", name}, {"seed", seed}, {"runs", b.runs.size()},
                             {"steps", b.total_steps()}, {"seconds", b.total_seconds()}});
        io.err << "seed " << seed << ' ' << name << " done (" << b.total_steps() << " steps)\n";
      }

      for (double budget : cfg.eval.budget_sweep) {
        for (const auto& name : strategy_names()) {
          FineTuneConfig bc = ft;
          if (bc.deterministic) {
            bc.max_steps = max_budget > 0.0
                               ? static_cast<std::size_t>(std::llround(static_cast<double>(ft.max_steps) * budget / max_budget))
                               : 0;
          } else {
            bc.budget_seconds = budget;
          }
          const bool zero = name == "nft" || (bc.deterministic ? bc.max_steps == 0 : budget == 0.0);
          std::vector<double> mae;
          if (zero) {
            mae = nft_mae;
          } else {
            const FineTunedBundle b = run_strategy(base, data.finetune, parse_strategy(name), bc);
            mae = evaluate(data.y_test, predict_test(b, data, cfg.eval, seed), eps).mae_column();
          }
          gain[{budget, name}].push_back(mtl_gain(mae, stl_mae));
        }
      }

      for (auto& r : seed_results) {
        r.report.delta_m = mtl_gain(r.report.mae_column(), stl_mae);
        deltas_key.emplace_back(r.model, seed);
        deltas.push_back({*r.report.delta_m, mtl_gain(r.report.mae_column(), nft_mae)});
        results.push_back(std::move(r));
      }
      ++completed;
    } catch (const Error& e) {
      io.err << "seed " << seed << " failed: " << e.what() << '\n';
      failures.push_back({{"seed", seed}, {"error", e.what()}});
    }
  }

  const json meta = {{"completed_seeds", completed}, {"failures", failures}, {"runs", runs_meta}};
  write_text(o.out / "runs.json", meta.dump(2) + "\n");
  if (completed == 0) {
    io.err << "no seed completed\n";
    return kExitData;
  }

  write_text(o.out / "results.csv", results_csv(results, names, eps));

  std::ostringstream dm;
  dm << "model,seed,delta_m,delta_m_vs_nft\n";
  std::vector<std::string> order;
  std::map<std::string, std::array<double, 3>> sums;  // delta, delta_vs_nft, count
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const auto& [model, seed] = deltas_key[i];
    dm << model << ',' << seed << ',' << num(deltas[i][0]) << ',' << num(deltas[i][1]) << '\n';
    if (!sums.contains(model)) order.push_back(model);
    auto& s = sums[model];
    s[0] += deltas[i][0];
    s[1] += deltas[i][1];
    s[2] += 1.0;
  }
  std::map<std::string, double> mean_delta;
  for (const auto& model : order) {
    const auto& s = sums[model];
    dm << model << ",mean," << num(s[0] / s[2]) << ',' << num(s[1] / s[2]) << '\n';
    mean_delta[model] = s[0] / s[2];
  }
  write_text(o.out / "delta_m.csv", dm.str());
  write_text(o.out / "report.json", report_json(results, names, eps, &mean_delta).dump(2) + "\n");

  if (!cfg.eval.budget_sweep.empty()) {
    std::ostringstream gc;
    gc << "budget_s,strategy,delta_m\n";
    for (double budget : cfg.eval.budget_sweep) {
      for (const auto& name : strategy_names()) {
        const auto& v = gain[{budget, name}];
        gc << num(budget) << ',' << name << ',' << num(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())) << '\n';
      }
    }
    write_text(o.out / "gain_curve.csv", gc.str());
  }
  io.out << "benchmark complete: " << completed << " of " << cfg.seeds.size() << " seed(s)\n";
  return kExitOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int cmd_report(const fs::path& dir, CliIo& io) {
  const fs::path results = dir / "results.csv";
  std::ifstream in(results);
  if (!in) throw Error(ErrorCode::MissingResults, "no results.csv in " + dir.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingResults, results.string() + " is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "model" || header[1] != "seed" || header[2] != "task") {
    throw Error(ErrorCode::MissingResults, results.string() + " has an unexpected header");
  }
  const std::size_t metrics = header.size() - 3;
  std::vector<std::string> models, tasks;
  std::map<std::string, std::map<std::string, std::vector<double>>> table;
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size() || cells[1] != "mean") continue;
    if (std::find(models.begin(), models.end(), cells[0]) == models.end()) models.push_back(cells[0]);
    if (std::find(tasks.begin(), tasks.end(), cells[2]) == tasks.end()) tasks.push_back(cells[2]);
    std::vector<double> v;
    for (std::size_t i = 3; i < cells.size(); ++i) v.push_back(std::stod(cells[i]));
    table[cells[0]][cells[2]] = std::move(v);
  }
  if (models.empty()) throw Error(ErrorCode::MissingResults, results.string() + " has no aggregate rows");

  auto mae_of = [&](const std::string& model) {
    std::vector<double> out;
    for (const auto& t : tasks) out.push_back(table[model][t][0]);
    return out;
  };
  const bool has_baseline = table.contains("stl_mlp");

  std::ostringstream txt, csv;
  csv << "model";
  txt << "model";
  for (const auto& t : tasks) {
    for (std::size_t m = 0; m < metrics; ++m) {
      csv << ',' << t << ':' << header[3 + m];
      txt << " | " << t << ':' << header[3 + m];
    }
  }
  csv << ",delta_m\n";
  txt << " | delta_m\n";
  for (const auto& model : models) {
    csv << model;
    txt << model;
    for (const auto& t : tasks) {
      for (double v : table[model][t]) {
        csv << ',' << num(v);
        char buf[32];
        std::snprintf(buf, sizeof buf, " | %.3f", v);
        txt << buf;
      }
    }
    if (has_baseline) {
      const double d = mtl_gain(mae_of(model), mae_of("stl_mlp"));
      csv << ',' << num(d);
      char buf[32];
      std::snprintf(buf, sizeof buf, " | %+.2f", d);
      txt << buf;
    } else {
      csv << ',';
      txt << " | n/a";
    }
    csv << '\n';
    txt << '\n';
  }
  std::ifstream sp(dir / "spearman.csv");
  if (sp) {
    txt << "\nspearman\n";
    while (std::getline(sp, line)) txt << line << '\n';
  }
  write_text(dir / "report_table.csv", csv.str());
  write_text(dir / "report.txt", txt.str());
  io.out << txt.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, CliIo io) {
  CLI::App app{"Multitask fine-tuning of a tabular prior-fitted network"};
  app.require_subcommand(1);
  Options o;
  fs::path report_dir;

  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", o.config, "RunConfig JSON")->required();
    sub->add_option("--seed", o.seed, "override the seed list with a single seed");
    auto* out = sub->add_option("--out", o.out, "output path");
    if (needs_out) out->required();
  };
  auto* pre = app.add_subcommand("pretrain", "pre-train on the synthetic prior");
  common(pre, true);
  auto* fin = app.add_subcommand("finetune", "fine-tune a checkpoint");
  common(fin, true);
  fin->add_option("--strategy", o.strategy, "nft, sft, mft or maft")->required();
  fin->add_option("--checkpoint", o.checkpoints, "input checkpoint")->required()->expected(1);
  fin->add_flag("--deterministic", o.deterministic, "run exactly max_steps");
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  common(ev, true);
  ev->add_option("--checkpoint", o.checkpoints, "one checkpoint, or one per task")->required();
  ev->add_option("--strategy", o.strategy, "model label for the report");
  auto* bm = app.add_subcommand("benchmark", "run every strategy and the baseline over all seeds");
  common(bm, true);
  bm->add_flag("--deterministic", o.deterministic, "run exactly max_steps");
  auto* rep = app.add_subcommand("report", "render a results directory as a table");
  rep->add_option("dir", report_dir, "results directory");
  rep->add_option("--out", report_dir, "results directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*pre) return cmd_pretrain(o, io);
    if (*fin) return cmd_finetune(o, io);
    if (*ev) return cmd_eval(o, io);
    if (*bm) return cmd_benchmark(o, io);
    if (report_dir.empty()) throw Error(ErrorCode::ConfigError, "report needs a results directory");
    return cmd_report(report_dir, io);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace mtpfn::bench
