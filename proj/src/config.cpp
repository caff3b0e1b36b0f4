#include "mtpfn/config.hpp"

#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "mtpfn/error.hpp"

namespace mtpfn {

namespace {

using detail::json;
using detail::ObjectReader;

constexpr ErrorCode kCode = ErrorCode::ConfigError;

// Re-raises validation failures of the component configs as ConfigError.
template <class F>
void checked(const char* section, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == kCode) throw;
    throw Error(kCode, std::string(section) + ": " + e.what());
  }
}

void read_prior(const json& j, PretrainConfig& out) {
  ObjectReader r(j, "prior", kCode);
  PriorConfig& p = out.prior;
  r.get_range("d_range", p.d_min, p.d_max);
  r.get_range("n_range", p.n_min, p.n_max);
  r.get("teacher_hidden", p.teacher_hidden);
  r.get_range("noise_std_range", p.noise_min, p.noise_max);
  r.get("tasks_per_step", p.tasks_per_step);
  r.get("steps", out.steps);
  r.get("lr", out.lr);
  r.get("seed", out.seed);
  r.finish();
}

void read_finetune(const json& j, FineTuneConfig& f) {
  ObjectReader r(j, "finetune", kCode);
  r.get("lr", f.lr);
  r.get("batch_rows", f.batch_rows);
  r.get("budget_seconds", f.budget_seconds);
  r.get("max_steps", f.max_steps);
  r.get("deterministic", f.deterministic);
  r.get("lambda", f.lambda);
  r.get("adapter_hidden", f.adapter_hidden);
  r.get("adapter_lr", f.adapter_lr);
  r.get("context_fraction", f.context_fraction);
  r.get("flip_anticorrelated", f.flip_anticorrelated);
  r.finish();
}

void read_synth(const json& j, SynthConfig& s) {
  ObjectReader r(j, "data.synth", kCode);
  r.get("n", s.n);
  r.get("d", s.d);
  r.get("strength_tasks", s.strength_tasks);
  r.get("elongation_tasks", s.elongation_tasks);
  r.get("noise_std", s.noise_std);
  r.get("elongation_noise_factor", s.elongation_noise_factor);
  r.get("teacher_hidden", s.teacher_hidden);
  r.get("seed", s.seed);
  r.finish();
}

void read_data(const json& j, DataConfig& d) {
  ObjectReader r(j, "data", kCode);
  std::string path;
  r.get("path", path);
  if (!path.empty()) d.path = path;
  if (const json* s = r.find("synth")) {
    if (d.path) r.fail("data.path and data.synth are mutually exclusive");
    read_synth(*s, d.synth);
  }
  d.n_targets = d.synth.tasks();
  r.get("n_targets", d.n_targets);
  if (const json* s = r.find("split")) {
    ObjectReader sr(*s, "data.split", kCode);
    sr.get("train_fraction", d.train_fraction);
    sr.finish();
  }
  r.finish();
}

void read_eval(const json& j, EvalConfig& e) {
  ObjectReader r(j, "eval", kCode);
  r.get("eps_list", e.eps_list);
  r.get("context_cap", e.context_cap);
  r.get("budget_sweep", e.budget_sweep);
  r.finish();
}

void read_baseline(const json& j, MlpConfig& m) {
  ObjectReader r(j, "baseline", kCode);
  r.get("hidden", m.hidden);
  r.get("epochs", m.epochs);
  r.get("lr", m.lr);
  r.get("batch_size", m.batch_size);
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  checked("model", [&] { model.validate(); });
  checked("prior", [&] { pretrain.prior.validate(); });
  if (!(pretrain.lr > 0.0)) throw Error(kCode, "prior.lr must be > 0");
  checked("finetune", [&] { finetune.validate(); });
  if (!data.path) checked("data.synth", [&] { data.synth.validate(); });
  if (!data.path && data.n_targets != data.synth.tasks()) {
    throw Error(kCode, "data.n_targets must equal the synthetic task count");
  }
  if (data.n_targets < 1) throw Error(kCode, "data.n_targets must be >= 1");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw Error(kCode, "data.split.train_fraction must lie in (0, 1)");
  }
  if (eval.eps_list.empty()) throw Error(kCode, "eval.eps_list must not be empty");
  for (double e : eval.eps_list) {
    if (!(e > 0.0)) throw Error(kCode, "eval.eps_list entries must be > 0");
  }
  if (eval.context_cap < 2) throw Error(kCode, "eval.context_cap must be >= 2");
  for (double b : eval.budget_sweep) {
    if (!(b >= 0.0)) throw Error(kCode, "eval.budget_sweep entries must be >= 0");
  }
  checked("baseline", [&] { baseline.validate(); });
  if (seeds.empty()) throw Error(kCode, "seeds must not be empty");
}

RunConfig parse_run_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(kCode, std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader r(doc, "config", kCode);
  if (const json* j = r.find("model")) detail::read_model_config(*j, "model", kCode, cfg.model);
  if (const json* j = r.find("prior")) read_prior(*j, cfg.pretrain);
  if (const json* j = r.find("finetune")) read_finetune(*j, cfg.finetune);
  if (const json* j = r.find("data")) read_data(*j, cfg.data);
  if (const json* j = r.find("eval")) read_eval(*j, cfg.eval);
  if (const json* j = r.find("baseline")) read_baseline(*j, cfg.baseline);
  r.get("seeds", cfg.seeds);
  std::string pretrained;
  r.get("pretrained", pretrained);
  if (!pretrained.empty()) cfg.pretrained = pretrained;
  r.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_run_config(ss.str());
  const auto base = path.parent_path();
  if (cfg.data.path && cfg.data.path->is_relative()) cfg.data.path = base / *cfg.data.path;
  if (cfg.pretrained && cfg.pretrained->is_relative()) cfg.pretrained = base / *cfg.pretrained;
  return cfg;
}

std::string dump_run_config(const RunConfig& cfg) {
  const PriorConfig& p = cfg.pretrain.prior;
  const FineTuneConfig& f = cfg.finetune;
  const SynthConfig& s = cfg.data.synth;
  json doc;
  doc["model"] = detail::to_json(cfg.model);
  doc["prior"] = {{"d_range", {p.d_min, p.d_max}},
                  {"n_range", {p.n_min, p.n_max}},
                  {"teacher_hidden", p.teacher_hidden},
                  {"noise_std_range", {p.noise_min, p.noise_max}},
                  {"tasks_per_step", p.tasks_per_step},
                  {"steps", cfg.pretrain.steps},
                  {"lr", cfg.pretrain.lr},
                  {"seed", cfg.pretrain.seed}};
  doc["finetune"] = {{"lr", f.lr},
                     {"batch_rows", f.batch_rows},
                     {"budget_seconds", f.budget_seconds ? json(*f.budget_seconds) : json(nullptr)},
                     {"max_steps", f.max_steps},
                     {"deterministic", f.deterministic},
                     {"lambda", f.lambda},
                     {"adapter_hidden", f.adapter_hidden},
                     {"adapter_lr", f.adapter_lr},
                     {"context_fraction", f.context_fraction},
                     {"flip_anticorrelated", f.flip_anticorrelated}};
  json data = {{"n_targets", cfg.data.n_targets}, {"split", {{"train_fraction", cfg.data.train_fraction}}}};
  if (cfg.data.path) {
    data["path"] = cfg.data.path->string();
  } else {
    data["synth"] = {{"n", s.n},
                     {"d", s.d},
                     {"strength_tasks", s.strength_tasks},
                     {"elongation_tasks", s.elongation_tasks},
                     {"noise_std", s.noise_std},
                     {"elongation_noise_factor", s.elongation_noise_factor},
                     {"teacher_hidden", s.teacher_hidden},
                     {"seed", s.seed}};
  }
  doc["data"] = std::move(data);
  doc["eval"] = {{"eps_list", cfg.eval.eps_list},
                 {"context_cap", cfg.eval.context_cap},
                 {"budget_sweep", cfg.eval.budget_sweep}};
  doc["baseline"] = {{"hidden", cfg.baseline.hidden},
                     {"epochs", cfg.baseline.epochs},
                     {"lr", cfg.baseline.lr},
                     {"batch_size", cfg.baseline.batch_size}};
  doc["seeds"] = cfg.seeds;
  if (cfg.pretrained) doc["pretrained"] = cfg.pretrained->string();
  return doc.dump(2) + "\n";
}

}  // namespace mtpfn
