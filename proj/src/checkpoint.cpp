#include "mtpfn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "mtpfn/error.hpp"

namespace mtpfn {

namespace detail {

json to_json(const ModelConfig& cfg) {
  return {{"embed_dim", cfg.embed_dim}, {"n_blocks", cfg.n_blocks},   {"n_heads", cfg.n_heads},
          {"ff_dim", cfg.ff_dim},       {"k_bins", cfg.k_bins},       {"max_features", cfg.max_features}};
}

void read_model_config(const json& j, const std::string& where, ErrorCode code, ModelConfig& cfg) {
  ObjectReader r(j, where, code);
  r.get("embed_dim", cfg.embed_dim);
  r.get("n_blocks", cfg.n_blocks);
  r.get("n_heads", cfg.n_heads);
  r.get("ff_dim", cfg.ff_dim);
  r.get("k_bins", cfg.k_bins);
  r.get("max_features", cfg.max_features);
  r.finish();
}

}  // namespace detail

namespace {

using detail::json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::CheckpointError, msg); }

std::vector<double> number_list(const json& j, const std::string& where) {
  if (!j.is_array()) bad(where + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) bad(where + " must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

std::string dump_checkpoint(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  json params = json::object();
  for (const auto& e : p.layout.entries()) {
    json rows = json::array();
    for (std::size_t r = 0; r < e.rows; ++r) {
      const double* row = p.values.data() + e.offset + r * e.cols;
      rows.push_back(std::vector<double>(row, row + e.cols));
    }
    params[e.name] = std::move(rows);
  }
  json doc = {{"schema_version", kCheckpointSchemaVersion},
              {"model_config", detail::to_json(p.config)},
              {"params", std::move(params)}};
  if (ckpt.support) {
    doc["support_spec"] = {{"centers", ckpt.support->centers()},
                           {"borders", ckpt.support->borders()},
                           {"requested_k", ckpt.support->requested_k()}};
  }
  if (ckpt.target_stats) {
    doc["target_stats"] = {{"mean", ckpt.target_stats->mean}, {"std", ckpt.target_stats->std}};
  }
  return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("malformed JSON: ") + e.what());
  }
  detail::ObjectReader r(doc, "checkpoint", ErrorCode::CheckpointError);
  const json& version = r.require("schema_version");
  if (!version.is_number_integer() || version.get<std::int64_t>() != kCheckpointSchemaVersion) {
    bad("unsupported schema_version " + version.dump());
  }
  ModelConfig cfg;
  detail::read_model_config(r.require("model_config"), "checkpoint.model_config",
                            ErrorCode::CheckpointError, cfg);
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad(std::string("invalid model_config: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.params = ModelParams(cfg);
  const json& params = r.require("params");
  if (!params.is_object()) bad("params must be an object");
  if (params.size() != ckpt.params.layout.entries().size()) {
    bad("params hold " + std::to_string(params.size()) + " tensors, the config needs " +
        std::to_string(ckpt.params.layout.entries().size()));
  }
  for (const auto& e : ckpt.params.layout.entries()) {
    const auto it = params.find(e.name);
    if (it == params.end()) bad("missing tensor " + e.name);
    if (!it->is_array() || it->size() != e.rows) bad("tensor " + e.name + " has the wrong row count");
    for (std::size_t row = 0; row < e.rows; ++row) {
      const std::vector<double> v = number_list((*it)[row], "tensor " + e.name);
      if (v.size() != e.cols) bad("tensor " + e.name + " has the wrong column count");
      std::copy(v.begin(), v.end(), ckpt.params.values.begin() + static_cast<std::ptrdiff_t>(e.offset + row * e.cols));
    }
  }
  if (const json* s = r.find("support_spec")) {
    detail::ObjectReader sr(*s, "checkpoint.support_spec", ErrorCode::CheckpointError);
    std::size_t requested = 0;
    sr.get("requested_k", requested);
    std::vector<double> centers = number_list(sr.require("centers"), "support_spec.centers");
    std::vector<double> borders = number_list(sr.require("borders"), "support_spec.borders");
    sr.finish();
    try {
      ckpt.support = SupportSpec(std::move(centers), std::move(borders), requested);
    } catch (const Error& e) {
      bad(std::string("invalid support_spec: ") + e.what());
    }
  }
  if (const json* t = r.find("target_stats")) {
    detail::ObjectReader tr(*t, "checkpoint.target_stats", ErrorCode::CheckpointError);
    TargetStats stats;
    stats.mean = number_list(tr.require("mean"), "target_stats.mean");
    stats.std = number_list(tr.require("std"), "target_stats.std");
    tr.finish();
    if (stats.mean.size() != stats.std.size()) bad("target_stats mean and std differ in length");
    for (double s : stats.std) {
      if (!(s > 0.0)) bad("target_stats std must be > 0");
    }
    ckpt.target_stats = std::move(stats);
  }
  r.finish();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string text = dump_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace mtpfn
