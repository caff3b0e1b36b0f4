#pragma once

// Strict reading of JSON objects: typed lookups that leave defaults alone for
// missing keys, and a final check that rejects keys nobody asked for.

#include <concepts>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtpfn/error.hpp"
#include "mtpfn/model.hpp"

namespace mtpfn::detail {

using json = nlohmann::json;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where, ErrorCode code)
      : j_(j), where_(std::move(where)), code_(code) {
    if (!j_.is_object()) fail(where_ + " must be an object");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw Error(code_, msg); }

  const json* find(const char* key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const char* key) {
    const json* v = find(key);
    if (v == nullptr) fail(path(key) + " is required");
    return *v;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  template <std::unsigned_integral T>
  void get(const char* key, T& out) {
    if (const json* v = find(key)) out = as_unsigned<T>(*v, path(key));
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, path(key));
  }

  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(path(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }

  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(path(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  // A JSON null clears the value.
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = as_double(*v, path(key));
      }
    }
  }

  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(path(key) + " must be an array");
      out.clear();
      for (const auto& e : *v) out.push_back(as_double(e, path(key)));
    }
  }

  template <std::unsigned_integral T>
  void get(const char* key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(path(key) + " must be an array");
      out.clear();
      for (const auto& e : *v) out.push_back(as_unsigned<T>(e, path(key)));
    }
  }

  // [min, max] pair.
  template <class T>
  void get_range(const char* key, T& lo, T& hi) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2) fail(path(key) + " must be a [min, max] pair");
      if constexpr (std::is_floating_point_v<T>) {
        lo = as_double((*v)[0], path(key));
        hi = as_double((*v)[1], path(key));
      } else {
        lo = as_unsigned<T>((*v)[0], path(key));
        hi = as_unsigned<T>((*v)[1], path(key));
      }
    }
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!used_.contains(k)) fail("unknown key " + where_ + "." + k);
    }
  }

 private:
  template <class T>
  T as_unsigned(const json& v, const std::string& where) const {
    if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
    fail(where + " must be a non-negative integer");
  }

  double as_double(const json& v, const std::string& where) const {
    if (!v.is_number()) fail(where + " must be a number");
    return v.get<double>();
  }

  const json& j_;
  std::string where_;
  ErrorCode code_;
  std::set<std::string> used_;
};

json to_json(const ModelConfig& cfg);
// Reads the fields present in j over the defaults in cfg; does not validate.
void read_model_config(const json& j, const std::string& where, ErrorCode code, ModelConfig& cfg);

}  // namespace mtpfn::detail
