#pragma once

// Engine configuration, read from TOML. Keys inside [section] tables are
// addressed as "section.key". Relative paths are resolved against the
// directory of the config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <toml.hpp>

#include "kgrag/errors.hpp"
#include "kgrag/eval_harness.hpp"
#include "kgrag/kg_store.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/prompt_forge.hpp"

namespace kgrag {

struct ConfigValue {
  using Array = std::vector<std::variant<std::string, double>>;
  std::variant<std::string, double, bool, Array> v;
  std::uint64_t line = 0;
};

using ConfigTable = std::map<std::string, ConfigValue>;

namespace detail {

inline void flatten_toml(const toml::table& t, const std::string& prefix, ConfigTable& out) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix + std::string(k.str());
    const auto line = static_cast<std::uint64_t>(node.source().begin.line);
    auto bad = [&](const std::string& why) { return Error(Errc::InvalidConfig, key + ": " + why, line); };
    ConfigValue v;
    v.line = line;
    if (auto sub = node.as_table()) {
      flatten_toml(*sub, key + ".", out);
      continue;
    } else if (auto s = node.as_string()) {
      v.v = s->get();
    } else if (auto i = node.as_integer()) {
      v.v = static_cast<double>(i->get());
    } else if (auto f = node.as_floating_point()) {
      v.v = f->get();
    } else if (auto b = node.as_boolean()) {
      v.v = b->get();
    } else if (auto a = node.as_array()) {
      ConfigValue::Array arr;
      for (const auto& e : *a) {
        if (auto es = e.as_string()) arr.emplace_back(es->get());
        else if (auto ei = e.as_integer()) arr.emplace_back(static_cast<double>(ei->get()));
        else if (auto ef = e.as_floating_point()) arr.emplace_back(ef->get());
        else throw bad("array elements must be strings or numbers");
      }
      v.v = std::move(arr);
    } else {
      throw bad("unsupported value type");
    }
    out[key] = std::move(v);
  }
}

}  // namespace detail

/// Parses TOML and flattens nested tables into "section.key" entries.
inline ConfigTable parse_config_table(std::istream& in) {
  toml::table doc;
  try {
    doc = toml::parse(in);
  } catch (const toml::parse_error& e) {
    throw Error(Errc::InvalidConfig, std::string(e.description()), static_cast<std::uint64_t>(e.source().begin.line));
  }
  ConfigTable table;
  detail::flatten_toml(doc, "", table);
  return table;
}

enum class BackendKind { Stub, Echo, Http };

struct EngineConfig {
  std::filesystem::path base_dir = ".";

  // kg_store
  std::filesystem::path export_path;
  std::string relation{kSuggestiveOf};
  bool dedup = false;
  std::filesystem::path datastore_path;

  // vector_index
  std::filesystem::path embeddings_path;
  std::filesystem::path index_path;
  IndexKind index_kind = IndexKind::Flat;
  std::uint32_t ivf_lists = 16;
  std::uint32_t ivf_probe = 4;
  std::uint64_t ivf_seed = 42;
  std::size_t k = kDefaultTopK;

  // pathology_head
  std::filesystem::path weights_path;
  ThresholdConfig thresholds;

  // eval / pipeline
  std::filesystem::path cases_path;
  std::filesystem::path queries_path;
  std::filesystem::path image_embeddings_path;
  std::filesystem::path image_triplets_path;
  PromptStyle style = PromptStyle::Kg;
  FilterMode filter = FilterMode::Strict;
  std::vector<std::size_t> sweep_ks = default_sweep_ks();

  // generation
  BackendKind backend = BackendKind::Stub;
  std::string backend_url;
  std::uint32_t backend_timeout_ms = 30000;
  std::uint32_t max_tokens = 128;

  // service
  std::string bind = "127.0.0.1";
  std::uint16_t port = 8080;
  std::size_t service_threads = 4;
  std::size_t service_queue = 64;

  std::string log_level = "info";

  EvalConfig eval_config() const {
    EvalConfig e;
    e.thresholds = thresholds;
    e.k = k;
    e.style = style;
    e.mode = filter;
    return e;
  }

  /// Throws InvalidConfig naming the first listed path that is unset or missing.
  void require_files(std::initializer_list<std::pair<const char*, const std::filesystem::path*>> paths) const {
    for (const auto& [name, p] : paths) {
      if (p->empty()) throw Error(Errc::InvalidConfig, std::string(name) + " is not configured");
      if (!std::filesystem::exists(*p)) throw Error(Errc::InvalidConfig, std::string(name) + ": no such file " + p->string());
    }
  }
};

namespace detail {

class TableReader {
 public:
  TableReader(const ConfigTable& t, std::filesystem::path base) : t_(t), base_(std::move(base)) {}

  template <class F>
  void with(const std::string& key, F&& f) {
    auto it = t_.find(key);
    if (it == t_.end()) return;
    used_.insert(key);
    line_ = it->second.line;
    f(it->second);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(Errc::InvalidConfig, key + ": " + why, line_);
  }

  void str(const std::string& key, std::string& out) {
    with(key, [&](const ConfigValue& v) {
      if (auto s = std::get_if<std::string>(&v.v)) out = *s;
      else fail(key, "expected a string");
    });
  }
  void path(const std::string& key, std::filesystem::path& out) {
    std::string s;
    bool seen = false;
    with(key, [&](const ConfigValue&) { seen = true; });
    if (!seen) return;
    str(key, s);
    std::filesystem::path p(s);
    out = p.is_absolute() ? p : base_ / p;
  }
  void boolean(const std::string& key, bool& out) {
    with(key, [&](const ConfigValue& v) {
      if (auto b = std::get_if<bool>(&v.v)) out = *b;
      else fail(key, "expected true or false");
    });
  }
  double real(const std::string& key, double fallback) {
    double out = fallback;
    with(key, [&](const ConfigValue& v) {
      if (auto d = std::get_if<double>(&v.v)) out = *d;
      else fail(key, "expected a number");
    });
    return out;
  }
  template <class Int>
  void integer(const std::string& key, Int& out, double lo, double hi) {
    with(key, [&](const ConfigValue& v) {
      auto d = std::get_if<double>(&v.v);
      if (!d || *d != static_cast<double>(static_cast<long long>(*d))) fail(key, "expected an integer");
      if (*d < lo || *d > hi) fail(key, "out of range");
      out = static_cast<Int>(*d);
    });
  }
  void strings(const std::string& key, std::vector<std::string>& out) {
    with(key, [&](const ConfigValue& v) {
      auto a = std::get_if<ConfigValue::Array>(&v.v);
      if (!a) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *a) {
        if (auto s = std::get_if<std::string>(&e)) out.push_back(*s);
        else fail(key, "expected an array of strings");
      }
    });
  }
  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    with(key, [&](const ConfigValue& v) {
      auto a = std::get_if<ConfigValue::Array>(&v.v);
      if (!a || a->empty()) fail(key, "expected a nonempty array of positive integers");
      out.clear();
      for (const auto& e : *a) {
        auto d = std::get_if<double>(&e);
        if (!d || *d < 1 || *d > kMaxTopK || *d != static_cast<double>(static_cast<long long>(*d)))
          fail(key, "expected integers in [1, " + std::to_string(kMaxTopK) + "]");
        out.push_back(static_cast<std::size_t>(*d));
      }
    });
  }

  void reject_unknown() const {
    for (const auto& [key, v] : t_)
      if (!used_.contains(key)) throw Error(Errc::InvalidConfig, "unknown key '" + key + "'", v.line);
  }

 private:
  const ConfigTable& t_;
  std::filesystem::path base_;
  std::set<std::string> used_;
  std::uint64_t line_ = 0;
};

}  // namespace detail

inline EngineConfig engine_config_from_table(const ConfigTable& table, const std::filesystem::path& base_dir) {
  EngineConfig c;
  c.base_dir = base_dir;
  detail::TableReader r(table, base_dir);

  r.path("export", c.export_path);
  r.str("relation", c.relation);
  r.boolean("dedup", c.dedup);
  r.path("datastore", c.datastore_path);

  r.path("embeddings", c.embeddings_path);
  r.path("index", c.index_path);
  std::string kind = "flat";
  r.str("index_kind", kind);
  if (kind == "flat") c.index_kind = IndexKind::Flat;
  else if (kind == "ivf") c.index_kind = IndexKind::Ivf;
  else r.fail("index_kind", "expected \"flat\" or \"ivf\"");
  r.integer("ivf.lists", c.ivf_lists, 1, 1 << 20);
  r.integer("ivf.probe", c.ivf_probe, 1, 1 << 20);
  r.integer("ivf.seed", c.ivf_seed, 0, 9.0e15);
  r.integer("k", c.k, 1, kMaxTopK);

  r.path("weights", c.weights_path);
  ThresholdPair global;
  global.theta_neg = r.real("thresholds.theta_neg", global.theta_neg);
  global.theta_pos = r.real("thresholds.theta_pos", global.theta_pos);
  std::vector<std::string> labels = default_label_vocabulary();
  r.strings("labels", labels);
  std::map<std::string, ThresholdPair> per_label;
  for (const auto& [key, v] : table) {
    // thresholds.<Label> = [theta_neg, theta_pos]
    if (!key.starts_with("thresholds.") || key == "thresholds.theta_neg" || key == "thresholds.theta_pos") continue;
    r.with(key, [&](const ConfigValue& val) {
      auto a = std::get_if<ConfigValue::Array>(&val.v);
      if (!a || a->size() != 2 || !std::holds_alternative<double>((*a)[0]) || !std::holds_alternative<double>((*a)[1]))
        r.fail(key, "expected [theta_neg, theta_pos]");
      per_label[key.substr(std::string_view("thresholds.").size())] = {std::get<double>((*a)[0]), std::get<double>((*a)[1])};
    });
  }
  try {
    c.thresholds = ThresholdConfig(global, labels, per_label);
  } catch (const Error& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }

  r.path("cases", c.cases_path);
  r.path("queries", c.queries_path);
  r.path("image_embeddings", c.image_embeddings_path);
  r.path("image_triplets", c.image_triplets_path);
  std::string style = "kg";
  r.str("style", style);
  if (auto s = parse_style(style)) c.style = *s;
  else r.fail("style", "expected kg, nle or none");
  std::string filter = "strict";
  r.str("filter", filter);
  if (filter == "strict") c.filter = FilterMode::Strict;
  else if (filter == "lenient") c.filter = FilterMode::Lenient;
  else r.fail("filter", "expected strict or lenient");
  r.sizes("sweep_ks", c.sweep_ks);

  std::string backend = "stub";
  r.str("backend.kind", backend);
  if (backend == "stub") c.backend = BackendKind::Stub;
  else if (backend == "echo") c.backend = BackendKind::Echo;
  else if (backend == "http") c.backend = BackendKind::Http;
  else r.fail("backend.kind", "expected stub, echo or http");
  r.str("backend.url", c.backend_url);
  if (c.backend == BackendKind::Http && c.backend_url.empty()) r.fail("backend.url", "required for the http backend");
  r.integer("backend.timeout_ms", c.backend_timeout_ms, 1, 3.6e6);
  r.integer("backend.max_tokens", c.max_tokens, 1, 1 << 20);

  r.str("service.bind", c.bind);
  r.integer("service.port", c.port, 0, 65535);
  r.integer("service.threads", c.service_threads, 1, 1024);
  r.integer("service.queue", c.service_queue, 1, 1 << 20);

  r.str("log_level", c.log_level);
  r.reject_unknown();
  return c;
}

inline EngineConfig load_engine_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::InvalidConfig, "cannot open config " + file.string());
  return engine_config_from_table(parse_config_table(in), file.parent_path().empty() ? "." : file.parent_path());
}

}  // namespace kgrag
