// kgrag command-line front end.
//
// Exit status: 0 success, 1 data or usage error, 2 internal error.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kgrag/kgrag.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::size_t> k;
  std::optional<std::string> style;
  bool strict = false;
  bool lenient = false;
};

kgrag::EngineConfig resolve_config(const Overrides& o) {
  std::string path = o.config;
  if (path.empty()) {
    if (const char* env = std::getenv("KGRAG_CONFIG")) path = env;
  }
  if (path.empty()) throw kgrag::Error(kgrag::Errc::InvalidConfig, "no config: pass --config or set KGRAG_CONFIG");
  auto cfg = kgrag::load_engine_config(path);
  if (o.k) {
    if (*o.k < 1 || *o.k > kgrag::kMaxTopK)
      throw kgrag::Error(kgrag::Errc::InvalidConfig, "--k must be in [1, " + std::to_string(kgrag::kMaxTopK) + "]");
    cfg.k = *o.k;
  }
  if (o.style) {
    auto s = kgrag::parse_style(*o.style);
    if (!s) throw kgrag::Error(kgrag::Errc::InvalidConfig, "--style must be kg, nle or none");
    cfg.style = *s;
  }
  if (o.strict) cfg.filter = kgrag::FilterMode::Strict;
  if (o.lenient) cfg.filter = kgrag::FilterMode::Lenient;
  spdlog::set_level(spdlog::level::from_str(cfg.log_level));
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw kgrag::Error(kgrag::Errc::Io, "cannot write " + p.string());
}

int run_build(const Overrides& o) {
  auto cfg = resolve_config(o);
  auto s = kgrag::cmd_build(cfg);
  std::cout << "exported\t" << s.exported << "\n"
            << "rejected\t" << s.rejected << "\n"
            << "indexed\t" << s.kept << "\n"
            << "distinct_texts\t" << s.duplicates.distinct_texts << "\n"
            << "duplicate_records\t" << s.duplicates.duplicate_records << "\n"
            << "dim\t" << s.dim << "\n"
            << "index_kind\t" << (s.kind == kgrag::IndexKind::Flat ? "flat" : "ivf") << "\n";
  spdlog::info("wrote {} and {}", cfg.datastore_path.string(), cfg.index_path.string());
  return 0;
}

int run_query(const Overrides& o, const std::string& query_file, const std::vector<float>& inline_vec) {
  auto cfg = resolve_config(o);
  cfg.require_files({{"datastore", &cfg.datastore_path}, {"index", &cfg.index_path}});
  auto ds = kgrag::read_datastore(cfg.datastore_path);
  auto index = kgrag::read_index(cfg.index_path);
  auto store = kgrag::ContextStore::from_datastore(ds);

  std::vector<kgrag::EmbeddingVector> queries;
  if (!inline_vec.empty()) {
    queries.push_back({0, inline_vec});
  } else if (!query_file.empty()) {
    queries = kgrag::read_kgeb(query_file).vectors;
  } else {
    throw kgrag::Error(kgrag::Errc::InvalidArgument, "query needs --query-file or --vector");
  }

  std::ostringstream out;
  for (const auto& q : queries) {
    if (queries.size() > 1) out << "# query " << q.id << "\n";
    auto hits = index.search(q.values, cfg.k);
    for (std::size_t r = 0; r < hits.size(); ++r)
      out << (r + 1) << '\t' << hits[r].id << '\t' << std::fixed << std::setprecision(6) << hits[r].score << '\t'
          << store.at(hits[r].id) << '\n';
  }
  std::cout << out.str();
  return 0;
}

int run_evaluate(const Overrides& o, const fs::path& out_dir) {
  auto cfg = resolve_config(o);
  auto cases = kgrag::read_cases(cfg);
  if (!cfg.weights_path.empty()) {
    cfg.require_files({{"weights", &cfg.weights_path}, {"queries", &cfg.queries_path}});
    kgrag::predict_missing(cases, kgrag::read_kgwt(cfg.weights_path),
                           kgrag::embeddings_by_id(kgrag::read_kgeb(cfg.queries_path)), cfg.thresholds);
  }
  auto report = kgrag::evaluate(cases, cfg.eval_config());
  auto table = kgrag::format_report_table(report);
  write_text(out_dir / "evaluate.json", report.to_json().dump(2) + "\n");
  write_text(out_dir / "evaluate.txt", table);
  std::cout << table;
  if (report.empty_after_filter) spdlog::warn("no case survived the {} filter", kgrag::filter_mode_name(report.mode));
  return 0;
}

int write_ablation(const fs::path& out_dir, const std::string& stem, const std::string& key,
                   const std::vector<kgrag::AblationRow>& rows, const std::string& table) {
  const std::string first = key == "k" ? "K" : "Retrieval";
  write_text(out_dir / (stem + ".json"), kgrag::ablation_json(key, rows).dump(2) + "\n");
  write_text(out_dir / (stem + ".txt"), table);
  write_text(out_dir / (stem + ".csv"), kgrag::ablation_csv(first, rows));
  std::cout << table;
  for (const auto& r : rows)
    if (!r.run) return 1;
  return 0;
}

int run_sweep(const Overrides& o, const fs::path& out_dir, std::vector<std::size_t> ks) {
  auto cfg = resolve_config(o);
  if (ks.empty()) ks = cfg.sweep_ks;
  auto ctx = kgrag::load_pipeline(cfg);
  auto rows = kgrag::k_sweep(ctx->cases, cfg.eval_config(), ctx->resources, ks);
  return write_ablation(out_dir, "sweep", "k", rows, kgrag::format_sweep_table(rows));
}

int run_compare(const Overrides& o, const fs::path& out_dir) {
  auto cfg = resolve_config(o);
  auto ctx = kgrag::load_pipeline(cfg, /*need_images=*/true);
  auto rows = kgrag::retrieval_mode_compare(ctx->cases, cfg.eval_config(), ctx->resources);
  return write_ablation(out_dir, "compare", "retrieval", rows, kgrag::format_compare_table(rows));
}

kgrag::RetrievalService* g_service = nullptr;

int run_serve(const Overrides& o) {
  auto cfg = resolve_config(o);
  cfg.require_files({{"datastore", &cfg.datastore_path}, {"index", &cfg.index_path}});
  kgrag::RetrievalService service({cfg.style, cfg.k});
  const int port = service.bind(cfg.bind, cfg.port, cfg.service_threads, cfg.service_queue,
                                std::chrono::milliseconds(cfg.backend_timeout_ms));
  if (port < 0) throw kgrag::Error(kgrag::Errc::Io, "cannot bind " + cfg.bind + ":" + std::to_string(cfg.port));
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });

  // Requests get 503 until the index is in memory.
  std::thread loader([&] {
    try {
      auto ds = kgrag::read_datastore(cfg.datastore_path);
      service.load(kgrag::read_index(cfg.index_path), kgrag::ContextStore::from_datastore(ds));
      spdlog::info("index ready on {}:{}", cfg.bind, port);
    } catch (const std::exception& e) {
      spdlog::error("loading index failed: {}", e.what());
      service.stop();
    }
  });
  std::cout << "listening on " << cfg.bind << ":" << port << std::endl;
  service.listen_bound();
  loader.join();
  g_service = nullptr;
  return service.ready() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("kgrag"));

  CLI::App app{"Knowledge-graph retrieval engine for grounded explanation prompts"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "Config file (falls back to $KGRAG_CONFIG)");
  app.add_option("--k", o.k, "Number of retrieved triplets");
  app.add_option("--style", o.style, "Prompt style: kg, nle or none");
  auto* strict = app.add_flag("--strict", o.strict, "Every gold label must be predicted correctly");
  app.add_flag("--lenient", o.lenient, "At least one gold label must be predicted correctly")->excludes(strict);

  auto* build = app.add_subcommand("build", "Build the datastore and index from an export and embeddings");

  auto* query = app.add_subcommand("query", "Print the top-k triplets for query embeddings");
  std::string query_file;
  std::vector<float> inline_vec;
  auto* qfile = query->add_option("--query-file", query_file, "KGEB file of query vectors");
  query->add_option("--vector", inline_vec, "Comma-separated query vector, e.g. --vector=0.1,-0.2")
      ->delimiter(',')
      ->excludes(qfile);

  std::string out_dir = "reports";
  auto* evaluate = app.add_subcommand("evaluate", "Score the generated explanations in the cases file");
  evaluate->add_option("--out", out_dir, "Report directory");

  auto* sweep = app.add_subcommand("sweep", "Run the pipeline for several K");
  std::vector<std::size_t> ks;
  sweep->add_option("--out", out_dir, "Report directory");
  sweep->add_option("--ks", ks, "K values (default: config sweep_ks)")->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Compare uni-modal and cross-modal retrieval");
  compare->add_option("--out", out_dir, "Report directory");

  auto* serve = app.add_subcommand("serve", "Run the HTTP retrieval service");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*build) return run_build(o);
    if (*query) return run_query(o, query_file, inline_vec);
    if (*evaluate) return run_evaluate(o, out_dir);
    if (*sweep) return run_sweep(o, out_dir, ks);
    if (*compare) return run_compare(o, out_dir);
    if (*serve) return run_serve(o);
  } catch (const kgrag::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 2;
  }
  return 2;
}
