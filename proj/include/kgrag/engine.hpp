#pragma once

// File-level orchestration shared by the CLI and the service: building the
// datastore and index from an export plus embeddings, and loading everything
// a pipeline run needs.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgrag/config.hpp"
#include "kgrag/errors.hpp"
#include "kgrag/eval_harness.hpp"
#include "kgrag/generation.hpp"
#include "kgrag/http_backend.hpp"
#include "kgrag/kg_store.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/prompt_forge.hpp"
#include "kgrag/vector_index.hpp"

namespace kgrag {

struct BuildSummary {
  std::size_t exported = 0;   // triplets in the export
  std::size_t rejected = 0;   // malformed export lines
  std::size_t kept = 0;       // after the relation filter (and dedup)
  DuplicateStats duplicates;
  IndexKind kind = IndexKind::Flat;
  std::size_t dim = 0;
};

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + p.string());
  return in;
}

inline Datastore read_datastore(const std::filesystem::path& p) {
  auto in = open_input(p);
  return load_datastore(in);
}

/// Embedding ids must be exactly the datastore ids; vectors are reordered to
/// datastore order so that ties break by id.
inline std::vector<EmbeddingVector> align_embeddings(const Datastore& ds, EmbeddingSet set) {
  if (set.vectors.size() != ds.size())
    throw Error(Errc::IdMismatch, std::to_string(set.vectors.size()) + " embeddings for " + std::to_string(ds.size()) +
                                      " datastore records");
  std::vector<std::optional<EmbeddingVector>> slot(ds.size());
  for (auto& v : set.vectors) {
    if (v.id >= ds.size()) throw Error(Errc::IdMismatch, "embedding id " + std::to_string(v.id) + " has no datastore record");
    if (slot[v.id]) throw Error(Errc::DuplicateId, "embedding id " + std::to_string(v.id));
    slot[v.id] = std::move(v);
  }
  std::vector<EmbeddingVector> out;
  out.reserve(ds.size());
  for (std::size_t id = 0; id < slot.size(); ++id) {
    if (!slot[id]) throw Error(Errc::IdMismatch, "datastore id " + std::to_string(id) + " has no embedding");
    out.push_back(std::move(*slot[id]));
  }
  return out;
}

inline BuildSummary cmd_build(const EngineConfig& cfg) {
  cfg.require_files({{"export", &cfg.export_path}, {"embeddings", &cfg.embeddings_path}});
  if (cfg.datastore_path.empty()) throw Error(Errc::InvalidConfig, "datastore is not configured");
  if (cfg.index_path.empty()) throw Error(Errc::InvalidConfig, "index is not configured");

  BuildSummary s;
  auto in = open_input(cfg.export_path);
  auto parsed = parse_export(in);
  s.exported = parsed.triplets.size();
  s.rejected = parsed.errors.size();
  auto ds = build_datastore(filter_by_relation(parsed.triplets, cfg.relation), cfg.dedup);
  s.kept = ds.size();
  s.duplicates = duplicate_stats(ds);

  auto set = read_kgeb(cfg.embeddings_path);
  s.dim = set.dim;
  auto vectors = align_embeddings(ds, std::move(set));

  s.kind = cfg.index_kind;
  if (cfg.index_kind == IndexKind::Flat) {
    write_index(FlatIndex::build(vectors, s.dim), cfg.index_path);
  } else {
    write_index(IvfIndex::build(vectors, s.dim, cfg.ivf_lists, cfg.ivf_seed, std::min(cfg.ivf_probe, cfg.ivf_lists)),
                cfg.index_path);
  }
  std::ofstream out(cfg.datastore_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + cfg.datastore_path.string());
  save_datastore(ds, out);
  return s;
}

inline std::shared_ptr<GenerationBackend> make_backend(const EngineConfig& cfg) {
  switch (cfg.backend) {
    case BackendKind::Stub: return std::make_shared<StubBackend>();
    case BackendKind::Echo: return std::make_shared<EchoContextBackend>();
    case BackendKind::Http: return std::make_shared<HttpBackend>(cfg.backend_url);
  }
  throw Error(Errc::InvalidConfig, "unknown backend");
}

inline std::unordered_map<std::uint64_t, std::vector<float>> embeddings_by_id(EmbeddingSet set) {
  std::unordered_map<std::uint64_t, std::vector<float>> out;
  for (auto& v : set.vectors)
    if (!out.emplace(v.id, std::move(v.values)).second) throw Error(Errc::DuplicateId, "query id " + std::to_string(v.id));
  return out;
}

/// Fills in predictions for cases that carry none, by running the pathology
/// head over the case's query embedding.
inline void predict_missing(std::vector<CaseRecord>& cases, const DenseWeights& head,
                            const std::unordered_map<std::uint64_t, std::vector<float>>& queries,
                            const ThresholdConfig& thresholds) {
  for (auto& c : cases) {
    if (!c.predicted.empty() || !c.query_id) continue;
    auto q = queries.find(*c.query_id);
    if (q == queries.end()) throw Error(Errc::UnresolvedHitId, "case " + c.case_id + ": query embedding missing");
    c.predicted = classify(head, q->second, thresholds);
  }
}

/// Everything a pipeline run reads, owned in one place.
struct PipelineContext {
  Datastore datastore;
  LoadedIndex index;
  std::optional<ImageTripletIndex> images;
  std::vector<CaseRecord> cases;
  PipelineResources resources;
};

inline std::vector<CaseRecord> read_cases(const EngineConfig& cfg) {
  cfg.require_files({{"cases", &cfg.cases_path}});
  auto in = open_input(cfg.cases_path);
  auto cases = load_cases(in, cfg.thresholds);
  if (cases.empty()) throw Error(Errc::EmptyCorpus, "cases file " + cfg.cases_path.string() + " has no cases");
  return cases;
}

inline std::unique_ptr<PipelineContext> load_pipeline(const EngineConfig& cfg, bool need_images = false) {
  cfg.require_files({{"datastore", &cfg.datastore_path}, {"index", &cfg.index_path}, {"queries", &cfg.queries_path}});
  auto ctx = std::make_unique<PipelineContext>(
      PipelineContext{read_datastore(cfg.datastore_path), read_index(cfg.index_path), std::nullopt, {}, {}});
  if (ctx->index.size() != ctx->datastore.size())
    throw Error(Errc::IdMismatch, "index holds " + std::to_string(ctx->index.size()) + " vectors, datastore " +
                                      std::to_string(ctx->datastore.size()) + " records");
  ctx->cases = read_cases(cfg);

  auto& res = ctx->resources;
  res.text_index = &ctx->index;
  res.context = ContextStore::from_datastore(ctx->datastore);
  res.queries = embeddings_by_id(read_kgeb(cfg.queries_path));
  res.backend.emplace(make_backend(cfg));
  res.max_tokens = cfg.max_tokens;
  res.timeout_ms = cfg.backend_timeout_ms;

  if (!cfg.weights_path.empty()) {
    cfg.require_files({{"weights", &cfg.weights_path}});
    predict_missing(ctx->cases, read_kgwt(cfg.weights_path), res.queries, cfg.thresholds);
  }

  if (need_images) {
    if (cfg.image_embeddings_path.empty() || cfg.image_triplets_path.empty())
      throw Error(Errc::MissingImageIndex, "image_embeddings and image_triplets must be configured for uni-modal retrieval");
    cfg.require_files({{"image_embeddings", &cfg.image_embeddings_path}, {"image_triplets", &cfg.image_triplets_path}});
    auto set = read_kgeb(cfg.image_embeddings_path);
    ImageTripletIndex img{FlatIndex::build(set.vectors, set.dim), {}};
    auto in = open_input(cfg.image_triplets_path);
    img.triplets_of = load_image_triplets(in);
    for (const auto& [image, ids] : img.triplets_of)
      for (auto id : ids)
        if (id >= ctx->datastore.size())
          throw Error(Errc::UnresolvedHitId, "image " + std::to_string(image) + " links unknown triplet " + std::to_string(id));
    ctx->images = std::move(img);
    res.image_index = &*ctx->images;
  }
  return ctx;
}

}  // namespace kgrag
