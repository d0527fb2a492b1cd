#pragma once

// Evaluation protocol and ablation runners.
//
// NLG metrics are computed only over cases whose predicted labels are correct
// (strict: every gold label predicted with its gold certainty; lenient: at
// least one). AUC is computed over all cases before filtering. The K sweep and
// the uni-/cross-modal comparison drive the full
// retrieve -> prompt -> generate -> evaluate pipeline.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kgrag/errors.hpp"
#include "kgrag/generation.hpp"
#include "kgrag/hash.hpp"
#include "kgrag/kg_store.hpp"
#include "kgrag/nlg_metrics.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/prompt_forge.hpp"
#include "kgrag/vector_index.hpp"

namespace kgrag {

struct GoldLabel {
  std::string label;
  Certainty certainty = Certainty::Positive;

  friend bool operator==(const GoldLabel&, const GoldLabel&) = default;
};

struct CaseRecord {
  std::string case_id;
  std::vector<PathologyPrediction> predicted;
  std::vector<GoldLabel> gold;
  std::string generated_nle;
  std::vector<std::string> reference_nles;
  std::optional<std::uint64_t> query_id;  // image embedding used by the retrieval pipeline

  friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

enum class FilterMode { Strict, Lenient };

constexpr std::string_view filter_mode_name(FilterMode m) noexcept { return m == FilterMode::Strict ? "strict" : "lenient"; }

// ---------------------------------------------------------------------------
// Cases file: one JSON object per line.
//   {"case_id": str, "predicted": [{"label", "score", "certainty"?}],
//    "gold": [{"label", "certainty"}], "generated_nle": str,
//    "reference_nles": [str, ...], "query_id": u64?}
// Predicted certainty is derived from the score; a supplied value must agree.

inline CaseRecord parse_case(const nlohmann::json& j, const ThresholdConfig& cfg, std::uint64_t line) {
  auto bad = [&](const std::string& why) { return Error(Errc::MalformedRecord, why, line); };
  if (!j.is_object()) throw bad("not a JSON object");
  CaseRecord c;
  try {
    c.case_id = j.at("case_id").get<std::string>();
    c.generated_nle = j.value("generated_nle", std::string());
    for (const auto& r : j.at("reference_nles")) c.reference_nles.push_back(r.get<std::string>());
    if (j.contains("query_id") && !j["query_id"].is_null()) c.query_id = j["query_id"].get<std::uint64_t>();
    for (const auto& p : j.value("predicted", nlohmann::json::array())) {
      PathologyPrediction pred;
      pred.label = p.at("label").get<std::string>();
      pred.score = p.at("score").get<double>();
      if (!cfg.has_label(pred.label)) throw bad("unknown label '" + pred.label + "'");
      try {
        pred.certainty = certainty(pred.score, cfg, pred.label);
      } catch (const Error& e) {
        throw bad(e.what());
      }
      if (p.contains("certainty")) {
        auto given = parse_certainty(p["certainty"].get<std::string>());
        if (!given || *given != pred.certainty)
          throw bad("certainty for '" + pred.label + "' disagrees with its score under the configured thresholds");
      }
      c.predicted.push_back(std::move(pred));
    }
    for (const auto& g : j.at("gold")) {
      GoldLabel gl;
      gl.label = g.at("label").get<std::string>();
      if (!cfg.has_label(gl.label)) throw bad("unknown gold label '" + gl.label + "'");
      auto cert = parse_certainty(g.at("certainty").get<std::string>());
      if (!cert) throw bad("bad gold certainty");
      gl.certainty = *cert;
      c.gold.push_back(std::move(gl));
    }
  } catch (const nlohmann::json::exception& e) {
    throw bad(e.what());
  }
  if (c.reference_nles.empty()) throw bad("reference_nles must be nonempty");
  return c;
}

inline std::vector<CaseRecord> load_cases(std::istream& in, const ThresholdConfig& cfg) {
  std::vector<CaseRecord> cases;
  std::string raw;
  std::uint64_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim_cr(raw);
    if (detail::is_blank(line)) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::MalformedRecord, "invalid JSON", line_no);
    cases.push_back(parse_case(j, cfg, line_no));
  }
  return cases;
}

inline nlohmann::json case_to_json(const CaseRecord& c) {
  nlohmann::json j = {{"case_id", c.case_id}, {"generated_nle", c.generated_nle}, {"reference_nles", c.reference_nles}};
  j["predicted"] = nlohmann::json::array();
  for (const auto& p : c.predicted)
    j["predicted"].push_back({{"label", p.label}, {"score", p.score}, {"certainty", certainty_name(p.certainty)}});
  j["gold"] = nlohmann::json::array();
  for (const auto& g : c.gold) j["gold"].push_back({{"label", g.label}, {"certainty", certainty_name(g.certainty)}});
  if (c.query_id) j["query_id"] = *c.query_id;
  return j;
}

// ---------------------------------------------------------------------------

inline bool case_is_correct(const CaseRecord& c, FilterMode mode) {
  if (c.gold.empty()) return false;
  std::size_t matched = 0;
  for (const auto& g : c.gold) {
    auto it = std::find_if(c.predicted.begin(), c.predicted.end(), [&](const auto& p) { return p.label == g.label; });
    if (it != c.predicted.end() && it->certainty == g.certainty) ++matched;
  }
  return mode == FilterMode::Strict ? matched == c.gold.size() : matched > 0;
}

inline std::vector<CaseRecord> filter_correct(const std::vector<CaseRecord>& cases, FilterMode mode = FilterMode::Strict) {
  std::vector<CaseRecord> out;
  for (const auto& c : cases)
    if (case_is_correct(c, mode)) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------

struct EvalConfig {
  ThresholdConfig thresholds;
  std::size_t k = kDefaultTopK;
  PromptStyle style = PromptStyle::Kg;
  FilterMode mode = FilterMode::Strict;
  std::string retrieval = "cross_modal";

  /// SHA-256 prefix over every scoring-relevant setting.
  std::string fingerprint() const {
    nlohmann::json j;
    j["theta_neg"] = thresholds.theta_neg();
    j["theta_pos"] = thresholds.theta_pos();
    j["labels"] = thresholds.labels();
    nlohmann::json ov = nlohmann::json::object();
    for (const auto& [label, p] : thresholds.overrides()) ov[label] = {p.theta_neg, p.theta_pos};
    j["threshold_overrides"] = ov;
    j["k"] = k;
    j["style"] = style_name(style);
    j["filter_mode"] = filter_mode_name(mode);
    j["retrieval"] = retrieval;
    j["tokenizer"] = kTokenizerVersion;
    j["metrics"] = {{"bleu", "bleu4+add1"}, {"rouge_beta", kRougeBeta}, {"cider_sigma", kCiderSigma},
                    {"meteor", "meteor_lite/exact+porter"}};
    return sha256_hex(j.dump()).substr(0, 16);
  }
};

/// Multipliers mapping stored metric values onto 0-100-style table columns.
struct ReportScales {
  static constexpr double auc = 100.0;
  static constexpr double bleu4 = 1.0;
  static constexpr double meteor = 100.0;
  static constexpr double rouge_l = 100.0;
  static constexpr double cider = 10.0;
};

struct MetricReport {
  std::optional<double> auc;
  std::vector<std::pair<std::string, std::optional<double>>> auc_per_label;
  std::optional<double> bleu4, meteor, rouge_l, cider;  // absent when nothing survived the filter
  bool cider_degenerate = false;
  std::size_t n_total = 0;
  std::size_t n_evaluated = 0;
  FilterMode mode = FilterMode::Strict;
  std::string config_fingerprint;
  bool empty_after_filter = false;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["auc"] = opt(auc);
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [label, v] : auc_per_label) per[label] = opt(v);
    j["auc_per_label"] = per;
    j["bleu4"] = opt(bleu4);
    j["meteor_lite"] = opt(meteor);
    j["rouge_l"] = opt(rouge_l);
    j["cider_d"] = opt(cider);
    j["cider_degenerate"] = cider_degenerate;
    j["n_total"] = n_total;
    j["n_evaluated"] = n_evaluated;
    j["filter_mode"] = filter_mode_name(mode);
    j["config_fingerprint"] = config_fingerprint;
    j["status"] = empty_after_filter ? "EmptyAfterFilter" : "ok";
    j["scales"] = {{"auc", ReportScales::auc},
                   {"bleu4", ReportScales::bleu4},
                   {"meteor_lite", ReportScales::meteor},
                   {"rouge_l", ReportScales::rouge_l},
                   {"cider_d", ReportScales::cider}};
    return j;
  }
};

namespace detail {

inline MacroAuc case_auc(const std::vector<CaseRecord>& cases, const ThresholdConfig& cfg,
                         std::vector<std::pair<std::string, std::optional<double>>>& per_label) {
  // Per label, only cases carrying a prediction for that label take part.
  MacroAuc total;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t l = 0; l < cfg.labels().size(); ++l) {
    const auto& label = cfg.labels()[l];
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& c : cases) {
      auto p = std::find_if(c.predicted.begin(), c.predicted.end(), [&](const auto& x) { return x.label == label; });
      if (p == c.predicted.end()) continue;
      auto g = std::find_if(c.gold.begin(), c.gold.end(), [&](const auto& x) { return x.label == label; });
      s.push_back(p->score);
      y.push_back(g != c.gold.end() && g->certainty == Certainty::Positive ? 1 : 0);
    }
    std::optional<double> v;
    try {
      if (!s.empty()) v = roc_auc(s, y);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateLabels) throw;
    }
    if (v) {
      sum += *v;
      ++used;
    } else {
      total.skipped.push_back(l);
    }
    total.per_label.push_back(v);
    per_label.emplace_back(label, v);
  }
  if (used) total.value = sum / static_cast<double>(used);
  return total;
}

}  // namespace detail

/// Scores `cases[i].generated_nle` against `reference_nles` over the cases
/// that pass the correctness filter. Survivors are reduced in case_id order.
inline MetricReport evaluate(const std::vector<CaseRecord>& cases, const EvalConfig& cfg) {
  if (cases.empty()) throw Error(Errc::EmptyCorpus, "no cases to evaluate");
  MetricReport r;
  r.n_total = cases.size();
  r.mode = cfg.mode;
  r.config_fingerprint = cfg.fingerprint();
  r.auc = detail::case_auc(cases, cfg.thresholds, r.auc_per_label).value;

  auto survivors = filter_correct(cases, cfg.mode);
  std::stable_sort(survivors.begin(), survivors.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  r.n_evaluated = survivors.size();
  if (survivors.empty()) {
    r.empty_after_filter = true;
    return r;
  }
  std::vector<EvalPair> pairs;
  pairs.reserve(survivors.size());
  for (const auto& c : survivors) pairs.push_back(make_eval_pair(c.case_id, c.generated_nle, c.reference_nles));
  r.bleu4 = kgrag::bleu4(pairs);
  r.meteor = meteor_lite_corpus(pairs);
  r.rouge_l = rouge_l_corpus(pairs);
  auto cider = cider_d(pairs);
  r.cider = cider.score;
  r.cider_degenerate = cider.degenerate;
  return r;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Image-to-image lookup for uni-modal retrieval: nearest stored images,
/// then their associated triplet ids.
struct ImageTripletIndex {
  FlatIndex images;
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> triplets_of;

  /// Walks stored images from nearest to farthest, concatenating their
  /// triplet ids until `k` are collected.
  std::vector<std::uint64_t> retrieve(std::span<const float> query, std::size_t k) const {
    std::vector<std::uint64_t> out;
    if (k == 0) return out;
    for (const auto& hit : images.top_k(query, images.size())) {
      auto it = triplets_of.find(hit.id);
      if (it == triplets_of.end()) continue;
      for (auto id : it->second) {
        out.push_back(id);
        if (out.size() == k) return out;
      }
    }
    return out;
  }
};

/// "image_id" -> "triplet_ids" JSON-lines map.
inline std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> load_image_triplets(std::istream& in) {
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> out;
  std::string raw;
  std::uint64_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim_cr(raw);
    if (detail::is_blank(line)) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw Error(Errc::MalformedRecord, "invalid JSON", line_no);
      out[j.at("image_id").get<std::uint64_t>()] = j.at("triplet_ids").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedRecord, e.what(), line_no);
    }
  }
  return out;
}

enum class RetrievalMode { CrossModal, UniModal };

constexpr std::string_view retrieval_mode_name(RetrievalMode m) noexcept {
  return m == RetrievalMode::CrossModal ? "cross_modal" : "uni_modal";
}

struct PipelineResources {
  const LoadedIndex* text_index = nullptr;  // triplet-text (or explanation) embeddings
  ContextStore context;                     // texts addressable by the index ids
  std::unordered_map<std::uint64_t, std::vector<float>> queries;  // image embeddings by query_id
  const ImageTripletIndex* image_index = nullptr;
  std::optional<BackendHandle> backend;
  std::uint32_t max_tokens = 128;
  std::uint32_t timeout_ms = 30000;
  CertaintySet phrase_filter = default_phrase_filter();
};

struct CaseRun {
  std::string case_id;
  std::vector<std::uint64_t> retrieved;
  PromptBundle prompt;
  std::string generated;
};

struct PipelineRun {
  std::vector<CaseRun> cases;
  MetricReport report;
};

/// Retrieves, renders and generates for every case (template index = case
/// position), then evaluates the generated texts.
inline PipelineRun run_pipeline(const std::vector<CaseRecord>& cases, const EvalConfig& cfg,
                                const PipelineResources& res, RetrievalMode mode = RetrievalMode::CrossModal) {
  if (!res.backend) throw Error(Errc::BackendUnavailable, "no generation backend configured");
  if (cfg.style != PromptStyle::None && mode == RetrievalMode::CrossModal && !res.text_index)
    throw Error(Errc::InvalidArgument, "cross-modal retrieval needs a text index");
  if (cfg.style != PromptStyle::None && mode == RetrievalMode::UniModal && !res.image_index)
    throw Error(Errc::MissingImageIndex, "uni-modal retrieval needs an image index");

  PipelineRun run;
  std::vector<CaseRecord> scored = cases;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    CaseRun cr;
    cr.case_id = c.case_id;

    std::vector<RetrievalHit> hits;
    if (cfg.style != PromptStyle::None) {
      if (!c.query_id) throw Error(Errc::InvalidArgument, "case " + c.case_id + " has no query_id");
      auto q = res.queries.find(*c.query_id);
      if (q == res.queries.end())
        throw Error(Errc::UnresolvedHitId, "case " + c.case_id + ": query " + std::to_string(*c.query_id) + " not found");
      if (mode == RetrievalMode::CrossModal) {
        hits = res.text_index->search(q->second, cfg.k);
      } else {
        for (auto id : res.image_index->retrieve(q->second, cfg.k)) hits.push_back({id, 0.0f});
      }
      for (const auto& h : hits) cr.retrieved.push_back(h.id);
    }

    auto phrase = render_pathology_phrase(c.predicted, res.phrase_filter);
    auto question = select_template(i, phrase);
    cr.prompt = assemble_prompt(std::move(question), hits, res.context, cfg.style, std::move(phrase));

    GenerationRequest req{cr.prompt.rendered, c.case_id, res.max_tokens, res.timeout_ms};
    cr.generated = res.backend->generate(req).text;
    scored[i].generated_nle = cr.generated;
    run.cases.push_back(std::move(cr));
  }
  run.report = evaluate(scored, cfg);
  return run;
}

struct AblationRow {
  std::string key;  // "K" value or retrieval mode
  std::optional<PipelineRun> run;
  std::string error;
};

inline const std::vector<std::size_t>& default_sweep_ks() {
  static const std::vector<std::size_t> ks = {1, 3, 5, 7};
  return ks;
}

/// One pipeline run per K. A failing row records its error; the sweep goes on.
inline std::vector<AblationRow> k_sweep(const std::vector<CaseRecord>& cases, const EvalConfig& base,
                                        const PipelineResources& res, const std::vector<std::size_t>& ks = default_sweep_ks()) {
  if (ks.empty()) throw Error(Errc::InvalidArgument, "ks must be nonempty");
  std::vector<AblationRow> rows;
  for (auto k : ks) {
    AblationRow row{std::to_string(k), std::nullopt, {}};
    try {
      if (k == 0) throw Error(Errc::InvalidArgument, "K must be positive");
      EvalConfig cfg = base;
      cfg.k = k;
      row.run = run_pipeline(cases, cfg, res);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Uni-modal (image -> nearest stored image -> its triplets) against
/// cross-modal (image -> triplet texts) at the configured K.
inline std::vector<AblationRow> retrieval_mode_compare(const std::vector<CaseRecord>& cases, const EvalConfig& base,
                                                       const PipelineResources& res) {
  if (!res.image_index) throw Error(Errc::MissingImageIndex, "uni-modal retrieval needs an image index");
  std::vector<AblationRow> rows;
  for (auto mode : {RetrievalMode::UniModal, RetrievalMode::CrossModal}) {
    AblationRow row{std::string(retrieval_mode_name(mode)), std::nullopt, {}};
    try {
      EvalConfig cfg = base;
      cfg.retrieval = retrieval_mode_name(mode);
      row.run = run_pipeline(cases, cfg, res, mode);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Plain-text tables

namespace detail {

inline std::string fixed2(const std::optional<double>& v, double scale) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << (*v * scale);
  return os.str();
}

/// Left-aligned first column, right-aligned others, two-space gutters.
inline std::string align_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) line += "  ";
      const std::string pad(width[c] - r[c].size(), ' ');
      line += c == 0 ? r[c] + pad : pad + r[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
  }
  return out;
}

inline std::vector<std::string> nlg_cells(const MetricReport& r) {
  return {fixed2(r.bleu4, ReportScales::bleu4), fixed2(r.meteor, ReportScales::meteor),
          fixed2(r.rouge_l, ReportScales::rouge_l), fixed2(r.cider, ReportScales::cider)};
}

inline std::string ablation_table(const std::string& first_header, const std::vector<AblationRow>& rows,
                                  const std::function<std::string(const std::string&)>& label) {
  std::vector<std::vector<std::string>> t = {{first_header, "B4", "METEOR", "R-L", "CIDEr"}};
  std::string errors;
  for (const auto& row : rows) {
    std::vector<std::string> cells = {label(row.key)};
    if (row.run) {
      auto c = nlg_cells(row.run->report);
      cells.insert(cells.end(), c.begin(), c.end());
    } else {
      cells.insert(cells.end(), {"ERR", "ERR", "ERR", "ERR"});
      errors += "# " + label(row.key) + ": " + row.error + '\n';
    }
    t.push_back(std::move(cells));
  }
  return align_table(t) + errors;
}

}  // namespace detail

/// AUC, B4, MET., R.L., CIDEr on the 0-100-style scale.
inline std::string format_report_table(const MetricReport& r) {
  std::vector<std::vector<std::string>> t = {{"AUC", "B4", "MET.", "R.L.", "CIDEr", "n_eval/n_total"}};
  auto cells = detail::nlg_cells(r);
  t.push_back({detail::fixed2(r.auc, ReportScales::auc), cells[0], cells[1], cells[2], cells[3],
               std::to_string(r.n_evaluated) + "/" + std::to_string(r.n_total)});
  return detail::align_table(t);
}

inline std::string format_sweep_table(const std::vector<AblationRow>& rows) {
  return detail::ablation_table("K", rows, [](const std::string& k) { return k; });
}

inline std::string format_compare_table(const std::vector<AblationRow>& rows) {
  return detail::ablation_table("Retrieval", rows, [](const std::string& m) {
    return m == "uni_modal" ? std::string("Uni-modal") : std::string("Cross-modal");
  });
}

inline std::string ablation_csv(const std::string& first_header, const std::vector<AblationRow>& rows) {
  std::string out = first_header + ",B4,METEOR,R-L,CIDEr\n";
  for (const auto& row : rows) {
    out += row.key;
    if (row.run) {
      for (const auto& c : detail::nlg_cells(row.run->report)) out += "," + c;
    } else {
      out += ",,,,";
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json ablation_json(const std::string& key_name, const std::vector<AblationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j;
    j[key_name] = row.key;
    if (row.run) {
      j["report"] = row.run->report.to_json();
    } else {
      j["error"] = row.error;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace kgrag
