#pragma once

// Prompt assembly: certainty-prefixed pathology phrases, the five instruction
// templates, and the "Context: ... \nQuestion: ..." layout handed to a
// generation backend.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgrag/errors.hpp"
#include "kgrag/kg_store.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/vector_index.hpp"

namespace kgrag {

enum class PromptStyle { Kg, Nle, None };

constexpr std::string_view style_name(PromptStyle s) noexcept {
  switch (s) {
    case PromptStyle::Kg: return "kg";
    case PromptStyle::Nle: return "nle";
    case PromptStyle::None: return "none";
  }
  return "kg";
}

inline std::optional<PromptStyle> parse_style(std::string_view s) {
  if (s == "kg") return PromptStyle::Kg;
  if (s == "nle") return PromptStyle::Nle;
  if (s == "none") return PromptStyle::None;
  return std::nullopt;
}

using CertaintySet = std::set<Certainty>;

inline const CertaintySet& default_phrase_filter() {
  static const CertaintySet s{Certainty::Positive, Certainty::Uncertain};
  return s;
}

/// "{certainty} {Label}" items joined by ", " in input order.
inline std::string render_pathology_phrase(std::span<const PathologyPrediction> predictions,
                                           const CertaintySet& include = default_phrase_filter()) {
  std::string out;
  for (const auto& p : predictions) {
    if (!include.contains(p.certainty)) continue;
    if (!out.empty()) out += ", ";
    out += certainty_name(p.certainty);
    out += ' ';
    out += p.label;
  }
  if (out.empty()) throw Error(Errc::NoQualifyingPathology, "no prediction passes the certainty filter");
  return out;
}

inline constexpr std::string_view kPathologiesPlaceholder = "{pathologies}";

inline constexpr std::array<std::string_view, 5> kInstructionTemplates = {
    "Which signs show that the patient has {pathologies}?",
    "Explain why these {pathologies} are present in the image?",
    "What evidence in the image indicates {pathologies}?",
    "How can you tell that the patient has {pathologies} from the image?",
    "What features suggest the presence of {pathologies} in this image?",
};

inline std::string fill_template(std::string_view tmpl, std::string_view phrase) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto hit = tmpl.find(kPathologiesPlaceholder, pos);
    out += tmpl.substr(pos, hit == std::string_view::npos ? std::string_view::npos : hit - pos);
    if (hit == std::string_view::npos) break;
    out += phrase;
    pos = hit + kPathologiesPlaceholder.size();
  }
  return out;
}

/// Template `index mod 5` with the phrase substituted.
inline std::string select_template(std::uint64_t index, std::string_view phrase) {
  return fill_template(kInstructionTemplates[index % kInstructionTemplates.size()], phrase);
}

/// Seeded uniform template draw.
inline std::string sample_template(std::uint64_t seed, std::string_view phrase) {
  std::mt19937_64 rng(seed);
  return select_template(rng(), phrase);
}

/// Texts addressable by dense record id: canonical triplet texts for the KG
/// style, explanation sentences for the NLE style.
class ContextStore {
 public:
  ContextStore() = default;
  explicit ContextStore(std::vector<std::string> texts) : texts_(std::move(texts)) {}

  static ContextStore from_datastore(const Datastore& ds) {
    std::vector<std::string> texts;
    texts.reserve(ds.size());
    for (const auto& r : ds) texts.push_back(r.canonical_text());
    return ContextStore(std::move(texts));
  }

  std::size_t size() const noexcept { return texts_.size(); }

  const std::string& at(std::uint64_t id) const {
    if (id >= texts_.size()) throw Error(Errc::UnresolvedHitId, "id " + std::to_string(id) + " not in store");
    return texts_[id];
  }

 private:
  std::vector<std::string> texts_;
};

struct PromptBundle {
  std::string question;
  std::vector<std::string> context_triplets;
  std::string pathology_phrase;
  std::string rendered;
};

inline constexpr std::string_view kContextSeparator = "; ";

/// kg / nle: "Context: {items joined by '; '}\nQuestion: {question}".
/// none: "Question: {question}".
inline PromptBundle assemble_prompt(std::string question, std::span<const RetrievalHit> hits,
                                    const ContextStore& store, PromptStyle style, std::string pathology_phrase = {}) {
  PromptBundle b;
  b.question = std::move(question);
  b.pathology_phrase = std::move(pathology_phrase);
  if (style == PromptStyle::None) {
    b.rendered = "Question: " + b.question;
    return b;
  }
  std::string block;
  for (const auto& h : hits) {
    const auto& text = store.at(h.id);
    if (!b.context_triplets.empty()) block += kContextSeparator;
    block += text;
    b.context_triplets.push_back(text);
  }
  b.rendered = "Context: " + block + "\nQuestion: " + b.question;
  return b;
}

}  // namespace kgrag
