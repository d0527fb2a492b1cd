#pragma once

// Triplet datastore: JSON-lines export parsing, relation filtering,
// canonical rendering and the KGDS persistence format.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "kgrag/errors.hpp"

namespace kgrag {

inline constexpr std::string_view kSuggestiveOf = "suggestive_of";

struct Triplet {
  std::string subject;
  std::string relation;
  std::string object;
  std::string source_id;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// "{subject} {relation} {object}"
inline std::string canonical_text(const Triplet& t) {
  std::string s;
  s.reserve(t.subject.size() + t.relation.size() + t.object.size() + 2);
  s += t.subject;
  s += ' ';
  s += t.relation;
  s += ' ';
  s += t.object;
  return s;
}

class TripletRecord {
 public:
  TripletRecord(std::uint64_t id, Triplet triplet)
      : id_(id), triplet_(std::move(triplet)), canonical_text_(kgrag::canonical_text(triplet_)) {}

  std::uint64_t id() const noexcept { return id_; }
  const Triplet& triplet() const noexcept { return triplet_; }
  const std::string& canonical_text() const noexcept { return canonical_text_; }

  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;

 private:
  std::uint64_t id_;
  Triplet triplet_;
  std::string canonical_text_;
};

using Datastore = std::vector<TripletRecord>;

struct RecordError {
  Errc code;
  std::uint64_t line;
  std::string reason;
};

struct ParseResult {
  std::vector<Triplet> triplets;
  std::vector<RecordError> errors;

  bool ok() const noexcept { return errors.empty(); }
};

namespace detail {

inline bool has_forbidden_char(std::string_view s) {
  return s.find_first_of(";\n\r") != std::string_view::npos;
}

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\v\f") == std::string_view::npos;
}

inline std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace detail

/// Validates field content against the Triplet invariants. Throws on violation.
inline void validate_triplet(const Triplet& t, std::uint64_t line = 0) {
  auto loc = line ? std::optional<std::uint64_t>(line) : std::nullopt;
  if (detail::is_blank(t.subject)) throw Error(Errc::EmptyField, "subject is blank", loc);
  if (detail::is_blank(t.object)) throw Error(Errc::EmptyField, "object is blank", loc);
  for (std::string_view f : {std::string_view(t.subject), std::string_view(t.relation), std::string_view(t.object)}) {
    if (detail::has_forbidden_char(f))
      throw Error(Errc::MalformedRecord, "field contains ';' or a line break: \"" + std::string(f) + "\"", loc);
  }
}

/// Parses a triplet export (one JSON object per line). Blank lines are skipped;
/// bad lines are collected with their 1-based line numbers and never dropped silently.
inline ParseResult parse_export(std::istream& in) {
  ParseResult result;
  std::string raw;
  std::uint64_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim_cr(raw);
    if (detail::is_blank(line)) continue;

    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
      result.errors.push_back({Errc::MalformedRecord, line_no, "not a JSON object"});
      continue;
    }
    Triplet t;
    std::string missing;
    for (auto [key, field] : {std::pair{"subject", &t.subject}, std::pair{"relation", &t.relation},
                              std::pair{"object", &t.object}, std::pair{"source_id", &t.source_id}}) {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string()) {
        missing = key;
        break;
      }
      *field = it->get<std::string>();
    }
    if (!missing.empty()) {
      result.errors.push_back({Errc::MalformedRecord, line_no, "missing or non-string field '" + missing + "'"});
      continue;
    }
    try {
      validate_triplet(t, line_no);
    } catch (const Error& e) {
      result.errors.push_back({e.code(), line_no, e.what()});
      continue;
    }
    result.triplets.push_back(std::move(t));
  }
  return result;
}

/// Like parse_export, but throws the first record error.
inline std::vector<Triplet> parse_export_strict(std::istream& in) {
  auto r = parse_export(in);
  if (!r.ok()) {
    const auto& e = r.errors.front();
    throw Error(e.code, e.reason, e.line);
  }
  return std::move(r.triplets);
}

inline std::vector<Triplet> filter_by_relation(const std::vector<Triplet>& triplets, std::string_view relation) {
  std::vector<Triplet> out;
  for (const auto& t : triplets)
    if (t.relation == relation) out.push_back(t);
  return out;
}

/// Assigns dense ids in input order. With `dedup`, only the first occurrence
/// of each canonical text is kept.
inline Datastore build_datastore(const std::vector<Triplet>& triplets, bool dedup = false) {
  Datastore ds;
  ds.reserve(triplets.size());
  std::unordered_set<std::string> seen;
  for (const auto& t : triplets) {
    if (dedup && !seen.insert(canonical_text(t)).second) continue;
    ds.emplace_back(ds.size(), t);
  }
  return ds;
}

struct DuplicateStats {
  std::size_t records = 0;
  std::size_t distinct_texts = 0;
  std::size_t duplicate_records = 0;  // records - distinct_texts
};

inline DuplicateStats duplicate_stats(const Datastore& ds) {
  std::unordered_set<std::string_view> texts;
  for (const auto& r : ds) texts.insert(r.canonical_text());
  return {ds.size(), texts.size(), ds.size() - texts.size()};
}

// ---------------------------------------------------------------------------
// KGDS persistence: a header line then one record object per line.

inline void save_datastore(const Datastore& ds, std::ostream& out) {
  nlohmann::json header = {{"format", "KGDS"}, {"version", 1}, {"count", ds.size()}};
  out << header.dump() << '\n';
  for (const auto& r : ds) {
    const auto& t = r.triplet();
    nlohmann::json j = {{"id", r.id()},           {"subject", t.subject},     {"relation", t.relation},
                        {"object", t.object},     {"source_id", t.source_id}, {"canonical_text", r.canonical_text()}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(Errc::Io, "failed writing datastore");
}

inline Datastore load_datastore(std::istream& in) {
  std::string raw;
  if (!std::getline(in, raw)) throw Error(Errc::CorruptFile, "missing KGDS header", 1);
  auto header = nlohmann::json::parse(detail::trim_cr(raw), nullptr, false);
  if (header.is_discarded() || !header.is_object() || header.value("format", "") != "KGDS")
    throw Error(Errc::CorruptFile, "bad KGDS header", 1);
  if (header.value("version", 0) != 1) throw Error(Errc::CorruptFile, "unsupported KGDS version", 1);
  if (!header.contains("count") || !header["count"].is_number_unsigned())
    throw Error(Errc::CorruptFile, "header count missing", 1);
  const auto count = header["count"].get<std::uint64_t>();

  Datastore ds;
  std::uint64_t line_no = 1;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim_cr(raw);
    if (detail::is_blank(line)) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded() || !j.is_object()) throw Error(Errc::CorruptFile, "not a JSON object", line_no);
      const auto id = j.at("id").get<std::uint64_t>();
      if (id != ds.size()) throw Error(Errc::CorruptFile, "ids must be dense and ordered", line_no);
      Triplet t{j.at("subject").get<std::string>(), j.at("relation").get<std::string>(),
                j.at("object").get<std::string>(), j.at("source_id").get<std::string>()};
      validate_triplet(t, line_no);
      TripletRecord rec(id, std::move(t));
      if (j.at("canonical_text").get<std::string>() != rec.canonical_text())
        throw Error(Errc::CorruptFile, "canonical_text does not match fields", line_no);
      ds.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::CorruptFile, e.what(), line_no);
    }
  }
  if (ds.size() != count)
    throw Error(Errc::CorruptFile,
                "header count " + std::to_string(count) + " but " + std::to_string(ds.size()) + " records");
  return ds;
}

}  // namespace kgrag
