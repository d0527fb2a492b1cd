#pragma once

// Corpus NLG metrics over one shared tokenizer: BLEU-4 (add-one smoothing on
// n >= 2), ROUGE-L (beta 1.2), CIDEr-D (sigma 6, clipped, x10) and
// METEOR-lite (exact + Porter-stem matching, no synonym module).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgrag/errors.hpp"
#include "kgrag/stemmer.hpp"

namespace kgrag {

/// Version tag of `tokenize`; part of the evaluation config fingerprint.
inline constexpr std::string_view kTokenizerVersion = "ws-lower-punctstrip/1";

inline constexpr int kMaxNgram = 4;
inline constexpr double kRougeBeta = 1.2;
inline constexpr double kCiderSigma = 6.0;
inline constexpr double kCiderScale = 10.0;
inline constexpr double kMeteorAlpha = 0.9;  // F_mean = PR / (alpha P + (1 - alpha) R) = 10PR / (R + 9P)
inline constexpr double kMeteorGamma = 0.5;
inline constexpr double kMeteorBeta = 3.0;

struct TokenizedSentence {
  std::vector<std::string> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  friend bool operator==(const TokenizedSentence&, const TokenizedSentence&) = default;
};

struct EvalPair {
  std::string case_id;
  TokenizedSentence candidate;
  std::vector<TokenizedSentence> references;
};

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation;
/// punctuation-only tokens vanish.
inline TokenizedSentence tokenize(std::string_view text) {
  TokenizedSentence out;
  std::size_t i = 0;
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; };
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_punct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && is_punct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string tok(text.substr(b, e - b));
      for (auto& c : tok)
        if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

inline EvalPair make_eval_pair(std::string case_id, std::string_view candidate, const std::vector<std::string>& references) {
  EvalPair p{std::move(case_id), tokenize(candidate), {}};
  for (const auto& r : references) p.references.push_back(tokenize(r));
  return p;
}

namespace detail {

using NgramCounts = std::map<std::vector<std::string_view>, int>;

inline std::array<NgramCounts, kMaxNgram> count_ngrams(const TokenizedSentence& s) {
  std::array<NgramCounts, kMaxNgram> out;
  for (int n = 1; n <= kMaxNgram; ++n)
    for (std::size_t i = 0; i + n <= s.size(); ++i)
      ++out[n - 1][std::vector<std::string_view>(s.tokens.begin() + i, s.tokens.begin() + i + n)];
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU-4

/// Sufficient statistics; partitions of a corpus can be summed and scored once.
struct BleuStats {
  std::array<double, kMaxNgram> matches{};
  std::array<double, kMaxNgram> totals{};
  double candidate_length = 0;
  double reference_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kMaxNgram; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    candidate_length += o.candidate_length;
    reference_length += o.reference_length;
    return *this;
  }
};

inline BleuStats bleu_stats(const EvalPair& p) {
  BleuStats st;
  const auto cand = detail::count_ngrams(p.candidate);
  std::array<detail::NgramCounts, kMaxNgram> max_ref;
  for (const auto& ref : p.references) {
    auto rc = detail::count_ngrams(ref);
    for (int n = 0; n < kMaxNgram; ++n)
      for (const auto& [g, c] : rc[n]) max_ref[n][g] = std::max(max_ref[n][g], c);
  }
  for (int n = 0; n < kMaxNgram; ++n) {
    for (const auto& [g, c] : cand[n]) {
      auto it = max_ref[n].find(g);
      st.matches[n] += std::min(c, it == max_ref[n].end() ? 0 : it->second);
      st.totals[n] += c;
    }
  }
  // Closest reference length; ties go to the shorter reference.
  const double c = static_cast<double>(p.candidate.size());
  double best = -1;
  for (const auto& ref : p.references) {
    const double r = static_cast<double>(ref.size());
    if (best < 0 || std::abs(r - c) < std::abs(best - c) || (std::abs(r - c) == std::abs(best - c) && r < best)) best = r;
  }
  st.candidate_length = c;
  st.reference_length = std::max(best, 0.0);
  return st;
}

/// BLEU-4 on a 0-100 scale from summed statistics.
inline double bleu4_from_stats(const BleuStats& st) {
  if (st.candidate_length == 0 || st.matches[0] == 0) return 0.0;
  double log_p = std::log(st.matches[0] / st.totals[0]);
  for (int n = 1; n < kMaxNgram; ++n) log_p += std::log((st.matches[n] + 1.0) / (st.totals[n] + 1.0));
  const double bp =
      st.candidate_length < st.reference_length ? std::exp(1.0 - st.reference_length / st.candidate_length) : 1.0;
  return 100.0 * bp * std::exp(log_p / kMaxNgram);
}

inline double bleu4(std::span<const EvalPair> corpus) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "BLEU-4 needs at least one pair");
  BleuStats total;
  for (const auto& p : corpus) total += bleu_stats(p);
  return bleu4_from_stats(total);
}

// ---------------------------------------------------------------------------
// ROUGE-L

inline double rouge_l(const EvalPair& p) {
  if (p.candidate.empty()) return 0.0;
  double best = 0.0;
  const double beta2 = kRougeBeta * kRougeBeta;
  for (const auto& ref : p.references) {
    if (ref.empty()) continue;
    const auto lcs = static_cast<double>(detail::lcs_length(p.candidate.tokens, ref.tokens));
    if (lcs == 0) continue;
    const double prec = lcs / static_cast<double>(p.candidate.size());
    const double rec = lcs / static_cast<double>(ref.size());
    best = std::max(best, (1.0 + beta2) * prec * rec / (rec + beta2 * prec));
  }
  return best;
}

inline double rouge_l_corpus(std::span<const EvalPair> corpus) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "ROUGE-L needs at least one pair");
  double s = 0.0;
  for (const auto& p : corpus) s += rouge_l(p);
  return s / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// CIDEr-D
//
// Document frequency counts, per pair, whether an n-gram occurs in any of that
// pair's references. IDF is log(N) - log(max(1, df)) with N the number of
// pairs, so a single-document corpus scores 0 everywhere. Candidate counts are
// clipped to reference counts, per-n cosines are damped by
// exp(-(len_c - len_r)^2 / (2 sigma^2)), averaged over n and references, and
// multiplied by 10.

struct CiderResult {
  double score = 0.0;
  bool degenerate = false;  // fewer than two documents; IDF carries no information
  std::vector<double> per_pair;
};

namespace detail {

struct TfIdf {
  std::array<std::map<std::vector<std::string_view>, double>, kMaxNgram> vec;
  std::array<double, kMaxNgram> norm{};
  double length = 0;
};

inline TfIdf tfidf(const std::array<NgramCounts, kMaxNgram>& counts, const std::map<std::vector<std::string_view>, double>& df,
                   double log_n) {
  TfIdf out;
  for (int n = 0; n < kMaxNgram; ++n) {
    for (const auto& [g, tf] : counts[n]) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double v = tf * (log_n - d);
      out.vec[n][g] = v;
      out.norm[n] += v * v;
      if (n == 0) out.length += tf;
    }
    out.norm[n] = std::sqrt(out.norm[n]);
  }
  return out;
}

inline std::array<double, kMaxNgram> cider_sim(const TfIdf& hyp, const TfIdf& ref) {
  std::array<double, kMaxNgram> val{};
  const double delta = hyp.length - ref.length;
  const double damp = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  for (int n = 0; n < kMaxNgram; ++n) {
    for (const auto& [g, vh] : hyp.vec[n]) {
      auto it = ref.vec[n].find(g);
      if (it == ref.vec[n].end()) continue;
      val[n] += std::min(vh, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
    val[n] *= damp;
  }
  return val;
}

}  // namespace detail

inline CiderResult cider_d(std::span<const EvalPair> corpus) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "CIDEr-D needs at least one pair");
  std::vector<std::vector<std::array<detail::NgramCounts, kMaxNgram>>> ref_counts;
  std::map<std::vector<std::string_view>, double> df;
  for (const auto& p : corpus) {
    auto& rc = ref_counts.emplace_back();
    std::map<std::vector<std::string_view>, bool> seen;
    for (const auto& ref : p.references) {
      rc.push_back(detail::count_ngrams(ref));
      for (const auto& per_n : rc.back())
        for (const auto& [g, c] : per_n) seen[g] = true;
    }
    for (const auto& [g, b] : seen) df[g] += 1.0;
  }

  CiderResult r;
  r.degenerate = corpus.size() < 2;
  const double log_n = std::log(static_cast<double>(corpus.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto hyp = detail::tfidf(detail::count_ngrams(corpus[i].candidate), df, log_n);
    std::array<double, kMaxNgram> acc{};
    for (const auto& rc : ref_counts[i]) {
      auto v = detail::cider_sim(hyp, detail::tfidf(rc, df, log_n));
      for (int n = 0; n < kMaxNgram; ++n) acc[n] += v[n];
    }
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= kMaxNgram;
    const double refs = static_cast<double>(std::max<std::size_t>(ref_counts[i].size(), 1));
    const double score = mean / refs * kCiderScale;
    r.per_pair.push_back(score);
    total += score;
  }
  r.score = total / static_cast<double>(corpus.size());
  return r;
}

// ---------------------------------------------------------------------------
// METEOR-lite
//
// Alignment runs in two stages, exact surface match then Porter-stem match on
// the still-unaligned tokens. Within a stage each candidate token, left to
// right, takes the leftmost unaligned reference token with the same key.

struct MeteorAlignment {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (candidate pos, reference pos), by candidate pos
  std::size_t chunks = 0;
};

inline MeteorAlignment meteor_align(const TokenizedSentence& cand, const TokenizedSentence& ref) {
  MeteorAlignment a;
  std::vector<bool> cand_used(cand.size(), false), ref_used(ref.size(), false);
  auto stage = [&](auto key) {
    std::vector<std::string> rk(ref.size());
    for (std::size_t j = 0; j < ref.size(); ++j) rk[j] = key(ref.tokens[j]);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (cand_used[i]) continue;
      const auto ck = key(cand.tokens[i]);
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!ref_used[j] && rk[j] == ck) {
          cand_used[i] = ref_used[j] = true;
          a.matches.emplace_back(i, j);
          break;
        }
      }
    }
  };
  stage([](const std::string& t) { return t; });
  stage([](const std::string& t) { return porter_stem(t); });

  std::sort(a.matches.begin(), a.matches.end());
  for (std::size_t k = 0; k < a.matches.size(); ++k) {
    const bool continues = k > 0 && a.matches[k].first == a.matches[k - 1].first + 1 &&
                           a.matches[k].second == a.matches[k - 1].second + 1;
    if (!continues) ++a.chunks;
  }
  return a;
}

inline double meteor_lite_single(const TokenizedSentence& cand, const TokenizedSentence& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto a = meteor_align(cand, ref);
  const double m = static_cast<double>(a.matches.size());
  if (m == 0) return 0.0;
  const double prec = m / static_cast<double>(cand.size());
  const double rec = m / static_cast<double>(ref.size());
  const double f_mean = prec * rec / (kMeteorAlpha * prec + (1.0 - kMeteorAlpha) * rec);
  const double penalty = kMeteorGamma * std::pow(static_cast<double>(a.chunks) / m, kMeteorBeta);
  return f_mean * (1.0 - penalty);
}

inline double meteor_lite(const EvalPair& p) {
  double best = 0.0;
  for (const auto& ref : p.references) best = std::max(best, meteor_lite_single(p.candidate, ref));
  return best;
}

inline double meteor_lite_corpus(std::span<const EvalPair> corpus) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "METEOR-lite needs at least one pair");
  double s = 0.0;
  for (const auto& p : corpus) s += meteor_lite(p);
  return s / static_cast<double>(corpus.size());
}

}  // namespace kgrag
