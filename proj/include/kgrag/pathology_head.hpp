#pragma once

// Pathology classification head over loaded weights: dense forward pass,
// linear projector, three-level certainty discretization and ROC-AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kgrag/binary_io.hpp"
#include "kgrag/errors.hpp"

namespace kgrag {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1, Gelu = 2, Sigmoid = 3 };

struct DenseLayer {
  std::size_t out = 0;
  std::size_t in = 0;
  std::vector<float> weights;  // row-major out x in
  std::vector<float> bias;     // out
  Activation activation = Activation::Identity;
};

class DenseWeights {
 public:
  DenseWeights() = default;
  explicit DenseWeights(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::size_t in_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  std::size_t out_dim() const { return layers_.empty() ? 0 : layers_.back().out; }

 private:
  void validate() const {
    if (layers_.empty()) throw Error(Errc::ShapeMismatch, "no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      const auto where = "layer " + std::to_string(i);
      if (l.out == 0 || l.in == 0) throw Error(Errc::ShapeMismatch, where + " has a zero dimension");
      if (l.weights.size() != l.out * l.in || l.bias.size() != l.out)
        throw Error(Errc::ShapeMismatch, where + " buffer sizes do not match out x in");
      if (i > 0 && layers_[i - 1].out != l.in)
        throw Error(Errc::ShapeMismatch, where + " input " + std::to_string(l.in) + " does not chain from " +
                                             std::to_string(layers_[i - 1].out));
      if (static_cast<std::uint8_t>(l.activation) > 3) throw Error(Errc::ShapeMismatch, where + " unknown activation");
      auto finite = [](float x) { return std::isfinite(x); };
      if (!std::all_of(l.weights.begin(), l.weights.end(), finite) || !std::all_of(l.bias.begin(), l.bias.end(), finite))
        throw Error(Errc::NonFiniteInput, where + " has non-finite parameters");
    }
  }

  std::vector<DenseLayer> layers_;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Gelu: return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::Sigmoid: return sigmoid(x);
  }
  return x;
}

}  // namespace detail

/// Affine map then activation, layer by layer. Accumulates in double.
inline std::vector<float> forward(const DenseWeights& w, std::span<const float> z) {
  if (w.layers().empty()) throw Error(Errc::ShapeMismatch, "no layers");
  if (z.size() != w.in_dim())
    throw Error(Errc::ShapeMismatch, "input length " + std::to_string(z.size()) + ", expected " + std::to_string(w.in_dim()));
  if (!std::all_of(z.begin(), z.end(), [](float x) { return std::isfinite(x); }))
    throw Error(Errc::NonFiniteInput, "input has NaN or Inf");

  std::vector<double> cur(z.begin(), z.end());
  for (const auto& l : w.layers()) {
    std::vector<double> next(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = l.bias[o];
      const float* row = l.weights.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) s += row[i] * cur[i];
      next[o] = detail::activate(l.activation, s);
    }
    cur = std::move(next);
  }
  return {cur.begin(), cur.end()};
}

/// Linear projector into the language model's embedding space: W z + b.
inline std::vector<float> project(const DenseWeights& w, std::span<const float> z) {
  if (w.layers().size() != 1 || w.layers().front().activation != Activation::Identity)
    throw Error(Errc::ShapeMismatch, "projector must be a single identity-activation layer");
  return forward(w, z);
}

// ---------------------------------------------------------------------------

enum class Certainty : std::uint8_t { Negative = 0, Uncertain = 1, Positive = 2 };

constexpr std::string_view certainty_name(Certainty c) noexcept {
  switch (c) {
    case Certainty::Negative: return "negative";
    case Certainty::Uncertain: return "uncertain";
    case Certainty::Positive: return "positive";
  }
  return "negative";
}

inline std::optional<Certainty> parse_certainty(std::string_view s) {
  if (s == "negative") return Certainty::Negative;
  if (s == "uncertain") return Certainty::Uncertain;
  if (s == "positive") return Certainty::Positive;
  return std::nullopt;
}

inline const std::vector<std::string>& default_label_vocabulary() {
  static const std::vector<std::string> labels = {
      "Atelectasis",  "Consolidation",    "Edema",         "Enlarged Cardiomediastinum", "Lung Lesion",
      "Lung Opacity", "Pleural Effusion", "Pleural Other", "Pneumonia",                  "Pneumothorax"};
  return labels;
}

struct ThresholdPair {
  double theta_neg = 1.0 / 3.0;
  double theta_pos = 2.0 / 3.0;
};

class ThresholdConfig {
 public:
  ThresholdConfig() : ThresholdConfig(ThresholdPair{}, default_label_vocabulary()) {}

  ThresholdConfig(ThresholdPair global, std::vector<std::string> labels,
                  std::map<std::string, ThresholdPair> per_label = {})
      : global_(global), labels_(std::move(labels)), per_label_(std::move(per_label)) {
    check(global_, "global");
    if (labels_.empty()) throw Error(Errc::InvalidConfig, "label vocabulary is empty");
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_)
      if (!seen.insert(l).second) throw Error(Errc::InvalidConfig, "duplicate label '" + l + "'");
    for (const auto& [label, pair] : per_label_) {
      if (!seen.contains(label)) throw Error(Errc::InvalidConfig, "override for unknown label '" + label + "'");
      check(pair, label);
    }
  }

  double theta_neg() const noexcept { return global_.theta_neg; }
  double theta_pos() const noexcept { return global_.theta_pos; }
  const ThresholdPair& global() const noexcept { return global_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::map<std::string, ThresholdPair>& overrides() const noexcept { return per_label_; }

  bool has_label(std::string_view l) const { return std::find(labels_.begin(), labels_.end(), l) != labels_.end(); }

  const ThresholdPair& for_label(std::string_view label) const {
    auto it = per_label_.find(std::string(label));
    return it == per_label_.end() ? global_ : it->second;
  }

 private:
  static void check(const ThresholdPair& p, const std::string& what) {
    if (!(0.0 <= p.theta_neg && p.theta_neg <= p.theta_pos && p.theta_pos <= 1.0))
      throw Error(Errc::InvalidConfig, what + " thresholds must satisfy 0 <= theta_neg <= theta_pos <= 1");
  }

  ThresholdPair global_;
  std::vector<std::string> labels_;
  std::map<std::string, ThresholdPair> per_label_;
};

/// negative below theta_neg, uncertain on [theta_neg, theta_pos), positive from theta_pos.
inline Certainty certainty(double score, const ThresholdPair& t) {
  if (!(score >= 0.0 && score <= 1.0)) throw Error(Errc::OutOfRangeScore, "score " + std::to_string(score));
  if (score < t.theta_neg) return Certainty::Negative;
  if (score < t.theta_pos) return Certainty::Uncertain;
  return Certainty::Positive;
}

inline Certainty certainty(double score, const ThresholdConfig& cfg) { return certainty(score, cfg.global()); }

inline Certainty certainty(double score, const ThresholdConfig& cfg, std::string_view label) {
  return certainty(score, cfg.for_label(label));
}

struct PathologyPrediction {
  std::string label;
  double score = 0.0;
  Certainty certainty = Certainty::Negative;

  friend bool operator==(const PathologyPrediction&, const PathologyPrediction&) = default;
};

/// Runs the head and discretizes each output. The last layer's outputs pass
/// through a sigmoid unless that layer already applies one.
inline std::vector<PathologyPrediction> classify(const DenseWeights& w, std::span<const float> z,
                                                 const ThresholdConfig& cfg) {
  if (w.out_dim() != cfg.labels().size())
    throw Error(Errc::ShapeMismatch, "head emits " + std::to_string(w.out_dim()) + " scores for " +
                                         std::to_string(cfg.labels().size()) + " labels");
  auto raw = forward(w, z);
  const bool squash = w.layers().back().activation != Activation::Sigmoid;
  std::vector<PathologyPrediction> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double s = squash ? detail::sigmoid(raw[i]) : static_cast<double>(raw[i]);
    const auto& label = cfg.labels()[i];
    out.push_back({label, s, certainty(s, cfg, label)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ROC-AUC as the Mann-Whitney statistic with half credit for ties.

inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(Errc::InvalidArgument, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;  // 1-based
    for (std::size_t t = i; t < j; ++t) {
      const int y = labels[order[t]];
      if (y != 0 && y != 1) throw Error(Errc::InvalidArgument, "labels must be 0 or 1");
      if (y == 1) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(Errc::DegenerateLabels, "need at least one positive and one negative label");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct MacroAuc {
  std::optional<double> value;                   // absent when no label has both classes
  std::vector<std::optional<double>> per_label;  // absent entries were skipped
  std::vector<std::size_t> skipped;              // label indices lacking a class
};

/// Unweighted mean of per-label AUCs over labels with both classes present.
/// `scores[case][label]`, `labels[case][label]`.
inline MacroAuc macro_auc(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size()) throw Error(Errc::InvalidArgument, "case count mismatch");
  MacroAuc r;
  const std::size_t n_labels = scores.empty() ? 0 : scores.front().size();
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t c = 0; c < scores.size(); ++c) {
      if (scores[c].size() != n_labels || labels[c].size() != n_labels)
        throw Error(Errc::InvalidArgument, "ragged score/label matrix");
      s.push_back(scores[c][l]);
      y.push_back(labels[c][l]);
    }
    try {
      double a = roc_auc(s, y);
      r.per_label.push_back(a);
      sum += a;
      ++used;
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateLabels) throw;
      r.per_label.push_back(std::nullopt);
      r.skipped.push_back(l);
    }
  }
  if (used > 0) r.value = sum / static_cast<double>(used);
  return r;
}

// ---------------------------------------------------------------------------
// KGWT weight files: "KGWT", u16 version, u32 n_layers, then per layer
// u32 out, u32 in, u8 activation, out*in f32 row-major weights, out f32 bias.

inline std::vector<unsigned char> encode_kgwt(const DenseWeights& w) {
  io::ByteWriter out;
  out.magic("KGWT");
  out.put<std::uint16_t>(1);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(w.layers().size()));
  for (const auto& l : w.layers()) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(l.out));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(l.in));
    out.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    out.put_floats(l.weights);
    out.put_floats(l.bias);
  }
  return out.bytes();
}

inline DenseWeights decode_kgwt(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("KGWT");
  if (auto ver = r.get<std::uint16_t>("version"); ver != 1) r.fail("unsupported KGWT version " + std::to_string(ver));
  const auto n_layers = r.get<std::uint32_t>("n_layers");
  if (n_layers == 0) r.fail("n_layers must be >= 1");
  r.require(n_layers, 9, "layer count");
  std::vector<DenseLayer> layers(n_layers);
  for (auto& l : layers) {
    l.out = r.get<std::uint32_t>("out");
    l.in = r.get<std::uint32_t>("in");
    if (l.out == 0 || l.in == 0) r.fail("zero layer dimension");
    const auto act = r.get<std::uint8_t>("activation");
    if (act > 3) r.fail("unknown activation tag " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
    r.require(static_cast<std::uint64_t>(l.out) * l.in + l.out, 4, "layer parameters");
    l.weights.resize(l.out * l.in);
    l.bias.resize(l.out);
    r.get_floats(l.weights, "weights");
    r.get_floats(l.bias, "bias");
  }
  r.expect_end();
  try {
    return DenseWeights(std::move(layers));
  } catch (const Error& e) {
    throw Error(Errc::CorruptFile, e.what(), std::nullopt, r.offset());
  }
}

inline void write_kgwt(const DenseWeights& w, const std::filesystem::path& path) { io::write_file(path, encode_kgwt(w)); }
inline DenseWeights read_kgwt(const std::filesystem::path& path) { return decode_kgwt(io::read_file(path)); }

}  // namespace kgrag
