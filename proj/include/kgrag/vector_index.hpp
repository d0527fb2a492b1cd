#pragma once

// Exact (flat) and inverted-file cosine top-k search over unit-normalized
// embeddings, plus the KGEB embedding and KGIX index file formats.
//
// Stored vectors are normalized at build time so the search kernel is a plain
// inner product. Queries are normalized in double precision and products are
// accumulated in double, which keeps reported scores within ~1e-7 of the exact
// cosine of the original inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "kgrag/binary_io.hpp"
#include "kgrag/errors.hpp"

namespace kgrag {

inline constexpr std::size_t kDefaultTopK = 7;
inline constexpr std::size_t kMaxTopK = 64;
inline constexpr int kKMeansMaxIterations = 25;
inline constexpr float kDefaultNormEpsilon = 1e-6f;

struct EmbeddingVector {
  std::uint64_t id = 0;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct RetrievalHit {
  std::uint64_t id = 0;
  float score = 0.0f;

  friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

namespace detail {

inline double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline void check_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) throw Error(Errc::NonFiniteValue, "vector contains NaN or Inf");
}

/// Inner product of a stored float row with a double query; four partial sums.
inline double dot(const float* row, const double* q, std::size_t dim) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= dim; i += 4) {
    s0 += row[i] * q[i];
    s1 += row[i + 1] * q[i + 1];
    s2 += row[i + 2] * q[i + 2];
    s3 += row[i + 3] * q[i + 3];
  }
  for (; i < dim; ++i) s0 += row[i] * q[i];
  return (s0 + s1) + (s2 + s3);
}

inline float clamp_score(double s) { return static_cast<float>(std::clamp(s, -1.0, 1.0)); }

/// Descending score, then ascending id.
inline bool ranks_before(const RetrievalHit& a, const RetrievalHit& b) {
  return a.score != b.score ? a.score > b.score : a.id < b.id;
}

/// Bounded collector keeping the best `k` hits under `ranks_before`.
class TopKCollector {
 public:
  explicit TopKCollector(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(RetrievalHit h) {
    if (k_ == 0) return;
    if (heap_.size() < k_) {
      heap_.push_back(h);
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (ranks_before(h, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = h;
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  std::vector<RetrievalHit> take() && {
    std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<RetrievalHit> heap_;  // heap front is the worst kept hit
};

/// Portable uniform double in [0, 1) from a 64-bit engine.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Cosine similarity, clamped to [-1, 1].
inline float cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(Errc::DimensionMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = detail::norm(a), nb = detail::norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero vector is undefined");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += static_cast<double>(a[i]) * b[i];
  return detail::clamp_score(d / (na * nb));
}

inline float cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

class FlatIndex {
 public:
  explicit FlatIndex(std::size_t dim, float norm_epsilon = kDefaultNormEpsilon) : dim_(dim), norm_epsilon_(norm_epsilon) {
    if (dim == 0) throw Error(Errc::DimensionMismatch, "dim must be >= 1");
    if (!(norm_epsilon > 0.0f)) throw Error(Errc::InvalidArgument, "norm_epsilon must be positive");
  }

  /// Validates and normalizes; insertion order is kept for deterministic
  /// tie-breaking. Vectors already unit-length within `norm_epsilon` are
  /// stored unchanged.
  static FlatIndex build(std::span<const EmbeddingVector> vectors, std::size_t dim,
                         float norm_epsilon = kDefaultNormEpsilon) {
    FlatIndex index(dim, norm_epsilon);
    index.ids_.reserve(vectors.size());
    index.data_.reserve(vectors.size() * dim);
    std::unordered_set<std::uint64_t> seen;
    for (const auto& v : vectors) {
      if (v.dim() != dim)
        throw Error(Errc::DimensionMismatch,
                    "id " + std::to_string(v.id) + " has dim " + std::to_string(v.dim()) + ", index dim " + std::to_string(dim));
      if (!seen.insert(v.id).second) throw Error(Errc::DuplicateId, "id " + std::to_string(v.id));
      detail::check_finite(v.values);
      const double n = detail::norm(v.values);
      if (n == 0.0) throw Error(Errc::ZeroVector, "id " + std::to_string(v.id));
      index.ids_.push_back(v.id);
      if (std::abs(n - 1.0) <= norm_epsilon) {
        index.data_.insert(index.data_.end(), v.values.begin(), v.values.end());
      } else {
        for (float x : v.values) index.data_.push_back(static_cast<float>(x / n));
      }
    }
    return index;
  }

  /// Dimension taken from the first vector; an empty input needs `build(vectors, dim)`.
  static FlatIndex build(std::span<const EmbeddingVector> vectors) {
    if (vectors.empty()) throw Error(Errc::InvalidArgument, "cannot infer dim from an empty vector list");
    return build(vectors, vectors.front().dim());
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  float norm_epsilon() const noexcept { return norm_epsilon_; }
  std::uint64_t id_at(std::size_t pos) const { return ids_.at(pos); }
  std::span<const float> vector_at(std::size_t pos) const { return {data_.data() + pos * dim_, dim_}; }
  std::span<const std::uint64_t> ids() const noexcept { return ids_; }

  /// Unit-normalized double copy of a query. Throws on dim mismatch or zero query.
  std::vector<double> prepare_query(std::span<const float> query) const {
    if (query.size() != dim_)
      throw Error(Errc::DimensionMismatch, "query dim " + std::to_string(query.size()) + ", index dim " + std::to_string(dim_));
    detail::check_finite(query);
    const double n = detail::norm(query);
    if (n == 0.0) throw Error(Errc::ZeroVector, "query is the zero vector");
    std::vector<double> q(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) q[i] = query[i] / n;
    return q;
  }

  double score_at(std::size_t pos, const std::vector<double>& prepared) const {
    return detail::dot(data_.data() + pos * dim_, prepared.data(), dim_);
  }

  std::vector<RetrievalHit> top_k(std::span<const float> query, std::size_t k = kDefaultTopK) const {
    auto q = prepare_query(query);
    detail::TopKCollector top(std::min(k, size()));
    for (std::size_t pos = 0; pos < size(); ++pos) top.offer({ids_[pos], detail::clamp_score(score_at(pos, q))});
    return std::move(top).take();
  }

  std::vector<RetrievalHit> top_k(const EmbeddingVector& query, std::size_t k = kDefaultTopK) const {
    return top_k(query.values, k);
  }

 private:
  friend FlatIndex load_flat_payload(io::ByteReader&, std::size_t, std::uint64_t, float);

  std::size_t dim_;
  float norm_epsilon_;
  std::vector<std::uint64_t> ids_;
  std::vector<float> data_;  // row-major, size() x dim()
};

class IvfIndex {
 public:
  /// Spherical k-means (k-means++ seeding, at most 25 Lloyd iterations,
  /// centroids renormalized each step). Deterministic for a given seed.
  static IvfIndex build(std::span<const EmbeddingVector> vectors, std::size_t dim, std::size_t n_lists,
                        std::uint64_t seed, std::size_t n_probe = 1) {
    if (n_lists == 0) throw Error(Errc::InvalidArgument, "n_lists must be >= 1");
    if (vectors.size() < n_lists)
      throw Error(Errc::InsufficientVectors,
                  std::to_string(vectors.size()) + " vectors for " + std::to_string(n_lists) + " lists");
    IvfIndex ivf(FlatIndex::build(vectors, dim));
    ivf.n_lists_ = n_lists;
    ivf.set_default_probe(n_probe);
    ivf.train(seed);
    return ivf;
  }

  std::size_t dim() const noexcept { return flat_.dim(); }
  std::size_t size() const noexcept { return flat_.size(); }
  std::size_t n_lists() const noexcept { return n_lists_; }
  std::size_t default_probe() const noexcept { return n_probe_; }
  const FlatIndex& flat() const noexcept { return flat_; }
  std::span<const float> centroid(std::size_t c) const { return {centroids_.data() + c * dim(), dim()}; }

  /// Flat-index positions of the members of list `c`.
  std::span<const std::uint64_t> list(std::size_t c) const {
    return {members_.data() + offsets_.at(c), offsets_.at(c + 1) - offsets_.at(c)};
  }

  void set_default_probe(std::size_t n_probe) {
    if (n_probe < 1 || n_probe > n_lists_)
      throw Error(Errc::InvalidArgument, "n_probe must be in [1, " + std::to_string(n_lists_) + "]");
    n_probe_ = n_probe;
  }

  std::vector<RetrievalHit> search(std::span<const float> query, std::size_t k, std::size_t n_probe) const {
    if (n_probe < 1 || n_probe > n_lists_)
      throw Error(Errc::InvalidArgument, "n_probe must be in [1, " + std::to_string(n_lists_) + "]");
    auto q = flat_.prepare_query(query);
    if (k == 0) return {};

    detail::TopKCollector lists(n_probe);
    for (std::size_t c = 0; c < n_lists_; ++c)
      lists.offer({c, static_cast<float>(detail::dot(centroids_.data() + c * dim(), q.data(), dim()))});

    detail::TopKCollector top(k);
    for (const auto& probe : std::move(lists).take())
      for (auto pos : list(probe.id)) top.offer({flat_.id_at(pos), detail::clamp_score(flat_.score_at(pos, q))});
    return std::move(top).take();
  }

  std::vector<RetrievalHit> search(std::span<const float> query, std::size_t k = kDefaultTopK) const {
    return search(query, k, n_probe_);
  }

 private:
  friend void save_index(const IvfIndex&, io::ByteWriter&);
  friend IvfIndex load_ivf_payload(io::ByteReader&, FlatIndex);

  explicit IvfIndex(FlatIndex flat) : flat_(std::move(flat)) {}

  std::size_t nearest_centroid(std::size_t pos, const std::vector<double>& cents) const {
    const float* row = flat_.vector_at(pos).data();
    std::size_t best = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_lists_; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim(); ++d) s += row[d] * cents[c * dim() + d];
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    return best;
  }

  void train(std::uint64_t seed) {
    const std::size_t n = size(), d = dim();
    std::mt19937_64 rng(seed);
    std::vector<double> cents(n_lists_ * d);
    auto set_centroid = [&](std::size_t c, std::size_t pos) {
      auto v = flat_.vector_at(pos);
      std::copy(v.begin(), v.end(), cents.begin() + c * d);
    };

    // k-means++ seeding with squared chord distance 2 - 2cos.
    std::vector<double> best_dist(n, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(rng() % n);
    set_centroid(0, first);
    for (std::size_t c = 1; c < n_lists_; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = flat_.vector_at(i).data();
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += row[k] * cents[(c - 1) * d + k];
        best_dist[i] = std::min(best_dist[i], std::max(0.0, 2.0 - 2.0 * s));
        total += best_dist[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        double target = detail::unit_uniform(rng) * total, acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += best_dist[i];
          if (acc > target && best_dist[i] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<std::size_t>(rng() % n);
      }
      set_centroid(c, pick);
    }

    std::vector<std::size_t> assign(n, n_lists_);
    for (int iter = 0; iter < kKMeansMaxIterations; ++iter) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        auto c = nearest_centroid(i, cents);
        changed |= c != assign[i];
        assign[i] = c;
      }
      if (!changed) break;

      std::vector<double> sums(n_lists_ * d, 0.0);
      std::vector<std::size_t> counts(n_lists_, 0);
      for (std::size_t i = 0; i < n; ++i) {
        auto v = flat_.vector_at(i);
        for (std::size_t k = 0; k < d; ++k) sums[assign[i] * d + k] += v[k];
        ++counts[assign[i]];
      }
      for (std::size_t c = 0; c < n_lists_; ++c) {
        double nrm = 0.0;
        for (std::size_t k = 0; k < d; ++k) nrm += sums[c * d + k] * sums[c * d + k];
        nrm = std::sqrt(nrm);
        if (counts[c] == 0 || nrm == 0.0) {
          // Empty or degenerate list: reseed at the point worst served by its centroid.
          std::size_t worst = 0;
          double worst_s = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            auto v = flat_.vector_at(i);
            for (std::size_t k = 0; k < d; ++k) s += v[k] * cents[assign[i] * d + k];
            if (s < worst_s) {
              worst_s = s;
              worst = i;
            }
          }
          set_centroid(c, worst);
          continue;
        }
        for (std::size_t k = 0; k < d; ++k) cents[c * d + k] = sums[c * d + k] / nrm;
      }
    }

    centroids_.assign(cents.begin(), cents.end());
    // Final assignment uses the stored float centroids so lists agree with search.
    std::vector<double> stored(centroids_.begin(), centroids_.end());
    for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_centroid(i, stored);
    build_lists(assign);
  }

  void build_lists(const std::vector<std::size_t>& assign) {
    offsets_.assign(n_lists_ + 1, 0);
    for (auto c : assign) ++offsets_[c + 1];
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    members_.assign(assign.size(), 0);
    std::vector<std::uint64_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < assign.size(); ++i) members_[cursor[assign[i]]++] = i;
  }

  FlatIndex flat_;
  std::size_t n_lists_ = 1;
  std::size_t n_probe_ = 1;
  std::vector<float> centroids_;       // n_lists x dim, unit rows
  std::vector<std::uint64_t> offsets_;  // n_lists + 1
  std::vector<std::uint64_t> members_;  // flat positions grouped by list
};

// ---------------------------------------------------------------------------
// KGEB embedding files: "KGEB", u16 version, u32 dim, u64 count,
// then count x (u64 id, dim x f32). Little-endian.

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<EmbeddingVector> vectors;
};

inline std::vector<unsigned char> encode_kgeb(const EmbeddingSet& set) {
  io::ByteWriter w;
  w.magic("KGEB");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.dim));
  w.put<std::uint64_t>(set.vectors.size());
  for (const auto& v : set.vectors) {
    if (v.dim() != set.dim) throw Error(Errc::DimensionMismatch, "id " + std::to_string(v.id));
    w.put<std::uint64_t>(v.id);
    w.put_floats(v.values);
  }
  return w.bytes();
}

inline EmbeddingSet decode_kgeb(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("KGEB");
  if (auto ver = r.get<std::uint16_t>("version"); ver != 1) r.fail("unsupported KGEB version " + std::to_string(ver));
  EmbeddingSet set;
  set.dim = r.get<std::uint32_t>("dim");
  if (set.dim == 0) r.fail("dim must be >= 1");
  const auto count = r.get<std::uint64_t>("count");
  r.require(count, 8 + 4 * static_cast<std::uint64_t>(set.dim), "record count");
  set.vectors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingVector v;
    v.id = r.get<std::uint64_t>("id");
    v.values.resize(set.dim);
    const auto at = r.offset();
    r.get_floats(v.values, "vector");
    for (float x : v.values)
      if (!std::isfinite(x)) throw Error(Errc::CorruptFile, "non-finite value in id " + std::to_string(v.id), std::nullopt, at);
    set.vectors.push_back(std::move(v));
  }
  r.expect_end();
  return set;
}

inline void write_kgeb(const EmbeddingSet& set, const std::filesystem::path& path) {
  io::write_file(path, encode_kgeb(set));
}

inline EmbeddingSet read_kgeb(const std::filesystem::path& path) { return decode_kgeb(io::read_file(path)); }

/// Test fixture text format: "id<TAB>v1,v2,...,vd" per line.
inline EmbeddingSet parse_tsv_vectors(std::istream& in) {
  EmbeddingSet set;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(Errc::MalformedRecord, "missing tab", line_no);
    EmbeddingVector v;
    try {
      std::size_t used = 0;
      v.id = std::stoull(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("id");
      std::size_t start = tab + 1;
      while (start <= line.size()) {
        auto comma = line.find(',', start);
        auto tok = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        v.values.push_back(std::stof(tok, &used));
        if (used != tok.size()) throw std::invalid_argument("value");
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    } catch (const std::logic_error&) {
      throw Error(Errc::MalformedRecord, "bad number", line_no);
    }
    if (set.dim == 0) set.dim = v.dim();
    if (v.dim() != set.dim) throw Error(Errc::DimensionMismatch, "inconsistent dim", line_no);
    set.vectors.push_back(std::move(v));
  }
  return set;
}

// ---------------------------------------------------------------------------
// KGIX index files: "KGIX", u16 version, u8 kind (0 flat, 1 IVF), u32 dim,
// u64 count, f32 norm_epsilon, count x (u64 id, dim x f32 normalized).
// IVF then appends u32 n_lists, u32 default n_probe, n_lists x dim f32
// centroids, (n_lists + 1) x u64 list offsets, count x u64 member positions.

enum class IndexKind : std::uint8_t { Flat = 0, Ivf = 1 };

namespace detail {

inline void write_flat(const FlatIndex& idx, IndexKind kind, io::ByteWriter& w) {
  w.magic("KGIX");
  w.put<std::uint16_t>(1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(idx.dim()));
  w.put<std::uint64_t>(idx.size());
  w.put<float>(idx.norm_epsilon());
  for (std::size_t pos = 0; pos < idx.size(); ++pos) {
    w.put<std::uint64_t>(idx.id_at(pos));
    w.put_floats(idx.vector_at(pos));
  }
}

}  // namespace detail

inline void save_index(const FlatIndex& idx, io::ByteWriter& w) { detail::write_flat(idx, IndexKind::Flat, w); }

inline void save_index(const IvfIndex& idx, io::ByteWriter& w) {
  detail::write_flat(idx.flat_, IndexKind::Ivf, w);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(idx.n_lists_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(idx.n_probe_));
  w.put_floats(idx.centroids_);
  for (auto o : idx.offsets_) w.put<std::uint64_t>(o);
  for (auto m : idx.members_) w.put<std::uint64_t>(m);
}

template <typename Index>
std::vector<unsigned char> encode_index(const Index& idx) {
  io::ByteWriter w;
  save_index(idx, w);
  return w.bytes();
}

inline FlatIndex load_flat_payload(io::ByteReader& r, std::size_t dim, std::uint64_t count, float eps) {
  if (!(eps > 0.0f) || !std::isfinite(eps)) r.fail("norm_epsilon must be positive");
  FlatIndex idx(dim, eps);
  r.require(count, 8 + 4 * static_cast<std::uint64_t>(dim), "entry count");
  idx.ids_.resize(count);
  idx.data_.resize(count * dim);
  std::unordered_set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    idx.ids_[i] = r.get<std::uint64_t>("id");
    if (!seen.insert(idx.ids_[i]).second) throw Error(Errc::CorruptFile, "duplicate id", std::nullopt, at);
    std::span<float> row(idx.data_.data() + i * dim, dim);
    r.get_floats(row, "vector");
    for (float x : row)
      if (!std::isfinite(x)) throw Error(Errc::CorruptFile, "non-finite stored value", std::nullopt, at);
    if (std::abs(detail::norm(row) - 1.0) > 1e-5) throw Error(Errc::CorruptFile, "stored vector not unit length", std::nullopt, at);
  }
  return idx;
}

inline IvfIndex load_ivf_payload(io::ByteReader& r, FlatIndex flat) {
  IvfIndex ivf(std::move(flat));
  const std::size_t dim = ivf.dim();
  const auto n_lists = r.get<std::uint32_t>("n_lists");
  if (n_lists == 0 || n_lists > std::max<std::size_t>(ivf.size(), 1)) r.fail("n_lists out of range");
  const auto n_probe = r.get<std::uint32_t>("n_probe");
  if (n_probe < 1 || n_probe > n_lists) r.fail("n_probe out of range");
  ivf.n_lists_ = n_lists;
  ivf.n_probe_ = n_probe;
  r.require(static_cast<std::uint64_t>(n_lists) * dim, 4, "centroids");
  ivf.centroids_.resize(static_cast<std::size_t>(n_lists) * dim);
  r.get_floats(ivf.centroids_, "centroids");
  for (float x : ivf.centroids_)
    if (!std::isfinite(x)) r.fail("non-finite centroid");
  ivf.offsets_.resize(n_lists + 1);
  for (auto& o : ivf.offsets_) o = r.get<std::uint64_t>("list offset");
  if (ivf.offsets_.front() != 0 || ivf.offsets_.back() != ivf.size() ||
      !std::is_sorted(ivf.offsets_.begin(), ivf.offsets_.end()))
    r.fail("list offsets inconsistent with entry count");
  ivf.members_.resize(ivf.size());
  std::vector<bool> used(ivf.size(), false);
  for (auto& m : ivf.members_) {
    m = r.get<std::uint64_t>("list member");
    if (m >= ivf.size() || used[m]) r.fail("list member out of range or repeated");
    used[m] = true;
  }
  return ivf;
}

struct LoadedIndex {
  IndexKind kind;
  std::variant<FlatIndex, IvfIndex> index;

  const FlatIndex& flat() const {
    return kind == IndexKind::Flat ? std::get<FlatIndex>(index) : std::get<IvfIndex>(index).flat();
  }
  std::size_t size() const { return flat().size(); }
  std::size_t dim() const { return flat().dim(); }

  /// Exact search for flat indexes, default-probe search for IVF.
  std::vector<RetrievalHit> search(std::span<const float> query, std::size_t k) const {
    return kind == IndexKind::Flat ? std::get<FlatIndex>(index).top_k(query, k) : std::get<IvfIndex>(index).search(query, k);
  }
};

inline LoadedIndex decode_index(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("KGIX");
  if (auto ver = r.get<std::uint16_t>("version"); ver != 1) r.fail("unsupported KGIX version " + std::to_string(ver));
  const auto kind = r.get<std::uint8_t>("kind");
  if (kind > 1) r.fail("unknown index kind " + std::to_string(kind));
  const auto dim = r.get<std::uint32_t>("dim");
  if (dim == 0) r.fail("dim must be >= 1");
  const auto count = r.get<std::uint64_t>("count");
  const auto eps = r.get<float>("norm_epsilon");
  auto flat = load_flat_payload(r, dim, count, eps);
  if (kind == 0) {
    r.expect_end();
    return {IndexKind::Flat, std::move(flat)};
  }
  auto ivf = load_ivf_payload(r, std::move(flat));
  r.expect_end();
  return {IndexKind::Ivf, std::move(ivf)};
}

inline LoadedIndex read_index(const std::filesystem::path& path) { return decode_index(io::read_file(path)); }

template <typename Index>
void write_index(const Index& idx, const std::filesystem::path& path) {
  io::write_file(path, encode_index(idx));
}

}  // namespace kgrag
