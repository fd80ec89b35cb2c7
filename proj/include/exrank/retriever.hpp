#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rng.hpp"
#include "template.hpp"
#include "tokenizer.hpp"

namespace exrank {

using Embedding = std::vector<double>;

inline double similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("similarity: width mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Dense encoder: z_t = leaky_relu(A e_t), h = mean_t z_t. No position
/// information, so encodings are invariant to token order. Parameters are
/// laid out as E (|V| x d) | A (d x d).
class RetrieverState {
 public:
  static constexpr double kLeak = 0.1;

  RetrieverState() = default;
  RetrieverState(Vocabulary vocab, std::size_t dim = 64) : vocab_(std::move(vocab)), dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("RetrieverState: dim must be positive");
    params_.assign(param_count(), 0.0);
  }

  void init_random(std::uint64_t seed) {
    Rng rng = stream(seed, "retriever-init");
    std::normal_distribution<double> emb(0.0, 1.0), proj(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
    for (std::size_t i = 0; i < a_off(); ++i) params_[i] = emb(rng);
    for (std::size_t i = a_off(); i < params_.size(); ++i) params_[i] = proj(rng);
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t dim() const { return dim_; }
  std::size_t param_count() const { return vocab_.size() * dim_ + dim_ * dim_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  /// Content hash of the parameters; an index remembers the value it was
  /// built under.
  std::uint64_t fingerprint() const { return params_fingerprint(params_); }

  Embedding encode_ids(std::span<const int> ids) const {
    Embedding h(dim_, 0.0);
    if (ids.empty()) return h;
    std::vector<double> z(dim_);
    for (int t : ids) {
      token_output(t, z);
      for (std::size_t j = 0; j < dim_; ++j) h[j] += z[j];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (auto& v : h) v *= inv;
    return h;
  }

  Embedding encode_text(std::string_view text) const { return encode_ids(vocab_.encode(text)); }
  Embedding encode_candidate(const Candidate& c) const { return encode_text(candidate_text(c)); }
  Embedding encode_query(std::string_view input) const { return encode_text(query_text(input)); }

  /// Adds d(loss)/d(params) given d(loss)/dh for the encoding of `ids`.
  void backward(std::span<const int> ids, std::span<const double> dh, std::span<double> grad) const {
    if (ids.empty()) return;
    const double inv = 1.0 / static_cast<double>(ids.size());
    std::vector<double> u(dim_), du(dim_);
    for (int t : ids) {
      const double* e = params_.data() + static_cast<std::size_t>(t) * dim_;
      pre_activation(t, u);
      for (std::size_t r = 0; r < dim_; ++r) du[r] = dh[r] * inv * (u[r] > 0.0 ? 1.0 : kLeak);
      double* gA = grad.data() + a_off();
      double* gE = grad.data() + static_cast<std::size_t>(t) * dim_;
      const double* A = params_.data() + a_off();
      for (std::size_t r = 0; r < dim_; ++r) {
        const double g = du[r];
        for (std::size_t c = 0; c < dim_; ++c) {
          gA[r * dim_ + c] += g * e[c];
          gE[c] += g * A[r * dim_ + c];
        }
      }
    }
  }

  bool operator==(const RetrieverState& o) const {
    return vocab_ == o.vocab_ && dim_ == o.dim_ && params_ == o.params_;
  }

 private:
  std::size_t a_off() const { return vocab_.size() * dim_; }

  void pre_activation(int t, std::vector<double>& u) const {
    const double* e = params_.data() + static_cast<std::size_t>(t) * dim_;
    const double* A = params_.data() + a_off();
    for (std::size_t r = 0; r < dim_; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) acc += A[r * dim_ + c] * e[c];
      u[r] = acc;
    }
  }

  void token_output(int t, std::vector<double>& z) const {
    pre_activation(t, z);
    for (auto& v : z) v = v > 0.0 ? v : kLeak * v;
  }

  Vocabulary vocab_;
  std::size_t dim_ = 0;
  std::vector<double> params_;
};

class StaleIndexError : public std::runtime_error {
 public:
  StaleIndexError() : std::runtime_error("candidate index is stale: retriever parameters changed since it was built") {}
};

/// Candidate embeddings aligned with the pool, row i for pool[i].
struct CandidateIndex {
  std::vector<Candidate> pool;
  std::vector<double> matrix;
  std::size_t dim = 0;
  std::uint64_t built_under = 0;

  std::size_t size() const { return pool.size(); }
  std::span<const double> row(std::size_t i) const { return {matrix.data() + i * dim, dim}; }
  bool stale_for(const RetrieverState& s) const { return built_under != s.fingerprint() || dim != s.dim(); }
};

inline CandidateIndex build_index(const RetrieverState& state, std::vector<Candidate> pool) {
  CandidateIndex idx;
  idx.dim = state.dim();
  idx.matrix.reserve(pool.size() * idx.dim);
  for (const auto& c : pool) {
    auto h = state.encode_candidate(c);
    idx.matrix.insert(idx.matrix.end(), h.begin(), h.end());
  }
  idx.pool = std::move(pool);
  idx.built_under = state.fingerprint();
  return idx;
}

/// A retrieval request. `pool_id` is set when the query itself belongs to
/// the candidate pool and must be excluded from its own results.
struct Query {
  std::string input;
  std::optional<int> pool_id;
};

struct ScoredCandidate {
  int id = -1;
  double delta = 0.0;
  double similarity = 0.0;
};

struct RetrievalResult {
  std::vector<ScoredCandidate> hits;
  /// Set when fewer than m candidates were available.
  bool short_pool = false;
};

/// Positions of the m best scores, by descending score then ascending id,
/// skipping the entry whose id equals `exclude`.
inline std::vector<std::size_t> top_m(std::span<const double> scores, std::span<const int> ids, std::size_t m,
                                      std::optional<int> exclude = std::nullopt) {
  std::vector<std::size_t> pos;
  pos.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!exclude || ids[i] != *exclude) pos.push_back(i);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  const std::size_t take = std::min(m, pos.size());
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(take), pos.end(), better);
  pos.resize(take);
  return pos;
}

inline RetrievalResult retrieve(const RetrieverState& state, const CandidateIndex& index, const Query& query,
                                std::size_t m) {
  if (m == 0) throw std::invalid_argument("retrieve: m must be at least 1");
  if (index.stale_for(state)) throw StaleIndexError();
  auto q = state.encode_query(query.input);
  std::vector<double> sims(index.size());
  std::vector<int> ids(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    sims[i] = similarity(q, index.row(i));
    ids[i] = index.pool[i].id;
  }
  RetrievalResult res;
  auto best = top_m(sims, ids, m, query.pool_id);
  res.short_pool = best.size() < m;
  for (auto i : best) res.hits.push_back({ids[i], 0.0, sims[i]});
  return res;
}

/// The pooled candidate with this id.
inline const Candidate& candidate_by_id(const CandidateIndex& index, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < index.size() && index.pool[static_cast<std::size_t>(id)].id == id)
    return index.pool[static_cast<std::size_t>(id)];
  for (const auto& c : index.pool)
    if (c.id == id) return c;
  throw std::out_of_range("candidate id " + std::to_string(id) + " not in index");
}

}  // namespace exrank
