#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "optim.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace exrank {

struct LogLikelihood {
  double total = 0.0;
  std::vector<double> per_token;
};

/// What the labeling and inference stages need from a language model.
template <class S>
concept SequenceScorer = requires(const S& s, std::string_view p, std::string_view t, std::size_t n) {
  { s.score(p, t) } -> std::same_as<LogLikelihood>;
  { s.generate(p, n) } -> std::convertible_to<std::string>;
  { s.prompt_length(p) } -> std::convertible_to<std::size_t>;
  { s.max_len() } -> std::convertible_to<std::size_t>;
};

namespace detail {

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// y += M x, M row-major rows x cols with leading dimension ld.
inline void gemv_add(const double* m, std::size_t rows, std::size_t cols, std::size_t ld, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m + r * ld;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// y += M^T g
inline void gemv_t_add(const double* m, std::size_t rows, std::size_t cols, std::size_t ld, const double* g, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m + r * ld;
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) y[c] += gr * row[c];
  }
}

// M += g x^T
inline void ger_add(double* m, std::size_t rows, std::size_t cols, std::size_t ld, const double* g, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = m + r * ld;
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

}  // namespace detail

inline constexpr std::string_view kDefaultSegmentMarker = "Input";

/// Reference conditional sequence model.
///
///   encoder:  h = [mean E over the prompt ; mean E over the query segment]
///   decoder:  logits_l = W [h ; E[y_{l-1}] ; P[l]] + b,  y_0 = <s>
///
/// The query segment starts at the last occurrence of the marker token in
/// the (truncated) prompt, or covers the whole prompt when the marker is
/// absent.
///
/// All parameters live in one flat vector laid out as E | W | b | P, with
/// W of shape |V| x 4d.
class ReferenceScorer {
 public:
  ReferenceScorer() = default;

  ReferenceScorer(Vocabulary vocab, std::size_t dim = 64, std::size_t max_len = 128,
                  std::string marker = std::string(kDefaultSegmentMarker))
      : vocab_(std::move(vocab)), dim_(dim), max_len_(max_len), marker_(std::move(marker)) {
    if (dim_ == 0 || max_len_ == 0) throw std::invalid_argument("ReferenceScorer: dim and max_len must be positive");
    marker_id_ = vocab_.id(marker_);
    params_.assign(param_count(), 0.0);
  }

  void init_random(std::uint64_t seed, double scale = 0.1) {
    Rng rng = stream(seed, "scorer-init");
    std::normal_distribution<double> nd(0.0, scale);
    for (auto& p : params_) p = nd(rng);
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(b_off()),
              params_.begin() + static_cast<std::ptrdiff_t>(b_off() + V()), 0.0);
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t dim() const { return dim_; }
  std::size_t max_len() const { return max_len_; }
  const std::string& marker() const { return marker_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t param_count() const { return V() * dim_ + V() * kRow * dim_ + V() + max_len_ * dim_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> bias() { return std::span(params_).subspan(b_off(), V()); }

  /// Number of prompt tokens before truncation.
  std::size_t prompt_length(std::string_view prompt) const { return tokenize(prompt).size(); }

  /// Over-long prompts keep their last max_len tokens, so the query and
  /// the nearest examples survive and the definition is dropped first.
  std::vector<int> prompt_ids(std::string_view prompt) const {
    auto ids = vocab_.encode(prompt);
    if (ids.size() > max_len_) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_len_));
    return ids;
  }

  /// Target tokens followed by </s>, capped at max_len.
  std::vector<int> target_ids(std::string_view target) const {
    auto ids = vocab_.encode(target);
    ids.push_back(Vocabulary::kEos);
    if (ids.size() > max_len_) ids.resize(max_len_);
    return ids;
  }

  /// Position where the query segment begins.
  std::size_t query_start(std::span<const int> prompt) const {
    if (marker_id_ == Vocabulary::kUnk) return 0;
    for (std::size_t i = prompt.size(); i-- > 0;)
      if (prompt[i] == marker_id_) return i;
    return 0;
  }

  /// Encoder state of width 2d: prompt mean, then query-segment mean.
  std::vector<double> encode(std::span<const int> prompt) const {
    std::vector<double> h(2 * dim_, 0.0);
    if (prompt.empty()) return h;
    const std::size_t split = query_start(prompt);
    for (std::size_t i = 0; i < prompt.size(); ++i) {
      const double* e = emb(prompt[i]);
      for (std::size_t j = 0; j < dim_; ++j) h[j] += e[j];
      if (i >= split)
        for (std::size_t j = 0; j < dim_; ++j) h[dim_ + j] += e[j];
    }
    const double inv_all = 1.0 / static_cast<double>(prompt.size());
    const double inv_q = 1.0 / static_cast<double>(prompt.size() - split);
    for (std::size_t j = 0; j < dim_; ++j) {
      h[j] *= inv_all;
      h[dim_ + j] *= inv_q;
    }
    return h;
  }

  /// Next-token distribution after `prefix` (generated tokens, no <s>).
  std::vector<double> step_logits(std::string_view prompt, std::span<const int> prefix) const {
    auto h = encode(prompt_ids(prompt));
    auto base = base_logits(h);
    int prev = prefix.empty() ? Vocabulary::kBos : prefix.back();
    return step_distribution(base, prev, prefix.size());
  }

  LogLikelihood score(std::string_view prompt, std::string_view target) const {
    auto tgt = target_ids(target);
    auto base = base_logits(encode(prompt_ids(prompt)));
    LogLikelihood ll;
    ll.per_token.reserve(tgt.size());
    int prev = Vocabulary::kBos;
    for (std::size_t l = 0; l < tgt.size(); ++l) {
      auto p = step_distribution(base, prev, l);
      ll.per_token.push_back(std::log(p[static_cast<std::size_t>(tgt[l])]));
      prev = tgt[l];
    }
    ll.total = std::accumulate(ll.per_token.begin(), ll.per_token.end(), 0.0);
    return ll;
  }

  /// Greedy decoding; stops at </s> or after max_new tokens.
  std::vector<int> generate_ids(std::string_view prompt, std::size_t max_new) const {
    auto base = base_logits(encode(prompt_ids(prompt)));
    std::vector<int> out;
    int prev = Vocabulary::kBos;
    const std::size_t cap = std::min(max_new, max_len_);
    while (out.size() < cap) {
      auto p = step_distribution(base, prev, out.size());
      int next = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      if (next == Vocabulary::kEos) break;
      out.push_back(next);
      prev = next;
    }
    return out;
  }

  std::string generate(std::string_view prompt, std::size_t max_new) const {
    return vocab_.decode(generate_ids(prompt, max_new));
  }

  /// Adds d(-log p(target | prompt))/d(params) into `grad`; returns the loss.
  double nll_gradient(std::string_view prompt, std::string_view target, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("nll_gradient: gradient buffer size mismatch");
    auto pids = prompt_ids(prompt);
    auto tgt = target_ids(target);
    auto h = encode(pids);
    auto base = base_logits(h);
    const std::size_t d = dim_, ld = kRow * dim_;
    double* gW = grad.data() + w_off();
    double* gb = grad.data() + b_off();
    std::vector<double> gsum(V(), 0.0), gvec(V()), dx(2 * d);
    double loss = 0.0;
    int prev = Vocabulary::kBos;
    for (std::size_t l = 0; l < tgt.size(); ++l) {
      auto p = step_distribution(base, prev, l);
      const auto y = static_cast<std::size_t>(tgt[l]);
      loss -= std::log(p[y]);
      for (std::size_t v = 0; v < V(); ++v) gvec[v] = p[v];
      gvec[y] -= 1.0;
      for (std::size_t v = 0; v < V(); ++v) gsum[v] += gvec[v];
      const double* e_prev = emb(prev);
      const double* pos = position(l);
      // W_e and W_p blocks see per-step inputs.
      for (std::size_t v = 0; v < V(); ++v) {
        const double g = gvec[v];
        double* row = gW + v * ld;
        for (std::size_t j = 0; j < d; ++j) {
          row[2 * d + j] += g * e_prev[j];
          row[3 * d + j] += g * pos[j];
        }
      }
      std::fill(dx.begin(), dx.end(), 0.0);
      detail::gemv_t_add(params_.data() + w_off() + 2 * d, V(), 2 * d, ld, gvec.data(), dx.data());
      double* ge = grad.data() + static_cast<std::size_t>(prev) * d;
      double* gp = grad.data() + p_off() + std::min(l, max_len_ - 1) * d;
      for (std::size_t j = 0; j < d; ++j) {
        ge[j] += dx[j];
        gp[j] += dx[d + j];
      }
      prev = tgt[l];
    }
    // The encoder block and the bias see the same h at every step.
    for (std::size_t v = 0; v < V(); ++v) gb[v] += gsum[v];
    detail::ger_add(gW, V(), 2 * d, ld, gsum.data(), h.data());
    if (!pids.empty()) {
      std::vector<double> dh(2 * d, 0.0);
      detail::gemv_t_add(params_.data() + w_off(), V(), 2 * d, ld, gsum.data(), dh.data());
      const std::size_t split = query_start(pids);
      const double inv_all = 1.0 / static_cast<double>(pids.size());
      const double inv_q = 1.0 / static_cast<double>(pids.size() - split);
      for (std::size_t i = 0; i < pids.size(); ++i) {
        double* ge = grad.data() + static_cast<std::size_t>(pids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) ge[j] += dh[j] * inv_all;
        if (i >= split)
          for (std::size_t j = 0; j < d; ++j) ge[j] += dh[d + j] * inv_q;
      }
    }
    return loss;
  }

  bool operator==(const ReferenceScorer& o) const {
    return vocab_ == o.vocab_ && dim_ == o.dim_ && max_len_ == o.max_len_ && marker_ == o.marker_ &&
           params_ == o.params_;
  }

 private:
  // W columns: prompt mean, query mean, previous token, position.
  static constexpr std::size_t kRow = 4;

  std::size_t V() const { return vocab_.size(); }
  std::size_t w_off() const { return V() * dim_; }
  std::size_t b_off() const { return w_off() + V() * kRow * dim_; }
  std::size_t p_off() const { return b_off() + V(); }

  const double* emb(int id) const { return params_.data() + static_cast<std::size_t>(id) * dim_; }
  const double* position(std::size_t l) const { return params_.data() + p_off() + std::min(l, max_len_ - 1) * dim_; }

  /// W_h h + b, shared by every decoding step of one prompt.
  std::vector<double> base_logits(const std::vector<double>& h) const {
    std::vector<double> z(params_.begin() + static_cast<std::ptrdiff_t>(b_off()),
                          params_.begin() + static_cast<std::ptrdiff_t>(b_off() + V()));
    detail::gemv_add(params_.data() + w_off(), V(), 2 * dim_, kRow * dim_, h.data(), z.data());
    return z;
  }

  std::vector<double> step_distribution(const std::vector<double>& base, int prev, std::size_t l) const {
    std::vector<double> x(2 * dim_);
    std::copy_n(emb(prev), dim_, x.begin());
    std::copy_n(position(l), dim_, x.begin() + static_cast<std::ptrdiff_t>(dim_));
    std::vector<double> z = base;
    detail::gemv_add(params_.data() + w_off() + 2 * dim_, V(), 2 * dim_, kRow * dim_, x.data(), z.data());
    detail::softmax_inplace(z);
    return z;
  }

  Vocabulary vocab_;
  std::size_t dim_ = 0;
  std::size_t max_len_ = 0;
  std::string marker_;
  int marker_id_ = Vocabulary::kUnk;
  std::vector<double> params_;
};

static_assert(SequenceScorer<ReferenceScorer>);

/// Exclusive-access fine-tuning handle: owns the optimizer state and the
/// gradient accumulator for one scorer.
class ScorerTrainer {
 public:
  explicit ScorerTrainer(ReferenceScorer& scorer, AdamWConfig cfg = {})
      : scorer_(&scorer), opt_(scorer.param_count(), cfg), grad_(scorer.param_count(), 0.0) {}

  /// Accumulates one example's gradient; returns its loss (pre-update).
  double accumulate(std::string_view prompt, std::string_view target) {
    ++pending_;
    return scorer_->nll_gradient(prompt, target, grad_);
  }

  /// One optimizer step on the mean of the accumulated gradients.
  void apply(double lr) {
    if (pending_ == 0) return;
    const double inv = 1.0 / static_cast<double>(pending_);
    for (auto& g : grad_) g *= inv;
    opt_.step(scorer_->params(), grad_, lr);
    std::fill(grad_.begin(), grad_.end(), 0.0);
    pending_ = 0;
  }

  std::size_t pending() const { return pending_; }

 private:
  ReferenceScorer* scorer_;
  AdamW opt_;
  std::vector<double> grad_;
  std::size_t pending_ = 0;
};

/// Single-example update: loss is -score(prompt, target).total before the step.
inline double finetune_step(ScorerTrainer& trainer, std::string_view prompt, std::string_view target, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("finetune_step: learning rate must be non-negative");
  double loss = trainer.accumulate(prompt, target);
  trainer.apply(lr);
  return loss;
}

}  // namespace exrank
