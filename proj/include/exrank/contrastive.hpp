#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "optim.hpp"
#include "retriever.hpp"
#include "rng.hpp"
#include "scorer.hpp"
#include "template.hpp"

namespace exrank {

struct LabeledCandidates {
  /// All candidates by descending delta, ties by ascending id.
  std::vector<ScoredCandidate> ranked;
  std::vector<ScoredCandidate> positives;
  std::vector<ScoredCandidate> negatives;
};

/// Orders scored candidates by descending delta (ties: ascending id) and
/// splits off the top-k as positives and the bottom-k as negatives.
inline LabeledCandidates split_by_delta(std::vector<ScoredCandidate> scored, std::size_t k) {
  if (scored.size() < 2 * k)
    throw std::invalid_argument("label_candidates: need at least 2k = " + std::to_string(2 * k) + " candidates, got " +
                                std::to_string(scored.size()));
  std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    return a.id < b.id;
  });
  LabeledCandidates out;
  out.positives.assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k));
  out.negatives.assign(scored.end() - static_cast<std::ptrdiff_t>(k), scored.end());
  out.ranked = std::move(scored);
  return out;
}

/// Scores each candidate by the log-likelihood of the query's gold output
/// under a one-example prompt, then splits into positives and negatives.
/// The `similarity` field of each candidate is carried through unchanged.
template <SequenceScorer S>
LabeledCandidates label_candidates(const Candidate& query, std::span<const ScoredCandidate> cands,
                                   std::span<const Candidate> pool, const S& scorer, const TemplateSet& tmpl,
                                   std::size_t k) {
  if (cands.size() < 2 * k)
    throw std::invalid_argument("label_candidates: need at least 2k = " + std::to_string(2 * k) + " candidates, got " +
                                std::to_string(cands.size()));
  std::vector<ScoredCandidate> scored(cands.begin(), cands.end());
  for (auto& c : scored) {
    if (c.id == query.id) throw std::invalid_argument("label_candidates: query appears among its own candidates");
    const Candidate& ex = pool[static_cast<std::size_t>(c.id)];
    c.delta = scorer.score(render(tmpl, std::span(&ex, 1), query.input, 1), query.output).total;
  }
  return split_by_delta(std::move(scored), k);
}

/// ceil(ratio * n) samples without replacement, kept in id order. Sample ids
/// are those of the parent dataset.
inline Dataset sample_training_subset(const Dataset& train, double ratio, std::uint64_t seed, std::uint64_t index = 0) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("sample_training_subset: ratio must be in (0, 1]");
  const std::size_t n = train.size();
  auto take = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  take = std::min(take, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream(seed, "subset", index);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(take);
  std::sort(order.begin(), order.end());
  Dataset out;
  out.task = train.task;
  out.split = train.split;
  for (auto i : order) out.samples.push_back(train.samples[i]);
  return out;
}

inline double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// -log softmax of the positive's similarity against the negatives.
inline double infonce_loss(std::span<const double> q, std::span<const double> pos,
                           std::span<const std::vector<double>> negs) {
  std::vector<double> logits;
  logits.reserve(negs.size() + 1);
  logits.push_back(similarity(q, pos));
  for (const auto& n : negs) logits.push_back(similarity(q, n));
  return log_sum_exp(logits) - logits[0];
}

/// One query's training triple, as token ids of its retriever renderings.
struct ContrastiveItem {
  std::vector<int> query;
  std::vector<int> positive;
  std::vector<int> negative;
};

/// Mean in-batch InfoNCE over B items. For item b the candidate set is all
/// B positives and B negatives; its own positive is the target, so it sees
/// 2B-1 negatives. Adds the gradient into `grad` (if non-empty) and returns
/// the loss.
inline double contrastive_batch(const RetrieverState& state, std::span<const ContrastiveItem> batch,
                                std::span<double> grad) {
  const std::size_t B = batch.size();
  if (B == 0) return 0.0;
  const std::size_t d = state.dim();
  std::vector<Embedding> q(B), c(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    q[b] = state.encode_ids(batch[b].query);
    c[b] = state.encode_ids(batch[b].positive);
    c[B + b] = state.encode_ids(batch[b].negative);
  }
  double loss = 0.0;
  std::vector<Embedding> dq(B, Embedding(d, 0.0)), dc(2 * B, Embedding(d, 0.0));
  std::vector<double> s(2 * B);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < 2 * B; ++j) s[j] = similarity(q[b], c[j]);
    const double lse = log_sum_exp(s);
    loss += lse - s[b];
    if (grad.empty()) continue;
    for (std::size_t j = 0; j < 2 * B; ++j) {
      const double g = (std::exp(s[j] - lse) - (j == b ? 1.0 : 0.0)) * inv_b;
      for (std::size_t r = 0; r < d; ++r) {
        dq[b][r] += g * c[j][r];
        dc[j][r] += g * q[b][r];
      }
    }
  }
  if (!grad.empty()) {
    for (std::size_t b = 0; b < B; ++b) {
      state.backward(batch[b].query, dq[b], grad);
      state.backward(batch[b].positive, dc[b], grad);
      state.backward(batch[b].negative, dc[B + b], grad);
    }
  }
  return loss * inv_b;
}

struct RetrieverEpochLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Mean over queries of mean sim(q, C+) - mean sim(q, C-), measured after
  /// the epoch's updates.
  double separation = 0.0;
  bool random_candidates = false;
};

struct RetrieverTrainingOptions {
  std::size_t step = 1;
  /// Draw the first epoch's candidates uniformly at random instead of
  /// retrieving them (the retriever is untrained at that point).
  bool bootstrap_random = true;
};

namespace detail {

inline std::vector<ScoredCandidate> random_candidates(std::size_t pool_size, int self, std::size_t m, Rng& rng) {
  std::vector<int> ids;
  ids.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i)
    if (static_cast<int>(i) != self) ids.push_back(static_cast<int>(i));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(std::min(m, ids.size()));
  std::sort(ids.begin(), ids.end());
  std::vector<ScoredCandidate> out;
  for (int id : ids) out.push_back({id, 0.0, 0.0});
  return out;
}

inline double mean_similarity(const Embedding& q, const CandidateIndex& idx, std::span<const ScoredCandidate> cs) {
  double s = 0.0;
  for (const auto& c : cs) s += similarity(q, idx.row(static_cast<std::size_t>(c.id)));
  return cs.empty() ? 0.0 : s / static_cast<double>(cs.size());
}

}  // namespace detail

/// Contrastive retriever training supervised by the scorer's likelihoods.
/// The pool is the whole training set; queries are a ratio-sized subset
/// drawn per step. The index is rebuilt at the start of every epoch.
template <SequenceScorer S>
std::vector<RetrieverEpochLog> train_retriever(RetrieverState& state, const Dataset& train, const S& scorer,
                                               const Config& cfg, const TemplateSet& tmpl,
                                               const RetrieverTrainingOptions& opts = {}) {
  cfg.validate();
  const auto pool = make_candidates(train);
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].id != static_cast<int>(i)) throw std::invalid_argument("train_retriever: pool ids must be dense");
  const std::size_t m = std::min(cfg.m, pool.size() - 1);
  if (m < 2 * cfg.k)
    throw std::invalid_argument("train_retriever: m=" + std::to_string(m) + " is below 2k=" + std::to_string(2 * cfg.k));

  Dataset subset = sample_training_subset(train, cfg.ratio, cfg.seed, opts.step);
  AdamW opt(state.param_count(), {.weight_decay = cfg.weight_decay});
  std::vector<double> grad(state.param_count(), 0.0);
  const auto& vocab = state.vocabulary();

  std::vector<RetrieverEpochLog> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs_retriever; ++epoch) {
    const std::uint64_t stage = opts.step * 1000 + epoch;
    const bool random_epoch = opts.bootstrap_random && epoch == 0;
    CandidateIndex index = build_index(state, pool);
    Rng cand_rng = stream(cfg.seed, "candidates", stage);

    std::vector<LabeledCandidates> labels;
    labels.reserve(subset.size());
    for (const auto& s : subset.samples) {
      const Candidate& qc = pool[static_cast<std::size_t>(s.id)];
      std::vector<ScoredCandidate> cands =
          random_epoch ? detail::random_candidates(pool.size(), s.id, m, cand_rng)
                       : retrieve(state, index, Query{qc.input, s.id}, m).hits;
      labels.push_back(label_candidates(qc, cands, pool, scorer, tmpl, cfg.k));
    }

    std::vector<std::size_t> order(subset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng batch_rng = stream(cfg.seed, "batch", stage);
    Rng pos_rng = stream(cfg.seed, "positive", stage);
    Rng neg_rng = stream(cfg.seed, "negative", stage);
    std::shuffle(order.begin(), order.end(), batch_rng);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<ContrastiveItem> batch;
      for (std::size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i) {
        const auto& s = subset.samples[order[i]];
        const auto& lab = labels[order[i]];
        const auto& pos = lab.positives[uniform_index(pos_rng, lab.positives.size())];
        const auto& neg = lab.negatives[uniform_index(neg_rng, lab.negatives.size())];
        batch.push_back({vocab.encode(query_text(pool[static_cast<std::size_t>(s.id)].input)),
                         vocab.encode(candidate_text(pool[static_cast<std::size_t>(pos.id)])),
                         vocab.encode(candidate_text(pool[static_cast<std::size_t>(neg.id)]))});
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      loss_sum += contrastive_batch(state, batch, grad);
      opt.step(state.params(), grad, cfg.lr_retriever);
      ++n_batches;
    }

    RetrieverEpochLog row{opts.step, epoch + 1, n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0, 0.0,
                          random_epoch};
    CandidateIndex after = build_index(state, pool);
    double sep = 0.0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      auto q = state.encode_query(pool[static_cast<std::size_t>(subset.samples[i].id)].input);
      sep += detail::mean_similarity(q, after, labels[i].positives) -
             detail::mean_similarity(q, after, labels[i].negatives);
    }
    row.separation = subset.empty() ? 0.0 : sep / static_cast<double>(subset.size());
    log.push_back(row);
  }
  return log;
}

}  // namespace exrank
