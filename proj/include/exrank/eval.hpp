#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "corpus.hpp"
#include "retriever.hpp"
#include "rng.hpp"
#include "scorer.hpp"
#include "template.hpp"

namespace exrank {

/// Micro-averaged over the whole split. For ATSC, precision, recall and f1
/// equal accuracy; for ATE/ASPE, accuracy is the fraction of samples whose
/// predicted set matches the gold set exactly.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t num_pred = 0;
  std::size_t num_gold = 0;
  std::size_t num_correct = 0;
  std::size_t parse_failures = 0;

  bool operator==(const Metrics&) const = default;
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

namespace detail {

inline std::set<std::pair<std::string, int>> tuple_keys(std::span<const AspectLabel> labels, Task task) {
  std::set<std::pair<std::string, int>> keys;
  for (const auto& l : labels) {
    if (l.term == kNoAspect) continue;
    const int pol = task == Task::aspe ? static_cast<int>(l.polarity) : 0;
    keys.emplace(normalize_term(l.term), pol);
  }
  return keys;
}

}  // namespace detail

/// Exact-match tuple F1: terms for ATE, (term, polarity) for ASPE. Terms
/// compare case-insensitively after trimming; sentinel pairs are excluded on
/// both sides and duplicate predictions count once.
inline Metrics tuple_f1(std::span<const std::vector<AspectLabel>> preds, std::span<const std::vector<AspectLabel>> golds,
                        Task task) {
  if (preds.size() != golds.size()) throw std::invalid_argument("tuple_f1: prediction and gold counts differ");
  if (task == Task::atsc) throw std::invalid_argument("tuple_f1: ATSC is scored by accuracy");
  Metrics m;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto p = detail::tuple_keys(preds[i], task);
    auto g = detail::tuple_keys(golds[i], task);
    std::size_t hit = 0;
    for (const auto& key : p) hit += g.count(key);
    m.num_pred += p.size();
    m.num_gold += g.size();
    m.num_correct += hit;
    if (p == g) ++exact;
  }
  m.precision = m.num_pred ? static_cast<double>(m.num_correct) / static_cast<double>(m.num_pred) : 0.0;
  m.recall = m.num_gold ? static_cast<double>(m.num_correct) / static_cast<double>(m.num_gold) : 0.0;
  m.f1 = f1_score(m.precision, m.recall);
  m.accuracy = preds.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(preds.size());
  return m;
}

/// Fraction of exact polarity matches. Polarity::unknown (unparseable
/// output) is always wrong.
inline Metrics atsc_accuracy(std::span<const Polarity> preds, std::span<const Polarity> golds) {
  if (preds.size() != golds.size()) throw std::invalid_argument("atsc_accuracy: prediction and gold counts differ");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (golds[i] == Polarity::none || golds[i] == Polarity::unknown)
      throw std::invalid_argument("atsc_accuracy: gold polarity must be positive, negative or neutral");
    if (preds[i] == Polarity::unknown) ++m.parse_failures;
    if (preds[i] == golds[i] && preds[i] != Polarity::unknown) ++m.num_correct;
  }
  m.num_pred = m.num_gold = preds.size();
  m.accuracy = preds.empty() ? 0.0 : static_cast<double>(m.num_correct) / static_cast<double>(preds.size());
  m.precision = m.recall = m.f1 = m.accuracy;
  return m;
}

struct Prediction {
  int id = 0;
  std::string prompt;
  std::string raw;
  std::vector<AspectLabel> parsed;
  std::vector<AspectLabel> gold;
  std::vector<int> example_ids;
};

struct InferenceReport {
  Metrics metrics;
  std::vector<Prediction> predictions;
  /// Train ids of the fixed examples (no_retriever mode only).
  std::vector<int> fixed_example_ids;
  /// Prompts whose token count exceeded the scorer's max_len.
  std::size_t truncated_prompts = 0;
};

struct InferenceOptions {
  TemplateSet tmpl;
  std::uint64_t seed = 0;
  std::size_t gen_len = 32;
  ParseOptions parse;
};

/// k distinct training examples drawn once from the pool.
inline std::vector<Candidate> fixed_examples(std::span<const Candidate> pool, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream(seed, "fixed-examples");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.push_back(pool[order[i]]);
  return out;
}

/// Prompt text for one input under a mode; examples are already chosen.
inline std::string mode_prompt(AblationMode mode, const TemplateSet& tmpl, std::span<const Candidate> examples,
                               const std::string& input) {
  if (mode == AblationMode::no_instruction) return input;
  if (mode == AblationMode::no_example) return render(tmpl, {}, input, 0);
  return render(tmpl, examples, input, examples.size());
}

inline bool uses_retrieval(AblationMode mode) {
  return mode == AblationMode::full || mode == AblationMode::no_alternating || mode == AblationMode::frozen_lm;
}

inline Metrics score_predictions(const std::vector<Prediction>& preds, Task task) {
  if (task == Task::atsc) {
    std::vector<Polarity> p, g;
    for (const auto& x : preds) {
      p.push_back(x.parsed.empty() ? Polarity::unknown : x.parsed.front().polarity);
      g.push_back(x.gold.empty() ? Polarity::unknown : x.gold.front().polarity);
    }
    return atsc_accuracy(p, g);
  }
  std::vector<std::vector<AspectLabel>> p, g;
  for (const auto& x : preds) {
    p.push_back(x.parsed);
    g.push_back(x.gold);
  }
  return tuple_f1(p, g, task);
}

/// Generates a prediction for every test sample under one ablation mode.
/// full, no_alternating and frozen_lm build identical prompts from the
/// top-k retrieved examples; they differ only in which checkpoints the
/// caller passes in.
template <SequenceScorer S>
InferenceReport run_inference(const S& scorer, const RetrieverState& retriever, const CandidateIndex& index,
                              const Dataset& test, std::size_t k, AblationMode mode, const InferenceOptions& opts) {
  if (uses_retrieval(mode) && k > 0 && index.stale_for(retriever)) throw StaleIndexError();

  InferenceReport rep;
  std::vector<Candidate> fixed;
  if (mode == AblationMode::no_retriever) {
    fixed = fixed_examples(index.pool, k, opts.seed);
    for (const auto& c : fixed) rep.fixed_example_ids.push_back(c.id);
  }

  std::size_t failures = 0;
  for (const auto& s : test.samples) {
    Prediction p;
    p.id = s.id;
    const std::string input = task_input(s, test.task);
    std::vector<Candidate> examples;
    if (mode == AblationMode::no_retriever) {
      examples = fixed;
    } else if (uses_retrieval(mode) && k > 0) {
      std::optional<int> self;
      if (test.split == Split::train) self = s.id;
      for (const auto& hit : retrieve(retriever, index, Query{input, self}, k).hits)
        examples.push_back(candidate_by_id(index, hit.id));
    }
    p.prompt = mode_prompt(mode, opts.tmpl, examples, input);
    for (const auto& e : examples) p.example_ids.push_back(e.id);
    if (scorer.prompt_length(p.prompt) > scorer.max_len()) ++rep.truncated_prompts;
    p.raw = scorer.generate(p.prompt, opts.gen_len);
    auto parsed = parse_output(p.raw, test.task, opts.parse);
    failures += parsed.failures;
    p.parsed = std::move(parsed.labels);
    p.gold = task_view(s, test.task);
    rep.predictions.push_back(std::move(p));
  }
  rep.metrics = score_predictions(rep.predictions, test.task);
  rep.metrics.parse_failures = failures;
  return rep;
}

struct SweepRow {
  std::size_t k = 0;
  Metrics metrics;
  std::size_t truncated_prompts = 0;
  bool truncated() const { return truncated_prompts > 0; }
};

/// One full-mode evaluation per k in 0..k_max, ascending.
template <SequenceScorer S>
std::vector<SweepRow> k_sweep(const S& scorer, const RetrieverState& retriever, const CandidateIndex& index,
                              const Dataset& test, std::size_t k_max, const InferenceOptions& opts) {
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k <= k_max; ++k) {
    auto rep = run_inference(scorer, retriever, index, test, k, AblationMode::full, opts);
    rows.push_back({k, rep.metrics, rep.truncated_prompts});
  }
  return rows;
}

inline nlohmann::json labels_json(std::span<const AspectLabel> labels) {
  auto arr = nlohmann::json::array();
  for (const auto& l : labels) arr.push_back({l.term, std::string(to_string(l.polarity))});
  return arr;
}

inline nlohmann::json to_json(const Prediction& p) {
  return {{"id", p.id},         {"prompt", p.prompt},
          {"raw", p.raw},       {"parsed", labels_json(p.parsed)},
          {"gold", labels_json(p.gold)}, {"examples", p.example_ids}};
}

}  // namespace exrank
