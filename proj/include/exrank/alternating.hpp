#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "contrastive.hpp"
#include "eval.hpp"
#include "retriever.hpp"
#include "scorer.hpp"
#include "template.hpp"

namespace exrank {

/// Shared tokenizer vocabulary: every token of the training texts, their
/// serialized labels for all tasks, and the fixed template text.
inline Vocabulary build_vocabulary(const Dataset& train, const TemplateSet& tmpl, std::size_t max_examples = 8) {
  std::vector<std::string> texts;
  for (const auto& s : train.samples) {
    texts.push_back(s.text);
    texts.push_back(serialize_label(s, Task::aspe));
    if (s.aspect) texts.push_back(atsc_input(s.text, *s.aspect));
  }
  for (auto p : {Polarity::positive, Polarity::negative, Polarity::neutral, Polarity::none})
    texts.emplace_back(to_string(p));
  texts.emplace_back(kNoAspect);
  std::vector<Candidate> blanks(max_examples);
  texts.push_back(render(tmpl, blanks, "", max_examples));
  texts.push_back(candidate_text({}));
  texts.push_back(atsc_input("", ""));
  return Vocabulary::from_texts(texts);
}

struct LmEpochLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
};

struct StepMetrics {
  std::size_t step = 0;
  Task task = Task::aspe;
  std::string split;
  std::size_t k = 0;
  Metrics metrics;
};

/// Observers for emitted training prompts; used by tests and diagnostics.
struct TrainingHooks {
  std::function<void(const std::string& prompt, std::size_t n_examples)> on_lm_prompt;
};

namespace detail {

// Epoch loop shared by every scorer fine-tuning stage: shuffles per epoch
// from its own stream, accumulates grad_accum examples per update.
inline std::vector<LmEpochLog> finetune_on_prompts(ReferenceScorer& scorer, const std::vector<std::string>& prompts,
                                                   const std::vector<Candidate>& targets, std::size_t n_examples,
                                                   std::size_t epochs, const Config& cfg, std::string_view stream_name,
                                                   std::size_t step, const TrainingHooks& hooks) {
  std::vector<LmEpochLog> log;
  if (prompts.empty()) return log;
  ScorerTrainer trainer(scorer, {.weight_decay = cfg.weight_decay});
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(prompts.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = stream(cfg.seed, stream_name, step * 1000 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (auto i : order) {
      if (hooks.on_lm_prompt) hooks.on_lm_prompt(prompts[i], n_examples);
      total += trainer.accumulate(prompts[i], targets[i].output);
      if (trainer.pending() == cfg.grad_accum) trainer.apply(cfg.lr_lm);
    }
    trainer.apply(cfg.lr_lm);
    log.push_back({step, epoch + 1, total / static_cast<double>(prompts.size())});
  }
  return log;
}

}  // namespace detail

/// Step-0 stand-in for pretraining: fine-tunes on zero-example prompts.
inline std::vector<LmEpochLog> warmup_scorer(ReferenceScorer& scorer, const Dataset& train, const Config& cfg,
                                             const TemplateSet& tmpl) {
  const auto pool = make_candidates(train);
  std::vector<std::string> prompts;
  for (const auto& c : pool) prompts.push_back(render(tmpl, {}, c.input, 0));
  return detail::finetune_on_prompts(scorer, prompts, pool, 0, cfg.warmup_epochs, cfg, "warmup-order", 0, {});
}

/// Fine-tunes the scorer on prompts holding each sample's single top-1
/// retrieved example (never the sample itself).
inline std::vector<LmEpochLog> finetune_lm(ReferenceScorer& scorer, const RetrieverState& retriever,
                                           const Dataset& train, const Config& cfg, const TemplateSet& tmpl,
                                           std::size_t step = 1, const TrainingHooks& hooks = {}) {
  if (cfg.epochs_lm == 0 || train.size() < 2) return {};
  const auto pool = make_candidates(train);
  CandidateIndex index = build_index(retriever, pool);
  std::vector<std::string> prompts;
  for (const auto& c : pool) {
    auto hit = retrieve(retriever, index, Query{c.input, c.id}, 1).hits.at(0);
    const Candidate& ex = candidate_by_id(index, hit.id);
    prompts.push_back(render(tmpl, std::span(&ex, 1), c.input, 1));
  }
  return detail::finetune_on_prompts(scorer, prompts, pool, 1, cfg.epochs_lm, cfg, "lm-order", step, hooks);
}

/// Fine-tuning for the retriever-free ablations, on the same prompts the
/// mode builds at inference: the k seeded fixed examples, no examples, or
/// the bare input.
inline std::vector<LmEpochLog> finetune_lm_for_mode(ReferenceScorer& scorer, AblationMode mode, const Dataset& train,
                                                    const Config& cfg, const TemplateSet& tmpl, std::size_t step = 1,
                                                    const TrainingHooks& hooks = {}) {
  if (uses_retrieval(mode)) throw std::invalid_argument("finetune_lm_for_mode: mode trains through the retriever");
  const auto pool = make_candidates(train);
  std::vector<Candidate> fixed;
  if (mode == AblationMode::no_retriever) fixed = fixed_examples(pool, cfg.k, cfg.seed);
  std::vector<std::string> prompts;
  for (const auto& c : pool) prompts.push_back(mode_prompt(mode, tmpl, fixed, c.input));
  return detail::finetune_on_prompts(scorer, prompts, pool, fixed.size(), cfg.epochs_lm, cfg, "lm-order", step, hooks);
}

struct ScheduleState {
  AblationMode mode = AblationMode::full;
  std::size_t step = 0;
  std::vector<ReferenceScorer> scorers;
  std::vector<RetrieverState> retrievers;
  std::vector<StepMetrics> metrics;
  std::vector<RetrieverEpochLog> retriever_log;
  std::vector<LmEpochLog> lm_log;

  const ReferenceScorer& scorer() const { return scorers.back(); }
  const RetrieverState& retriever() const { return retrievers.back(); }
};

inline std::filesystem::path scorer_path(const std::filesystem::path& dir, std::size_t step) {
  return dir / ("scorer_" + std::to_string(step) + ".ckpt");
}
inline std::filesystem::path retriever_path(const std::filesystem::path& dir, std::size_t step) {
  return dir / ("retriever_" + std::to_string(step) + ".ckpt");
}

inline void write_metrics_header(std::ostream& out) {
  out << "step\ttask\tsplit\tk\tprecision\trecall\tf1\taccuracy\tparse_failures\n";
}

inline void write_metrics_row(std::ostream& out, const StepMetrics& m) {
  out << m.step << '\t' << to_string(m.task) << '\t' << m.split << '\t' << m.k << '\t' << m.metrics.precision << '\t'
      << m.metrics.recall << '\t' << m.metrics.f1 << '\t' << m.metrics.accuracy << '\t' << m.metrics.parse_failures
      << '\n';
}

/// Training configuration behind an ablation mode: no_alternating runs a
/// single step, frozen_lm never updates the scorer after warm-up.
inline Config schedule_config_for(AblationMode mode, Config cfg) {
  cfg.mode = mode;
  if (mode == AblationMode::no_alternating) cfg.t = 1;
  if (mode == AblationMode::frozen_lm) cfg.epochs_lm = 0;
  return cfg;
}

namespace detail {

// Write-then-rename, so a crash never leaves a half-written checkpoint
// under the final name.
template <class Save, class Model>
void save_atomically(const std::filesystem::path& path, const Model& model, Save save) {
  auto tmp = path;
  tmp += ".tmp";
  save(tmp, model);
  std::filesystem::rename(tmp, path);
}

inline void persist_step(const std::filesystem::path& dir, const ScheduleState& st) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  save_atomically(scorer_path(dir, st.step), st.scorer(), save_scorer);
  save_atomically(retriever_path(dir, st.step), st.retriever(), save_retriever);
  std::ofstream out(dir / "metrics.tsv");
  write_metrics_header(out);
  for (const auto& m : st.metrics) write_metrics_row(out, m);
}

inline void record_dev_metrics(ScheduleState& st, const Dataset& train, const Dataset& dev, const Config& cfg,
                               const TemplateSet& tmpl) {
  if (dev.empty()) return;
  CandidateIndex index = build_index(st.retriever(), make_candidates(train));
  InferenceOptions opts{tmpl, cfg.seed, cfg.gen_len, {}};
  auto rep = run_inference(st.scorer(), st.retriever(), index, dev, cfg.k, st.mode, opts);
  st.metrics.push_back({st.step, dev.task, dev.split == Split::train ? "train" : "test", cfg.k, rep.metrics});
}

inline void run_steps(ScheduleState& st, const Dataset& train, const Dataset& dev, const Config& cfg,
                      const TemplateSet& tmpl, const std::filesystem::path& out_dir, const TrainingHooks& hooks) {
  while (st.step < cfg.t) {
    const std::size_t s = st.step + 1;
    RetrieverState retriever = cfg.reinit_per_step ? st.retrievers.front() : st.retrievers.back();
    ReferenceScorer scorer = cfg.reinit_per_step ? st.scorers.front() : st.scorers.back();

    if (uses_retrieval(st.mode)) {
      RetrieverTrainingOptions ropts{s, s == 1 || cfg.reinit_per_step};
      auto rlog = train_retriever(retriever, train, st.scorers.back(), cfg, tmpl, ropts);
      st.retriever_log.insert(st.retriever_log.end(), rlog.begin(), rlog.end());
      auto llog = finetune_lm(scorer, retriever, train, cfg, tmpl, s, hooks);
      st.lm_log.insert(st.lm_log.end(), llog.begin(), llog.end());
    } else {
      auto llog = finetune_lm_for_mode(scorer, st.mode, train, cfg, tmpl, s, hooks);
      st.lm_log.insert(st.lm_log.end(), llog.begin(), llog.end());
    }

    st.retrievers.push_back(std::move(retriever));
    st.scorers.push_back(std::move(scorer));
    st.step = s;
    record_dev_metrics(st, train, dev, cfg, tmpl);
    persist_step(out_dir, st);
  }
}

}  // namespace detail

/// Step 0 initializes both models (scorer warm-up included); each step s
/// then trains the retriever with scorer s-1 as labeler and fine-tunes the
/// scorer on prompts built by retriever s. Modes that do not retrieve keep
/// the initial retriever and fine-tune on their own prompts instead. Dev
/// metrics are recorded after every step, and checkpoints are written to
/// `out_dir` when it is set.
inline ScheduleState run_schedule(const Dataset& train, const Dataset& dev, const Config& config,
                                  const TemplateSet& tmpl, const std::filesystem::path& out_dir = {},
                                  const TrainingHooks& hooks = {}) {
  const Config cfg = schedule_config_for(config.mode, config);
  cfg.validate();
  if (cfg.t < 1) throw std::invalid_argument("run_schedule: t must be at least 1");
  Vocabulary vocab = build_vocabulary(train, tmpl, std::max<std::size_t>(cfg.k_max, cfg.k) + 1);

  ScheduleState st;
  st.mode = cfg.mode;
  ReferenceScorer scorer(vocab, cfg.dim, cfg.max_len);
  scorer.init_random(cfg.seed);
  auto wlog = warmup_scorer(scorer, train, cfg, tmpl);
  st.lm_log.insert(st.lm_log.end(), wlog.begin(), wlog.end());
  RetrieverState retriever(vocab, cfg.dim_retriever);
  retriever.init_random(cfg.seed);
  st.scorers.push_back(std::move(scorer));
  st.retrievers.push_back(std::move(retriever));
  detail::record_dev_metrics(st, train, dev, cfg, tmpl);
  detail::persist_step(out_dir, st);

  detail::run_steps(st, train, dev, cfg, tmpl, out_dir, hooks);
  return st;
}

/// Reloads checkpoints 0..from_step from `ckpt_dir` and runs the remaining
/// steps. Under the same config this reproduces run_schedule exactly.
inline ScheduleState resume_schedule(const Dataset& train, const Dataset& dev, const Config& config,
                                     const TemplateSet& tmpl, const std::filesystem::path& ckpt_dir,
                                     std::size_t from_step, const std::filesystem::path& out_dir = {}) {
  const Config cfg = schedule_config_for(config.mode, config);
  cfg.validate();
  if (from_step > cfg.t) throw std::invalid_argument("resume_schedule: from_step exceeds t");
  ScheduleState st;
  st.mode = cfg.mode;
  for (std::size_t s = 0; s <= from_step; ++s) {
    st.scorers.push_back(load_scorer(scorer_path(ckpt_dir, s)));
    st.retrievers.push_back(load_retriever(retriever_path(ckpt_dir, s)));
    st.step = s;
    detail::record_dev_metrics(st, train, dev, cfg, tmpl);
    detail::persist_step(out_dir, st);
  }
  detail::run_steps(st, train, dev, cfg, tmpl, out_dir, {});
  return st;
}

}  // namespace exrank
