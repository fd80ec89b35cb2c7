#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace exrank;

namespace {

// Scores "Output: <y>" likelihood by whether the example's output shares a
// word with the target; deterministic and independent of any model.
struct OverlapScorer {
  std::size_t max_len() const { return 1000; }
  std::size_t prompt_length(std::string_view p) const { return tokenize(p).size(); }
  LogLikelihood score(std::string_view prompt, std::string_view target) const {
    double hits = 0.0;
    auto toks = tokenize(target);
    auto head = prompt.substr(0, prompt.find("Now complete"));
    for (const auto& t : toks)
      if (head.find(" " + t) != std::string_view::npos) hits += 1.0;
    return {hits - static_cast<double>(toks.size()), {}};
  }
  std::string generate(std::string_view, std::size_t) const { return {}; }
};

std::vector<ScoredCandidate> with_deltas(const std::vector<double>& deltas) {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < deltas.size(); ++i) out.push_back({static_cast<int>(i), deltas[i], 0.0});
  return out;
}

}  // namespace

TEST(Labeling, SplitExamples) {
  auto lab = split_by_delta(with_deltas({-1.0, -3.0, -0.5, -2.0}), 1);
  EXPECT_EQ(lab.positives.front().id, 2);
  EXPECT_EQ(lab.negatives.front().id, 1);

  auto tied = split_by_delta(with_deltas({-1.0, -1.0, -1.0, -1.0}), 2);
  EXPECT_EQ(tied.positives[0].id, 0);
  EXPECT_EQ(tied.positives[1].id, 1);
  EXPECT_EQ(tied.negatives[0].id, 2);
  EXPECT_EQ(tied.negatives[1].id, 3);

  EXPECT_THROW(split_by_delta(with_deltas({-1.0, -2.0, -3.0}), 2), std::invalid_argument);
}

TEST(Labeling, PartitionProperties) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> n(2, 60), v(-5, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(static_cast<std::size_t>(n(rng)));
    for (auto& x : d) x = v(rng);
    const std::size_t k = 1 + rng() % (d.size() / 2);
    auto lab = split_by_delta(with_deltas(d), k);
    ASSERT_EQ(lab.positives.size(), k);
    ASSERT_EQ(lab.negatives.size(), k);
    std::set<int> pos, neg;
    for (auto& c : lab.positives) pos.insert(c.id);
    for (auto& c : lab.negatives) neg.insert(c.id);
    for (int id : pos) EXPECT_FALSE(neg.contains(id));
    const double min_pos = lab.positives.back().delta;
    double max_neg = -1e9;
    for (auto& c : lab.negatives) max_neg = std::max(max_neg, c.delta);
    EXPECT_GE(min_pos, max_neg);
    for (std::size_t i = 1; i < lab.ranked.size(); ++i) {
      const auto& a = lab.ranked[i - 1];
      const auto& b = lab.ranked[i];
      EXPECT_TRUE(a.delta > b.delta || (a.delta == b.delta && a.id < b.id));
    }
  }
}

TEST(Labeling, DeltaIsOneExampleLikelihood) {
  std::vector<Candidate> pool = {{0, "the food was good", "food: positive"},
                                 {1, "the wine was bad", "wine: negative"},
                                 {2, "food again", "food: negative"},
                                 {3, "nothing", "noaspectterm: none"}};
  Candidate q{9, "great food", "food: positive"};
  OverlapScorer scorer;
  auto tmpl = default_template(Task::aspe);
  auto lab = label_candidates(q, with_deltas({0, 0, 0, 0}), pool, scorer, tmpl, 1);
  for (const auto& c : lab.ranked)
    EXPECT_EQ(c.delta, scorer.score(render(tmpl, std::span(&pool[c.id], 1), q.input, 1), q.output).total);
  EXPECT_EQ(lab.positives[0].id, 0);
  EXPECT_EQ(lab.negatives[0].id, 3);
  std::vector<ScoredCandidate> with_self = {{9, 0, 0}, {0, 0, 0}};
  pool.resize(10, q);
  EXPECT_THROW(label_candidates(q, with_self, pool, scorer, tmpl, 1), std::invalid_argument);
}

TEST(InfoNce, HandValues) {
  std::vector<double> q = {1.0, 0.0}, pos = {1.0, 0.0}, neg = {0.0, 1.0};
  std::vector<std::vector<double>> negs = {neg};
  EXPECT_NEAR(infonce_loss(q, pos, negs), std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(infonce_loss(q, pos, negs), 0.31326168751822286, 1e-12);
  // Equal similarities: ln(number of candidates).
  std::vector<std::vector<double>> same(3, pos);
  EXPECT_NEAR(infonce_loss(q, pos, same), std::log(4.0), 1e-12);
  // The shift keeps huge similarities finite.
  std::vector<double> big = {800.0, 0.0};
  EXPECT_NEAR(infonce_loss(big, pos, std::vector<std::vector<double>>{{0.999, 0.0}}),
              std::log1p(std::exp(-0.8)), 1e-9);
}

TEST(InfoNce, BatchOfEqualEmbeddingsIsLogTwoB) {
  RetrieverState zero(oracle::micro_vocab(8), 4);
  for (std::size_t B : {1u, 2u, 5u}) {
    std::vector<ContrastiveItem> batch(B, {{4, 5}, {6}, {7}});
    EXPECT_NEAR(contrastive_batch(zero, batch, {}), std::log(2.0 * static_cast<double>(B)), 1e-12);
  }
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  for (std::size_t B : {1u, 3u}) {
    RetrieverState s(oracle::micro_vocab(9), 3);
    s.init_random(B);
    std::vector<ContrastiveItem> batch;
    for (std::size_t b = 0; b < B; ++b)
      batch.push_back({{4, static_cast<int>(5 + b)}, {6, 7, static_cast<int>(4 + b)}, {8, static_cast<int>(6 - b)}});
    std::vector<double> g(s.param_count(), 0.0);
    contrastive_batch(s, batch, g);
    auto numeric = oracle::fd_gradient([&] { return contrastive_batch(s, batch, {}); }, s.params(), 1e-6);
    EXPECT_LT(oracle::max_rel_error(g, numeric, 1e-5), 1e-4) << "B=" << B;
  }
}

TEST(Subset, SizeAndDeterminism) {
  auto [train, test] = generate_synthetic(103, 5, 1);
  for (double r : {0.01, 0.1, 0.5, 1.0}) {
    auto sub = sample_training_subset(train, r, 4);
    EXPECT_EQ(sub.size(), static_cast<std::size_t>(std::ceil(r * 103 - 1e-9)));
    EXPECT_EQ(sub, sample_training_subset(train, r, 4));
    std::set<int> ids;
    for (const auto& s : sub.samples) EXPECT_TRUE(ids.insert(s.id).second);
  }
  EXPECT_EQ(sample_training_subset(train, 1.0, 4), train);
  EXPECT_NE(sample_training_subset(train, 0.1, 4, 1), sample_training_subset(train, 0.1, 4, 2));
  EXPECT_THROW(sample_training_subset(train, 0.0, 4), std::invalid_argument);
  EXPECT_THROW(sample_training_subset(train, 1.5, 4), std::invalid_argument);
}

TEST(RetrieverTraining, SeparationGrowsUnderFixedLabels) {
  auto [train, test] = generate_synthetic(80, 5, 2);
  auto tmpl = default_template(Task::aspe);
  RetrieverState s(build_vocabulary(train, tmpl), 16);
  s.init_random(3);
  Config cfg = Config::desk();
  cfg.ratio = 0.5;
  cfg.m = 20;
  cfg.epochs_retriever = 6;
  cfg.lr_retriever = 1e-2;
  auto log = train_retriever(s, train, OverlapScorer{}, cfg, tmpl);
  ASSERT_EQ(log.size(), 6u);
  EXPECT_TRUE(log[0].random_candidates);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_FALSE(log[i].random_candidates);
  for (const auto& row : log) EXPECT_TRUE(std::isfinite(row.loss));
  EXPECT_GT(log.back().separation, 0.0);
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(RetrieverTraining, DeterministicForSeed) {
  auto [train, test] = generate_synthetic(40, 5, 3);
  auto tmpl = default_template(Task::aspe);
  Config cfg = Config::desk();
  cfg.ratio = 0.5;
  cfg.m = 10;
  cfg.epochs_retriever = 2;
  auto run = [&] {
    RetrieverState s(build_vocabulary(train, tmpl), 8);
    s.init_random(1);
    train_retriever(s, train, OverlapScorer{}, cfg, tmpl);
    return s;
  };
  EXPECT_EQ(run(), run());
}

TEST(RetrieverTraining, RejectsTooFewCandidates) {
  auto [train, test] = generate_synthetic(20, 5, 4);
  train.samples.resize(6);
  auto tmpl = default_template(Task::aspe);
  RetrieverState s(build_vocabulary(train, tmpl), 8);
  Config cfg;
  cfg.k = 4;
  EXPECT_THROW(train_retriever(s, train, OverlapScorer{}, cfg, tmpl), std::invalid_argument);
}
