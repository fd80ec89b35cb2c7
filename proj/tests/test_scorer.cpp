#include <cmath>
#include <cstring>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace exrank;

namespace {

ReferenceScorer micro_scorer(std::size_t v, std::size_t d, std::uint64_t seed, std::size_t max_len = 6) {
  std::vector<std::string> words = {"Input"};
  for (std::size_t i = Vocabulary::kReserved + 1; i < v; ++i) words.push_back("w" + std::to_string(i));
  ReferenceScorer s(v > Vocabulary::kReserved ? Vocabulary(words) : Vocabulary(std::vector<std::string>{}), d, max_len);
  s.init_random(seed, 0.5);
  // Non-zero bias so its gradient is exercised too.
  Rng rng = stream(seed, "bias");
  std::normal_distribution<double> nd(0.0, 0.3);
  for (std::size_t i = 0; i < s.param_count(); ++i)
    if (s.params()[i] == 0.0) s.params()[i] = nd(rng);
  return s;
}

double gradient_error(ReferenceScorer& s, const std::string& prompt, const std::string& target) {
  std::vector<double> analytic(s.param_count(), 0.0);
  s.nll_gradient(prompt, target, analytic);
  auto numeric = oracle::fd_gradient([&] { return -s.score(prompt, target).total; }, s.params());
  return oracle::max_rel_error(analytic, numeric);
}

}  // namespace

TEST(ScorerGradient, FourTokenVocabulary) {
  auto s = micro_scorer(4, 3, 1);
  ASSERT_EQ(s.vocab_size(), 4u);
  EXPECT_LT(gradient_error(s, "a b c", "x y"), 1e-4);
  EXPECT_LT(gradient_error(s, "", "z"), 1e-4);
}

TEST(ScorerGradient, EightTokenVocabularyWithQuerySegment) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = micro_scorer(8, 3, seed);
    ASSERT_EQ(s.vocab_size(), 8u);
    EXPECT_LT(gradient_error(s, "w5 w6 Input w7", "w5 w7 w6 w5"), 1e-4);
    EXPECT_LT(gradient_error(s, "w7 w6", "w6"), 1e-4);
    // Longer than max_len: truncation and position clamping both apply.
    EXPECT_LT(gradient_error(s, "w5 Input w6 w6 w7 w5 Input w7", "w5 w6 w7 w5 w6 w7 w5"), 1e-4);
  }
}

TEST(Scorer, UniformWhenParametersAreZero) {
  ReferenceScorer s(oracle::micro_vocab(10), 4, 16);
  for (std::string target : {"w4", "w4 w5 w6", "unseen words here"}) {
    auto ll = s.score("w7 w8", target);
    const double L = static_cast<double>(s.target_ids(target).size());
    EXPECT_NEAR(ll.total, -L * std::log(10.0), 1e-12);
  }
  for (double p : s.step_logits("w4", {})) EXPECT_NEAR(p, 0.1, 1e-15);
}

TEST(Scorer, ShiftInvariance) {
  auto s = micro_scorer(8, 3, 2);
  auto before = s.step_logits("w5 Input w6", std::vector<int>{5});
  // Raising every bias entry adds the same constant to every logit.
  for (double& b : s.bias()) b += 3.7;
  auto after = s.step_logits("w5 Input w6", std::vector<int>{5});
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i], after[i], 1e-12);
}

TEST(Scorer, NormalizationFuzz) {
  auto [train, test] = generate_synthetic(60, 10, 3);
  auto tmpl = default_template(Task::aspe);
  ReferenceScorer s(build_vocabulary(train, tmpl), 8, 32);
  s.init_random(5, 1.0);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(0, 60), tok(0, static_cast<int>(s.vocab_size()) - 1), pre(0, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::string prompt;
    for (int i = len(rng); i > 0; --i) prompt += s.vocabulary().token(tok(rng)) + " ";
    std::vector<int> prefix;
    for (int i = pre(rng); i > 0; --i) prefix.push_back(tok(rng));
    auto p = s.step_logits(prompt, prefix);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
    for (double x : p) EXPECT_GE(x, 0.0);
  }
}

TEST(Scorer, ChainRuleAndAdditivity) {
  auto s = micro_scorer(8, 3, 4, 12);
  for (std::string target : {"w5", "w6 w7 w5", "w5 Input w6 w6"}) {
    auto ll = s.score("w5 Input w7 w7", target);
    EXPECT_NEAR(ll.total, oracle::chain_rule_score(s, "w5 Input w7 w7", target), 1e-12);
    EXPECT_NEAR(ll.total, std::accumulate(ll.per_token.begin(), ll.per_token.end(), 0.0), 1e-9);
    for (double v : ll.per_token) EXPECT_LE(v, 0.0);
  }
}

TEST(Scorer, GreedyMatchesArgmax) {
  auto s = micro_scorer(8, 3, 6, 12);
  for (std::string prompt : {"w5", "w6 Input w7", "Input", ""}) {
    auto ids = s.generate_ids(prompt, 8);
    std::vector<int> prefix;
    for (int id : ids) {
      auto p = s.step_logits(prompt, prefix);
      EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), id);
      prefix.push_back(id);
    }
    EXPECT_LE(s.generate_ids(prompt, 1).size(), 1u);
  }
}

TEST(Scorer, GreedyFirstStepIsLocallyOptimal) {
  auto s = micro_scorer(8, 3, 7, 12);
  for (std::string prompt : {"w6 Input w5", "w5 w5", "Input w7 w6"}) {
    std::vector<int> ids = s.generate_ids(prompt, 4);
    // An empty generation means end-of-sequence won the first step.
    const int first = ids.empty() ? Vocabulary::kEos : ids[0];
    auto first_score = [&](int id) {
      return id == Vocabulary::kEos ? s.score(prompt, "").per_token[0]
                                    : s.score(prompt, s.vocabulary().decode(std::vector<int>{id})).per_token[0];
    };
    const double best = first_score(first);
    for (int alt = Vocabulary::kReserved; alt < static_cast<int>(s.vocab_size()); ++alt)
      EXPECT_GE(best, first_score(alt));
    EXPECT_GE(best, first_score(Vocabulary::kEos));
  }
}

TEST(ScorerTraining, OverfitsOnePair) {
  auto [train, test] = generate_synthetic(30, 5, 1);
  auto tmpl = default_template(Task::aspe);
  ReferenceScorer s(build_vocabulary(train, tmpl), 16, 64);
  s.init_random(3);
  const std::string prompt = render(tmpl, {}, train[0].text, 0);
  const std::string target = serialize_label(train[0], Task::aspe);
  ScorerTrainer trainer(s, {.weight_decay = 0.0});
  const double first = finetune_step(trainer, prompt, target, 1e-2);
  double last = first;
  for (int i = 1; i < 200; ++i) last = finetune_step(trainer, prompt, target, 1e-2);
  EXPECT_LT(last, first);
  EXPECT_LT(-s.score(prompt, target).total, last);
  EXPECT_EQ(s.generate(prompt, 32), target);
}

TEST(ScorerTraining, ZeroLearningRateIsNullUpdate) {
  auto s = micro_scorer(8, 3, 8);
  const auto before = std::vector<double>(s.params().begin(), s.params().end());
  const double expected = -s.score("w5 Input w6", "w7").total;
  ScorerTrainer trainer(s, {.weight_decay = 0.0});
  EXPECT_DOUBLE_EQ(finetune_step(trainer, "w5 Input w6", "w7", 0.0), expected);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), s.params().begin()));
  EXPECT_THROW(finetune_step(trainer, "w5", "w7", -1.0), std::invalid_argument);
}

TEST(ScorerTraining, NonFiniteGradientIsReported) {
  auto s = micro_scorer(8, 3, 9);
  s.bias()[5] = std::numeric_limits<double>::quiet_NaN();
  ScorerTrainer trainer(s);
  try {
    finetune_step(trainer, "w5", "w6", 1e-3);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(ScorerTraining, FrozenScorerIsBitwiseStable) {
  auto s = micro_scorer(8, 3, 10, 12);
  auto a = s.score("w5 Input w6", "w7 w5");
  auto g = s.generate("w5 Input w6", 6);
  for (int i = 0; i < 3; ++i) {
    auto b = s.score("w5 Input w6", "w7 w5");
    EXPECT_EQ(std::memcmp(&a.total, &b.total, sizeof(double)), 0);
    EXPECT_EQ(a.per_token, b.per_token);
    EXPECT_EQ(s.generate("w5 Input w6", 6), g);
  }
}

TEST(ScorerModel, QuerySegmentStartsAtLastMarker) {
  auto s = micro_scorer(8, 3, 11, 32);
  const auto& v = s.vocabulary();
  EXPECT_EQ(s.query_start(v.encode("w5 w6")), 0u);
  EXPECT_EQ(s.query_start(v.encode("w5 Input w6 Input w7")), 3u);
  // Moving context tokens around leaves the encoding unchanged; moving a
  // token across the marker does not.
  auto a = s.encode(v.encode("w5 w6 Input w7"));
  auto b = s.encode(v.encode("w6 w5 Input w7"));
  auto c = s.encode(v.encode("w5 Input w6 w7"));
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
  EXPECT_NE(a, c);
}

TEST(ScorerModel, TailTruncationKeepsQuery) {
  ReferenceScorer s(oracle::micro_vocab(10), 2, 4);
  auto ids = s.prompt_ids("w4 w5 w6 w7 w8 w9");
  EXPECT_EQ(s.vocabulary().decode(ids), "w6 w7 w8 w9");
  EXPECT_EQ(s.prompt_length("w4 w5 w6 w7 w8 w9"), 6u);
  EXPECT_EQ(s.target_ids("w4").back(), Vocabulary::kEos);
}

TEST(Optimizer, MatchesHandComputedStep) {
  AdamW opt(2, {.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.1});
  std::vector<double> p = {1.0, -2.0}, g = {0.5, -0.25};
  opt.step(p, g, 0.01);
  // First step: mhat = g, vhat = g^2, so the update is lr * (wd * p + sign(g)).
  EXPECT_NEAR(p[0], 1.0 - 0.01 * (0.1 * 1.0 + 0.5 / (0.5 + 1e-8)), 1e-15);
  EXPECT_NEAR(p[1], -2.0 - 0.01 * (0.1 * -2.0 - 0.25 / (0.25 + 1e-8)), 1e-15);
  std::vector<double> bad = {std::nan(""), 0.0};
  EXPECT_THROW(opt.step(p, bad, 0.01), std::runtime_error);
}
