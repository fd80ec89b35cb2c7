#pragma once

#include <array>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "corpus.hpp"
#include "rng.hpp"

namespace exrank {

// Review generator over a closed vocabulary. Some opinion words flip
// polarity with the aspect they describe ("long" battery life vs. a "long"
// wait), so a bag-of-words model cannot label them alone, while an example
// sharing the same aspect/opinion pair carries the answer in its output.

namespace synth {

struct ContextWord {
  const char* word;
  Polarity polarity;
};

struct AspectSpec {
  const char* term;
  std::vector<ContextWord> context;
};

struct Domain {
  const char* name;
  std::vector<AspectSpec> aspects;
};

inline const std::vector<Domain>& domains() {
  using P = Polarity;
  static const std::vector<Domain> d = {
      {"restaurant",
       {{"food", {{"hot", P::positive}, {"cold", P::negative}}},
        {"pizza", {{"hot", P::positive}, {"cold", P::negative}}},
        {"coffee", {{"hot", P::positive}, {"cold", P::negative}}},
        {"wine", {{"cold", P::positive}, {"warm", P::negative}}},
        {"beer", {{"cold", P::positive}, {"warm", P::negative}}},
        {"wait", {{"long", P::negative}, {"short", P::positive}}},
        {"service", {{"fast", P::positive}, {"slow", P::negative}}},
        {"portions", {{"large", P::positive}, {"small", P::negative}}},
        {"prices", {{"high", P::negative}, {"low", P::positive}}},
        {"staff", {}},
        {"sushi", {}},
        {"dessert", {}},
        {"ambience", {}},
        {"menu", {}}}},
      {"laptop",
       {{"battery life", {{"long", P::positive}, {"short", P::negative}}},
        {"fan", {{"loud", P::negative}, {"quiet", P::positive}, {"hot", P::negative}}},
        {"charger", {{"hot", P::negative}, {"small", P::positive}, {"large", P::negative}}},
        {"speakers", {{"loud", P::positive}, {"quiet", P::negative}}},
        {"performance", {{"high", P::positive}, {"low", P::negative}, {"fast", P::positive}, {"slow", P::negative}}},
        {"screen", {{"bright", P::positive}, {"dim", P::negative}, {"large", P::positive}, {"small", P::negative}}},
        {"price", {{"high", P::negative}, {"low", P::positive}}},
        {"hard drive", {{"fast", P::positive}, {"slow", P::negative}, {"loud", P::negative}}},
        {"keyboard", {{"soft", P::positive}, {"loud", P::negative}}},
        {"trackpad", {{"large", P::positive}, {"small", P::negative}}},
        {"design", {}}}},
      {"hotel",
       {{"room", {{"large", P::positive}, {"small", P::negative}, {"quiet", P::positive}, {"loud", P::negative}}},
        {"bed", {{"soft", P::positive}, {"hard", P::negative}}},
        {"shower", {{"hot", P::positive}, {"cold", P::negative}}},
        {"breakfast", {{"hot", P::positive}, {"cold", P::negative}}},
        {"wifi", {{"fast", P::positive}, {"slow", P::negative}}},
        {"pool", {{"warm", P::positive}, {"cold", P::negative}}},
        {"location", {}},
        {"view", {}},
        {"reception", {}},
        {"bathroom", {{"large", P::positive}, {"small", P::negative}}}}},
  };
  return d;
}

inline const std::vector<std::string>& generic(Polarity p) {
  static const std::vector<std::string> pos = {"great", "excellent", "amazing", "wonderful", "superb",
                                               "fantastic", "perfect", "lovely", "good", "outstanding"};
  static const std::vector<std::string> neg = {"terrible", "awful", "bad", "poor", "horrible",
                                               "disappointing", "dreadful", "mediocre", "lousy", "sloppy"};
  static const std::vector<std::string> neu = {"average", "okay", "ordinary", "standard",
                                               "acceptable", "typical", "adequate"};
  return p == Polarity::positive ? pos : p == Polarity::negative ? neg : neu;
}

inline const std::vector<std::string>& verbs(Polarity p) {
  static const std::vector<std::string> pos = {"loved", "enjoyed", "liked", "adored"};
  static const std::vector<std::string> neg = {"hated", "disliked", "regretted"};
  return p == Polarity::positive ? pos : neg;
}

inline const std::vector<std::string> kIntensifiers = {"really", "very", "quite", "so", "rather", "truly", "incredibly"};
inline const std::vector<std::string> kOpeners = {"Overall", "As usual", "This time", "On our visit", "To be fair"};
inline const std::vector<std::string> kSubjects = {"We", "I", "My friend", "My wife", "Our group", "They"};
inline const std::vector<std::string> kActions = {"visited", "tried", "booked", "found", "chose", "reviewed"};
inline const std::vector<std::string> kObjects = {"this place", "it", "the spot", "this one"};
inline const std::vector<std::string> kTimes = {"last week", "yesterday", "on Friday", "for dinner", "twice", "again"};
inline const std::vector<std::string> kExclamations = {"Unbelievable.", "What a night!", "Never again.",
                                                       "Just wow.", "Nothing more to say."};

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[uniform_index(rng, v.size())];
}

struct Mention {
  std::string term;
  std::string opinion;
  Polarity polarity;
};

inline Polarity draw_polarity(Rng& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < 0.5 ? Polarity::positive : u < 0.85 ? Polarity::negative : Polarity::neutral;
}

inline Mention draw_mention(Rng& rng, const AspectSpec& a, Polarity pol) {
  std::vector<std::string> ctx;
  for (const auto& c : a.context)
    if (c.polarity == pol) ctx.emplace_back(c.word);
  bool contextual = !ctx.empty() && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
  return {a.term, contextual ? pick(rng, ctx) : pick(rng, generic(pol)), pol};
}

/// Distinct aspects from one domain.
inline std::vector<const AspectSpec*> draw_aspects(Rng& rng, const Domain& dom, std::size_t n) {
  std::vector<const AspectSpec*> all;
  for (const auto& a : dom.aspects) all.push_back(&a);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(n);
  return all;
}

inline std::string maybe_intens(Rng& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.3) return pick(rng, kIntensifiers) + " ";
  return {};
}

inline std::pair<std::string, std::vector<Mention>> draw_sentence(Rng& rng) {
  const Domain& dom = pick(rng, domains());
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::size_t n_aspects = u < 0.15 ? 0 : u < 0.65 ? 1 : u < 0.93 ? 2 : 3;

  if (n_aspects == 0) {
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.3) return {pick(rng, kExclamations), {}};
    return {pick(rng, kSubjects) + " " + pick(rng, kActions) + " " + pick(rng, kObjects) + " " + pick(rng, kTimes) + ".",
            {}};
  }

  auto aspects = draw_aspects(rng, dom, n_aspects);
  std::vector<Mention> ms;
  std::string text;
  if (n_aspects == 1) {
    Polarity pol = draw_polarity(rng);
    Mention m = draw_mention(rng, *aspects[0], pol);
    int frame = static_cast<int>(uniform_index(rng, 6));
    if (frame == 3 && pol == Polarity::neutral) frame = 0;
    switch (frame) {
      case 0: text = "The " + m.term + " was " + maybe_intens(rng) + m.opinion + "."; break;
      case 1: text = "I found the " + m.term + " " + maybe_intens(rng) + m.opinion + "."; break;
      case 2: text = "The " + m.term + " is " + maybe_intens(rng) + m.opinion + " here."; break;
      case 3:
        m.opinion = pick(rng, verbs(pol));
        text = "We " + m.opinion + " the " + m.term + ".";
        break;
      case 4: text = "Honestly, the " + m.term + " was " + m.opinion + " for a place like this."; break;
      default: text = pick(rng, kOpeners) + ", the " + m.term + " was " + m.opinion + "."; break;
    }
    ms.push_back(m);
  } else if (n_aspects == 2) {
    int frame = static_cast<int>(uniform_index(rng, 3));
    if (frame == 1) {
      Polarity pol = draw_polarity(rng);
      Mention a = draw_mention(rng, *aspects[0], pol);
      // Shared opinion word: only generic words apply to both aspects.
      a.opinion = pick(rng, generic(pol));
      Mention b{aspects[1]->term, a.opinion, pol};
      text = "The " + a.term + " and the " + b.term + " were " + maybe_intens(rng) + a.opinion + ".";
      ms = {a, b};
    } else if (frame == 2) {
      Polarity pa = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? Polarity::positive : Polarity::negative;
      Polarity pb = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.7
                        ? (pa == Polarity::positive ? Polarity::negative : Polarity::positive)
                        : pa;
      Mention a{aspects[0]->term, pick(rng, verbs(pa)), pa};
      Mention b{aspects[1]->term, pick(rng, verbs(pb)), pb};
      text = "We " + a.opinion + " the " + a.term + " but " + b.opinion + " the " + b.term + ".";
      ms = {a, b};
    } else {
      Mention a = draw_mention(rng, *aspects[0], draw_polarity(rng));
      Mention b = draw_mention(rng, *aspects[1], draw_polarity(rng));
      text = "The " + a.term + " was " + a.opinion + " but the " + b.term + " was " + b.opinion + ".";
      ms = {a, b};
    }
  } else {
    for (auto* a : aspects) ms.push_back(draw_mention(rng, *a, draw_polarity(rng)));
    text = "The " + ms[0].term + " was " + ms[0].opinion + ", the " + ms[1].term + " was " + ms[1].opinion +
           " and the " + ms[2].term + " was " + ms[2].opinion + ".";
  }
  return {text, ms};
}

inline Dataset draw_split(Rng& rng, std::size_t n, Split split, std::set<std::string>& seen) {
  Dataset ds;
  ds.task = Task::aspe;
  ds.split = split;
  std::size_t attempts = 0;
  while (ds.samples.size() < n) {
    auto [text, mentions] = draw_sentence(rng);
    // Distinct texts keep self-exclusion meaningful; the cap only matters for
    // absurdly large requests.
    if (!seen.insert(text).second && ++attempts < 100 * n) continue;
    Sample s;
    s.id = static_cast<int>(ds.samples.size());
    s.text = std::move(text);
    for (auto& m : mentions) s.labels.push_back({m.term, m.polarity});
    if (s.labels.empty()) s.labels.push_back(sentinel_label());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace synth

/// Deterministic (train, test) pair of sentence-level datasets in ASPE form.
/// Use expand_for_atsc for the ATSC view; the ATE view is the same data.
inline std::pair<Dataset, Dataset> generate_synthetic(std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  if (n_train < 20) throw std::invalid_argument("generate_synthetic: n_train must be at least 20");
  Rng rng = stream(seed, "data");
  std::set<std::string> seen;
  Dataset train = synth::draw_split(rng, n_train, Split::train, seen);
  Dataset test = synth::draw_split(rng, n_test, Split::test, seen);
  return {std::move(train), std::move(test)};
}

inline Dataset with_task(Dataset ds, Task task) {
  if (task == Task::atsc) return expand_for_atsc(ds);
  ds.task = task;
  return ds;
}

}  // namespace exrank
