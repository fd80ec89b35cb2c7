#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace exrank {

/// `unknown` is the reject marker for generator output that does not name a
/// valid polarity. It never appears in gold data.
enum class Polarity { positive, negative, neutral, none, unknown };

enum class Task { ate, atsc, aspe };

enum class Split { train, test };

inline constexpr std::string_view kNoAspect = "noaspectterm";

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
    case Polarity::none: return "none";
    case Polarity::unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<Polarity> polarity_from_string(std::string_view s) {
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  if (s == "neutral") return Polarity::neutral;
  if (s == "none") return Polarity::none;
  return std::nullopt;
}

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::ate: return "ate";
    case Task::atsc: return "atsc";
    case Task::aspe: return "aspe";
  }
  return "aspe";
}

inline Task task_from_string(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ate") return Task::ate;
  if (lower == "atsc") return Task::atsc;
  if (lower == "aspe") return Task::aspe;
  throw std::invalid_argument("unknown task: " + std::string(s));
}

struct AspectLabel {
  std::string term;
  Polarity polarity = Polarity::none;

  bool is_sentinel() const { return term == kNoAspect && polarity == Polarity::none; }
  auto operator<=>(const AspectLabel&) const = default;
};

inline AspectLabel sentinel_label() { return {std::string(kNoAspect), Polarity::none}; }

struct Sample {
  int id = 0;
  std::string text;
  std::vector<AspectLabel> labels;
  /// Designated aspect term; set only for ATSC samples.
  std::optional<std::string> aspect;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  Task task = Task::aspe;
  Split split = Split::train;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const Sample& operator[](std::size_t i) const { return samples[i]; }
  bool operator==(const Dataset&) const = default;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Comparison key for aspect terms: trimmed and lower-cased.
inline std::string normalize_term(std::string_view s) {
  std::string t = trim(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  return t;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline Sample parse_record(const std::string& line, std::size_t line_no, Task task, bool& skip) {
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("line " + std::to_string(line_no) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) throw fail("missing string field 'text'");
  if (!j.contains("labels") || !j["labels"].is_array()) throw fail("missing array field 'labels'");

  Sample s;
  s.text = j["text"].get<std::string>();
  std::vector<std::string> conflict_terms;
  for (const auto& pair : j["labels"]) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string())
      throw fail("label must be a [term, polarity] pair of strings");
    auto term = pair[0].get<std::string>();
    auto pol_str = pair[1].get<std::string>();
    if (term.empty()) throw fail("empty aspect term");
    if (pol_str == "conflict") {
      conflict_terms.push_back(term);
      continue;
    }
    auto pol = polarity_from_string(pol_str);
    if (!pol) throw fail("unknown polarity '" + pol_str + "'");
    if ((*pol == Polarity::none) != (term == kNoAspect))
      throw fail("polarity 'none' is reserved for the sentinel term '" + std::string(kNoAspect) + "'");
    AspectLabel lab{term, *pol};
    if (std::find(s.labels.begin(), s.labels.end(), lab) == s.labels.end()) s.labels.push_back(std::move(lab));
  }
  bool has_sentinel = std::any_of(s.labels.begin(), s.labels.end(), [](const auto& l) { return l.is_sentinel(); });
  if (has_sentinel && s.labels.size() > 1) throw fail("sentinel pair mixed with aspect labels");
  if (s.labels.empty()) s.labels.push_back(sentinel_label());

  if (task == Task::atsc) {
    if (!j.contains("aspect") || !j["aspect"].is_string()) throw fail("ATSC record lacks string field 'aspect'");
    auto aspect = j["aspect"].get<std::string>();
    bool found = std::any_of(s.labels.begin(), s.labels.end(),
                             [&](const auto& l) { return l.term == aspect && !l.is_sentinel(); });
    if (!found) {
      if (std::find(conflict_terms.begin(), conflict_terms.end(), aspect) != conflict_terms.end()) {
        skip = true;
        return s;
      }
      throw fail("ATSC aspect '" + aspect + "' not among labels");
    }
    s.aspect = std::move(aspect);
  } else if (j.contains("aspect") && j["aspect"].is_string()) {
    s.aspect = j["aspect"].get<std::string>();
  }
  return s;
}

}  // namespace detail

/// One JSON object per line. Blank lines are ignored; ids follow record
/// order. Conflict-labelled aspects are dropped, and an ATSC record whose
/// designated aspect is conflict-labelled is skipped entirely.
inline Dataset read_dataset(std::istream& in, Task task, Split split = Split::train) {
  Dataset ds;
  ds.task = task;
  ds.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    bool skip = false;
    Sample s = detail::parse_record(line, line_no, task, skip);
    if (skip) continue;
    s.id = static_cast<int>(ds.samples.size());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, Task task, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return read_dataset(in, task, split);
}

inline nlohmann::json to_json(const Sample& s) {
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : s.labels) {
    if (l.is_sentinel()) continue;
    labels.push_back({l.term, std::string(to_string(l.polarity))});
  }
  nlohmann::json j{{"text", s.text}, {"labels", labels}};
  if (s.aspect) j["aspect"] = *s.aspect;
  return j;
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const auto& s : ds.samples) out << to_json(s).dump() << '\n';
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  write_dataset(out, ds);
}

// ---------------------------------------------------------------------------
// Output grammar
//
//   ATE   term; term; ...
//   ATSC  polarity
//   ASPE  term: polarity; term: polarity; ...
//
// Tuples are separated by "; " because terms may contain commas. For ASPE a
// segment splits on its last ": ", so colons inside terms survive.

inline constexpr std::string_view kTupleSep = "; ";
inline constexpr std::string_view kPairSep = ": ";

inline std::string serialize_label(const Sample& s, Task task) {
  std::string out;
  switch (task) {
    case Task::ate:
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (i) out += kTupleSep;
        out += s.labels[i].term;
      }
      return out;
    case Task::atsc: {
      if (!s.aspect) throw std::invalid_argument("ATSC sample " + std::to_string(s.id) + " has no designated aspect");
      for (const auto& l : s.labels)
        if (l.term == *s.aspect) return std::string(to_string(l.polarity));
      throw std::invalid_argument("ATSC aspect '" + *s.aspect + "' not found in sample " + std::to_string(s.id));
    }
    case Task::aspe:
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (i) out += kTupleSep;
        out += s.labels[i].term;
        out += kPairSep;
        out += to_string(s.labels[i].polarity);
      }
      return out;
  }
  return out;
}

struct ParseOptions {
  /// Also accept "term#polarity" segments for ASPE.
  bool accept_hash = false;
};

struct ParsedOutput {
  std::vector<AspectLabel> labels;
  /// Dropped segments plus polarity words that were not recognised.
  std::size_t failures = 0;
};

namespace detail {

inline std::vector<std::string> split_tuples(std::string_view text) {
  std::vector<std::string> segs;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(kTupleSep, start);
    segs.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + kTupleSep.size();
  }
  return segs;
}

inline Polarity read_polarity(std::string_view word, std::size_t& failures) {
  if (auto p = polarity_from_string(trim(word))) return *p;
  ++failures;
  return Polarity::unknown;
}

}  // namespace detail

/// Never throws. ATE terms carry Polarity::unknown (ATE predicts no
/// polarity) except the sentinel term, which maps to the sentinel pair. The
/// single ATSC label has an empty term.
inline ParsedOutput parse_output(std::string_view text, Task task, ParseOptions opts = {}) {
  ParsedOutput out;
  if (trim(text).empty()) return out;

  if (task == Task::atsc) {
    out.labels.push_back({"", detail::read_polarity(text, out.failures)});
    return out;
  }

  for (const auto& seg : detail::split_tuples(text)) {
    if (trim(seg).empty()) {
      ++out.failures;
      continue;
    }
    if (task == Task::ate) {
      auto term = trim(seg);
      out.labels.push_back({term, term == kNoAspect ? Polarity::none : Polarity::unknown});
      continue;
    }
    auto cut = seg.rfind(kPairSep);
    std::size_t sep_len = kPairSep.size();
    if (cut == std::string::npos && opts.accept_hash) {
      cut = seg.rfind('#');
      sep_len = 1;
    }
    if (cut == std::string::npos) {
      ++out.failures;
      continue;
    }
    auto term = trim(std::string_view(seg).substr(0, cut));
    if (term.empty()) {
      ++out.failures;
      continue;
    }
    out.labels.push_back({term, detail::read_polarity(std::string_view(seg).substr(cut + sep_len), out.failures)});
  }
  return out;
}

/// Gold labels projected onto what a task predicts; the value a perfect
/// generator's parsed output must equal.
inline std::vector<AspectLabel> task_view(const Sample& s, Task task) {
  std::vector<AspectLabel> out;
  switch (task) {
    case Task::ate:
      for (const auto& l : s.labels) out.push_back({l.term, l.is_sentinel() ? Polarity::none : Polarity::unknown});
      break;
    case Task::atsc:
      for (const auto& l : s.labels)
        if (s.aspect && l.term == *s.aspect) {
          out.push_back({"", l.polarity});
          break;
        }
      break;
    case Task::aspe:
      out = s.labels;
      break;
  }
  return out;
}

/// Sentence-level dataset to ATSC form: one sample per non-sentinel aspect,
/// ids renumbered densely in (sentence, label) order.
inline Dataset expand_for_atsc(const Dataset& ds) {
  Dataset out;
  out.task = Task::atsc;
  out.split = ds.split;
  for (const auto& s : ds.samples) {
    for (const auto& l : s.labels) {
      if (l.is_sentinel()) continue;
      Sample t = s;
      t.aspect = l.term;
      t.id = static_cast<int>(out.samples.size());
      out.samples.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace exrank
