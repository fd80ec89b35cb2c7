#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "corpus.hpp"

namespace exrank {

/// An (input, output) training pair as it appears inside a prompt. `id` is
/// the sample id in the pool it was drawn from.
struct Candidate {
  int id = -1;
  std::string input;
  std::string output;

  bool operator==(const Candidate&) const = default;
};

inline std::string atsc_input(std::string_view text, std::string_view aspect) {
  std::string out(text);
  out += " The aspect is ";
  out += aspect;
  out += '.';
  return out;
}

/// Model-side input for a sample: the review text, with the aspect spliced
/// in for ATSC.
inline std::string task_input(const Sample& s, Task task) {
  if (task == Task::atsc) {
    if (!s.aspect) throw std::invalid_argument("ATSC sample " + std::to_string(s.id) + " has no designated aspect");
    return atsc_input(s.text, *s.aspect);
  }
  return s.text;
}

inline Candidate make_candidate(const Sample& s, Task task) {
  return {s.id, task_input(s, task), serialize_label(s, task)};
}

inline std::vector<Candidate> make_candidates(const Dataset& ds) {
  std::vector<Candidate> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(make_candidate(s, ds.task));
  return out;
}

/// Retriever-side rendering of a candidate.
inline std::string candidate_text(const Candidate& c) { return "Input: " + c.input + " Output: " + c.output; }

/// Retriever-side rendering of a query; no Output clause.
inline std::string query_text(std::string_view input) { return "Input: " + std::string(input); }

inline constexpr int kTemplateVersion = 1;

struct TemplateSet {
  int version = kTemplateVersion;
  std::string definition;
  std::string definition_format = "Definition: {definition}";
  std::string example_format = "Example {index}- Input: {input} Output: {output}";
  std::string query_format = "Now complete the following- Input: {input} Output:";

  bool operator==(const TemplateSet&) const = default;
};

inline std::string default_definition(Task task) {
  switch (task) {
    case Task::ate:
      return "Extract every aspect term mentioned in the review, or answer noaspectterm when there is none.";
    case Task::atsc:
      return "Classify the sentiment expressed toward the given aspect as positive, negative or neutral.";
    case Task::aspe:
      return "Extract every aspect term mentioned in the review together with the sentiment expressed toward it.";
  }
  return {};
}

inline TemplateSet default_template(Task task) {
  TemplateSet t;
  t.definition = default_definition(task);
  return t;
}

/// Substitutes {name} placeholders in one left-to-right pass, so braces that
/// appear inside substituted values are never re-expanded.
inline std::string fill_placeholders(std::string_view format,
                                     std::span<const std::pair<std::string_view, std::string_view>> values) {
  std::string out;
  std::size_t i = 0;
  while (i < format.size()) {
    if (format[i] == '{') {
      auto close = format.find('}', i);
      if (close != std::string_view::npos) {
        auto name = format.substr(i + 1, close - i - 1);
        bool hit = false;
        for (const auto& [k, v] : values) {
          if (k == name) {
            out += v;
            hit = true;
            break;
          }
        }
        if (hit) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(format[i++]);
  }
  return out;
}

/// Prompt for the target input with the first k examples:
///   Definition: DEF Example 1- Input: x Output: y ... Now complete the following- Input: x_s Output:
inline std::string render(const TemplateSet& tmpl, std::span<const Candidate> examples, std::string_view input,
                          std::size_t k) {
  if (k > examples.size())
    throw std::invalid_argument("render: k=" + std::to_string(k) + " exceeds " + std::to_string(examples.size()) +
                                " available examples");
  std::pair<std::string_view, std::string_view> def[] = {{"definition", tmpl.definition}};
  std::string out = fill_placeholders(tmpl.definition_format, def);
  for (std::size_t i = 0; i < k; ++i) {
    auto idx = std::to_string(i + 1);
    std::pair<std::string_view, std::string_view> vals[] = {
        {"index", idx}, {"input", examples[i].input}, {"output", examples[i].output}};
    out += ' ';
    out += fill_placeholders(tmpl.example_format, vals);
  }
  std::pair<std::string_view, std::string_view> q[] = {{"input", input}};
  out += ' ';
  out += fill_placeholders(tmpl.query_format, q);
  return out;
}

inline std::string render(std::string_view definition, std::span<const Candidate> examples, std::string_view input,
                          std::size_t k) {
  TemplateSet t;
  t.definition = std::string(definition);
  return render(t, examples, input, k);
}

/// Asset file: `key = value` lines; `#` starts a comment line. Keys:
/// version, definition, definition_format, example_format, query_format.
inline TemplateSet parse_template(std::istream& in, Task task) {
  TemplateSet t = default_template(task);
  std::string line;
  while (std::getline(in, line)) {
    auto s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("template: expected key = value, got '" + s + "'");
    auto key = trim(std::string_view(s).substr(0, eq));
    auto value = trim(std::string_view(s).substr(eq + 1));
    if (key == "version") t.version = std::stoi(value);
    else if (key == "definition") t.definition = value;
    else if (key == "definition_format") t.definition_format = value;
    else if (key == "example_format") t.example_format = value;
    else if (key == "query_format") t.query_format = value;
    else throw std::runtime_error("template: unknown key '" + key + "'");
  }
  return t;
}

inline std::filesystem::path template_file(const std::filesystem::path& dir, Task task) {
  return dir / (std::string(to_string(task)) + ".txt");
}

/// Loads <dir>/<task>.txt; an empty dir yields the built-in template.
inline TemplateSet load_template(const std::filesystem::path& dir, Task task) {
  if (dir.empty()) return default_template(task);
  std::ifstream in(template_file(dir, task));
  if (!in) throw std::runtime_error("template: cannot open " + template_file(dir, task).string());
  return parse_template(in, task);
}

}  // namespace exrank
