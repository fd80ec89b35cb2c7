#pragma once

// Command-line front end. Every subcommand accepts every config key as a
// `--<key>` flag; values resolve as flag > --config file > --preset >
// built-in default. Each run writes a run.json manifest into --out.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alternating.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "contrastive.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "retriever.hpp"
#include "scorer.hpp"
#include "synthetic.hpp"
#include "template.hpp"

namespace exrank {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad flag values and missing inputs the user must fix; reported with exit 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace cli {

namespace fs = std::filesystem;

/// Subcommand-specific options, kept as strings so a manifest can replay them.
struct Extra {
  std::string name;
  std::string help;
  std::string fallback;
};

struct Invocation {
  std::string command;
  Config cfg;
  std::map<std::string, std::string> args;
  nlohmann::json checkpoints = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::array();

  std::size_t count(const std::string& key) const {
    return detail::parse_number<std::size_t>(key, args.at(key));
  }
  long long integer(const std::string& key) const { return detail::parse_number<long long>(key, args.at(key)); }
};

inline const std::map<std::string, std::vector<Extra>>& commands() {
  static const std::map<std::string, std::vector<Extra>> cmds = {
      {"gen-data", {{"train", "training samples", "500"}, {"test", "test samples", "100"}}},
      {"train-retriever", {}},
      {"finetune-lm", {}},
      {"alternate", {{"resume-from", "reload checkpoints 0..S from --out and run the remaining steps", ""}}},
      {"retrieve",
       {{"query-id", "id of the query sample", "0"}, {"split", "split holding the query: train | test", "test"}}},
      {"score",
       {{"query-id", "id of the query sample", "0"},
        {"example-id", "training id of a one-shot example (omit for a zero-example prompt)", ""},
        {"split", "split holding the query: train | test", "test"}}},
      {"evaluate", {}},
      {"sweep", {}},
  };
  return cmds;
}

inline const std::map<std::string, std::string>& descriptions() {
  static const std::map<std::string, std::string> d = {
      {"gen-data", "write a synthetic train/test corpus"},
      {"train-retriever", "train the retriever against a scorer's likelihoods"},
      {"finetune-lm", "fine-tune the scorer on top-1 retrieved examples"},
      {"alternate", "run the alternating schedule for t steps"},
      {"retrieve", "print the top-m candidates for one query"},
      {"score", "print the log-likelihood of a query's gold output"},
      {"evaluate", "evaluate one mode at k and write metrics and predictions"},
      {"sweep", "evaluate k = 0..k-max and write sweep.tsv"},
  };
  return d;
}

// ---------------------------------------------------------------------------
// Inputs

inline TemplateSet template_for(const Config& cfg) {
  return cfg.template_dir.empty() ? default_template(cfg.task) : load_template(cfg.template_dir, cfg.task);
}

/// Loads <data>/<split>.jsonl in the view of cfg.task. Sentence-level files
/// are expanded to one record per aspect for ATSC; files whose every record
/// names an aspect are read as ATSC records directly.
inline Dataset load_split(const Config& cfg, Split split) {
  const fs::path path = fs::path(cfg.data_dir) / (split == Split::train ? "train.jsonl" : "test.jsonl");
  if (!fs::exists(path)) throw UsageError("dataset file " + path.string() + " not found (run gen-data first)");
  Dataset ds = load_dataset(path, Task::aspe, split);
  if (cfg.task != Task::atsc) {
    ds.task = cfg.task;
    return ds;
  }
  const bool per_aspect =
      !ds.empty() && std::all_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.aspect; });
  Dataset out = per_aspect ? load_dataset(path, Task::atsc, split) : expand_for_atsc(ds);
  out.split = split;
  return out;
}

inline Vocabulary vocabulary_for(const Config& cfg, const Dataset& train, const TemplateSet& tmpl) {
  return build_vocabulary(train, tmpl, std::max(cfg.k_max, cfg.k) + 1);
}

/// Scorer from --scorer, or a fresh warmed-up one.
inline ReferenceScorer scorer_for(const Config& cfg, const Dataset& train, const TemplateSet& tmpl) {
  if (!cfg.scorer_ckpt.empty()) return load_scorer(cfg.scorer_ckpt);
  ReferenceScorer s(vocabulary_for(cfg, train, tmpl), cfg.dim, cfg.max_len);
  s.init_random(cfg.seed);
  warmup_scorer(s, train, cfg, tmpl);
  return s;
}

/// Retriever from --retriever, or a fresh random one.
inline RetrieverState retriever_for(const Config& cfg, const Dataset& train, const TemplateSet& tmpl) {
  if (!cfg.retriever_ckpt.empty()) return load_retriever(cfg.retriever_ckpt);
  RetrieverState r(vocabulary_for(cfg, train, tmpl), cfg.dim_retriever);
  r.init_random(cfg.seed);
  return r;
}

inline const Sample& sample_at(const Dataset& ds, long long id) {
  if (id < 0 || static_cast<std::size_t>(id) >= ds.size())
    throw UsageError("query id " + std::to_string(id) + " out of range [0, " + std::to_string(ds.size()) + ")");
  return ds[static_cast<std::size_t>(id)];
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw UsageError("split must be train or test, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Outputs

inline void note_checkpoint(Invocation& inv, const fs::path& p) { inv.checkpoints[p.filename().string()] = file_sha256(p); }

inline void note_output(Invocation& inv, const fs::path& p) { inv.outputs.push_back(p.filename().string()); }

inline void write_manifest(const Invocation& inv) {
  fs::create_directories(inv.cfg.out_dir);
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config_values(inv.cfg)) cfg[k] = v;
  nlohmann::json j{{"command", inv.command},          {"seed", inv.cfg.seed},
                   {"config", cfg},                   {"args", inv.args},
                   {"checkpoints", inv.checkpoints}, {"outputs", inv.outputs}};
  std::ofstream(fs::path(inv.cfg.out_dir) / "run.json") << j.dump(2) << '\n';
}

inline void write_eval_header(std::ostream& out) {
  out << "mode\ttask\tk\tprecision\trecall\tf1\taccuracy\tparse_failures\n";
}

inline void write_eval_row(std::ostream& out, AblationMode mode, Task task, std::size_t k, const Metrics& m) {
  out << to_string(mode) << '\t' << to_string(task) << '\t' << k << '\t' << m.precision << '\t' << m.recall << '\t'
      << m.f1 << '\t' << m.accuracy << '\t' << m.parse_failures << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands

inline void gen_data(Invocation& inv, std::ostream& out) {
  auto [train, test] = generate_synthetic(inv.count("train"), inv.count("test"), inv.cfg.seed);
  const fs::path dir = inv.cfg.out_dir;
  fs::create_directories(dir);
  save_dataset(dir / "train.jsonl", train);
  save_dataset(dir / "test.jsonl", test);
  note_output(inv, dir / "train.jsonl");
  note_output(inv, dir / "test.jsonl");
  out << "wrote " << train.size() << " train and " << test.size() << " test samples to " << dir.string() << '\n';
}

inline void train_retriever_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const ReferenceScorer scorer = scorer_for(cfg, train, tmpl);
  RetrieverState retriever = retriever_for(cfg, train, tmpl);
  if (!(retriever.vocabulary() == scorer.vocabulary()))
    throw UsageError("scorer and retriever checkpoints use different vocabularies");
  auto log = train_retriever(retriever, train, scorer, cfg, tmpl, {1, cfg.retriever_ckpt.empty()});
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  save_retriever(dir / "retriever.ckpt", retriever);
  note_checkpoint(inv, dir / "retriever.ckpt");
  std::ofstream tsv(dir / "retriever_log.tsv");
  tsv << "epoch\tloss\tseparation\trandom_candidates\n";
  out << "epoch\tloss\tseparation\n";
  for (const auto& r : log) {
    tsv << r.epoch << '\t' << r.loss << '\t' << r.separation << '\t' << r.random_candidates << '\n';
    out << r.epoch << '\t' << r.loss << '\t' << r.separation << '\n';
  }
  note_output(inv, dir / "retriever_log.tsv");
}

inline void finetune_lm_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  ReferenceScorer scorer = scorer_for(cfg, train, tmpl);
  std::vector<LmEpochLog> log;
  if (uses_retrieval(cfg.mode)) {
    if (cfg.retriever_ckpt.empty()) throw UsageError("finetune-lm needs --retriever in mode " + std::string(to_string(cfg.mode)));
    log = finetune_lm(scorer, load_retriever(cfg.retriever_ckpt), train, cfg, tmpl);
  } else {
    log = finetune_lm_for_mode(scorer, cfg.mode, train, cfg, tmpl);
  }
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  save_scorer(dir / "scorer.ckpt", scorer);
  note_checkpoint(inv, dir / "scorer.ckpt");
  out << "epoch\tloss\n";
  for (const auto& r : log) out << r.epoch << '\t' << r.loss << '\n';
}

inline ScheduleState alternate_into(Invocation& inv, const fs::path& dir) {
  const Config& cfg = inv.cfg;
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const Dataset test = load_split(cfg, Split::test);
  ScheduleState st;
  auto resume = inv.args.find("resume-from");
  if (resume != inv.args.end() && !resume->second.empty())
    st = resume_schedule(train, test, cfg, tmpl, dir, inv.count("resume-from"), dir);
  else
    st = run_schedule(train, test, cfg, tmpl, dir);
  for (std::size_t s = 0; s <= st.step; ++s) {
    note_checkpoint(inv, scorer_path(dir, s));
    note_checkpoint(inv, retriever_path(dir, s));
  }
  note_output(inv, dir / "metrics.tsv");
  return st;
}

inline void alternate_cmd(Invocation& inv, std::ostream& out) {
  auto st = alternate_into(inv, inv.cfg.out_dir);
  write_metrics_header(out);
  for (const auto& m : st.metrics) write_metrics_row(out, m);
}

inline void retrieve_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  if (cfg.retriever_ckpt.empty()) throw UsageError("retrieve needs --retriever");
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const Split split = split_from_string(inv.args.at("split"));
  const Dataset queries = split == Split::train ? train : load_split(cfg, Split::test);
  const Sample& q = sample_at(queries, inv.integer("query-id"));
  const RetrieverState r = load_retriever(cfg.retriever_ckpt);
  note_checkpoint(inv, cfg.retriever_ckpt);
  auto index = build_index(r, make_candidates(train));
  std::optional<int> self;
  if (split == Split::train) self = q.id;
  const std::string input = task_input(q, queries.task);
  auto res = retrieve(r, index, Query{input, self}, cfg.m);
  out << "# query " << q.id << ": " << input << '\n';
  if (res.short_pool) out << "# warning: pool holds only " << res.hits.size() << " candidates\n";
  out << "id\tsimilarity\tcandidate\n";
  out << std::setprecision(6);
  for (const auto& h : res.hits) out << h.id << '\t' << h.similarity << '\t' << candidate_text(candidate_by_id(index, h.id)) << '\n';
}

inline void score_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  if (cfg.scorer_ckpt.empty()) throw UsageError("score needs --scorer");
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const Split split = split_from_string(inv.args.at("split"));
  const Dataset queries = split == Split::train ? train : load_split(cfg, Split::test);
  const Candidate q = make_candidate(sample_at(queries, inv.integer("query-id")), queries.task);
  const ReferenceScorer s = load_scorer(cfg.scorer_ckpt);
  note_checkpoint(inv, cfg.scorer_ckpt);
  std::vector<Candidate> ex;
  if (!inv.args.at("example-id").empty()) {
    const auto pool = make_candidates(train);
    const auto e = inv.integer("example-id");
    if (e < 0 || static_cast<std::size_t>(e) >= pool.size()) throw UsageError("example id out of range");
    if (split == Split::train && e == q.id) throw UsageError("a sample cannot be its own example");
    ex.push_back(pool[static_cast<std::size_t>(e)]);
  }
  const std::string prompt = render(tmpl, ex, q.input, ex.size());
  auto ll = s.score(prompt, q.output);
  out << "prompt\t" << prompt << "\ntarget\t" << q.output << '\n' << std::setprecision(10) << "log_likelihood\t" << ll.total
      << "\nper_token";
  for (double v : ll.per_token) out << '\t' << v;
  out << '\n';
}

/// Checkpoints for evaluation: from --scorer/--retriever when given,
/// otherwise trained here with the schedule for cfg.mode.
inline std::pair<ReferenceScorer, RetrieverState> models_for_eval(Invocation& inv, const Dataset& train,
                                                                  const TemplateSet& tmpl) {
  const Config& cfg = inv.cfg;
  if (cfg.scorer_ckpt.empty() && cfg.retriever_ckpt.empty()) {
    auto st = alternate_into(inv, fs::path(cfg.out_dir) / "checkpoints");
    return {st.scorer(), st.retriever()};
  }
  if (cfg.scorer_ckpt.empty()) throw UsageError("--retriever given without --scorer");
  if (cfg.retriever_ckpt.empty() && uses_retrieval(cfg.mode) && cfg.k > 0)
    throw UsageError("mode " + std::string(to_string(cfg.mode)) + " needs --retriever");
  auto s = load_scorer(cfg.scorer_ckpt);
  note_checkpoint(inv, cfg.scorer_ckpt);
  RetrieverState r = retriever_for(cfg, train, tmpl);
  if (!cfg.retriever_ckpt.empty()) note_checkpoint(inv, cfg.retriever_ckpt);
  return {std::move(s), std::move(r)};
}

inline void evaluate_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const Dataset test = load_split(cfg, Split::test);
  auto [scorer, retriever] = models_for_eval(inv, train, tmpl);
  auto index = build_index(retriever, make_candidates(train));
  auto rep = run_inference(scorer, retriever, index, test, cfg.k, cfg.mode, {tmpl, cfg.seed, cfg.gen_len, {}});

  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  {
    std::ofstream tsv(dir / "metrics.tsv");
    write_eval_header(tsv);
    write_eval_row(tsv, cfg.mode, cfg.task, cfg.k, rep.metrics);
  }
  {
    std::ofstream jl(dir / "predictions.jsonl");
    for (const auto& p : rep.predictions) jl << to_json(p).dump() << '\n';
  }
  note_output(inv, dir / "metrics.tsv");
  note_output(inv, dir / "predictions.jsonl");
  write_eval_header(out);
  write_eval_row(out, cfg.mode, cfg.task, cfg.k, rep.metrics);
  if (!rep.fixed_example_ids.empty()) {
    out << "# fixed examples:";
    for (int id : rep.fixed_example_ids) out << ' ' << id;
    out << '\n';
  }
  if (rep.truncated_prompts) out << "# " << rep.truncated_prompts << " prompts exceeded max-len\n";
}

inline void sweep_cmd(Invocation& inv, std::ostream& out) {
  const Config& cfg = inv.cfg;
  const auto tmpl = template_for(cfg);
  const Dataset train = load_split(cfg, Split::train);
  const Dataset test = load_split(cfg, Split::test);
  auto [scorer, retriever] = models_for_eval(inv, train, tmpl);
  auto index = build_index(retriever, make_candidates(train));
  auto rows = k_sweep(scorer, retriever, index, test, cfg.k_max, {tmpl, cfg.seed, cfg.gen_len, {}});
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  std::ofstream tsv(dir / "sweep.tsv");
  for (std::ostream* o : {static_cast<std::ostream*>(&tsv), &out}) {
    *o << "k\tprecision\trecall\tf1\taccuracy\tparse_failures\ttruncated\n";
    for (const auto& r : rows)
      *o << r.k << '\t' << r.metrics.precision << '\t' << r.metrics.recall << '\t' << r.metrics.f1 << '\t'
         << r.metrics.accuracy << '\t' << r.metrics.parse_failures << '\t' << r.truncated() << '\n';
  }
  note_output(inv, dir / "sweep.tsv");
}

inline void dispatch(Invocation& inv, std::ostream& out) {
  const auto& c = inv.command;
  if (c == "gen-data") return gen_data(inv, out);
  if (c == "train-retriever") return train_retriever_cmd(inv, out);
  if (c == "finetune-lm") return finetune_lm_cmd(inv, out);
  if (c == "alternate") return alternate_cmd(inv, out);
  if (c == "retrieve") return retrieve_cmd(inv, out);
  if (c == "score") return score_cmd(inv, out);
  if (c == "evaluate") return evaluate_cmd(inv, out);
  if (c == "sweep") return sweep_cmd(inv, out);
  throw UsageError("unknown subcommand " + c);
}

/// Base config for a preset name: "paper" (published values) or "desk".
inline Config preset(const std::string& name) {
  if (name == "paper") return Config{};
  if (name == "desk") return Config::desk();
  throw UsageError("unknown preset '" + name + "' (expected paper or desk)");
}

}  // namespace cli

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Retrieval-ranked in-context examples for aspect-based sentiment analysis", "exrank"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> keys;
    std::map<std::string, std::string> extras;
    std::string config_file;
    std::string preset = "paper";
  };
  std::map<std::string, Sub> subs;
  for (const auto& [name, extras] : cli::commands()) {
    Sub& sub = subs[name];
    sub.app = app.add_subcommand(name, cli::descriptions().at(name));
    sub.app->add_option("--config", sub.config_file, "flat key = value file or a run.json manifest to replay");
    sub.app->add_option("--preset", sub.preset, "base values: paper | desk")->capture_default_str();
    for (const auto& key : config_keys())
      sub.app->add_option("--" + key.name, sub.keys[key.name], key.help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    for (const auto& e : extras)
      sub.app->add_option("--" + e.name, sub.extras[e.name], e.help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  cli::Invocation inv;
  try {
    for (auto& [name, sub] : subs) {
      if (!sub.app->parsed()) continue;
      inv.command = name;
      inv.cfg = cli::preset(sub.preset);
      nlohmann::json manifest_args;
      if (!sub.config_file.empty()) {
        load_config_file(inv.cfg, sub.config_file);
        if (std::filesystem::path(sub.config_file).extension() == ".json") {
          std::ifstream in(sub.config_file);
          auto j = nlohmann::json::parse(in);
          if (j.contains("args") && j.value("command", name) == name) manifest_args = j["args"];
        }
      }
      for (const auto& key : config_keys())
        if (sub.app->count("--" + key.name) > 0) set_config_value(inv.cfg, key.name, sub.keys[key.name]);
      inv.cfg.validate();
      for (const auto& e : cli::commands().at(name)) {
        std::string v = e.fallback;
        if (manifest_args.contains(e.name)) v = manifest_args[e.name].get<std::string>();
        if (sub.app->count("--" + e.name) > 0) v = sub.extras[e.name];
        inv.args[e.name] = v;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    cli::dispatch(inv, out);
    cli::write_manifest(inv);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace exrank
