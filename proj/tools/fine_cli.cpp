// fine: dataset generation, pretraining, localization, editing, inspection,
// evaluation and scaling runs over the desk-scale model.
//
// Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
// Errors go to stderr as one JSON line: {"error": kind, "message": text}.

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fine/checkpoint.hpp"
#include "fine/dataset.hpp"
#include "fine/editor.hpp"
#include "fine/error.hpp"
#include "fine/locator.hpp"
#include "fine/log.hpp"
#include "fine/metrics.hpp"
#include "fine/pretrain.hpp"
#include "fine/records.hpp"
#include "run_config.hpp"

namespace fine::cli {
namespace {

using nlohmann::json;

// Flag storage. Each flag overrides the config only when given.
struct Flags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string precision;
  std::string out;
  std::string report;

  std::string checkpoint, corpus, records, facts, request, edited, delta, out_checkpoint, timing;
  std::size_t n_facts = 0, n_edits = 0;

  std::size_t layers = 0, hidden = 0, intermediate = 0, heads = 0, vocab = 0, max_seq_len = 0;
  std::size_t steps = 0, batch_size = 0;
  double pretrain_lr = 0, weight_decay = 0, label_smoothing = 0;

  std::size_t k = 0, lf = 0, max_steps = 0;
  double alpha = 0, beta = 0, lr = 0, early_stop = 0;
  std::string selection;

  std::size_t jobs = 0, top = 5;
  bool bootstrap = false, per_record = false;
  std::vector<std::size_t> sizes;
};

bool given(const CLI::App* app, const char* name) {
  const CLI::Option* opt = app->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// Report to stdout and, when requested, to a file.
void emit(const json& report, const std::string& path) {
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  if (!path.empty()) write_text(path, text);
}

json read_json_arg(const std::string& arg, const char* what) {
  std::string text = arg;
  if (arg.empty() || arg.front() != '{') {
    std::ifstream in(arg);
    if (!in) throw IoError(std::string("cannot open ") + what + " " + arg);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string(what) + ": " + e.what());
  }
}

std::string require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required ") + flag);
  return value;
}

template <typename T>
Checkpoint<T> load_as(const std::string& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (info.precision == precision_of<T>()) return load_checkpoint<T>(path);
  if (info.precision == Precision::f32) {
    auto c = load_checkpoint<float>(path);
    return {convert_parameters<T>(c.params), std::move(c.tokenizer), std::move(c.metadata)};
  }
  auto c = load_checkpoint<double>(path);
  return {convert_parameters<T>(c.params), std::move(c.tokenizer), std::move(c.metadata)};
}

double peak_rss_kb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<double>(usage.ru_maxrss);
}

json header(const char* command, const RunConfig& config) {
  return {{"command", command}, {"seed", config.seed}, {"precision", to_string(config.precision)}};
}

void apply_flags(const CLI::App* app, const Flags& f, RunConfig& c) {
  if (given(app, "--seed")) c.seed = f.seed;
  if (given(app, "--precision")) c.precision = parse_precision(f.precision);
  if (given(app, "--checkpoint")) c.paths.checkpoint = f.checkpoint;
  if (given(app, "--corpus")) c.paths.corpus = f.corpus;
  if (given(app, "--records")) c.paths.records = f.records;
  if (given(app, "--out")) c.paths.out = f.out;
  if (given(app, "--n-facts")) c.dataset.n_facts = f.n_facts;
  if (given(app, "--n-edits")) c.dataset.n_edits = f.n_edits;
  if (given(app, "--layers")) c.model.num_layers = f.layers;
  if (given(app, "--hidden")) c.model.hidden_size = f.hidden;
  if (given(app, "--intermediate")) c.model.intermediate_size = f.intermediate;
  if (given(app, "--heads")) c.model.num_heads = f.heads;
  if (given(app, "--vocab-size")) c.model.vocab_size = f.vocab;
  if (given(app, "--max-seq-len")) c.model.max_seq_len = f.max_seq_len;
  if (given(app, "--steps")) c.pretrain.steps = f.steps;
  if (given(app, "--batch-size")) c.pretrain.batch_size = f.batch_size;
  if (given(app, "--pretrain-lr")) c.pretrain.lr = f.pretrain_lr;
  if (given(app, "--weight-decay")) c.pretrain.weight_decay = f.weight_decay;
  if (given(app, "--label-smoothing")) c.pretrain.label_smoothing = f.label_smoothing;
  if (given(app, "--k")) c.edit.k = f.k;
  if (given(app, "--alpha")) c.edit.alpha = f.alpha;
  if (given(app, "--beta")) c.edit.beta = f.beta;
  if (given(app, "--lf")) c.edit.frozen_layers = f.lf;
  if (given(app, "--lr")) c.edit.lr = f.lr;
  if (given(app, "--max-steps")) c.edit.max_steps = f.max_steps;
  if (given(app, "--early-stop")) c.edit.early_stop_p = f.early_stop;
  if (given(app, "--selection")) {
    c.edit.selection = f.selection == "random" ? NeuronSelection::random : NeuronSelection::located;
  }
  if (given(app, "--jobs")) c.eval.jobs = f.jobs;
  if (given(app, "--bootstrap")) c.eval.bootstrap = f.bootstrap;
  c.apply_seed();
}

// ---- commands -------------------------------------------------------------

int cmd_dataset(const RunConfig& c) {
  const std::string dir = c.paths.out.empty() ? "data" : c.paths.out;
  const SyntheticDataset ds = generate_synthetic_dataset(c.dataset);
  write_dataset(ds, dir);
  json report = header("dataset", c);
  report["n_facts"] = c.dataset.n_facts;
  report["n_edits"] = c.dataset.n_edits;
  report["corpus_lines"] = ds.corpus.size();
  report["records"] = ds.records.size();
  report["vocabulary"] = Tokenizer::from_lines(ds.corpus).size();
  report["files"] = {dir + "/corpus.txt", dir + "/records.jsonl", dir + "/facts.jsonl"};
  emit(report, "");
  return 0;
}

template <typename T>
int cmd_pretrain(const RunConfig& c, const Flags& f) {
  const auto corpus = read_corpus(require_path(c.paths.corpus, "--corpus"));
  const std::string out = require_path(c.paths.out, "--out");
  Tokenizer tokenizer = Tokenizer::from_lines(corpus);
  if (tokenizer.size() > c.model.vocab_size) {
    throw ConfigError("corpus vocabulary (" + std::to_string(tokenizer.size()) + ") exceeds vocab_size " +
                      std::to_string(c.model.vocab_size));
  }
  auto params = init_parameters<T>(c.model);
  const auto sequences = tokenize_corpus(tokenizer, corpus);
  log_info("pretraining on " + std::to_string(sequences.size()) + " sequences for " + std::to_string(c.pretrain.steps) +
           " steps");
  const PretrainReport pr = pretrain(params, sequences, c.pretrain);

  json report = header("pretrain", c);
  report["model"] = c.model.to_json();
  report["pretrain"] = to_json(c.pretrain);
  report["initial_loss"] = pr.initial_loss;
  report["final_loss"] = pr.final_loss;
  json curve = json::array();
  for (const auto& p : pr.loss_curve) curve.push_back({{"step", p.step}, {"loss", p.loss}});
  report["loss_curve"] = curve;
  if (!f.facts.empty()) report["fact_recall"] = fact_recall(params, tokenizer, load_facts(f.facts));
  report["checkpoint"] = out;

  Checkpoint<T> ck{std::move(params), std::move(tokenizer), {{"pretrain", to_json(c.pretrain)}, {"seed", c.seed}}};
  save_checkpoint(ck, out);
  emit(report, f.report);
  return 0;
}

std::vector<EditRequest> requests_from(const RunConfig& c, const Flags& f) {
  if (!f.request.empty()) {
    const json j = read_json_arg(f.request, "request");
    if (j.is_array()) {
      std::vector<EditRequest> out;
      for (const auto& x : j) out.push_back(EditRequest::from_json(x));
      return out;
    }
    return {EditRequest::from_json(j)};
  }
  if (!c.paths.records.empty()) {
    std::vector<EditRequest> out;
    for (const auto& r : load_records(c.paths.records)) out.push_back(r.edit);
    return out;
  }
  throw UsageError("give --request or --records");
}

template <typename T>
int cmd_locate(const RunConfig& c, const Flags& f) {
  const auto ck = load_as<T>(require_path(c.paths.checkpoint, "--checkpoint"));
  const auto requests = requests_from(c, f);
  const ProjectionCache<T> cache(ck.params);
  std::vector<LocalizationResult> results;
  json items = json::array();
  for (const auto& r : requests) {
    const EncodedRequest enc = encode_request(ck.tokenizer, r);
    if (enc.target_true.empty()) throw InputError("request " + r.id + " has no ground_truth to locate");
    results.push_back(locate(ck.params, std::span<const TokenId>(enc.prompt), std::span<const TokenId>(enc.target_true),
                             c.edit.k, c.edit.frozen_layers, &cache));
    items.push_back(to_json(results.back(), ck.tokenizer, r.id));
  }
  json report = header("locate", c);
  report["k"] = c.edit.k;
  report["frozen_layers"] = c.edit.frozen_layers;
  report["results"] = items;
  report["layer_histogram"] = neuron_layer_histogram(results, ck.params.config.num_layers);
  emit(report, c.paths.out);
  return 0;
}

template <typename T>
int cmd_inspect(const RunConfig& c, const Flags& f) {
  const auto ck = load_as<T>(require_path(c.paths.checkpoint, "--checkpoint"));
  const auto requests = requests_from(c, f);
  const ProjectionCache<T> cache(ck.params);
  json items = json::array();
  for (const auto& r : requests) {
    const EncodedRequest enc = encode_request(ck.tokenizer, r);
    if (enc.target_true.empty()) throw InputError("request " + r.id + " has no ground_truth to locate");
    const auto loc = locate(ck.params, std::span<const TokenId>(enc.prompt), std::span<const TokenId>(enc.target_true),
                            c.edit.k, c.edit.frozen_layers, &cache);
    // Best score per neuron across the object tokens, listed in rank order.
    std::vector<ContributionScore> best;
    for (const auto& t : loc.per_token) {
      for (const auto& s : t.top) {
        auto it = std::find_if(best.begin(), best.end(), [&](const auto& b) { return b.neuron == s.neuron; });
        if (it == best.end()) best.push_back(s);
        else if (ranks_before(s, *it)) *it = s;
      }
    }
    std::sort(best.begin(), best.end(), ranks_before);
    if (requests.size() > 1) std::cout << "# " << r.id << '\n';
    json rows = json::array();
    for (const auto& s : best) {
      const auto tokens = inspect_neuron(ck.params, s.neuron, f.top);
      std::string list;
      json words = json::array();
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& w = tokens[i].token < ck.tokenizer.size() ? ck.tokenizer.word(tokens[i].token) : "<unused>";
        list += (i ? ", " : "") + w;
        words.push_back(w);
      }
      char score[32];
      std::snprintf(score, sizeof score, "%.4f", s.score);
      std::cout << to_string(s.neuron) << "  " << score << "  [" << list << "]\n";
      rows.push_back({{"neuron", to_string(s.neuron)}, {"score", s.score}, {"top_tokens", words}});
    }
    items.push_back({{"edit_id", r.id}, {"neurons", rows}});
  }
  if (!c.paths.out.empty()) {
    json report = header("inspect", c);
    report["top"] = f.top;
    report["results"] = items;
    write_text(c.paths.out, report.dump(2) + "\n");
  }
  return 0;
}

template <typename T>
int cmd_edit(const RunConfig& c, const Flags& f) {
  auto ck = load_as<T>(require_path(c.paths.checkpoint, "--checkpoint"));
  const auto requests = requests_from(c, f);
  if (requests.size() != 1) throw UsageError("edit takes exactly one request; use scale for sequential runs");
  const auto result = edit(ck.params, ck.tokenizer, requests[0], c.edit);

  json report = header("edit", c);
  report["edit"] = c.edit.to_json();
  report["request"] = requests[0].to_json();
  report["report"] = result.report.to_json();
  report["localization"] = to_json(result.localization, ck.tokenizer, requests[0].id);
  log_info("edit " + requests[0].id + ": " + std::to_string(result.report.steps) + " steps, P(o*) " +
           std::to_string(result.report.final.target_probability));
  if (!c.paths.out.empty()) {
    save_delta(result.delta, c.paths.out);
    report["delta"] = c.paths.out;
  }
  if (!f.out_checkpoint.empty()) {
    ck.metadata["edits"].push_back(requests[0].to_json());
    save_checkpoint(Checkpoint<T>{result.edited, ck.tokenizer, ck.metadata}, f.out_checkpoint);
    report["checkpoint"] = f.out_checkpoint;
  }
  emit(report, f.report);
  return 0;
}

template <typename T>
int cmd_eval(const RunConfig& c, const Flags& f) {
  const auto base = load_as<T>(require_path(c.paths.checkpoint, "--checkpoint"));
  const auto records = load_records(require_path(c.paths.records, "--records"));
  if (records.empty()) throw InputError("no records in " + c.paths.records);
  const int modes = !f.edited.empty() + !f.delta.empty() + f.per_record;
  if (modes > 1) throw UsageError("choose at most one of --edited, --delta, --per-record");

  json report = header("eval", c);
  report["eval"] = to_json(c.eval);
  MetricsReport summary;
  std::vector<RecordMetrics> per_record;
  if (f.per_record) {
    report["mode"] = "per_record";
    report["edit"] = c.edit.to_json();
    auto run = evaluate_per_record(base.params, base.tokenizer, records, c.edit, c.eval);
    summary = run.summary;
    per_record = std::move(run.metrics);
    json reports = json::array();
    for (const auto& r : run.reports) reports.push_back(r.to_json());
    report["edit_reports"] = reports;
  } else {
    ModelParameters<T> edited = base.params;
    if (!f.edited.empty()) {
      report["mode"] = "shared";
      edited = load_as<T>(f.edited).params;
    } else if (!f.delta.empty()) {
      report["mode"] = "delta";
      edited = apply_delta(base.params, load_delta<T>(f.delta));
    } else {
      report["mode"] = "unedited";
    }
    summary = evaluate(base.params, edited, base.tokenizer, records, c.eval, &per_record);
  }
  report["metrics"] = summary.to_json();
  json rows = json::array();
  for (const auto& m : per_record) rows.push_back(m.to_json());
  report["per_record"] = rows;
  log_info("\n" + summary.to_table());
  emit(report, c.paths.out);
  return 0;
}

template <typename T>
int cmd_scale(const RunConfig& c, const Flags& f) {
  const auto base = load_as<T>(require_path(c.paths.checkpoint, "--checkpoint"));
  const auto records = load_records(require_path(c.paths.records, "--records"));
  std::vector<std::size_t> sizes = f.sizes.empty() ? std::vector<std::size_t>{10, 25, 50} : f.sizes;
  for (std::size_t s : sizes) {
    if (s == 0 || s > records.size()) {
      throw ConfigError("batch size " + std::to_string(s) + " outside [1, " + std::to_string(records.size()) + "]");
    }
  }

  json report = header("scale", c);
  report["edit"] = c.edit.to_json();
  report["sizes"] = sizes;
  json rows = json::array();
  json timing = {{"sizes", json::array()}};
  for (std::size_t n : sizes) {
    const std::vector<EvalRecord> subset(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<EditRequest> requests;
    for (const auto& r : subset) requests.push_back(r.edit);
    const auto t0 = std::chrono::steady_clock::now();
    const auto multi = edit_many(base.params, base.tokenizer, requests, c.edit);
    const double edit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const MetricsReport m = evaluate(base.params, multi.edited, base.tokenizer, subset, c.eval);

    std::size_t failed = 0, early = 0, steps = 0;
    for (const auto& r : multi.reports) {
      failed += !r.error.empty();
      early += r.early_stopped;
      steps += r.steps;
    }
    rows.push_back({{"size", n},
                    {"metrics", m.to_json()},
                    {"failed_edits", failed},
                    {"early_stopped", early},
                    {"mean_steps", static_cast<double>(steps) / static_cast<double>(n)}});
    timing["sizes"].push_back({{"size", n}, {"edit_seconds", edit_seconds}, {"peak_rss_kb", peak_rss_kb()}});
    log_info("size " + std::to_string(n) + ": edit_success " + std::to_string(m.edit_success->mean) + " in " +
             std::to_string(edit_seconds) + " s");
  }
  report["rows"] = rows;
  emit(report, c.paths.out);

  // Wall time and memory vary run to run, so they live beside the report.
  std::string timing_path = f.timing;
  if (timing_path.empty() && !c.paths.out.empty()) timing_path = c.paths.out + ".timing.json";
  if (!timing_path.empty()) write_text(timing_path, timing.dump(2) + "\n");
  else log_info("timing " + timing.dump());
  return 0;
}

template <typename T>
int dispatch(const std::string& name, const RunConfig& c, const Flags& f) {
  if (name == "pretrain") return cmd_pretrain<T>(c, f);
  if (name == "locate") return cmd_locate<T>(c, f);
  if (name == "inspect") return cmd_inspect<T>(c, f);
  if (name == "edit") return cmd_edit<T>(c, f);
  if (name == "eval") return cmd_eval<T>(c, f);
  return cmd_scale<T>(c, f);
}

void print_error(const char* kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Neuron-level knowledge editing on a desk-scale transformer", "fine"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;

  app.add_option("--config", f.config_path, "JSON run config; flags override its values");
  app.add_option("--seed", f.seed, "Seed for every random choice in the run (default 0)");
  app.add_option("--precision", f.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));

  auto* dataset = app.add_subcommand("dataset", "Generate the synthetic fact corpus and edit records");
  dataset->add_option("--n-facts", f.n_facts, "Number of facts, a multiple of 4 (default 200)");
  dataset->add_option("--n-edits", f.n_edits, "Number of counterfactual edit records (default 50)");
  dataset->add_option("--out", f.out, "Output directory (default data)");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train a model on a corpus and save a checkpoint");
  pretrain_cmd->add_option("--corpus", f.corpus, "Corpus file, one sentence per line");
  pretrain_cmd->add_option("--facts", f.facts, "facts.jsonl used to report fact recall");
  pretrain_cmd->add_option("--out", f.out, "Checkpoint to write");
  pretrain_cmd->add_option("--report", f.report, "Also write the JSON report here");
  pretrain_cmd->add_option("--steps", f.steps, "Optimizer steps");
  pretrain_cmd->add_option("--batch-size", f.batch_size, "Sequences per step");
  pretrain_cmd->add_option("--pretrain-lr", f.pretrain_lr, "Peak learning rate");
  pretrain_cmd->add_option("--weight-decay", f.weight_decay, "Decoupled weight decay on matrices");
  pretrain_cmd->add_option("--label-smoothing", f.label_smoothing, "Label smoothing of the training targets (default 0.1)");
  pretrain_cmd->add_option("--layers", f.layers, "Transformer layers");
  pretrain_cmd->add_option("--hidden", f.hidden, "Hidden size");
  pretrain_cmd->add_option("--intermediate", f.intermediate, "FFN intermediate size");
  pretrain_cmd->add_option("--heads", f.heads, "Attention heads");
  pretrain_cmd->add_option("--vocab-size", f.vocab, "Vocabulary capacity");
  pretrain_cmd->add_option("--max-seq-len", f.max_seq_len, "Context length");

  auto add_request = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
    cmd->add_option("--request", f.request, "Edit request: a JSON file or inline JSON object");
    cmd->add_option("--records", f.records, "Records JSONL (used when --request is absent)");
  };
  auto add_locate = [&](CLI::App* cmd) {
    cmd->add_option("--k", f.k, "Neurons per object token (default 5)");
    cmd->add_option("--lf", f.lf, "Frozen final layers (default 3)");
  };
  auto add_edit = [&](CLI::App* cmd) {
    add_locate(cmd);
    cmd->add_option("--alpha", f.alpha, "KL weight (default 1)");
    cmd->add_option("--beta", f.beta, "Repetition penalty weight (default 10)");
    cmd->add_option("--lr", f.lr, "Adam learning rate for the row updates (default 1e-3)");
    cmd->add_option("--max-steps", f.max_steps, "Optimization step cap (default 50)");
    cmd->add_option("--early-stop", f.early_stop, "Stop once P(o*) reaches this (default 0.9)");
    cmd->add_option("--selection", f.selection, "Neuron selection")->check(CLI::IsMember({"located", "random"}));
  };

  auto* locate_cmd = app.add_subcommand("locate", "Rank neurons by contribution to the true object");
  add_request(locate_cmd);
  add_locate(locate_cmd);
  locate_cmd->add_option("--out", f.out, "Also write the JSON report here");

  auto* inspect_cmd = app.add_subcommand("inspect", "Show located neurons with their top tokens");
  add_request(inspect_cmd);
  add_locate(inspect_cmd);
  inspect_cmd->add_option("--top", f.top, "Tokens shown per neuron (default 5)");
  inspect_cmd->add_option("--out", f.out, "Write a JSON report here");

  auto* edit_cmd = app.add_subcommand("edit", "Apply one knowledge edit");
  add_request(edit_cmd);
  add_edit(edit_cmd);
  edit_cmd->add_option("--out", f.out, "Write the learned delta here");
  edit_cmd->add_option("--out-checkpoint", f.out_checkpoint, "Write the edited checkpoint here");
  edit_cmd->add_option("--report", f.report, "Also write the JSON report here");

  auto* eval_cmd = app.add_subcommand("eval", "Score edits on records");
  eval_cmd->add_option("--checkpoint", f.checkpoint, "Base checkpoint");
  eval_cmd->add_option("--records", f.records, "Records JSONL");
  eval_cmd->add_option("--edited", f.edited, "Edited checkpoint shared by every record");
  eval_cmd->add_option("--delta", f.delta, "Delta applied to the base and shared by every record");
  eval_cmd->add_flag("--per-record", f.per_record, "Edit each record independently from the base");
  add_edit(eval_cmd);
  eval_cmd->add_option("--jobs", f.jobs, "Worker threads (default 1)");
  eval_cmd->add_flag("--bootstrap", f.bootstrap, "Percentile bootstrap intervals instead of normal");
  eval_cmd->add_option("--out", f.out, "Also write the JSON report here");

  auto* scale_cmd = app.add_subcommand("scale", "Sequential edits over increasing batch sizes");
  scale_cmd->add_option("--checkpoint", f.checkpoint, "Base checkpoint");
  scale_cmd->add_option("--records", f.records, "Records JSONL; the first N are edited per size");
  scale_cmd->add_option("--sizes", f.sizes, "Batch sizes (default 10 25 50)")->delimiter(',');
  add_edit(scale_cmd);
  scale_cmd->add_option("--out", f.out, "Also write the JSON report here");
  scale_cmd->add_option("--timing", f.timing, "Timing sidecar (default <out>.timing.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    RunConfig config = f.config_path.empty() ? RunConfig{} : RunConfig::load(f.config_path);
    apply_flags(&app, f, config);
    apply_flags(sub, f, config);
    if (name == "dataset") return cmd_dataset(config);
    return config.precision == Precision::f32 ? dispatch<float>(name, config, f) : dispatch<double>(name, config, f);
  } catch (const ConfigError& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const UsageError& e) {
    print_error(e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}

}  // namespace fine::cli

int main(int argc, char** argv) { return fine::cli::run(argc, argv); }
