#include "run_config.hpp"

#include <fstream>

#include "fine/error.hpp"

namespace fine::cli {

namespace {

template <typename Fn>
void each_key(const nlohmann::json& j, const std::string& section, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (!fn(key, value)) throw ConfigError(section + ": unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const PretrainOptions& o) {
  return {{"steps", o.steps},
          {"batch_size", o.batch_size},
          {"lr", o.lr},
          {"min_lr_ratio", o.min_lr_ratio},
          {"warmup_steps", o.warmup_steps},
          {"weight_decay", o.weight_decay},
          {"label_smoothing", o.label_smoothing},
          {"seed", o.seed},
          {"eval_every", o.eval_every}};
}

PretrainOptions pretrain_options_from_json(const nlohmann::json& j) {
  PretrainOptions o;
  each_key(j, "pretrain config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "steps") o.steps = v.get<std::size_t>();
    else if (key == "batch_size") o.batch_size = v.get<std::size_t>();
    else if (key == "lr") o.lr = v.get<double>();
    else if (key == "min_lr_ratio") o.min_lr_ratio = v.get<double>();
    else if (key == "warmup_steps") o.warmup_steps = v.get<std::size_t>();
    else if (key == "weight_decay") o.weight_decay = v.get<double>();
    else if (key == "label_smoothing") o.label_smoothing = v.get<double>();
    else if (key == "seed") o.seed = v.get<std::uint64_t>();
    else if (key == "eval_every") o.eval_every = v.get<std::size_t>();
    else return false;
    return true;
  });
  return o;
}

nlohmann::json to_json(const EvalOptions& o) {
  return {{"locality_length", o.locality_length},
          {"fluency_length", o.fluency_length},
          {"jobs", o.jobs},
          {"bootstrap", o.bootstrap},
          {"bootstrap_resamples", o.bootstrap_resamples},
          {"seed", o.seed}};
}

EvalOptions eval_options_from_json(const nlohmann::json& j) {
  EvalOptions o;
  each_key(j, "eval config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "locality_length") o.locality_length = v.get<std::size_t>();
    else if (key == "fluency_length") o.fluency_length = v.get<std::size_t>();
    else if (key == "jobs") o.jobs = v.get<std::size_t>();
    else if (key == "bootstrap") o.bootstrap = v.get<bool>();
    else if (key == "bootstrap_resamples") o.bootstrap_resamples = v.get<std::size_t>();
    else if (key == "seed") o.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return o;
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"precision", to_string(precision)},
          {"model", model.to_json()},
          {"pretrain", cli::to_json(pretrain)},
          {"edit", edit.to_json()},
          {"eval", cli::to_json(eval)},
          {"dataset", {{"n_facts", dataset.n_facts}, {"n_edits", dataset.n_edits}}},
          {"paths",
           {{"checkpoint", paths.checkpoint},
            {"corpus", paths.corpus},
            {"records", paths.records},
            {"out", paths.out}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  each_key(j, "run config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "precision") c.precision = parse_precision(v.get<std::string>());
    else if (key == "model") c.model = ModelConfig::from_json(v);
    else if (key == "pretrain") c.pretrain = pretrain_options_from_json(v);
    else if (key == "edit") c.edit = EditConfig::from_json(v);
    else if (key == "eval") c.eval = eval_options_from_json(v);
    else if (key == "dataset") {
      each_key(v, "dataset config", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "n_facts") c.dataset.n_facts = x.get<std::size_t>();
        else if (k == "n_edits") c.dataset.n_edits = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "paths") {
      each_key(v, "paths config", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "checkpoint") c.paths.checkpoint = x.get<std::string>();
        else if (k == "corpus") c.paths.corpus = x.get<std::string>();
        else if (k == "records") c.paths.records = x.get<std::string>();
        else if (k == "out") c.paths.out = x.get<std::string>();
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  return c;
}

void RunConfig::apply_seed() {
  model.init_seed = seed;
  pretrain.seed = seed;
  edit.seed = seed;
  eval.seed = seed;
  dataset.seed = seed;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace fine::cli
