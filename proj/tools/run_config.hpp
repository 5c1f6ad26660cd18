#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "fine/checkpoint.hpp"
#include "fine/dataset.hpp"
#include "fine/editor.hpp"
#include "fine/metrics.hpp"
#include "fine/model.hpp"
#include "fine/pretrain.hpp"

namespace fine::cli {

struct Paths {
  std::string checkpoint;
  std::string corpus;
  std::string records;
  std::string out;
};

// Everything a command needs. Loaded from --config, then overridden by flags. The
// top-level seed is the only source of randomness: apply_seed copies it into every
// component before a command runs.
struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  ModelConfig model;
  PretrainOptions pretrain;
  EditConfig edit;
  EvalOptions eval;
  DatasetOptions dataset;
  Paths paths;

  nlohmann::json to_json() const;
  // Rejects unknown keys at every level; missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  void apply_seed();
};

nlohmann::json to_json(const PretrainOptions& o);
PretrainOptions pretrain_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalOptions& o);
EvalOptions eval_options_from_json(const nlohmann::json& j);

}  // namespace fine::cli
