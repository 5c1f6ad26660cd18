#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fine/editor.hpp"

namespace fine {

struct PortabilityProbe {
  std::string prompt;
  std::string ground_truth;
};

struct LocalityProbe {
  std::string prompt;
  std::string ground_truth;  // informational; locality compares against the base model
};

// One edit with its probes, in the KnowEdit-style JSONL layout:
// {subject, prompt, ground_truth, target_new,
//  portability: {Subject_Aliasing, Logical_Generalization, Reasoning: [{prompt, ground_truth}]},
//  locality: {Relation_Specificity, Forgetfulness: [{prompt}]}}
// plus optional "id" and "relation".
struct EvalRecord {
  EditRequest edit;
  std::vector<PortabilityProbe> saa, lga, ra;
  std::vector<LocalityProbe> rsa, fa;

  const std::string& id() const { return edit.id; }

  nlohmann::json to_json() const;
  // Throws InputError naming a missing or mistyped field.
  static EvalRecord from_json(const nlohmann::json& j);
};

// One record per non-blank line. Errors cite `source` and the 1-based line number.
std::vector<EvalRecord> parse_records(std::istream& in, const std::string& source);
std::vector<EvalRecord> load_records(const std::filesystem::path& path);

// One compact JSON object per line.
std::string records_to_jsonl(const std::vector<EvalRecord>& records);
void save_records(const std::vector<EvalRecord>& records, const std::filesystem::path& path);

}  // namespace fine
