#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fine/model.hpp"
#include "fine/records.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

struct DatasetOptions {
  std::uint64_t seed = 0;
  std::size_t n_facts = 200;  // four relations per subject: a multiple of 4, at least 8
  std::size_t n_edits = 50;
};

// A statement the corpus teaches: `prompt` is followed by `object` in some corpus line.
struct FactStatement {
  std::string prompt;
  std::string object;
};

struct SyntheticDataset {
  std::vector<std::string> corpus;       // one sentence per line
  std::vector<FactStatement> facts;      // every relation fact, subject and alias forms
  std::vector<EvalRecord> records;       // counterfactual edits with probes
};

// Deterministic per seed. Entities are invented words; relations are capital, language,
// leader (two-word objects) and a one-to-many "exports". Throws ConfigError when
// n_edits exceeds n_facts or the editable facts, or n_facts is not a multiple of 4 that is at least 8.
SyntheticDataset generate_synthetic_dataset(const DatasetOptions& options);

// Writes corpus.txt, records.jsonl and facts.jsonl into `dir` (created if needed).
void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir);

std::vector<std::string> read_corpus(const std::filesystem::path& path);
std::vector<FactStatement> load_facts(const std::filesystem::path& path);

// Fraction of facts whose object tokens are all argmax-correct under teacher forcing.
template <typename T>
double fact_recall(const ModelParameters<T>& params, const Tokenizer& tokenizer, const std::vector<FactStatement>& facts);

}  // namespace fine
