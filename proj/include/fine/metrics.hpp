#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fine/editor.hpp"
#include "fine/model.hpp"
#include "fine/records.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

// Fraction of `expected` positions where the teacher-forced argmax over prompt ++ expected
// equals the expected token. `prompt` includes <bos>. Throws InputError if expected is empty.
template <typename T>
double token_argmax_accuracy(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                             std::span<const TokenId> expected);

// Greedy tokens after `prompt` (prompt excluded): at most max_new, stopping after <eos>.
template <typename T>
std::vector<TokenId> greedy_continuation(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                                         std::size_t max_new);

// Teacher-forces `continuation` after `prompt` through both models and returns the fraction of
// continuation positions where their argmax tokens agree. 1 when continuation is empty.
template <typename T>
double argmax_agreement(const ModelParameters<T>& base, const ModelParameters<T>& edited,
                        std::span<const TokenId> prompt, std::span<const TokenId> continuation);

// True when `needle` occurs contiguously in `haystack`.
bool contains_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle);

struct TextFluency {
  double bigram_entropy = 0;
  double trigram_entropy = 0;
  double score = 0;  // 0.5·H₂ + 0.5·H₃
};

struct FluencyReport {
  std::vector<TextFluency> texts;  // one per scored text
  std::size_t excluded = 0;        // texts shorter than three words
  double mean_bigram = 0;
  double mean_trigram = 0;
  double mean_score = 0;
};

// Base-2 entropy of the empirical n-gram distribution of `words`. Requires words.size() >= n.
double ngram_entropy(std::span<const std::string> words, std::size_t n);

FluencyReport fluency(std::span<const std::string> texts);

struct MetricValue {
  double mean = 0;
  double ci = 0;  // 95% half-width
  std::size_t n = 0;
};

// Normal-approximation interval: 1.96 · sample sd / √n (0 when n < 2).
MetricValue summarize(std::span<const double> values);
// Percentile bootstrap: half the width of the central 95% interval of resampled means.
MetricValue summarize_bootstrap(std::span<const double> values, std::size_t resamples, std::uint64_t seed);

struct EvalOptions {
  std::size_t locality_length = 10;  // greedy continuation cap for locality probes
  std::size_t fluency_length = 20;   // greedy continuation cap for fluency texts
  std::size_t jobs = 1;
  bool bootstrap = false;
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
};

// Per-probe values for one record.
struct RecordMetrics {
  std::string id;
  double edit_success = 0;
  double edit_success_exact = 0;
  std::vector<double> saa, lga, ra;
  std::vector<double> saa_exact, lga_exact, ra_exact;
  std::vector<double> rsa, fa;
  std::vector<double> over_edited, unchanged;  // 0/1 per locality probe (rsa then fa)
  std::string fluency_text;                    // prompt plus edited-model continuation

  nlohmann::json to_json() const;
};

struct MetricsReport {
  std::size_t n_records = 0;
  std::optional<MetricValue> edit_success, saa, lga, ra, rsa, fa;
  std::optional<MetricValue> edit_success_exact, saa_exact, lga_exact, ra_exact;
  std::optional<MetricValue> fluency;
  std::size_t fluency_excluded = 0;
  std::optional<MetricValue> over_editing_rate, unchanging_rate;

  // Absent metrics are written as null.
  nlohmann::json to_json() const;
  std::string to_table() const;
};

template <typename T>
RecordMetrics evaluate_record(const ModelParameters<T>& base, const ModelParameters<T>& edited,
                              const Tokenizer& tokenizer, const EvalRecord& record, const EvalOptions& options);

MetricsReport aggregate(std::span<const RecordMetrics> per_record, const EvalOptions& options);

// Every record evaluated against one shared edited model.
template <typename T>
MetricsReport evaluate(const ModelParameters<T>& base, const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                       const std::vector<EvalRecord>& records, const EvalOptions& options,
                       std::vector<RecordMetrics>* per_record = nullptr);

struct PerRecordRun {
  std::vector<RecordMetrics> metrics;
  std::vector<EditReport> reports;
  MetricsReport summary;
};

// Each record edited independently from `base`, then evaluated on its own edited model.
// Runs on options.jobs threads; results are identical for any job count.
template <typename T>
PerRecordRun evaluate_per_record(const ModelParameters<T>& base, const Tokenizer& tokenizer,
                                 const std::vector<EvalRecord>& records, const EditConfig& config,
                                 const EvalOptions& options);

// Convenience wrappers over evaluate_record.
template <typename T>
double over_editing_rate(const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                         const std::vector<EvalRecord>& records, std::size_t max_new = 10);
template <typename T>
double unchanging_rate(const ModelParameters<T>& base, const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                       const std::vector<EvalRecord>& records, std::size_t max_new = 10);

// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2). Ties dropped.
double sign_test_p_value(std::size_t wins, std::size_t losses);

}  // namespace fine
