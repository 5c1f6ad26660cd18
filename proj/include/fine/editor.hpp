#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fine/autodiff.hpp"
#include "fine/locator.hpp"
#include "fine/model.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

// One knowledge update (s, r, o -> o*). `prompt` is the text of p(s, r); p(s, r, o*) is
// the prompt followed by the new object.
struct EditRequest {
  std::string id;
  std::string subject;
  std::string relation;
  std::string prompt;
  std::string target_true;
  std::string target_new;

  nlohmann::json to_json() const;
  // Accepts {prompt, target_new} plus optional subject, relation, ground_truth/target_true, id.
  static EditRequest from_json(const nlohmann::json& j);
};

// Token ids of one request: prompt starts with <bos>.
struct EncodedRequest {
  std::vector<TokenId> prompt;
  std::vector<TokenId> target_true;
  std::vector<TokenId> target_new;
};

// Throws InputError on untokenizable text, empty objects or a prompt shorter than 2 tokens.
EncodedRequest encode_request(const Tokenizer& tokenizer, const EditRequest& request);

enum class NeuronSelection { located, random };

struct EditConfig {
  std::size_t k = 5;
  double alpha = 1.0;
  double beta = 10.0;
  std::size_t frozen_layers = 3;
  double lr = 1e-3;
  std::size_t max_steps = 50;
  double early_stop_p = 0.9;
  std::uint64_t seed = 0;
  // `random` swaps the located set for the same number of uniformly drawn eligible neurons.
  NeuronSelection selection = NeuronSelection::located;

  // Throws ConfigError. `num_layers` bounds frozen_layers.
  void validate(std::size_t num_layers) const;

  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static EditConfig from_json(const nlohmann::json& j);
};

// Stacked row updates Z: rows(r) is added to W_out row neurons[r].
template <typename T>
struct EditDelta {
  std::vector<NeuronId> neurons;  // unique, sorted
  Tensor<T> rows;                 // (neurons.size() × d_h); empty when there are no neurons
  std::uint64_t fingerprint = 0;  // of the model the delta was learned on

  std::size_t size() const { return neurons.size(); }
};

struct LossBreakdown {
  double edit = 0;
  double kl = 0;
  double penalty = 0;
  double total = 0;
  double target_probability = 0;  // per-token geometric mean of P(o* | prompt)

  nlohmann::json to_json() const;
};

struct EditReport {
  std::string edit_id;
  std::size_t steps = 0;
  bool early_stopped = false;
  bool diverged = false;
  LossBreakdown initial;
  LossBreakdown final;
  double edit_loss_mean = 0;  // L_edit / |o*|
  std::vector<NeuronId> neurons;
  std::size_t modified_params = 0;
  std::string error;  // set by edit_many when this edit failed

  // Wall time is kept out of the JSON so reports stay byte-reproducible.
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

// Graph nodes of the four loss terms, built on `tape` with Z supplied as `z`.
template <typename T>
struct LossNodes {
  Var<T> edit, kl, penalty, total;
  Var<T> mean_log_prob;  // mean log P(o* token) over the object
};

// Reference next-token log-probs of the base model over the prompt (rows 0..ℓ_p-2).
template <typename T>
Tensor<T> reference_log_probs(const ModelParameters<T>& base, const EncodedRequest& request);

template <typename T>
LossNodes<T> build_losses(Tape<T>& tape, const ModelParameters<T>& base, const std::vector<NeuronId>& neurons,
                          const Var<T>& z, const EncodedRequest& request, const Tensor<T>& reference,
                          const EditConfig& config);

// Evaluates all loss terms for a fixed delta. Throws NumericError naming a non-finite term.
template <typename T>
LossBreakdown compute_losses(const ModelParameters<T>& base, const EditDelta<T>& delta,
                             const EncodedRequest& request, const EditConfig& config);

// Original W_out rows touched by a delta; lets revert_delta restore them bit-exactly.
template <typename T>
struct RowSnapshot {
  std::vector<NeuronId> neurons;
  std::vector<std::vector<T>> rows;
};

// Copy of `base` with each delta row added to W_out. Throws EditError on fingerprint
// mismatch or an out-of-range neuron.
template <typename T>
ModelParameters<T> apply_delta(const ModelParameters<T>& base, const EditDelta<T>& delta,
                               RowSnapshot<T>* snapshot = nullptr);

// In-place variant used by sequential editing. Skips the fingerprint check.
template <typename T>
void apply_delta_in_place(ModelParameters<T>& params, const EditDelta<T>& delta, RowSnapshot<T>* snapshot = nullptr);

template <typename T>
ModelParameters<T> revert_delta(const ModelParameters<T>& edited, const RowSnapshot<T>& snapshot);

template <typename T>
struct EditResult {
  ModelParameters<T> edited;
  EditDelta<T> delta;
  EditReport report;
  LocalizationResult localization;
};

template <typename T>
EditResult<T> edit(const ModelParameters<T>& base, const Tokenizer& tokenizer, const EditRequest& request,
                   const EditConfig& config);

// Learns the delta for `request` against `base` without applying it.
template <typename T>
EditResult<T> learn_edit(const ModelParameters<T>& base, const EncodedRequest& request, const EditConfig& config,
                         const std::string& edit_id = "");

template <typename T>
struct MultiEditResult {
  ModelParameters<T> edited;
  std::vector<EditReport> reports;
};

// Sequential edits, each on top of the previous result. Failures are recorded in the
// report and the run continues from the unchanged model.
template <typename T>
MultiEditResult<T> edit_many(const ModelParameters<T>& base, const Tokenizer& tokenizer,
                             const std::vector<EditRequest>& requests, const EditConfig& config);

std::size_t count_modified_params(std::size_t unique_neurons, std::size_t hidden_size);

template <typename T>
std::size_t count_modified_params(const EditDelta<T>& delta) {
  return delta.neurons.empty() ? 0 : count_modified_params(delta.neurons.size(), delta.rows.cols());
}

// Delta file: "FINEDLT1" | u64 header_len | header JSON | little-endian z values, row-major.
// Header: {"neurons": ["L{l}.U{i}", ...], "fingerprint": "<hex>", "dtype", "hidden_size"}.
template <typename T>
void save_delta(const EditDelta<T>& delta, const std::filesystem::path& path);
template <typename T>
EditDelta<T> load_delta(const std::filesystem::path& path);

}  // namespace fine
