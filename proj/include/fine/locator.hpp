#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fine/model.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

struct NeuronId {
  std::size_t layer = 0;
  std::size_t index = 0;

  auto operator<=>(const NeuronId&) const = default;
};

// "L{l}.U{i}"
std::string to_string(const NeuronId& n);
// Throws InputError on malformed text.
NeuronId parse_neuron_id(const std::string& text);

struct ContributionScore {
  NeuronId neuron;
  TokenId token = 0;
  double score = 0;
};

// Descending score, then ascending layer, then ascending index.
bool ranks_before(const ContributionScore& a, const ContributionScore& b);

// Direct-path projections (W_u W_out^l)_{t,·} for one (layer, token) pair, computed on
// demand and memoized. Safe for concurrent readers. Holds a reference to `params`.
template <typename T>
class ProjectionCache {
 public:
  explicit ProjectionCache(const ModelParameters<T>& params) : params_(&params) {}

  const ModelParameters<T>& params() const { return *params_; }

  // Length d_m: entry i is u_t · (row i of W_out^l), accumulated in double.
  std::shared_ptr<const std::vector<double>> token_column(std::size_t layer, TokenId token) const;

 private:
  const ModelParameters<T>* params_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::size_t, TokenId>, std::shared_ptr<const std::vector<double>>> columns_;
};

// Every c_(i,l,t) = q^l_{i,p} · (W_u W_out^l)_{t,i} for l in [layer_begin, layer_end), in
// (layer, index) order. Throws InputError on an invalid token, position or range.
template <typename T>
std::vector<ContributionScore> contribution_scores(const ForwardTrace<T>& trace, const ModelParameters<T>& params,
                                                   TokenId token, std::size_t position, std::size_t layer_begin,
                                                   std::size_t layer_end, const ProjectionCache<T>* cache = nullptr);

struct TokenLocalization {
  TokenId token = 0;
  std::size_t position = 0;  // the position whose output predicts `token`
  std::vector<ContributionScore> top;
};

struct LocalizationResult {
  std::vector<TokenLocalization> per_token;
  std::vector<NeuronId> neurons;  // union over object tokens, sorted
  std::size_t k = 0;
  std::size_t layer_limit = 0;  // neurons come from layers [0, layer_limit)
};

// Teacher-forced pass over prompt ++ object; per object token, the top-k neurons over the
// non-frozen layers. `prompt` includes <bos>. Throws ConfigError when k == 0 or
// frozen_layers >= L, InputError on empty/invalid tokens.
template <typename T>
LocalizationResult locate(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                          std::span<const TokenId> object, std::size_t k, std::size_t frozen_layers,
                          const ProjectionCache<T>* cache = nullptr);

nlohmann::json to_json(const LocalizationResult& result, const Tokenizer& tokenizer, const std::string& edit_id);

struct TokenWeight {
  TokenId token = 0;
  double weight = 0;
};

// The top_m tokens by (W_u W_out^l)_{t,i}, descending, ties by token id.
// Throws InputError for an invalid neuron or top_m outside [1, v].
template <typename T>
std::vector<TokenWeight> inspect_neuron(const ModelParameters<T>& params, const NeuronId& neuron, std::size_t top_m);

// Per-layer counts of located neurons: unique within each result, summed across results.
std::vector<std::size_t> neuron_layer_histogram(std::span<const LocalizationResult> results, std::size_t num_layers);

}  // namespace fine
