#include "fine/locator.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <set>

#include "fine/error.hpp"

namespace fine {

std::string to_string(const NeuronId& n) {
  return "L" + std::to_string(n.layer) + ".U" + std::to_string(n.index);
}

NeuronId parse_neuron_id(const std::string& text) {
  auto fail = [&]() -> NeuronId { throw InputError("malformed neuron id '" + text + "', expected L{layer}.U{index}"); };
  if (text.size() < 5 || text[0] != 'L') return fail();
  const auto dot = text.find(".U");
  if (dot == std::string::npos || dot == 1) return fail();
  NeuronId n;
  const char* begin = text.data() + 1;
  const char* mid = text.data() + dot;
  auto r1 = std::from_chars(begin, mid, n.layer);
  if (r1.ec != std::errc() || r1.ptr != mid) return fail();
  const char* idx = mid + 2;
  const char* end = text.data() + text.size();
  if (idx == end) return fail();
  auto r2 = std::from_chars(idx, end, n.index);
  if (r2.ec != std::errc() || r2.ptr != end) return fail();
  return n;
}

bool ranks_before(const ContributionScore& a, const ContributionScore& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.neuron < b.neuron;
}

namespace {

template <typename T>
std::vector<double> direct_column(const ModelParameters<T>& params, std::size_t layer, TokenId token) {
  const auto& w_out = params.layers[layer].w_out;
  const auto u = params.unembedding.row(token);
  std::vector<double> col(w_out.rows());
  for (std::size_t i = 0; i < col.size(); ++i) {
    const auto w = w_out.row(i);
    double acc = 0;
    for (std::size_t d = 0; d < u.size(); ++d) acc += static_cast<double>(u[d]) * static_cast<double>(w[d]);
    col[i] = acc;
  }
  return col;
}

template <typename T>
std::shared_ptr<const std::vector<double>> column_for(const ModelParameters<T>& params, std::size_t layer, TokenId token,
                                                 const ProjectionCache<T>* cache) {
  if (cache) return cache->token_column(layer, token);
  return std::make_shared<const std::vector<double>>(direct_column(params, layer, token));
}

}  // namespace

template <typename T>
std::shared_ptr<const std::vector<double>> ProjectionCache<T>::token_column(std::size_t layer, TokenId token) const {
  const auto key = std::make_pair(layer, token);
  {
    std::lock_guard lock(mutex_);
    if (auto it = columns_.find(key); it != columns_.end()) return it->second;
  }
  auto col = std::make_shared<const std::vector<double>>(direct_column(*params_, layer, token));
  std::lock_guard lock(mutex_);
  return columns_.emplace(key, std::move(col)).first->second;
}

template <typename T>
std::vector<ContributionScore> contribution_scores(const ForwardTrace<T>& trace, const ModelParameters<T>& params,
                                                   TokenId token, std::size_t position, std::size_t layer_begin,
                                                   std::size_t layer_end, const ProjectionCache<T>* cache) {
  const ModelConfig& c = params.config;
  if (token >= c.vocab_size) throw InputError("contribution_scores: token " + std::to_string(token) + " outside vocabulary");
  if (position >= trace.tokens.size()) {
    throw InputError("contribution_scores: position " + std::to_string(position) + " outside a trace of length " +
                     std::to_string(trace.tokens.size()));
  }
  if (layer_begin > layer_end || layer_end > c.num_layers || trace.layers.size() != c.num_layers) {
    throw InputError("contribution_scores: layer range [" + std::to_string(layer_begin) + ", " +
                     std::to_string(layer_end) + ") invalid for " + std::to_string(c.num_layers) + " layers");
  }
  std::vector<ContributionScore> out;
  out.reserve((layer_end - layer_begin) * c.intermediate_size);
  for (std::size_t l = layer_begin; l < layer_end; ++l) {
    const auto col = column_for(params, l, token, cache);
    const auto q = trace.layers[l].activations.row(position);
    for (std::size_t i = 0; i < q.size(); ++i) {
      out.push_back({{l, i}, token, static_cast<double>(q[i]) * (*col)[i]});
    }
  }
  return out;
}

template <typename T>
LocalizationResult locate(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                          std::span<const TokenId> object, std::size_t k, std::size_t frozen_layers,
                          const ProjectionCache<T>* cache) {
  const ModelConfig& c = params.config;
  if (k == 0) throw ConfigError("locate: k must be at least 1");
  if (frozen_layers >= c.num_layers) {
    throw ConfigError("locate: frozen layers (" + std::to_string(frozen_layers) + ") must be below num_layers (" +
                      std::to_string(c.num_layers) + ")");
  }
  if (prompt.empty()) throw InputError("locate: empty prompt");
  if (object.empty()) throw InputError("locate: empty object");

  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), object.begin(), object.end());
  const ForwardTrace<T> trace = forward(params, std::span<const TokenId>(seq));

  LocalizationResult result;
  result.k = k;
  result.layer_limit = c.num_layers - frozen_layers;
  std::set<NeuronId> unique;
  for (std::size_t n = 0; n < object.size(); ++n) {
    TokenLocalization tl;
    tl.token = object[n];
    tl.position = prompt.size() - 1 + n;
    auto scores = contribution_scores(trace, params, tl.token, tl.position, 0, result.layer_limit, cache);
    const std::size_t keep = std::min(k, scores.size());
    std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(keep), scores.end(), ranks_before);
    scores.resize(keep);
    for (const auto& s : scores) unique.insert(s.neuron);
    tl.top = std::move(scores);
    result.per_token.push_back(std::move(tl));
  }
  result.neurons.assign(unique.begin(), unique.end());
  return result;
}

nlohmann::json to_json(const LocalizationResult& result, const Tokenizer& tokenizer, const std::string& edit_id) {
  nlohmann::json per_token = nlohmann::json::array();
  for (const auto& tl : result.per_token) {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& s : tl.top) top.push_back({{"neuron", to_string(s.neuron)}, {"score", s.score}});
    const std::string word = tl.token < tokenizer.size() ? tokenizer.word(tl.token) : std::to_string(tl.token);
    per_token.push_back({{"token", word}, {"position", tl.position}, {"top", top}});
  }
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& n : result.neurons) neurons.push_back(to_string(n));
  return {{"edit_id", edit_id},
          {"k", result.k},
          {"layer_limit", result.layer_limit},
          {"per_token", per_token},
          {"union", neurons}};
}

template <typename T>
std::vector<TokenWeight> inspect_neuron(const ModelParameters<T>& params, const NeuronId& neuron, std::size_t top_m) {
  const ModelConfig& c = params.config;
  if (neuron.layer >= c.num_layers || neuron.index >= c.intermediate_size) {
    throw InputError("inspect: neuron " + to_string(neuron) + " outside a model with " + std::to_string(c.num_layers) +
                     " layers of " + std::to_string(c.intermediate_size) + " neurons");
  }
  if (top_m == 0 || top_m > c.vocab_size) {
    throw InputError("inspect: top_m must be in [1, " + std::to_string(c.vocab_size) + "]");
  }
  const auto w = params.layers[neuron.layer].w_out.row(neuron.index);
  std::vector<TokenWeight> all(c.vocab_size);
  for (TokenId t = 0; t < c.vocab_size; ++t) {
    const auto u = params.unembedding.row(t);
    double acc = 0;
    for (std::size_t d = 0; d < u.size(); ++d) acc += static_cast<double>(u[d]) * static_cast<double>(w[d]);
    all[t] = {t, acc};
  }
  auto before = [](const TokenWeight& a, const TokenWeight& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.token < b.token;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(top_m), all.end(), before);
  all.resize(top_m);
  return all;
}

std::vector<std::size_t> neuron_layer_histogram(std::span<const LocalizationResult> results, std::size_t num_layers) {
  std::vector<std::size_t> counts(num_layers, 0);
  for (const auto& r : results) {
    const std::set<NeuronId> unique(r.neurons.begin(), r.neurons.end());
    for (const auto& n : unique) {
      if (n.layer >= num_layers) throw InputError("histogram: neuron " + to_string(n) + " beyond layer count");
      ++counts[n.layer];
    }
  }
  return counts;
}

#define FINE_INSTANTIATE_LOCATOR(T)                                                                               \
  template class ProjectionCache<T>;                                                                              \
  template std::vector<ContributionScore> contribution_scores(const ForwardTrace<T>&, const ModelParameters<T>&, \
                                                              TokenId, std::size_t, std::size_t, std::size_t,    \
                                                              const ProjectionCache<T>*);                        \
  template LocalizationResult locate(const ModelParameters<T>&, std::span<const TokenId>, std::span<const TokenId>, \
                                     std::size_t, std::size_t, const ProjectionCache<T>*);                        \
  template std::vector<TokenWeight> inspect_neuron(const ModelParameters<T>&, const NeuronId&, std::size_t);

FINE_INSTANTIATE_LOCATOR(float)
FINE_INSTANTIATE_LOCATOR(double)

}  // namespace fine
