#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fine/autodiff.hpp"
#include "fine/tensor.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

struct ModelConfig {
  std::size_t num_layers = 6;
  std::size_t hidden_size = 128;
  std::size_t intermediate_size = 512;
  std::size_t vocab_size = 512;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 32;
  double layernorm_eps = 1e-5;
  std::uint64_t init_seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  // Rejects unknown keys; missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Tensor<T> attn_norm_gain, attn_norm_bias;
  Tensor<T> wq, wk, wv, wo;  // (d_h × d_h), stored out × in
  Tensor<T> ffn_norm_gain, ffn_norm_bias;
  Tensor<T> w_in;   // (d_m × d_h)
  Tensor<T> w_out;  // (d_m × d_h); row i is the output direction of neuron i
};

template <typename T>
struct ModelParameters {
  ModelConfig config;
  Tensor<T> token_embedding;     // (v × d_h)
  Tensor<T> position_embedding;  // (max_seq_len × d_h)
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_norm_gain, final_norm_bias;
  Tensor<T> unembedding;  // (v × d_h)
};

// Visits every tensor with its stable checkpoint name, in a fixed order.
template <typename P, typename Fn>
void for_each_tensor(P& params, Fn&& fn) {
  fn(std::string("token_embedding"), params.token_embedding);
  fn(std::string("position_embedding"), params.position_embedding);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& L = params.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "attn_norm.gain", L.attn_norm_gain);
    fn(p + "attn_norm.bias", L.attn_norm_bias);
    fn(p + "attn.wq", L.wq);
    fn(p + "attn.wk", L.wk);
    fn(p + "attn.wv", L.wv);
    fn(p + "attn.wo", L.wo);
    fn(p + "ffn_norm.gain", L.ffn_norm_gain);
    fn(p + "ffn_norm.bias", L.ffn_norm_bias);
    fn(p + "ffn.w_in", L.w_in);
    fn(p + "ffn.w_out", L.w_out);
  }
  fn(std::string("final_norm.gain"), params.final_norm_gain);
  fn(std::string("final_norm.bias"), params.final_norm_bias);
  fn(std::string("unembedding"), params.unembedding);
}

// Normal(0, 0.02) weights, unit norm gains, zero biases.
template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config);

// FNV-1a over the config and every tensor's bytes.
template <typename T>
std::uint64_t fingerprint(const ModelParameters<T>& params);

// Shapes agree with the config and every value is finite.
template <typename T>
void validate_parameters(const ModelParameters<T>& params);

template <typename T>
bool bit_equal(const ModelParameters<T>& a, const ModelParameters<T>& b);

template <typename To, typename From>
ModelParameters<To> convert_parameters(const ModelParameters<From>& params) {
  ModelParameters<To> out;
  out.config = params.config;
  out.layers.resize(params.layers.size());
  std::vector<const Tensor<From>*> src;
  for_each_tensor(params, [&](const std::string&, const Tensor<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, Tensor<To>& t) { t = cast<To>(*src[i++]); });
  return out;
}

// Additive update of selected W_out rows, applied inside the forward graph.
// `rows` is (neurons.size() × d_h); row r is added to W_out row neurons[r] of `layer`.
template <typename T>
struct FfnRowPatch {
  std::size_t layer = 0;
  std::vector<std::size_t> neurons;
  Var<T> rows;
};

// Tape handles of every parameter tensor, mirroring ModelParameters.
template <typename T>
struct BoundLayer {
  Var<T> attn_norm_gain, attn_norm_bias, wq, wk, wv, wo, ffn_norm_gain, ffn_norm_bias, w_in, w_out;
};

template <typename T>
struct BoundParameters {
  const ModelParameters<T>* source = nullptr;
  Var<T> token_embedding, position_embedding;
  std::vector<BoundLayer<T>> layers;
  Var<T> final_norm_gain, final_norm_bias, unembedding;

  // Flat list in for_each_tensor order (used for optimizer bookkeeping).
  std::vector<Var<T>> all() const;
};

// Borrowed constants (no gradients) or borrowed trainable parameters.
template <typename T>
BoundParameters<T> bind_constants(Tape<T>& tape, const ModelParameters<T>& params);
template <typename T>
BoundParameters<T> bind_trainable(Tape<T>& tape, const ModelParameters<T>& params);

template <typename T>
struct LayerNodes {
  Var<T> input;        // x^l = h^{l-1}
  Var<T> activations;  // q^l
  Var<T> ffn_out;      // m^l
  Var<T> attn_out;     // a^l
  Var<T> hidden;       // h^l
};

template <typename T>
struct ForwardNodes {
  Var<T> embedding;  // h^0
  std::vector<LayerNodes<T>> layers;
  Var<T> final_hidden;  // h^L before the final layernorm
  Var<T> logits;        // (rows × v)
  std::vector<Segment> segments;
};

// Builds the forward graph over one or more sequences packed row-wise.
// Throws InputError on empty/overlong sequences and out-of-range ids.
template <typename T>
ForwardNodes<T> build_forward(Tape<T>& tape, const BoundParameters<T>& bound,
                              const std::vector<std::vector<TokenId>>& sequences,
                              std::span<const FfnRowPatch<T>> patches = {});

template <typename T>
struct LayerTrace {
  Tensor<T> input;
  Tensor<T> activations;
  Tensor<T> ffn_out;
  Tensor<T> attn_out;
  Tensor<T> hidden;
};

// Every intermediate of one forward pass, position-major (rows are positions).
template <typename T>
struct ForwardTrace {
  std::vector<TokenId> tokens;
  Tensor<T> embedding;
  std::vector<LayerTrace<T>> layers;
  Tensor<T> final_hidden;
  Tensor<T> logits;
};

template <typename T>
ForwardTrace<T> forward(const ModelParameters<T>& params, std::span<const TokenId> tokens);

// Logits only (seq × v).
template <typename T>
Tensor<T> forward_logits(const ModelParameters<T>& params, std::span<const TokenId> tokens);

// Greedy decoding: returns prompt plus up to `max_new` argmax tokens, stopping after eos
// or when the context is full.
template <typename T>
std::vector<TokenId> generate(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                              std::size_t max_new, TokenId eos = Tokenizer::kEos);

}  // namespace fine
