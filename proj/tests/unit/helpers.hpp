#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fine/dataset.hpp"
#include "fine/model.hpp"
#include "fine/pretrain.hpp"
#include "fine/tokenizer.hpp"

namespace fine::test {

inline ModelConfig toy_config(std::size_t layers, std::size_t hidden = 16, std::size_t intermediate = 32,
                              std::size_t vocab = 24, std::size_t heads = 2, std::size_t max_seq = 16) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.intermediate_size = intermediate;
  c.vocab_size = vocab;
  c.num_heads = heads;
  c.max_seq_len = max_seq;
  return c;
}

// Every tensor redrawn from N(0, scale²); gains near 1. Larger than the init scale so
// activations and logits are far from trivial.
template <typename T>
ModelParameters<T> random_model(const ModelConfig& config, std::uint64_t seed, double scale = 0.5) {
  auto params = init_parameters<T>(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for_each_tensor(params, [&](const std::string& name, Tensor<T>& t) {
    const bool gain = name.find("gain") != std::string::npos;
    for (auto& x : t.data()) x = static_cast<T>(gain ? 1.0 + 0.1 * normal(rng) : normal(rng));
  });
  return params;
}

template <typename T>
std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = Tokenizer::kNumSpecial + rng() % (vocab - Tokenizer::kNumSpecial);
  return out;
}

inline std::vector<TokenId> with_bos(const Tokenizer& tok, const std::string& text) {
  std::vector<TokenId> out{Tokenizer::kBos};
  for (TokenId id : tok.encode(text)) out.push_back(id);
  return out;
}

// A small synthetic world trained to recall its facts, shared across tests.
struct TinyWorld {
  SyntheticDataset dataset;
  Tokenizer tokenizer;
  ModelParameters<float> params;
};

inline const TinyWorld& tiny_world() {
  static const TinyWorld world = [] {
    TinyWorld w;
    DatasetOptions d;
    d.seed = 3;
    d.n_facts = 16;
    d.n_edits = 6;
    w.dataset = generate_synthetic_dataset(d);
    w.tokenizer = Tokenizer::from_lines(w.dataset.corpus);
    ModelConfig c = toy_config(4, 32, 64, 64, 2, 16);
    w.params = init_parameters<float>(c);
    PretrainOptions o;
    o.steps = 400;
    o.lr = 3e-3;
    o.batch_size = 16;
    o.eval_every = 400;
    o.label_smoothing = 0.0;
    pretrain(w.params, tokenize_corpus(w.tokenizer, w.dataset.corpus), o);
    return w;
  }();
  return world;
}

}  // namespace fine::test
