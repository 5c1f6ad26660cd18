#include "fine/model.hpp"

#include <cmath>
#include <random>

#include "fine/error.hpp"
#include "fine/kernels.hpp"

namespace fine {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(num_layers >= 1, "num_layers must be >= 1");
  need(hidden_size >= 1, "hidden_size must be >= 1");
  need(intermediate_size >= 1, "intermediate_size must be >= 1");
  need(num_heads >= 1, "num_heads must be >= 1");
  need(max_seq_len >= 1, "max_seq_len must be >= 1");
  need(vocab_size >= Tokenizer::kNumSpecial, "vocab_size must be >= 4");
  need(hidden_size % num_heads == 0, "hidden_size must be divisible by num_heads");
  need(layernorm_eps > 0.0 && std::isfinite(layernorm_eps), "layernorm_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_layers", num_layers},
          {"hidden_size", hidden_size},
          {"intermediate_size", intermediate_size},
          {"vocab_size", vocab_size},
          {"num_heads", num_heads},
          {"max_seq_len", max_seq_len},
          {"activation", "gelu"},
          {"layernorm_eps", layernorm_eps},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_layers") c.num_layers = value.get<std::size_t>();
      else if (key == "hidden_size") c.hidden_size = value.get<std::size_t>();
      else if (key == "intermediate_size") c.intermediate_size = value.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "num_heads") c.num_heads = value.get<std::size_t>();
      else if (key == "max_seq_len") c.max_seq_len = value.get<std::size_t>();
      else if (key == "layernorm_eps") c.layernorm_eps = value.get<double>();
      else if (key == "init_seed") c.init_seed = value.get<std::uint64_t>();
      else if (key == "activation") {
        if (value.get<std::string>() != "gelu") throw ConfigError("model config: only gelu activation is supported");
      } else {
        throw ConfigError("model config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config: bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto randn = [&](Shape s) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<T>(normal(rng));
    return t;
  };
  const std::size_t d = config.hidden_size, m = config.intermediate_size, v = config.vocab_size;
  ModelParameters<T> p;
  p.config = config;
  p.token_embedding = randn({v, d});
  p.position_embedding = randn({config.max_seq_len, d});
  p.layers.resize(config.num_layers);
  for (auto& L : p.layers) {
    L.attn_norm_gain = Tensor<T>::filled({d}, T(1));
    L.attn_norm_bias = Tensor<T>({d});
    L.wq = randn({d, d});
    L.wk = randn({d, d});
    L.wv = randn({d, d});
    L.wo = randn({d, d});
    L.ffn_norm_gain = Tensor<T>::filled({d}, T(1));
    L.ffn_norm_bias = Tensor<T>({d});
    L.w_in = randn({m, d});
    L.w_out = randn({m, d});
  }
  p.final_norm_gain = Tensor<T>::filled({d}, T(1));
  p.final_norm_bias = Tensor<T>({d});
  p.unembedding = randn({v, d});
  return p;
}

template <typename T>
std::uint64_t fingerprint(const ModelParameters<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  const std::string cfg = params.config.to_json().dump();
  mix(cfg.data(), cfg.size());
  for_each_tensor(params, [&](const std::string& name, const Tensor<T>& t) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    mix(t.ptr(), t.size() * sizeof(T));
  });
  return h;
}

template <typename T>
void validate_parameters(const ModelParameters<T>& params) {
  const auto& c = params.config;
  c.validate();
  if (params.layers.size() != c.num_layers) {
    throw ConfigError("parameters have " + std::to_string(params.layers.size()) + " layers, config says " +
                      std::to_string(c.num_layers));
  }
  const std::size_t d = c.hidden_size, m = c.intermediate_size, v = c.vocab_size;
  auto expect = [](const std::string& name, const Tensor<T>& t, Shape s) {
    if (t.shape() != s) {
      throw DimensionError("tensor " + name + " has shape " + shape_to_string(t.shape()) + ", expected " +
                           shape_to_string(s));
    }
    if (!all_finite(t)) throw NumericError("tensor " + name + " has non-finite values");
  };
  for_each_tensor(params, [&](const std::string& name, const Tensor<T>& t) {
    Shape s;
    if (name == "token_embedding" || name == "unembedding") s = {v, d};
    else if (name == "position_embedding") s = {c.max_seq_len, d};
    else if (name.ends_with("w_in") || name.ends_with("w_out")) s = {m, d};
    else if (name.ends_with("gain") || name.ends_with("bias")) s = {d};
    else s = {d, d};
    expect(name, t, s);
  });
}

template <typename T>
bool bit_equal(const ModelParameters<T>& a, const ModelParameters<T>& b) {
  if (!(a.config == b.config) || a.layers.size() != b.layers.size()) return false;
  std::vector<const Tensor<T>*> lhs;
  for_each_tensor(a, [&](const std::string&, const Tensor<T>& t) { lhs.push_back(&t); });
  bool same = true;
  std::size_t i = 0;
  for_each_tensor(b, [&](const std::string&, const Tensor<T>& t) {
    same = same && bit_equal(*lhs[i++], t);
  });
  return same;
}

template <typename T>
std::vector<Var<T>> BoundParameters<T>::all() const {
  std::vector<Var<T>> out{token_embedding, position_embedding};
  for (const auto& L : layers) {
    out.insert(out.end(), {L.attn_norm_gain, L.attn_norm_bias, L.wq, L.wk, L.wv, L.wo, L.ffn_norm_gain,
                           L.ffn_norm_bias, L.w_in, L.w_out});
  }
  out.insert(out.end(), {final_norm_gain, final_norm_bias, unembedding});
  return out;
}

namespace {

template <typename T, typename BindFn>
BoundParameters<T> bind_with(const ModelParameters<T>& params, BindFn bind) {
  BoundParameters<T> b;
  b.source = &params;
  b.token_embedding = bind(params.token_embedding);
  b.position_embedding = bind(params.position_embedding);
  for (const auto& L : params.layers) {
    b.layers.push_back({bind(L.attn_norm_gain), bind(L.attn_norm_bias), bind(L.wq), bind(L.wk), bind(L.wv),
                        bind(L.wo), bind(L.ffn_norm_gain), bind(L.ffn_norm_bias), bind(L.w_in), bind(L.w_out)});
  }
  b.final_norm_gain = bind(params.final_norm_gain);
  b.final_norm_bias = bind(params.final_norm_bias);
  b.unembedding = bind(params.unembedding);
  return b;
}

}  // namespace

template <typename T>
BoundParameters<T> bind_constants(Tape<T>& tape, const ModelParameters<T>& params) {
  return bind_with(params, [&](const Tensor<T>& t) { return tape.constant_ref(t); });
}

template <typename T>
BoundParameters<T> bind_trainable(Tape<T>& tape, const ModelParameters<T>& params) {
  return bind_with(params, [&](const Tensor<T>& t) { return tape.parameter(t); });
}

template <typename T>
ForwardNodes<T> build_forward(Tape<T>& tape, const BoundParameters<T>& bound,
                              const std::vector<std::vector<TokenId>>& sequences,
                              std::span<const FfnRowPatch<T>> patches) {
  const ModelConfig& c = bound.source->config;
  if (!tape.owns(bound.token_embedding)) throw UsageError("forward: parameters are bound to another tape");
  if (sequences.empty()) throw InputError("forward: no sequences");
  std::vector<std::size_t> ids, positions;
  ForwardNodes<T> out;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw InputError("forward: empty token sequence");
    if (seq.size() > c.max_seq_len) {
      throw InputError("forward: sequence length " + std::to_string(seq.size()) + " exceeds max_seq_len " +
                       std::to_string(c.max_seq_len));
    }
    out.segments.push_back({ids.size(), seq.size()});
    for (std::size_t p = 0; p < seq.size(); ++p) {
      if (seq[p] >= c.vocab_size) {
        throw InputError("forward: token id " + std::to_string(seq[p]) + " outside vocabulary of " +
                         std::to_string(c.vocab_size));
      }
      ids.push_back(seq[p]);
      positions.push_back(p);
    }
  }
  for (const auto& patch : patches) {
    if (patch.layer >= c.num_layers) throw InputError("forward: patch layer out of range");
    for (std::size_t n : patch.neurons) {
      if (n >= c.intermediate_size) throw InputError("forward: patch neuron out of range");
    }
    if (patch.rows.shape() != Shape{patch.neurons.size(), c.hidden_size}) {
      throw DimensionError("forward: patch rows have shape " + shape_to_string(patch.rows.shape()));
    }
  }

  const T eps = static_cast<T>(c.layernorm_eps);
  Var<T> x = add(embedding(bound.token_embedding, ids), embedding(bound.position_embedding, positions));
  out.embedding = x;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto& L = bound.layers[l];
    LayerNodes<T> nodes;
    nodes.input = x;
    Var<T> xa = layer_norm(x, L.attn_norm_gain, L.attn_norm_bias, eps);
    Var<T> att = causal_attention(matmul_nt(xa, L.wq), matmul_nt(xa, L.wk), matmul_nt(xa, L.wv), c.num_heads,
                                  out.segments);
    nodes.attn_out = matmul_nt(att, L.wo);
    Var<T> xf = layer_norm(x, L.ffn_norm_gain, L.ffn_norm_bias, eps);
    nodes.activations = gelu(matmul_nt(xf, L.w_in));
    Var<T> m = matmul(nodes.activations, L.w_out);
    for (const auto& patch : patches) {
      if (patch.layer == l) m = add(m, matmul(gather_cols(nodes.activations, patch.neurons), patch.rows));
    }
    nodes.ffn_out = m;
    nodes.hidden = add(add(x, nodes.ffn_out), nodes.attn_out);
    x = nodes.hidden;
    out.layers.push_back(nodes);
  }
  out.final_hidden = x;
  out.logits = matmul_nt(layer_norm(x, bound.final_norm_gain, bound.final_norm_bias, eps), bound.unembedding);
  return out;
}

template <typename T>
ForwardTrace<T> forward(const ModelParameters<T>& params, std::span<const TokenId> tokens) {
  Tape<T> tape;
  auto bound = bind_constants(tape, params);
  auto nodes = build_forward(tape, bound, {std::vector<TokenId>(tokens.begin(), tokens.end())});
  ForwardTrace<T> trace;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.embedding = nodes.embedding.value();
  for (const auto& n : nodes.layers) {
    trace.layers.push_back({n.input.value(), n.activations.value(), n.ffn_out.value(), n.attn_out.value(),
                            n.hidden.value()});
  }
  trace.final_hidden = nodes.final_hidden.value();
  trace.logits = nodes.logits.value();
  return trace;
}

template <typename T>
Tensor<T> forward_logits(const ModelParameters<T>& params, std::span<const TokenId> tokens) {
  Tape<T> tape;
  auto bound = bind_constants(tape, params);
  auto nodes = build_forward(tape, bound, {std::vector<TokenId>(tokens.begin(), tokens.end())});
  return nodes.logits.value();
}

template <typename T>
std::vector<TokenId> generate(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                              std::size_t max_new, TokenId eos) {
  const ModelConfig& c = params.config;
  if (prompt.empty()) throw InputError("generate: empty prompt");
  if (prompt.size() > c.max_seq_len) throw InputError("generate: prompt longer than max_seq_len");
  for (TokenId id : prompt) {
    if (id >= c.vocab_size) throw InputError("generate: token id " + std::to_string(id) + " outside vocabulary");
  }
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  for (std::size_t step = 0; step < max_new && seq.size() < c.max_seq_len; ++step) {
    const Tensor<T> logits = forward_logits(params, seq);
    const TokenId next = argmax(logits.row(logits.rows() - 1));
    seq.push_back(next);
    if (next == eos) break;
  }
  return seq;
}

#define FINE_INSTANTIATE_MODEL(T)                                                                         \
  template ModelParameters<T> init_parameters<T>(const ModelConfig&);                                     \
  template std::uint64_t fingerprint(const ModelParameters<T>&);                                          \
  template void validate_parameters(const ModelParameters<T>&);                                           \
  template bool bit_equal(const ModelParameters<T>&, const ModelParameters<T>&);                          \
  template struct BoundParameters<T>;                                                                     \
  template BoundParameters<T> bind_constants(Tape<T>&, const ModelParameters<T>&);                        \
  template BoundParameters<T> bind_trainable(Tape<T>&, const ModelParameters<T>&);                        \
  template ForwardNodes<T> build_forward(Tape<T>&, const BoundParameters<T>&,                             \
                                         const std::vector<std::vector<TokenId>>&,                        \
                                         std::span<const FfnRowPatch<T>>);                                \
  template ForwardTrace<T> forward(const ModelParameters<T>&, std::span<const TokenId>);                  \
  template Tensor<T> forward_logits(const ModelParameters<T>&, std::span<const TokenId>);                 \
  template std::vector<TokenId> generate(const ModelParameters<T>&, std::span<const TokenId>, std::size_t, \
                                         TokenId);

FINE_INSTANTIATE_MODEL(float)
FINE_INSTANTIATE_MODEL(double)

}  // namespace fine
