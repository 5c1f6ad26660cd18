#include "fine/editor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "fine/adam.hpp"
#include "fine/error.hpp"
#include "fine/kernels.hpp"
#include "fine/log.hpp"

namespace fine {

nlohmann::json EditRequest::to_json() const {
  return {{"id", id},           {"subject", subject},         {"relation", relation},
          {"prompt", prompt},   {"target_true", target_true}, {"target_new", target_new}};
}

EditRequest EditRequest::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("edit request must be a JSON object");
  auto text = [&](const char* key) -> std::string {
    if (!j.contains(key)) return {};
    if (!j.at(key).is_string()) throw InputError(std::string("edit request field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  EditRequest r;
  for (const char* key : {"prompt", "target_new"}) {
    if (!j.contains(key)) throw InputError(std::string("edit request is missing required field '") + key + "'");
  }
  r.prompt = text("prompt");
  r.target_new = text("target_new");
  r.subject = text("subject");
  r.relation = text("relation");
  r.target_true = j.contains("target_true") ? text("target_true") : text("ground_truth");
  if (j.contains("id")) {
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  } else if (j.contains("case_id")) {
    r.id = j.at("case_id").is_string() ? j.at("case_id").get<std::string>() : j.at("case_id").dump();
  }
  return r;
}

EncodedRequest encode_request(const Tokenizer& tokenizer, const EditRequest& request) {
  EncodedRequest e;
  e.prompt.push_back(Tokenizer::kBos);
  for (TokenId id : tokenizer.encode(request.prompt)) e.prompt.push_back(id);
  if (e.prompt.size() < 2) throw InputError("edit prompt must contain at least one word");
  e.target_true = tokenizer.encode(request.target_true);
  e.target_new = tokenizer.encode(request.target_new);
  if (e.target_new.empty()) throw InputError("edit target_new is empty");
  return e;
}

void EditConfig::validate(std::size_t num_layers) const {
  if (k < 1) throw ConfigError("edit: k must be at least 1");
  if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("edit: alpha must be a finite non-negative number");
  if (!(beta >= 0) || !std::isfinite(beta)) throw ConfigError("edit: beta must be a finite non-negative number");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("edit: lr must be positive");
  if (!(early_stop_p > 0 && early_stop_p < 1)) throw ConfigError("edit: early_stop_p must lie in (0, 1)");
  if (frozen_layers >= num_layers) {
    throw ConfigError("edit: frozen layers (" + std::to_string(frozen_layers) + ") must be below num_layers (" +
                      std::to_string(num_layers) + ")");
  }
}

nlohmann::json EditConfig::to_json() const {
  return {{"k", k},
          {"alpha", alpha},
          {"beta", beta},
          {"frozen_layers", frozen_layers},
          {"lr", lr},
          {"max_steps", max_steps},
          {"early_stop_p", early_stop_p},
          {"seed", seed},
          {"selection", selection == NeuronSelection::located ? "located" : "random"}};
}

EditConfig EditConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("edit config must be a JSON object");
  EditConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "frozen_layers") c.frozen_layers = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "max_steps") c.max_steps = value.get<std::size_t>();
      else if (key == "early_stop_p") c.early_stop_p = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "selection") {
        const auto s = value.get<std::string>();
        if (s == "located") c.selection = NeuronSelection::located;
        else if (s == "random") c.selection = NeuronSelection::random;
        else throw ConfigError("edit config: selection must be 'located' or 'random'");
      } else {
        throw ConfigError("edit config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("edit config: ") + e.what());
  }
  return c;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"edit", edit}, {"kl", kl}, {"penalty", penalty}, {"total", total}, {"target_probability", target_probability}};
}

nlohmann::json EditReport::to_json() const {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& n : neurons) ids.push_back(to_string(n));
  nlohmann::json j = {{"edit_id", edit_id},
                      {"steps", steps},
                      {"early_stopped", early_stopped},
                      {"diverged", diverged},
                      {"initial", initial.to_json()},
                      {"final", final.to_json()},
                      {"edit_loss_mean", edit_loss_mean},
                      {"neurons", ids},
                      {"modified_params", modified_params}};
  if (!error.empty()) j["error"] = error;
  return j;
}

std::size_t count_modified_params(std::size_t unique_neurons, std::size_t hidden_size) {
  return unique_neurons * hidden_size;
}

namespace {

std::vector<TokenId> concat(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::vector<TokenId> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows;
  for (std::size_t r = begin; r < end; ++r) rows.push_back(r);
  return rows;
}

// One patch per layer touched by `neurons`; the patch rows are slices of z.
template <typename T>
std::vector<FfnRowPatch<T>> patches_for(const std::vector<NeuronId>& neurons, const Var<T>& z) {
  std::vector<FfnRowPatch<T>> patches;
  std::size_t r = 0;
  while (r < neurons.size()) {
    FfnRowPatch<T> p;
    p.layer = neurons[r].layer;
    std::vector<std::size_t> rows;
    while (r < neurons.size() && neurons[r].layer == p.layer) {
      p.neurons.push_back(neurons[r].index);
      rows.push_back(r);
      ++r;
    }
    p.rows = rows.size() == neurons.size() ? z : select_rows(z, rows);
    patches.push_back(std::move(p));
  }
  return patches;
}

void check_sequence_fits(const ModelConfig& c, const EncodedRequest& request) {
  const std::size_t n = request.prompt.size() + request.target_new.size();
  if (n > c.max_seq_len) {
    throw InputError("edit: prompt plus target spans " + std::to_string(n) + " tokens, above max_seq_len " +
                     std::to_string(c.max_seq_len));
  }
}

template <typename T>
LossBreakdown read_breakdown(const LossNodes<T>& nodes) {
  LossBreakdown b;
  b.edit = static_cast<double>(nodes.edit.value()[0]);
  b.kl = static_cast<double>(nodes.kl.value()[0]);
  b.penalty = static_cast<double>(nodes.penalty.value()[0]);
  b.total = static_cast<double>(nodes.total.value()[0]);
  b.target_probability = std::exp(static_cast<double>(nodes.mean_log_prob.value()[0]));
  return b;
}

const char* first_non_finite(const LossBreakdown& b) {
  if (!std::isfinite(b.edit)) return "L_edit";
  if (!std::isfinite(b.kl)) return "L_KL";
  if (!std::isfinite(b.penalty)) return "L_pen";
  if (!std::isfinite(b.total)) return "L_total";
  return nullptr;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char ch : salt) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// |count| distinct neurons drawn uniformly from layers [0, layer_limit), sorted.
std::vector<NeuronId> random_neurons(std::size_t count, std::size_t layer_limit, std::size_t d_m, std::uint64_t seed) {
  const std::size_t pool = layer_limit * d_m;
  count = std::min(count, pool);
  std::mt19937_64 rng(seed);
  std::set<std::size_t> chosen;
  // Floyd's sampling without replacement.
  for (std::size_t j = pool - count; j < pool; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng() % (j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<NeuronId> out;
  for (std::size_t flat : chosen) out.push_back({flat / d_m, flat % d_m});
  return out;
}

template <typename T>
void check_neurons(const ModelConfig& c, const std::vector<NeuronId>& neurons) {
  for (std::size_t r = 0; r < neurons.size(); ++r) {
    if (neurons[r].layer >= c.num_layers || neurons[r].index >= c.intermediate_size) {
      throw EditError("delta neuron " + to_string(neurons[r]) + " outside the model");
    }
    if (r > 0 && !(neurons[r - 1] < neurons[r])) throw EditError("delta neurons must be unique and sorted");
  }
}

}  // namespace

template <typename T>
Tensor<T> reference_log_probs(const ModelParameters<T>& base, const EncodedRequest& request) {
  check_sequence_fits(base.config, request);
  const auto seq = concat(request.prompt, request.target_new);
  const Tensor<T> lp = log_softmax(forward_logits(base, std::span<const TokenId>(seq)));
  const std::size_t rows = request.prompt.size() - 1;
  const std::size_t v = lp.cols();
  std::vector<T> data(lp.ptr(), lp.ptr() + rows * v);
  return Tensor<T>({rows, v}, std::move(data));
}

template <typename T>
LossNodes<T> build_losses(Tape<T>& tape, const ModelParameters<T>& base, const std::vector<NeuronId>& neurons,
                          const Var<T>& z, const EncodedRequest& request, const Tensor<T>& reference,
                          const EditConfig& config) {
  check_sequence_fits(base.config, request);
  const std::size_t lp = request.prompt.size();
  const std::size_t no = request.target_new.size();
  if (lp < 2) throw InputError("edit prompt must have at least two tokens including <bos>");
  if (reference.shape() != Shape{lp - 1, base.config.vocab_size}) {
    throw DimensionError("edit: reference log-probs have shape " + shape_to_string(reference.shape()));
  }
  const auto seq = concat(request.prompt, request.target_new);
  std::vector<FfnRowPatch<T>> patches;
  if (!neurons.empty()) patches = patches_for(neurons, z);
  auto bound = bind_constants(tape, base);
  auto nodes = build_forward(tape, bound, {seq}, std::span<const FfnRowPatch<T>>(patches));
  Var<T> logp = log_softmax(nodes.logits);

  LossNodes<T> out;
  std::vector<std::size_t> target_rows = iota_rows(lp - 1, lp - 1 + no);
  Var<T> picked = pick(logp, target_rows, request.target_new);
  out.edit = scale(sum(picked), T(-1));
  out.mean_log_prob = mean(picked);

  Var<T> lp_new = select_rows(logp, iota_rows(0, lp - 1));
  Var<T> diff = sub(lp_new, tape.constant_ref(reference));
  out.kl = scale(sum(mul(exp(lp_new), diff)), T(1) / static_cast<T>(lp - 1));

  Var<T> first = pick(logp, {seq.size() - 1}, {request.target_new.front()});
  out.penalty = scale(sum(log1m_exp(first)), T(-1));

  out.total = add(add(out.edit, scale(out.kl, static_cast<T>(config.alpha))),
                  scale(out.penalty, static_cast<T>(config.beta)));
  return out;
}

template <typename T>
LossBreakdown compute_losses(const ModelParameters<T>& base, const EditDelta<T>& delta, const EncodedRequest& request,
                             const EditConfig& config) {
  check_neurons<T>(base.config, delta.neurons);
  const Tensor<T> reference = reference_log_probs(base, request);
  Tape<T> tape;
  Var<T> z;
  if (!delta.neurons.empty()) {
    if (delta.rows.shape() != Shape{delta.neurons.size(), base.config.hidden_size}) {
      throw DimensionError("delta rows have shape " + shape_to_string(delta.rows.shape()));
    }
    z = tape.constant_ref(delta.rows);
  }
  const auto nodes = build_losses(tape, base, delta.neurons, z, request, reference, config);
  const LossBreakdown b = read_breakdown(nodes);
  if (const char* bad = first_non_finite(b)) throw NumericError(std::string("edit loss component ") + bad + " is not finite");
  return b;
}

template <typename T>
void apply_delta_in_place(ModelParameters<T>& params, const EditDelta<T>& delta, RowSnapshot<T>* snapshot) {
  const ModelConfig& c = params.config;
  check_neurons<T>(c, delta.neurons);
  if (delta.neurons.empty()) {
    if (snapshot) *snapshot = {};
    return;
  }
  if (delta.rows.shape() != Shape{delta.neurons.size(), c.hidden_size}) {
    throw EditError("delta rows have shape " + shape_to_string(delta.rows.shape()) + ", expected (" +
                    std::to_string(delta.neurons.size()) + ", " + std::to_string(c.hidden_size) + ")");
  }
  if (!all_finite(delta.rows)) throw EditError("delta contains non-finite values");
  if (snapshot) {
    snapshot->neurons = delta.neurons;
    snapshot->rows.clear();
  }
  for (std::size_t r = 0; r < delta.neurons.size(); ++r) {
    auto row = params.layers[delta.neurons[r].layer].w_out.row(delta.neurons[r].index);
    if (snapshot) snapshot->rows.emplace_back(row.begin(), row.end());
    const auto z = delta.rows.row(r);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += z[d];
  }
}

template <typename T>
ModelParameters<T> apply_delta(const ModelParameters<T>& base, const EditDelta<T>& delta, RowSnapshot<T>* snapshot) {
  if (delta.fingerprint != 0) {
    const std::uint64_t fp = fingerprint(base);
    if (fp != delta.fingerprint) throw EditError("delta was learned on a different model (fingerprint mismatch)");
  }
  ModelParameters<T> out = base;
  apply_delta_in_place(out, delta, snapshot);
  return out;
}

template <typename T>
ModelParameters<T> revert_delta(const ModelParameters<T>& edited, const RowSnapshot<T>& snapshot) {
  check_neurons<T>(edited.config, snapshot.neurons);
  if (snapshot.rows.size() != snapshot.neurons.size()) throw EditError("row snapshot is inconsistent");
  ModelParameters<T> out = edited;
  for (std::size_t r = 0; r < snapshot.neurons.size(); ++r) {
    auto row = out.layers[snapshot.neurons[r].layer].w_out.row(snapshot.neurons[r].index);
    if (snapshot.rows[r].size() != row.size()) throw EditError("row snapshot width mismatch");
    std::copy(snapshot.rows[r].begin(), snapshot.rows[r].end(), row.begin());
  }
  return out;
}

template <typename T>
EditResult<T> learn_edit(const ModelParameters<T>& base, const EncodedRequest& request, const EditConfig& config,
                         const std::string& edit_id) {
  const auto started = std::chrono::steady_clock::now();
  const ModelConfig& c = base.config;
  config.validate(c.num_layers);
  check_sequence_fits(c, request);

  EditResult<T> result;
  result.report.edit_id = edit_id;
  if (request.target_true.empty()) throw EditError("edit: localization needs the current object (target_true)");
  {
    std::vector<TokenId> probe = request.prompt;
    if (probe.size() + request.target_true.size() > c.max_seq_len) {
      throw InputError("edit: prompt plus current object exceeds max_seq_len");
    }
  }
  result.localization = locate(base, std::span<const TokenId>(request.prompt),
                               std::span<const TokenId>(request.target_true), config.k, config.frozen_layers);
  std::vector<NeuronId> neurons = result.localization.neurons;
  if (config.selection == NeuronSelection::random) {
    neurons = random_neurons(neurons.size(), c.num_layers - config.frozen_layers, c.intermediate_size,
                             mix_seed(config.seed, edit_id + "|" + std::to_string(request.prompt.size())));
  }
  if (neurons.empty()) throw EditError("edit: localization selected no neurons");

  const Tensor<T> reference = reference_log_probs(base, request);
  Tensor<T> z = Tensor<T>::zeros({neurons.size(), c.hidden_size});
  AdamOptions adam;
  adam.lr = config.lr;
  AdamState<T> state(adam, {z.shape()});

  Tensor<T> best_z = z;
  double best_total = std::numeric_limits<double>::infinity();
  LossBreakdown current, best_breakdown;
  std::size_t updates = 0;
  for (std::size_t step = 0;; ++step) {
    Tape<T> tape;
    Var<T> leaf = tape.leaf(z);
    const auto nodes = build_losses(tape, base, neurons, leaf, request, reference, config);
    current = read_breakdown(nodes);
    if (step == 0) result.report.initial = current;
    if (first_non_finite(current)) {
      result.report.diverged = true;
      log_info("edit " + edit_id + ": loss became non-finite at step " + std::to_string(step) +
               "; keeping the best earlier delta");
      z = best_z;
      current = best_breakdown;
      break;
    }
    if (current.total < best_total) {
      best_total = current.total;
      best_z = z;
      best_breakdown = current;
    }
    if (current.target_probability >= config.early_stop_p) {
      result.report.early_stopped = step < config.max_steps;
      break;
    }
    if (step == config.max_steps) break;
    const Var<T> leaves[] = {leaf};
    const auto grads = tape.backward(nodes.total, leaves);
    Tensor<T>* params[] = {&z};
    adam_step<T>(params, grads, state);
    ++updates;
  }

  result.report.steps = updates;
  result.report.final = current;
  result.report.edit_loss_mean = current.edit / static_cast<double>(request.target_new.size());
  result.report.neurons = neurons;
  result.report.modified_params = count_modified_params(neurons.size(), c.hidden_size);
  result.delta.neurons = std::move(neurons);
  result.delta.rows = std::move(z);
  result.delta.fingerprint = fingerprint(base);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

template <typename T>
EditResult<T> edit(const ModelParameters<T>& base, const Tokenizer& tokenizer, const EditRequest& request,
                   const EditConfig& config) {
  const EncodedRequest encoded = encode_request(tokenizer, request);
  EditResult<T> result = learn_edit(base, encoded, config, request.id);
  result.edited = apply_delta(base, result.delta);
  return result;
}

template <typename T>
MultiEditResult<T> edit_many(const ModelParameters<T>& base, const Tokenizer& tokenizer,
                             const std::vector<EditRequest>& requests, const EditConfig& config) {
  if (requests.empty()) throw InputError("edit_many: no requests");
  config.validate(base.config.num_layers);
  MultiEditResult<T> out;
  out.edited = base;
  for (const auto& request : requests) {
    try {
      const EncodedRequest encoded = encode_request(tokenizer, request);
      EditResult<T> r = learn_edit(out.edited, encoded, config, request.id);
      apply_delta_in_place(out.edited, r.delta);
      out.reports.push_back(std::move(r.report));
    } catch (const Error& e) {
      EditReport failed;
      failed.edit_id = request.id;
      failed.error = std::string(e.kind()) + ": " + e.what();
      log_error("edit " + request.id + " failed: " + e.what());
      out.reports.push_back(std::move(failed));
    }
  }
  return out;
}

#define FINE_INSTANTIATE_EDITOR(T)                                                                                    \
  template Tensor<T> reference_log_probs(const ModelParameters<T>&, const EncodedRequest&);                           \
  template LossNodes<T> build_losses(Tape<T>&, const ModelParameters<T>&, const std::vector<NeuronId>&,               \
                                     const Var<T>&, const EncodedRequest&, const Tensor<T>&, const EditConfig&);      \
  template LossBreakdown compute_losses(const ModelParameters<T>&, const EditDelta<T>&, const EncodedRequest&,        \
                                        const EditConfig&);                                                           \
  template void apply_delta_in_place(ModelParameters<T>&, const EditDelta<T>&, RowSnapshot<T>*);                      \
  template ModelParameters<T> apply_delta(const ModelParameters<T>&, const EditDelta<T>&, RowSnapshot<T>*);           \
  template ModelParameters<T> revert_delta(const ModelParameters<T>&, const RowSnapshot<T>&);                         \
  template EditResult<T> learn_edit(const ModelParameters<T>&, const EncodedRequest&, const EditConfig&,              \
                                    const std::string&);                                                              \
  template EditResult<T> edit(const ModelParameters<T>&, const Tokenizer&, const EditRequest&, const EditConfig&);    \
  template MultiEditResult<T> edit_many(const ModelParameters<T>&, const Tokenizer&, const std::vector<EditRequest>&, \
                                        const EditConfig&);

FINE_INSTANTIATE_EDITOR(float)
FINE_INSTANTIATE_EDITOR(double)

}  // namespace fine
