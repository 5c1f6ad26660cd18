#include "fine/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "fine/adam.hpp"
#include "fine/kernels.hpp"
#include "fine/error.hpp"
#include "fine/log.hpp"

namespace fine {

std::vector<std::vector<TokenId>> tokenize_corpus(const Tokenizer& tokenizer, std::span<const std::string> lines) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (split_words(lines[i]).empty()) continue;
    std::vector<TokenId> seq{Tokenizer::kBos};
    try {
      for (TokenId id : tokenizer.encode(lines[i])) seq.push_back(id);
    } catch (const InputError& e) {
      throw InputError("corpus line " + std::to_string(i + 1) + ": " + e.what());
    }
    seq.push_back(Tokenizer::kEos);
    out.push_back(std::move(seq));
  }
  return out;
}

namespace {

// Rows and targets of every next-token prediction inside a packed batch.
void prediction_rows(const std::vector<std::vector<TokenId>>& batch, std::vector<std::size_t>& rows,
                     std::vector<std::size_t>& targets) {
  std::size_t offset = 0;
  for (const auto& seq : batch) {
    for (std::size_t p = 0; p + 1 < seq.size(); ++p) {
      rows.push_back(offset + p);
      targets.push_back(seq[p + 1]);
    }
    offset += seq.size();
  }
}

double lr_at(const PretrainOptions& o, std::size_t step) {
  if (o.warmup_steps > 0 && step < o.warmup_steps) {
    return o.lr * static_cast<double>(step + 1) / static_cast<double>(o.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, o.steps - std::min(o.steps, o.warmup_steps)));
  const double progress = std::min(1.0, static_cast<double>(step - std::min(step, o.warmup_steps)) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return o.lr * (o.min_lr_ratio + (1.0 - o.min_lr_ratio) * cosine);
}

}  // namespace

template <typename T>
double corpus_loss(const ModelParameters<T>& params, const std::vector<std::vector<TokenId>>& sequences) {
  constexpr std::size_t kChunk = 64;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < sequences.size(); begin += kChunk) {
    const std::size_t end = std::min(sequences.size(), begin + kChunk);
    std::vector<std::vector<TokenId>> batch(sequences.begin() + begin, sequences.begin() + end);
    std::vector<std::size_t> rows, targets;
    prediction_rows(batch, rows, targets);
    if (rows.empty()) continue;
    Tape<T> tape;
    auto nodes = build_forward(tape, bind_constants(tape, params), batch);
    const Tensor<T> logp = log_softmax(nodes.logits.value());
    for (std::size_t i = 0; i < rows.size(); ++i) total -= static_cast<double>(logp(rows[i], targets[i]));
    count += rows.size();
  }
  if (count == 0) throw InputError("corpus_loss: no predictable positions");
  return total / static_cast<double>(count);
}

template <typename T>
PretrainReport pretrain(ModelParameters<T>& params, const std::vector<std::vector<TokenId>>& sequences,
                        const PretrainOptions& options) {
  if (sequences.empty()) throw InputError("pretrain: empty corpus");
  if (options.batch_size == 0) throw ConfigError("pretrain: batch_size must be positive");
  if (!(options.lr > 0)) throw ConfigError("pretrain: lr must be positive");
  if (!(options.label_smoothing >= 0 && options.label_smoothing < 1)) {
    throw ConfigError("pretrain: label_smoothing must lie in [0, 1)");
  }
  if (options.eval_every == 0) throw ConfigError("pretrain: eval_every must be positive");
  validate_parameters(params);

  std::vector<Tensor<T>*> tensors;
  std::vector<Shape> shapes;
  for_each_tensor(params, [&](const std::string&, Tensor<T>& t) {
    tensors.push_back(&t);
    shapes.push_back(t.shape());
  });
  AdamOptions adam;
  adam.lr = options.lr;
  AdamState<T> state(adam, shapes);

  PretrainReport report;
  report.initial_loss = corpus_loss(params, sequences);
  report.loss_curve.push_back({0, report.initial_loss});

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::vector<TokenId>> batch;
    while (batch.size() < options.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(sequences[order[cursor++]]);
      if (batch.size() == sequences.size()) break;
    }
    std::vector<std::size_t> rows, targets;
    prediction_rows(batch, rows, targets);
    if (rows.empty()) continue;

    std::vector<Tensor<T>> grads;
    {
      Tape<T> tape;
      auto bound = bind_trainable(tape, params);
      auto nodes = build_forward(tape, bound, batch);
      Var<T> logp = log_softmax(nodes.logits);
      Var<T> nll = scale(mean(pick(logp, rows, targets)), static_cast<T>(options.label_smoothing - 1.0));
      if (options.label_smoothing > 0) {
        nll = sub(nll, scale(mean(select_rows(logp, rows)), static_cast<T>(options.label_smoothing)));
      }
      const auto leaves = bound.all();
      grads = tape.backward(nll, leaves);
    }
    const double lr = lr_at(options, step);
    state.set_lr(lr);
    if (options.weight_decay > 0) {
      const T keep = static_cast<T>(1.0 - lr * options.weight_decay);
      for (auto* t : tensors) {
        if (t->rank() == 2) {
          for (auto& x : t->data()) x *= keep;
        }
      }
    }
    adam_step<T>(tensors, grads, state);

    const std::size_t done = step + 1;
    if (done % options.eval_every == 0 || done == options.steps) {
      const double loss = corpus_loss(params, sequences);
      if (!std::isfinite(loss)) throw NumericError("pretrain: corpus loss diverged at step " + std::to_string(done));
      report.loss_curve.push_back({done, loss});
      log_debug("pretrain step " + std::to_string(done) + " loss " + std::to_string(loss));
    }
  }
  report.steps = options.steps;
  report.final_loss = report.loss_curve.back().loss;
  return report;
}

template double corpus_loss(const ModelParameters<float>&, const std::vector<std::vector<TokenId>>&);
template double corpus_loss(const ModelParameters<double>&, const std::vector<std::vector<TokenId>>&);
template PretrainReport pretrain(ModelParameters<float>&, const std::vector<std::vector<TokenId>>&,
                                 const PretrainOptions&);
template PretrainReport pretrain(ModelParameters<double>&, const std::vector<std::vector<TokenId>>&,
                                 const PretrainOptions&);

}  // namespace fine
