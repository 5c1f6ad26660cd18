#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fine/model.hpp"
#include "fine/tokenizer.hpp"

namespace fine {

struct PretrainOptions {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double min_lr_ratio = 0.1;  // cosine decay floor as a fraction of lr
  std::size_t warmup_steps = 50;
  double weight_decay = 0.0;  // decoupled, applied to matrices only
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0;
};

struct PretrainReport {
  std::size_t steps = 0;
  std::vector<LossPoint> loss_curve;  // full-corpus loss at step 0, every eval_every steps, and the end
  double initial_loss = 0;
  double final_loss = 0;
};

// Wraps each line as <bos> words <eos>. Throws InputError naming the 1-based line
// number of the first untokenizable line.
std::vector<std::vector<TokenId>> tokenize_corpus(const Tokenizer& tokenizer, std::span<const std::string> lines);

// Mean next-token NLL over every predicted position of every sequence.
template <typename T>
double corpus_loss(const ModelParameters<T>& params, const std::vector<std::vector<TokenId>>& sequences);

// Minibatch Adam on next-token NLL. Deterministic for a fixed seed.
template <typename T>
PretrainReport pretrain(ModelParameters<T>& params, const std::vector<std::vector<TokenId>>& sequences,
                        const PretrainOptions& options);

}  // namespace fine
