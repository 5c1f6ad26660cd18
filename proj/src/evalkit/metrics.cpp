#include "fine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "fine/error.hpp"
#include "fine/kernels.hpp"

namespace fine {

namespace {

std::vector<TokenId> encode_prompt(const Tokenizer& tokenizer, const std::string& text) {
  std::vector<TokenId> ids{Tokenizer::kBos};
  for (TokenId id : tokenizer.encode(text)) ids.push_back(id);
  return ids;
}

std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Argmax token at each position predicting `continuation`.
template <typename T>
std::vector<TokenId> teacher_forced_argmax(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                                           std::span<const TokenId> continuation) {
  const auto seq = concat(prompt, continuation);
  const Tensor<T> logits = forward_logits(params, std::span<const TokenId>(seq));
  std::vector<TokenId> out;
  for (std::size_t j = 0; j < continuation.size(); ++j) out.push_back(argmax(logits.row(prompt.size() - 1 + j)));
  return out;
}

std::string visible_text(const Tokenizer& tokenizer, std::span<const TokenId> ids) {
  std::vector<TokenId> kept;
  for (TokenId id : ids) {
    if (id >= Tokenizer::kNumSpecial) kept.push_back(id);
  }
  return tokenizer.decode(kept);
}

}  // namespace

template <typename T>
double token_argmax_accuracy(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                             std::span<const TokenId> expected) {
  if (expected.empty()) throw InputError("token_argmax_accuracy: expected answer is empty");
  if (prompt.empty()) throw InputError("token_argmax_accuracy: empty prompt");
  const auto predicted = teacher_forced_argmax(params, prompt, expected);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < expected.size(); ++j) hits += predicted[j] == expected[j];
  return static_cast<double>(hits) / static_cast<double>(expected.size());
}

template <typename T>
std::vector<TokenId> greedy_continuation(const ModelParameters<T>& params, std::span<const TokenId> prompt,
                                         std::size_t max_new) {
  const auto full = generate(params, prompt, max_new);
  return std::vector<TokenId>(full.begin() + static_cast<std::ptrdiff_t>(prompt.size()), full.end());
}

template <typename T>
double argmax_agreement(const ModelParameters<T>& base, const ModelParameters<T>& edited,
                        std::span<const TokenId> prompt, std::span<const TokenId> continuation) {
  if (continuation.empty()) return 1.0;
  const auto a = teacher_forced_argmax(base, prompt, continuation);
  const auto b = teacher_forced_argmax(edited, prompt, continuation);
  std::size_t same = 0;
  for (std::size_t j = 0; j < a.size(); ++j) same += a[j] == b[j];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

bool contains_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

double ngram_entropy(std::span<const std::string> words, std::size_t n) {
  if (n == 0 || words.size() < n) throw InputError("ngram_entropy: text shorter than the n-gram order");
  std::map<std::vector<std::string>, std::size_t> counts;
  const std::size_t total = words.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                      words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  double h = 0;
  for (const auto& [gram, count] : counts) {
    const double f = static_cast<double>(count) / static_cast<double>(total);
    h -= f * std::log2(f);
  }
  return h == 0 ? 0.0 : h;  // normalizes -0
}

FluencyReport fluency(std::span<const std::string> texts) {
  FluencyReport r;
  for (const auto& text : texts) {
    const auto words = split_words(text);
    if (words.size() < 3) {
      ++r.excluded;
      continue;
    }
    TextFluency f;
    f.bigram_entropy = ngram_entropy(words, 2);
    f.trigram_entropy = ngram_entropy(words, 3);
    f.score = 0.5 * f.bigram_entropy + 0.5 * f.trigram_entropy;
    r.texts.push_back(f);
  }
  if (!r.texts.empty()) {
    for (const auto& f : r.texts) {
      r.mean_bigram += f.bigram_entropy;
      r.mean_trigram += f.trigram_entropy;
      r.mean_score += f.score;
    }
    const double n = static_cast<double>(r.texts.size());
    r.mean_bigram /= n;
    r.mean_trigram /= n;
    r.mean_score /= n;
  }
  return r;
}

MetricValue summarize(std::span<const double> values) {
  MetricValue m;
  m.n = values.size();
  if (values.empty()) return m;
  double sum = 0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(m.n);
  if (m.n < 2) return m;
  double ss = 0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  const double sd = std::sqrt(ss / static_cast<double>(m.n - 1));
  m.ci = 1.96 * sd / std::sqrt(static_cast<double>(m.n));
  return m;
}

MetricValue summarize_bootstrap(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  MetricValue m = summarize(values);
  if (values.size() < 2 || resamples < 2) {
    m.ci = 0;
    return m;
  }
  std::mt19937_64 rng(seed);
  std::vector<double> means(resamples);
  for (auto& mean : means) {
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[rng() % values.size()];
    mean = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  auto at = [&](double q) { return means[static_cast<std::size_t>(q * static_cast<double>(resamples - 1))]; };
  m.ci = 0.5 * (at(0.975) - at(0.025));
  return m;
}

nlohmann::json RecordMetrics::to_json() const {
  return {{"id", id},
          {"edit_success", edit_success},
          {"edit_success_exact", edit_success_exact},
          {"saa", saa},
          {"lga", lga},
          {"ra", ra},
          {"rsa", rsa},
          {"fa", fa},
          {"over_edited", over_edited},
          {"unchanged", unchanged},
          {"fluency_text", fluency_text}};
}

namespace {

nlohmann::json metric_json(const std::optional<MetricValue>& m) {
  if (!m) return nullptr;
  return {{"mean", m->mean}, {"ci95", m->ci}, {"n", m->n}};
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  return {{"n_records", n_records},
          {"edit_success", metric_json(edit_success)},
          {"edit_success_exact", metric_json(edit_success_exact)},
          {"saa", metric_json(saa)},
          {"saa_exact", metric_json(saa_exact)},
          {"lga", metric_json(lga)},
          {"lga_exact", metric_json(lga_exact)},
          {"ra", metric_json(ra)},
          {"ra_exact", metric_json(ra_exact)},
          {"rsa", metric_json(rsa)},
          {"fa", metric_json(fa)},
          {"fluency", metric_json(fluency)},
          {"fluency_excluded", fluency_excluded},
          {"over_editing_rate", metric_json(over_editing_rate)},
          {"unchanging_rate", metric_json(unchanging_rate)}};
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-20s %10s %10s %6s\n", "metric", "mean", "ci95", "n");
  out << line;
  auto row = [&](const char* name, const std::optional<MetricValue>& m) {
    if (m) {
      std::snprintf(line, sizeof line, "%-20s %10.4f %10.4f %6zu\n", name, m->mean, m->ci, m->n);
    } else {
      std::snprintf(line, sizeof line, "%-20s %10s %10s %6s\n", name, "absent", "-", "0");
    }
    out << line;
  };
  row("edit_success", edit_success);
  row("edit_success_exact", edit_success_exact);
  row("saa", saa);
  row("lga", lga);
  row("ra", ra);
  row("rsa", rsa);
  row("fa", fa);
  row("fluency", fluency);
  row("over_editing_rate", over_editing_rate);
  row("unchanging_rate", unchanging_rate);
  std::snprintf(line, sizeof line, "records: %zu\n", n_records);
  out << line;
  return out.str();
}

template <typename T>
RecordMetrics evaluate_record(const ModelParameters<T>& base, const ModelParameters<T>& edited,
                              const Tokenizer& tokenizer, const EvalRecord& record, const EvalOptions& options) {
  RecordMetrics m;
  m.id = record.id();
  const auto prompt = encode_prompt(tokenizer, record.edit.prompt);
  const auto target = tokenizer.encode(record.edit.target_new);
  m.edit_success = token_argmax_accuracy(edited, std::span<const TokenId>(prompt), std::span<const TokenId>(target));
  m.edit_success_exact = m.edit_success == 1.0 ? 1.0 : 0.0;

  auto portability = [&](const std::vector<PortabilityProbe>& probes, std::vector<double>& acc,
                         std::vector<double>& exact) {
    for (const auto& p : probes) {
      const auto pp = encode_prompt(tokenizer, p.prompt);
      const auto gt = tokenizer.encode(p.ground_truth);
      const double a = token_argmax_accuracy(edited, std::span<const TokenId>(pp), std::span<const TokenId>(gt));
      acc.push_back(a);
      exact.push_back(a == 1.0 ? 1.0 : 0.0);
    }
  };
  portability(record.saa, m.saa, m.saa_exact);
  portability(record.lga, m.lga, m.lga_exact);
  portability(record.ra, m.ra, m.ra_exact);

  auto locality = [&](const std::vector<LocalityProbe>& probes, std::vector<double>& agreement) {
    for (const auto& p : probes) {
      const auto pp = encode_prompt(tokenizer, p.prompt);
      const std::span<const TokenId> ps(pp);
      const auto base_cont = greedy_continuation(base, ps, options.locality_length);
      const auto edit_cont = greedy_continuation(edited, ps, options.locality_length);
      agreement.push_back(argmax_agreement(base, edited, ps, std::span<const TokenId>(base_cont)));
      m.over_edited.push_back(contains_subsequence(edit_cont, target) ? 1.0 : 0.0);
      m.unchanged.push_back(edit_cont == base_cont ? 1.0 : 0.0);
    }
  };
  locality(record.rsa, m.rsa);
  locality(record.fa, m.fa);

  const auto generated = generate(edited, std::span<const TokenId>(prompt), options.fluency_length);
  m.fluency_text = visible_text(tokenizer, generated);
  return m;
}

MetricsReport aggregate(std::span<const RecordMetrics> per_record, const EvalOptions& options) {
  MetricsReport r;
  r.n_records = per_record.size();
  std::vector<double> es, es_exact, saa, lga, ra, saa_x, lga_x, ra_x, rsa, fa, over, unchanged;
  std::vector<std::string> texts;
  auto append = [](std::vector<double>& dst, const std::vector<double>& src) { dst.insert(dst.end(), src.begin(), src.end()); };
  for (const auto& m : per_record) {
    es.push_back(m.edit_success);
    es_exact.push_back(m.edit_success_exact);
    append(saa, m.saa);
    append(lga, m.lga);
    append(ra, m.ra);
    append(saa_x, m.saa_exact);
    append(lga_x, m.lga_exact);
    append(ra_x, m.ra_exact);
    append(rsa, m.rsa);
    append(fa, m.fa);
    append(over, m.over_edited);
    append(unchanged, m.unchanged);
    texts.push_back(m.fluency_text);
  }
  std::uint64_t salt = 0;
  auto metric = [&](const std::vector<double>& v) -> std::optional<MetricValue> {
    ++salt;
    if (v.empty()) return std::nullopt;
    return options.bootstrap ? summarize_bootstrap(v, options.bootstrap_resamples, options.seed + salt) : summarize(v);
  };
  r.edit_success = metric(es);
  r.edit_success_exact = metric(es_exact);
  r.saa = metric(saa);
  r.lga = metric(lga);
  r.ra = metric(ra);
  r.saa_exact = metric(saa_x);
  r.lga_exact = metric(lga_x);
  r.ra_exact = metric(ra_x);
  r.rsa = metric(rsa);
  r.fa = metric(fa);
  r.over_editing_rate = metric(over);
  r.unchanging_rate = metric(unchanged);
  const FluencyReport f = fluency(texts);
  std::vector<double> scores;
  for (const auto& t : f.texts) scores.push_back(t.score);
  r.fluency = metric(scores);
  r.fluency_excluded = f.excluded;
  return r;
}

template <typename T>
MetricsReport evaluate(const ModelParameters<T>& base, const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                       const std::vector<EvalRecord>& records, const EvalOptions& options,
                       std::vector<RecordMetrics>* per_record) {
  if (!(base.config == edited.config)) throw ConfigError("evaluate: base and edited models have different configs");
  std::vector<RecordMetrics> metrics(records.size());
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, records.size()));
  std::vector<std::exception_ptr> errors(jobs);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < records.size(); i += jobs) {
        metrics[i] = evaluate_record(base, edited, tokenizer, records[i], options);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  MetricsReport report = aggregate(metrics, options);
  if (per_record) *per_record = std::move(metrics);
  return report;
}

template <typename T>
PerRecordRun evaluate_per_record(const ModelParameters<T>& base, const Tokenizer& tokenizer,
                                 const std::vector<EvalRecord>& records, const EditConfig& config,
                                 const EvalOptions& options) {
  config.validate(base.config.num_layers);
  PerRecordRun run;
  run.metrics.resize(records.size());
  run.reports.resize(records.size());
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, records.size()));
  std::vector<std::exception_ptr> errors(jobs);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < records.size(); i += jobs) {
        const EvalRecord& rec = records[i];
        try {
          EditResult<T> r = edit(base, tokenizer, rec.edit, config);
          run.reports[i] = std::move(r.report);
          run.metrics[i] = evaluate_record(base, r.edited, tokenizer, rec, options);
        } catch (const EditError& e) {
          // The edit could not be learned; the record is scored on the unedited model.
          run.reports[i].edit_id = rec.id();
          run.reports[i].error = std::string(e.kind()) + ": " + e.what();
          run.metrics[i] = evaluate_record(base, base, tokenizer, rec, options);
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  run.summary = aggregate(run.metrics, options);
  return run;
}

template <typename T>
double over_editing_rate(const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                         const std::vector<EvalRecord>& records, std::size_t max_new) {
  std::size_t hits = 0, total = 0;
  for (const auto& rec : records) {
    const auto target = tokenizer.encode(rec.edit.target_new);
    auto scan = [&](const auto& probes) {
      for (const auto& p : probes) {
        const auto pp = encode_prompt(tokenizer, p.prompt);
        hits += contains_subsequence(greedy_continuation(edited, std::span<const TokenId>(pp), max_new), target);
        ++total;
      }
    };
    scan(rec.rsa);
    scan(rec.fa);
  }
  if (total == 0) throw InputError("over_editing_rate: records carry no locality probes");
  return static_cast<double>(hits) / static_cast<double>(total);
}

template <typename T>
double unchanging_rate(const ModelParameters<T>& base, const ModelParameters<T>& edited, const Tokenizer& tokenizer,
                       const std::vector<EvalRecord>& records, std::size_t max_new) {
  std::size_t same = 0, total = 0;
  for (const auto& rec : records) {
    auto scan = [&](const auto& probes) {
      for (const auto& p : probes) {
        const auto pp = encode_prompt(tokenizer, p.prompt);
        const std::span<const TokenId> ps(pp);
        same += greedy_continuation(base, ps, max_new) == greedy_continuation(edited, ps, max_new);
        ++total;
      }
    };
    scan(rec.rsa);
    scan(rec.fa);
  }
  if (total == 0) throw InputError("unchanging_rate: records carry no locality probes");
  return static_cast<double>(same) / static_cast<double>(total);
}

double sign_test_p_value(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  // log C(n, x) - n log 2, summed in probability space.
  double p = 0;
  for (std::size_t x = wins; x <= n; ++x) {
    const double log_term = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(x) + 1) -
                            std::lgamma(static_cast<double>(n - x) + 1) - static_cast<double>(n) * std::log(2.0);
    p += std::exp(log_term);
  }
  return std::min(1.0, p);
}

#define FINE_INSTANTIATE_METRICS(T)                                                                                  \
  template double token_argmax_accuracy(const ModelParameters<T>&, std::span<const TokenId>,                         \
                                        std::span<const TokenId>);                                                   \
  template std::vector<TokenId> greedy_continuation(const ModelParameters<T>&, std::span<const TokenId>, std::size_t); \
  template double argmax_agreement(const ModelParameters<T>&, const ModelParameters<T>&, std::span<const TokenId>,   \
                                   std::span<const TokenId>);                                                        \
  template RecordMetrics evaluate_record(const ModelParameters<T>&, const ModelParameters<T>&, const Tokenizer&,      \
                                         const EvalRecord&, const EvalOptions&);                                     \
  template MetricsReport evaluate(const ModelParameters<T>&, const ModelParameters<T>&, const Tokenizer&,            \
                                  const std::vector<EvalRecord>&, const EvalOptions&, std::vector<RecordMetrics>*);  \
  template PerRecordRun evaluate_per_record(const ModelParameters<T>&, const Tokenizer&,                            \
                                            const std::vector<EvalRecord>&, const EditConfig&, const EvalOptions&);  \
  template double over_editing_rate(const ModelParameters<T>&, const Tokenizer&, const std::vector<EvalRecord>&,     \
                                    std::size_t);                                                                    \
  template double unchanging_rate(const ModelParameters<T>&, const ModelParameters<T>&, const Tokenizer&,            \
                                  const std::vector<EvalRecord>&, std::size_t);

FINE_INSTANTIATE_METRICS(float)
FINE_INSTANTIATE_METRICS(double)

}  // namespace fine
