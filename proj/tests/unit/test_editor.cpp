#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "fine/editor.hpp"
#include "fine/error.hpp"
#include "fine/kernels.hpp"
#include "fine/metrics.hpp"

using namespace fine;
using test::random_model;
using test::tiny_world;
using test::toy_config;

namespace {

EncodedRequest toy_request() {
  EncodedRequest r;
  r.prompt = {Tokenizer::kBos, 5, 6, 7};
  r.target_true = {11};
  r.target_new = {9, 10};
  return r;
}

template <typename T>
EditDelta<T> random_delta(const std::vector<NeuronId>& neurons, std::size_t d_h, std::uint64_t seed, double scale) {
  EditDelta<T> d;
  d.neurons = neurons;
  d.rows = Tensor<T>({neurons.size(), d_h});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& x : d.rows.data()) x = static_cast<T>(normal(rng));
  return d;
}

// Independent NLL of `target` after `prompt`, from a plain forward pass.
double independent_nll(const ModelParameters<double>& p, const EncodedRequest& r) {
  std::vector<TokenId> seq = r.prompt;
  seq.insert(seq.end(), r.target_new.begin(), r.target_new.end());
  auto lp = log_softmax(forward_logits(p, std::span<const TokenId>(seq)));
  double nll = 0;
  for (std::size_t j = 0; j < r.target_new.size(); ++j) nll -= lp(r.prompt.size() - 1 + j, r.target_new[j]);
  return nll;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fine_unit_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

EditConfig tiny_config() {
  EditConfig c;
  c.lr = 1e-2;
  c.frozen_layers = 2;
  return c;
}

}  // namespace

TEST_SUITE("editor") {

TEST_CASE("analytic gradient of the edit objective matches central differences") {
  auto base = random_model<double>(toy_config(2), 31, 0.3);
  auto req = toy_request();
  EditConfig cfg;
  cfg.frozen_layers = 1;
  auto loc = locate(base, std::span<const TokenId>(req.prompt), std::span<const TokenId>(req.target_true), 3, 1);
  auto delta = random_delta<double>(loc.neurons, 16, 5, 0.2);
  auto reference = reference_log_probs(base, req);

  Tape<double> tape;
  auto z = tape.leaf(delta.rows);
  auto nodes = build_losses(tape, base, delta.neurons, z, req, reference, cfg);
  const Var<double> leaves[] = {z};
  auto grad = tape.backward(nodes.total, leaves)[0];

  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < delta.rows.size(); ++i) {
    auto plus = delta, minus = delta;
    plus.rows[i] += h;
    minus.rows[i] -= h;
    const double fd = (compute_losses(base, plus, req, cfg).total - compute_losses(base, minus, req, cfg).total) / (2 * h);
    worst = std::max(worst, std::abs(grad[i] - fd) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("null edit: zero KL, edit loss equals the base NLL, weights combine linearly") {
  auto base = random_model<double>(toy_config(2), 32, 0.3);
  auto req = toy_request();
  EditConfig cfg;
  cfg.frozen_layers = 1;
  auto loc = locate(base, std::span<const TokenId>(req.prompt), std::span<const TokenId>(req.target_true), 3, 1);
  EditDelta<double> zero;
  zero.neurons = loc.neurons;
  zero.rows = Tensor<double>({loc.neurons.size(), 16});
  auto b = compute_losses(base, zero, req, cfg);
  CHECK(b.kl == 0.0);
  CHECK(b.edit == doctest::Approx(independent_nll(base, req)).epsilon(1e-12));
  CHECK(b.total == (b.edit + 1.0 * b.kl) + 10.0 * b.penalty);
  CHECK(std::abs(b.total - b.edit - 1.0 * b.kl - 10.0 * b.penalty) <= 1e-15 * b.total);
  CHECK(b.penalty > 0.0);

  // penalty is -log(1 - P(first new token)) at the last position of prompt ++ o*
  std::vector<TokenId> seq{Tokenizer::kBos, 5, 6, 7, 9, 10};
  auto lp = log_softmax(forward_logits(base, std::span<const TokenId>(seq)));
  CHECK(b.penalty == doctest::Approx(-std::log(1.0 - std::exp(lp(5, 9)))).epsilon(1e-10));
  CHECK(b.target_probability == doctest::Approx(std::exp(-b.edit / 2.0)).epsilon(1e-12));

  EditDelta<double> empty;
  auto e = compute_losses(base, empty, req, cfg);
  CHECK(e.kl == 0.0);
  CHECK(e.edit == b.edit);

  auto nonzero = random_delta<double>(loc.neurons, 16, 6, 0.5);
  cfg.alpha = 2.5;
  cfg.beta = 0.5;
  auto w = compute_losses(base, nonzero, req, cfg);
  CHECK(w.kl > 0.0);
  CHECK(w.total == (w.edit + 2.5 * w.kl) + 0.5 * w.penalty);
}

TEST_CASE("apply, revert and the changed-value footprint") {
  auto base = random_model<float>(toy_config(3), 33);
  EditDelta<float> empty;
  CHECK(bit_equal(apply_delta(base, empty), base));

  EditDelta<float> unit;
  unit.neurons = {{1, 4}};
  unit.rows = Tensor<float>({1, 16});
  unit.rows[0] = 1.0f;
  auto e1 = apply_delta(base, unit);
  std::size_t changed = 0;
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < base.layers[l].w_out.size(); ++i) changed += base.layers[l].w_out[i] != e1.layers[l].w_out[i];
  CHECK(changed == 1);
  CHECK(e1.layers[1].w_out(4, 0) == base.layers[1].w_out(4, 0) + 1.0f);

  auto dense = random_delta<float>({{0, 2}, {2, 9}}, 16, 7, 1.0);
  RowSnapshot<float> snap;
  auto ed = apply_delta(base, dense, &snap);
  std::size_t diffs = 0;
  for_each_tensor(base, [&](const std::string&, const Tensor<float>&) {});
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < base.layers[l].w_out.size(); ++i) diffs += base.layers[l].w_out[i] != ed.layers[l].w_out[i];
  CHECK(diffs == 2 * 16);
  CHECK(bit_equal(revert_delta(ed, snap), base));

  dense.fingerprint = fingerprint(base);
  CHECK_NOTHROW(apply_delta(base, dense));
  dense.fingerprint ^= 1;
  CHECK_THROWS_AS(apply_delta(base, dense), EditError);

  EditDelta<float> outside;
  outside.neurons = {{3, 0}};
  outside.rows = Tensor<float>({1, 16});
  CHECK_THROWS_AS(apply_delta(base, outside), EditError);
  outside.neurons = {{0, 32}};
  CHECK_THROWS_AS(apply_delta(base, outside), EditError);
}

TEST_CASE("disjoint deltas commute") {
  auto base = random_model<double>(toy_config(3), 34);
  auto a = random_delta<double>({{0, 1}, {1, 3}}, 16, 8, 0.5);
  auto b = random_delta<double>({{0, 2}, {2, 3}}, 16, 9, 0.5);
  auto ab = apply_delta(apply_delta(base, a), b);
  auto ba = apply_delta(apply_delta(base, b), a);
  CHECK(bit_equal(ab, ba));
}

TEST_CASE("modified parameter counts") {
  CHECK(count_modified_params(1, 8) == 8);
  CHECK(count_modified_params(10, 128) == 1280);
  EditDelta<float> d;
  CHECK(count_modified_params(d) == 0);
  d.neurons = {{0, 1}, {0, 2}, {1, 0}};
  d.rows = Tensor<float>({3, 128});
  CHECK(count_modified_params(d) == 384);
}

TEST_CASE("edit config validation and json") {
  EditConfig c;
  CHECK_NOTHROW(c.validate(6));
  CHECK_THROWS_AS(c.validate(3), ConfigError);
  c.k = 0;
  CHECK_THROWS_AS(c.validate(6), ConfigError);
  c = EditConfig{};
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(6), ConfigError);
  c = EditConfig{};
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(6), ConfigError);

  c = EditConfig{};
  c.k = 7;
  c.selection = NeuronSelection::random;
  auto back = EditConfig::from_json(c.to_json());
  CHECK(back.k == 7);
  CHECK(back.selection == NeuronSelection::random);
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(EditConfig::from_json({{"gamma", 1}}), ConfigError);
  CHECK_THROWS_AS(EditConfig::from_json({{"selection", "best"}}), ConfigError);
  CHECK_THROWS_AS(EditConfig::from_json({{"k", "five"}}), ConfigError);
}

TEST_CASE("edit requests parse and encode") {
  auto r = EditRequest::from_json({{"prompt", "a b"}, {"target_new", "c"}, {"ground_truth", "d"}, {"subject", "a"}});
  CHECK(r.target_true == "d");
  CHECK(r.subject == "a");
  CHECK_THROWS_AS(EditRequest::from_json({{"target_new", "c"}}), InputError);
  CHECK_THROWS_AS(EditRequest::from_json({{"prompt", 3}, {"target_new", "c"}}), InputError);

  auto tok = Tokenizer::from_lines(std::vector<std::string>{"a b c d"});
  auto enc = encode_request(tok, r);
  CHECK(enc.prompt == std::vector<TokenId>{Tokenizer::kBos, tok.id("a"), tok.id("b")});
  CHECK(enc.target_new == std::vector<TokenId>{tok.id("c")});
  r.target_new = "zz";
  CHECK_THROWS_AS(encode_request(tok, r), InputError);
  r.target_new = "";
  CHECK_THROWS_AS(encode_request(tok, r), InputError);
}

TEST_CASE("learned edits reach the target, stop early and stay sparse") {
  const auto& w = tiny_world();
  const auto cfg = tiny_config();
  const auto& rec = w.dataset.records[0];
  auto res = edit(w.params, w.tokenizer, rec.edit, cfg);
  auto enc = encode_request(w.tokenizer, rec.edit);

  CHECK(res.report.early_stopped);
  CHECK(res.report.steps < cfg.max_steps);
  CHECK(res.report.final.target_probability >= 0.9);
  CHECK(res.report.final.total < res.report.initial.total);
  CHECK(token_argmax_accuracy(res.edited, std::span<const TokenId>(enc.prompt),
                              std::span<const TokenId>(enc.target_new)) == 1.0);

  // only the delta's W_out rows change; frozen layers are untouched
  const std::set<NeuronId> rows(res.delta.neurons.begin(), res.delta.neurons.end());
  for (const auto& n : rows) CHECK(n.layer < 4 - cfg.frozen_layers);
  CHECK(res.delta.neurons.size() <= cfg.k * enc.target_true.size());
  CHECK(res.report.modified_params == res.delta.neurons.size() * 32);
  std::size_t outside = 0;
  for_each_tensor(w.params, [&](const std::string&, const Tensor<float>&) {});
  for (std::size_t l = 0; l < 4; ++l) {
    const auto& L0 = w.params.layers[l];
    const auto& L1 = res.edited.layers[l];
    CHECK(bit_equal(L0.w_in, L1.w_in));
    CHECK(bit_equal(L0.wq, L1.wq));
    for (std::size_t i = 0; i < L0.w_out.dim(0); ++i)
      for (std::size_t d = 0; d < 32; ++d)
        if (L0.w_out(i, d) != L1.w_out(i, d) && !rows.count(NeuronId{l, i})) ++outside;
  }
  CHECK(outside == 0);
  CHECK(bit_equal(w.params.unembedding, res.edited.unembedding));

  // deterministic
  auto again = edit(w.params, w.tokenizer, rec.edit, cfg);
  CHECK(bit_equal(again.delta.rows, res.delta.rows));
  CHECK(again.report.to_json() == res.report.to_json());
}

TEST_CASE("random selection draws the same number of eligible neurons") {
  const auto& w = tiny_world();
  auto cfg = tiny_config();
  const auto& rec = w.dataset.records[1];
  auto located = edit(w.params, w.tokenizer, rec.edit, cfg);
  cfg.selection = NeuronSelection::random;
  auto random = edit(w.params, w.tokenizer, rec.edit, cfg);
  CHECK(random.delta.neurons.size() == located.delta.neurons.size());
  for (const auto& n : random.delta.neurons) CHECK(n.layer < 2);
  CHECK(random.delta.neurons != located.delta.neurons);
  auto again = edit(w.params, w.tokenizer, rec.edit, cfg);
  CHECK(again.delta.neurons == random.delta.neurons);
}

TEST_CASE("sequential editing: one request equals a single edit, failures are recorded") {
  const auto& w = tiny_world();
  const auto cfg = tiny_config();
  const auto& rec = w.dataset.records[2];
  auto single = edit(w.params, w.tokenizer, rec.edit, cfg);
  auto many = edit_many(w.params, w.tokenizer, {rec.edit}, cfg);
  CHECK(bit_equal(many.edited, single.edited));

  EditRequest broken = w.dataset.records[3].edit;
  broken.target_new = "no_such_word";
  broken.id = "broken";
  auto run = edit_many(w.params, w.tokenizer, {rec.edit, broken, w.dataset.records[4].edit}, cfg);
  REQUIRE(run.reports.size() == 3);
  CHECK(run.reports[0].error.empty());
  CHECK(run.reports[1].error.find("no_such_word") != std::string::npos);
  CHECK(run.reports[1].to_json().contains("error"));
  CHECK(run.reports[2].error.empty());
  auto two = edit_many(w.params, w.tokenizer, {rec.edit, w.dataset.records[4].edit}, cfg);
  CHECK(bit_equal(run.edited, two.edited));
  CHECK_THROWS_AS(edit_many(w.params, w.tokenizer, {}, cfg), InputError);
}

TEST_CASE("delta files round-trip and reject corruption") {
  auto d = random_delta<float>({{0, 1}, {2, 5}}, 16, 10, 1.0);
  d.fingerprint = 0x1234abcdULL;
  save_delta(d, temp_path("d.delta"));
  auto back = load_delta<float>(temp_path("d.delta"));
  CHECK(back.neurons == d.neurons);
  CHECK(bit_equal(back.rows, d.rows));
  CHECK(back.fingerprint == d.fingerprint);
  CHECK_THROWS_AS(load_delta<double>(temp_path("d.delta")), ConfigError);

  std::ifstream in(temp_path("d.delta"), std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  in.close();
  {
    std::ofstream out(temp_path("d.delta"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  CHECK_THROWS_AS(load_delta<float>(temp_path("d.delta")), CorruptCheckpointError);
  CHECK_THROWS_AS(load_delta<float>(temp_path("missing.delta")), IoError);
}

}  // TEST_SUITE
