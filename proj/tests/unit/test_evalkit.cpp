#include <cmath>
#include <filesystem>
#include <algorithm>
#include <set>
#include <sstream>
#include <utility>

#include "doctest.h"
#include "helpers.hpp"

#include "fine/dataset.hpp"
#include "fine/error.hpp"
#include "fine/kernels.hpp"
#include "fine/metrics.hpp"
#include "fine/records.hpp"

using namespace fine;
using test::random_model;
using test::toy_config;

namespace {

// w0 .. w19 fill the 24-token toy vocabulary.
Tokenizer word_tokenizer() {
  Tokenizer tok;
  for (int i = 0; i < 20; ++i) tok.add_word("w" + std::to_string(i));
  return tok;
}

// Attention silenced, so each position's logits depend only on its own token and position.
ModelParameters<double> position_local_model(std::uint64_t seed) {
  auto p = random_model<double>(toy_config(2, 16, 32, 24, 2, 24), seed);
  for (auto& L : p.layers) L.wo.fill(0.0);
  return p;
}

EvalRecord toy_record() {
  EvalRecord r;
  r.edit.id = "r0";
  r.edit.prompt = "w1 w2 w3";
  r.edit.target_true = "w4";
  r.edit.target_new = "w5";
  r.saa.push_back({"w6 w2 w3", "w5"});
  r.rsa.push_back({"w1 w7", "w8"});
  r.rsa.push_back({"w1 w9", "w10"});
  r.fa.push_back({"w11 w12", "w13"});
  return r;
}

std::vector<std::string> words(const std::string& s) { return split_words(s); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("token accuracy under teacher forcing") {
  auto p = random_model<double>(toy_config(2), 41);
  std::vector<TokenId> prompt{2, 5, 6};
  auto greedy = greedy_continuation(p, std::span<const TokenId>(prompt), 3);
  std::vector<TokenId> expected(greedy.begin(), greedy.end());
  CHECK(token_argmax_accuracy(p, std::span<const TokenId>(prompt), std::span<const TokenId>(expected)) == 1.0);

  // second token wrong
  auto logits = forward_logits(p, std::span<const TokenId>(prompt));
  const TokenId first = argmax(std::as_const(logits).row(2));
  std::vector<TokenId> seq = prompt;
  seq.push_back(first);
  auto l2 = forward_logits(p, std::span<const TokenId>(seq));
  const TokenId best2 = argmax(std::as_const(l2).row(3));
  std::vector<TokenId> half{first, best2 == 7 ? TokenId{8} : TokenId{7}};
  CHECK(token_argmax_accuracy(p, std::span<const TokenId>(prompt), std::span<const TokenId>(half)) == 0.5);

  std::vector<TokenId> none;
  CHECK_THROWS_AS(token_argmax_accuracy(p, std::span<const TokenId>(prompt), std::span<const TokenId>(none)), InputError);
}

TEST_CASE("agreement drops by exactly the flipped position") {
  auto base = position_local_model(42);
  std::vector<TokenId> prompt{2, 5, 6};
  std::vector<TokenId> cont{7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  const std::size_t p0 = prompt.size() - 1;

  std::vector<TokenId> seq = prompt;
  seq.insert(seq.end(), cont.begin(), cont.end());
  auto lb = forward_logits(base, std::span<const TokenId>(seq));
  const TokenId before = argmax(std::as_const(lb).row(p0));

  ModelParameters<double> edited;
  bool flipped = false;
  for (TokenId c = 4; c < 24 && !flipped; ++c) {
    edited = base;
    for (std::size_t d = 0; d < 16; ++d) edited.position_embedding(p0, d) += 50.0 * base.unembedding(c, d);
    auto le = forward_logits(edited, std::span<const TokenId>(seq));
    flipped = argmax(std::as_const(le).row(p0)) != before;
    for (std::size_t r = 0; r < seq.size(); ++r)
      if (r != p0) REQUIRE(argmax(std::as_const(le).row(r)) == argmax(std::as_const(lb).row(r)));
  }
  REQUIRE(flipped);
  CHECK(argmax_agreement(base, edited, std::span<const TokenId>(prompt), std::span<const TokenId>(cont)) ==
        doctest::Approx(0.9));
  CHECK(argmax_agreement(base, base, std::span<const TokenId>(prompt), std::span<const TokenId>(cont)) == 1.0);
  std::vector<TokenId> empty;
  CHECK(argmax_agreement(base, edited, std::span<const TokenId>(prompt), std::span<const TokenId>(empty)) == 1.0);
}

TEST_CASE("contains_subsequence") {
  std::vector<TokenId> hay{1, 2, 3, 4};
  std::vector<TokenId> yes{2, 3}, no{3, 2}, empty, longer{1, 2, 3, 4, 5};
  CHECK(contains_subsequence(hay, yes));
  CHECK_FALSE(contains_subsequence(hay, no));
  CHECK_FALSE(contains_subsequence(hay, longer));
  CHECK(contains_subsequence(hay, empty));
}

TEST_CASE("an unedited model is perfectly local and unchanged") {
  auto tok = word_tokenizer();
  auto base = random_model<double>(toy_config(2), 43);
  std::vector<EvalRecord> records{toy_record()};
  EvalOptions o;
  auto r = evaluate(base, base, tok, records, o);
  CHECK(r.rsa->mean == 1.0);
  CHECK(r.fa->mean == 1.0);
  CHECK(r.unchanging_rate->mean == 1.0);
  CHECK(unchanging_rate(base, base, tok, records) == 1.0);

  auto prompt = test::with_bos(tok, "w1 w2 w3");
  auto target = tok.encode("w5");
  CHECK(r.edit_success->mean == token_argmax_accuracy(base, std::span<const TokenId>(prompt), std::span<const TokenId>(target)));
  CHECK_FALSE(r.lga.has_value());
  CHECK(r.to_json()["lga"].is_null());
  CHECK(r.to_json()["ra"].is_null());
  CHECK(r.n_records == 1);
}

TEST_CASE("a model that always emits the new object is fully over-edited") {
  auto tok = word_tokenizer();
  auto base = random_model<double>(toy_config(2), 44);
  auto edited = base;
  const TokenId target = tok.id("w5");
  edited.final_norm_gain.fill(0.0);
  edited.final_norm_bias.fill(0.25);
  edited.unembedding.fill(0.0);
  for (std::size_t d = 0; d < 16; ++d) edited.unembedding(target, d) = 0.25;
  std::vector<EvalRecord> records{toy_record()};
  CHECK(over_editing_rate(edited, tok, records) == 1.0);
  auto r = evaluate(base, edited, tok, records, EvalOptions{});
  CHECK(r.over_editing_rate->mean == 1.0);
  CHECK(r.edit_success->mean == 1.0);
  CHECK(r.saa->mean == 1.0);
}

TEST_CASE("evaluation is independent of record order and job count") {
  const auto& w = test::tiny_world();
  EditConfig cfg;
  cfg.lr = 1e-2;
  cfg.frozen_layers = 2;
  auto e = edit(w.params, w.tokenizer, w.dataset.records[0].edit, cfg);
  auto records = w.dataset.records;
  EvalOptions o;
  auto a = evaluate(w.params, e.edited, w.tokenizer, records, o).to_json();
  o.jobs = 3;
  CHECK(evaluate(w.params, e.edited, w.tokenizer, records, o).to_json() == a);
  std::reverse(records.begin(), records.end());
  o.jobs = 1;
  auto b = evaluate(w.params, e.edited, w.tokenizer, records, o).to_json();
  for (const char* key : {"edit_success", "saa", "rsa", "fa", "unchanging_rate", "over_editing_rate"}) {
    CAPTURE(key);
    CHECK(b[key]["mean"].get<double>() == doctest::Approx(a[key]["mean"].get<double>()).epsilon(1e-12));
  }

  EvalOptions po;
  auto p1 = evaluate_per_record(w.params, w.tokenizer, w.dataset.records, cfg, po);
  po.jobs = 4;
  auto p4 = evaluate_per_record(w.params, w.tokenizer, w.dataset.records, cfg, po);
  CHECK(p1.summary.to_json() == p4.summary.to_json());
  REQUIRE(p1.reports.size() == w.dataset.records.size());
  CHECK(p1.reports[0].to_json() == p4.reports[0].to_json());
}

TEST_CASE("ngram entropy hand values") {
  auto flat = words("a a a a a a");
  CHECK(ngram_entropy(flat, 2) == 0.0);
  CHECK(ngram_entropy(flat, 3) == 0.0);
  auto distinct = words("a b c d e");
  CHECK(ngram_entropy(distinct, 2) == doctest::Approx(2.0).epsilon(1e-12));
  auto cat = words("the cat sat the cat ran");
  // bigrams: (the cat) twice, (cat sat), (sat the), (cat ran) once each
  CHECK(ngram_entropy(cat, 2) == doctest::Approx(1.9219280948873622).epsilon(1e-12));
  CHECK(ngram_entropy(cat, 3) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(ngram_entropy(cat, 2) <= std::log2(4.0) + 1e-12);
}

TEST_CASE("fluency averages scored texts and counts short ones") {
  std::vector<std::string> texts{"a a a a a a", "the cat sat the cat ran", "too short"};
  auto f = fluency(texts);
  CHECK(f.excluded == 1);
  REQUIRE(f.texts.size() == 2);
  CHECK(f.texts[0].score == 0.0);
  CHECK(f.texts[1].score == doctest::Approx(0.5 * 1.9219280948873622 + 0.5 * 2.0).epsilon(1e-12));
  CHECK(f.mean_score == doctest::Approx(0.5 * (0.5 * 1.9219280948873622 + 1.0)).epsilon(1e-12));
}

TEST_CASE("summaries and intervals") {
  std::vector<double> ones(10, 1.0);
  auto s = summarize(ones);
  CHECK(s.mean == 1.0);
  CHECK(s.ci == 0.0);
  CHECK(s.n == 10);

  std::vector<double> v{0, 1, 1, 1};
  auto t = summarize(v);
  CHECK(t.mean == 0.75);
  CHECK(t.ci == doctest::Approx(1.96 * 0.5 / 2.0).epsilon(1e-12));
  std::vector<double> single{0.3};
  CHECK(summarize(single).ci == 0.0);

  std::vector<double> small{0, 1, 0, 1, 1, 0, 1, 1}, large;
  for (int i = 0; i < 16; ++i) large.insert(large.end(), small.begin(), small.end());
  auto bs = summarize_bootstrap(small, 2000, 1);
  auto bl = summarize_bootstrap(large, 2000, 1);
  CHECK(bs.mean == bl.mean);
  CHECK(bl.ci / bs.ci == doctest::Approx(0.25).epsilon(0.3));
  CHECK(summarize_bootstrap(small, 2000, 1).ci == bs.ci);
}

TEST_CASE("sign test") {
  CHECK(sign_test_p_value(5, 0) == doctest::Approx(1.0 / 32.0).epsilon(1e-12));
  CHECK(sign_test_p_value(0, 0) == 1.0);
  CHECK(sign_test_p_value(3, 1) == doctest::Approx(5.0 / 16.0).epsilon(1e-12));
  CHECK(sign_test_p_value(0, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

}  // TEST_SUITE

TEST_SUITE("records") {

TEST_CASE("minimal and full records parse") {
  auto minimal = EvalRecord::from_json({{"subject", "a"}, {"prompt", "a b"}, {"ground_truth", "d"}, {"target_new", "c"}});
  CHECK(minimal.edit.prompt == "a b");
  CHECK(minimal.saa.empty());
  CHECK(minimal.rsa.empty());

  nlohmann::json full = {
      {"id", "x"},
      {"subject", "a"},
      {"prompt", "a b"},
      {"ground_truth", "d"},
      {"target_new", "c"},
      {"portability",
       {{"Subject_Aliasing", {{{"prompt", "e b"}, {"ground_truth", "c"}}}},
        {"Logical_Generalization", {{{"prompt", "f"}, {"ground_truth", "g"}}}},
        {"Reasoning", {{{"prompt", "h"}, {"ground_truth", "i"}}, {{"prompt", "j"}, {"ground_truth", "k"}}}}}},
      {"locality",
       {{"Relation_Specificity", {{{"prompt", "a l"}, {"ground_truth", "m"}}}},
        {"Forgetfulness", {{{"prompt", "a n"}}}}}}};
  auto r = EvalRecord::from_json(full);
  CHECK(r.id() == "x");
  CHECK(r.edit.target_true == "d");
  CHECK(r.saa.size() == 1);
  CHECK(r.lga.size() == 1);
  CHECK(r.ra.size() == 2);
  CHECK(r.rsa.size() == 1);
  CHECK(r.fa.size() == 1);
  auto back = EvalRecord::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
}

TEST_CASE("errors cite the field and the line") {
  try {
    EvalRecord::from_json({{"subject", "a"}, {"prompt", "a"}, {"ground_truth", "b"}});
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("target_new") != std::string::npos);
  }
  std::string text;
  for (int i = 0; i < 6; ++i) text += R"({"subject": "a", "prompt": "a b", "ground_truth": "d", "target_new": "c"})" "\n";
  text += "{not json\n";
  std::istringstream in(text);
  try {
    parse_records(in, "records.jsonl");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("records.jsonl:7") != std::string::npos);
  }
}

TEST_CASE("blank lines are skipped and jsonl round-trips") {
  std::istringstream in("\n" R"({"subject": "a", "prompt": "a b", "ground_truth": "x", "target_new": "c"})" "\n\n"
                        R"({"subject": "d", "prompt": "d e", "ground_truth": "y", "target_new": "f"})" "\n");
  auto rs = parse_records(in, "mem");
  REQUIRE(rs.size() == 2);
  std::istringstream again(records_to_jsonl(rs));
  CHECK(records_to_jsonl(parse_records(again, "mem")) == records_to_jsonl(rs));
  CHECK_THROWS_AS(load_records("/nonexistent/records.jsonl"), IoError);
}

}  // TEST_SUITE

TEST_SUITE("dataset") {

TEST_CASE("generation is deterministic per seed") {
  DatasetOptions o;
  o.n_facts = 40;
  o.n_edits = 12;
  auto a = generate_synthetic_dataset(o), b = generate_synthetic_dataset(o);
  CHECK(a.corpus == b.corpus);
  CHECK(records_to_jsonl(a.records) == records_to_jsonl(b.records));
  o.seed = 1;
  auto c = generate_synthetic_dataset(o);
  CHECK(records_to_jsonl(a.records) != records_to_jsonl(c.records));
}

TEST_CASE("records are well formed and tokenizable") {
  DatasetOptions o;
  o.n_facts = 40;
  o.n_edits = 12;
  auto d = generate_synthetic_dataset(o);
  REQUIRE(d.records.size() == 12);
  auto tok = Tokenizer::from_lines(d.corpus);
  CHECK_NOTHROW(tokenize_corpus(tok, d.corpus));
  std::set<std::string> ids;
  for (const auto& r : d.records) {
    CAPTURE(r.id());
    ids.insert(r.id());
    CHECK(r.edit.target_new != r.edit.target_true);
    CHECK(r.saa.size() >= 1);
    CHECK(r.rsa.size() >= 2);
    CHECK(r.fa.size() >= 1);
    CHECK_NOTHROW(encode_request(tok, r.edit));
    for (const auto& p : r.rsa) {
      const auto w = split_words(p.prompt);
      CHECK(std::find(w.begin(), w.end(), r.edit.subject) != w.end());
      CHECK(p.prompt != r.edit.prompt);
      CHECK_NOTHROW(tok.encode(p.prompt));
      CHECK_NOTHROW(tok.encode(p.ground_truth));
    }
    for (const auto& p : r.saa) {
      CHECK(p.ground_truth == r.edit.target_new);
      CHECK_NOTHROW(tok.encode(p.prompt));
    }
  }
  CHECK(ids.size() == 12);
  for (const auto& f : d.facts) CHECK_NOTHROW(tok.encode(f.prompt + " " + f.object));
}

TEST_CASE("invalid sizes are rejected") {
  DatasetOptions o;
  o.n_facts = 8;
  o.n_edits = 9;
  CHECK_THROWS_AS(generate_synthetic_dataset(o), ConfigError);
  o.n_facts = 10;
  o.n_edits = 2;
  CHECK_THROWS_AS(generate_synthetic_dataset(o), ConfigError);
  o.n_facts = 4;
  CHECK_THROWS_AS(generate_synthetic_dataset(o), ConfigError);
}

TEST_CASE("files written to disk load back") {
  DatasetOptions o;
  o.n_facts = 16;
  o.n_edits = 4;
  auto d = generate_synthetic_dataset(o);
  auto dir = std::filesystem::temp_directory_path() / "fine_unit_tests" / "dataset";
  write_dataset(d, dir);
  CHECK(read_corpus(dir / "corpus.txt") == d.corpus);
  CHECK(records_to_jsonl(load_records(dir / "records.jsonl")) == records_to_jsonl(d.records));
  auto facts = load_facts(dir / "facts.jsonl");
  REQUIRE(facts.size() == d.facts.size());
  CHECK(facts[0].prompt == d.facts[0].prompt);
}

TEST_CASE("a trained model recalls its facts") {
  const auto& w = test::tiny_world();
  CHECK(fact_recall(w.params, w.tokenizer, w.dataset.facts) == 1.0);
  auto untrained = init_parameters<float>(w.params.config);
  CHECK(fact_recall(untrained, w.tokenizer, w.dataset.facts) < 0.5);
}

}  // TEST_SUITE
