#include "fine/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "fine/error.hpp"
#include "fine/metrics.hpp"

namespace fine {

namespace {

constexpr std::size_t kRelationsPerSubject = 4;

const char* const kTemplateWords[] = {"the", "capital", "of", "is", "language", "leader",
                                      "exports", "and", "also", "known", "as", "."};

// Pronounceable invented words, unique across every pool.
class WordMaker {
 public:
  explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {
    for (const char* w : kTemplateWords) used_.insert(w);
  }

  std::string make(std::size_t syllables) {
    static const char kOnsets[] = "bdfgklmnprstvz";
    static const char kVowels[] = "aeiou";
    for (;;) {
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += kOnsets[rng_() % (sizeof(kOnsets) - 1)];
        w += kVowels[rng_() % (sizeof(kVowels) - 1)];
      }
      if (rng_() % 2 == 0) w += kOnsets[rng_() % (sizeof(kOnsets) - 1)];
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> pool(std::size_t n, std::size_t syllables) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(make(syllables));
    return out;
  }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

struct Subject {
  std::string name, alias;
  std::string capital, language, leader, export_a, export_b;
};

std::string relation_prompt(const std::string& relation, const std::string& name) {
  if (relation == "exports") return name + " exports";
  return "the " + relation + " of " + name + " is";
}

std::string relation_object(const Subject& s, const std::string& relation) {
  if (relation == "capital") return s.capital;
  if (relation == "language") return s.language;
  if (relation == "leader") return s.leader;
  return s.export_a + " and " + s.export_b;
}

const std::vector<std::string> kRelations = {"capital", "language", "leader", "exports"};
const std::vector<std::string> kEditable = {"capital", "language", "leader"};

template <typename V>
const typename V::value_type& pick(std::mt19937_64& rng, const V& pool) {
  return pool[rng() % pool.size()];
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const DatasetOptions& options) {
  if (options.n_facts < 2 * kRelationsPerSubject || options.n_facts % kRelationsPerSubject != 0) {
    throw ConfigError("dataset: n_facts must be a multiple of 4 and at least 8, got " + std::to_string(options.n_facts));
  }
  if (options.n_edits > options.n_facts) {
    throw ConfigError("dataset: n_edits (" + std::to_string(options.n_edits) + ") exceeds n_facts (" +
                      std::to_string(options.n_facts) + ")");
  }
  const std::size_t n_subjects = options.n_facts / kRelationsPerSubject;
  const std::size_t editable = n_subjects * kEditable.size();
  if (options.n_edits > editable) {
    throw ConfigError("dataset: n_edits (" + std::to_string(options.n_edits) + ") exceeds the " +
                      std::to_string(editable) + " editable facts");
  }

  std::mt19937_64 rng(options.seed);
  WordMaker words(rng);
  auto shuffled_pool = [&](std::size_t n, std::size_t syllables) {
    auto pool = words.pool(n, syllables);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng() % i]);
    return pool;
  };
  // Objects are dealt round-robin so that every pool word used by one subject can serve as
  // a counterfactual for another.
  const auto capitals = shuffled_pool(n_subjects, 2);
  const auto languages = shuffled_pool(std::max<std::size_t>(2, n_subjects / 2), 3);
  const auto first_names = shuffled_pool(std::max<std::size_t>(2, (n_subjects * 3) / 5), 2);
  const auto last_names = shuffled_pool(std::max<std::size_t>(2, (n_subjects * 3) / 5), 3);
  const auto goods = shuffled_pool(std::max<std::size_t>(2, (n_subjects * 4) / 5), 2);

  std::vector<Subject> subjects(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    Subject& s = subjects[i];
    s.name = words.make(3);
    s.alias = words.make(2);
    s.capital = capitals[i % capitals.size()];
    s.language = languages[i % languages.size()];
    s.leader = first_names[i % first_names.size()] + " " + last_names[(i + i / last_names.size()) % last_names.size()];
    s.export_a = goods[i % goods.size()];
    s.export_b = goods[(i + 1 + rng() % (goods.size() - 1)) % goods.size()];
  }
  auto used = [&](auto field) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : subjects) {
      if (seen.insert(field(s)).second) out.push_back(field(s));
    }
    return out;
  };
  const auto used_capitals = used([](const Subject& s) { return s.capital; });
  const auto used_languages = used([](const Subject& s) { return s.language; });
  const auto used_first = used([](const Subject& s) { return split_words(s.leader)[0]; });
  const auto used_last = used([](const Subject& s) { return split_words(s.leader)[1]; });

  SyntheticDataset out;
  for (const auto& s : subjects) {
    for (const std::string* name : {&s.name, &s.alias}) {
      for (const auto& rel : kRelations) {
        const std::string prompt = relation_prompt(rel, *name);
        const std::string object = relation_object(s, rel);
        out.corpus.push_back(prompt + " " + object + " .");
        out.facts.push_back({prompt, object});
      }
    }
    out.corpus.push_back(s.name + " is also known as " + s.alias + " .");
    out.corpus.push_back(s.alias + " is also known as " + s.name + " .");
  }

  // Edits cycle through a shuffled subject order; each subject's relations are taken
  // starting from a random offset so no (subject, relation) pair repeats.
  std::vector<std::size_t> order(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) order[i] = i;
  for (std::size_t i = n_subjects; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::size_t> offset(n_subjects);
  for (auto& o : offset) o = rng() % kEditable.size();

  for (std::size_t e = 0; e < options.n_edits; ++e) {
    const std::size_t si = order[e % n_subjects];
    const Subject& s = subjects[si];
    const std::string& rel = kEditable[(offset[si] + e / n_subjects) % kEditable.size()];
    const std::string truth = relation_object(s, rel);
    std::string target;
    if (rel == "capital") {
      do target = pick(rng, used_capitals); while (target == s.capital);
    } else if (rel == "language") {
      do target = pick(rng, used_languages); while (target == s.language);
    } else {
      const auto parts = split_words(s.leader);
      std::string first, last;
      do first = pick(rng, used_first); while (first == parts[0]);
      do last = pick(rng, used_last); while (last == parts[1]);
      target = first + " " + last;
    }

    EvalRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "edit-%04zu", e);
    r.edit.id = id;
    r.edit.subject = s.name;
    r.edit.relation = rel;
    r.edit.prompt = relation_prompt(rel, s.name);
    r.edit.target_true = truth;
    r.edit.target_new = target;
    r.saa.push_back({relation_prompt(rel, s.alias), target});
    for (const auto& other : kRelations) {
      if (other != rel) r.rsa.push_back({relation_prompt(other, s.name), relation_object(s, other)});
    }
    r.fa.push_back({s.name + " exports " + s.export_a + " and", s.export_b});
    out.records.push_back(std::move(r));
  }
  return out;
}

void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "corpus.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "corpus.txt").string());
    for (const auto& line : dataset.corpus) out << line << '\n';
    if (!out) throw IoError("failed writing corpus.txt");
  }
  save_records(dataset.records, dir / "records.jsonl");
  {
    std::ofstream out(dir / "facts.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "facts.jsonl").string());
    for (const auto& f : dataset.facts) out << nlohmann::json{{"prompt", f.prompt}, {"object", f.object}}.dump() << '\n';
    if (!out) throw IoError("failed writing facts.jsonl");
  }
}

std::vector<std::string> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) throw IoError("failed reading corpus " + path.string());
  return lines;
}

std::vector<FactStatement> load_facts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open facts " + path.string());
  std::vector<FactStatement> facts;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      facts.push_back({j.at("prompt").get<std::string>(), j.at("object").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return facts;
}

template <typename T>
double fact_recall(const ModelParameters<T>& params, const Tokenizer& tokenizer, const std::vector<FactStatement>& facts) {
  if (facts.empty()) throw InputError("fact_recall: no facts");
  std::size_t recalled = 0;
  for (const auto& f : facts) {
    std::vector<TokenId> prompt{Tokenizer::kBos};
    for (TokenId id : tokenizer.encode(f.prompt)) prompt.push_back(id);
    const auto object = tokenizer.encode(f.object);
    recalled += token_argmax_accuracy(params, std::span<const TokenId>(prompt), std::span<const TokenId>(object)) == 1.0;
  }
  return static_cast<double>(recalled) / static_cast<double>(facts.size());
}

template double fact_recall(const ModelParameters<float>&, const Tokenizer&, const std::vector<FactStatement>&);
template double fact_recall(const ModelParameters<double>&, const Tokenizer&, const std::vector<FactStatement>&);

}  // namespace fine
