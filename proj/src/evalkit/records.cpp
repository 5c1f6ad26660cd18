#include "fine/records.hpp"

#include <fstream>
#include <sstream>

#include "fine/error.hpp"

namespace fine {

namespace {

std::string required_string(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw InputError(where + "missing required field '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_string()) throw InputError(where + "field '" + key + "' must be a string");
  return v.get<std::string>();
}

std::string optional_string(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  if (!j.at(key).is_string()) throw InputError(where + "field '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

// A section may be absent, null, or an object of lists.
const nlohmann::json* section(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return nullptr;
  if (!j.at(key).is_object()) throw InputError(where + "field '" + key + "' must be an object");
  return &j.at(key);
}

template <typename Probe, typename Fill>
std::vector<Probe> probe_list(const nlohmann::json* sec, const char* key, const std::string& where, Fill fill) {
  std::vector<Probe> out;
  if (!sec || !sec->contains(key) || sec->at(key).is_null()) return out;
  const auto& list = sec->at(key);
  if (!list.is_array()) throw InputError(where + "field '" + key + "' must be a list");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string here = where + key + "[" + std::to_string(i) + "]: ";
    if (!list[i].is_object()) throw InputError(here + "probe must be an object");
    out.push_back(fill(list[i], here));
  }
  return out;
}

nlohmann::json portability_json(const std::vector<PortabilityProbe>& probes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : probes) a.push_back({{"prompt", p.prompt}, {"ground_truth", p.ground_truth}});
  return a;
}

nlohmann::json locality_json(const std::vector<LocalityProbe>& probes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : probes) {
    nlohmann::json o = {{"prompt", p.prompt}};
    if (!p.ground_truth.empty()) o["ground_truth"] = p.ground_truth;
    a.push_back(o);
  }
  return a;
}

}  // namespace

nlohmann::json EvalRecord::to_json() const {
  nlohmann::json j = {{"id", edit.id},
                      {"subject", edit.subject},
                      {"relation", edit.relation},
                      {"prompt", edit.prompt},
                      {"ground_truth", edit.target_true},
                      {"target_new", edit.target_new}};
  j["portability"] = {{"Subject_Aliasing", portability_json(saa)},
                      {"Logical_Generalization", portability_json(lga)},
                      {"Reasoning", portability_json(ra)}};
  j["locality"] = {{"Relation_Specificity", locality_json(rsa)}, {"Forgetfulness", locality_json(fa)}};
  return j;
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
  const std::string where;
  if (!j.is_object()) throw InputError("record must be a JSON object");
  EvalRecord r;
  r.edit.subject = required_string(j, "subject", where);
  r.edit.prompt = required_string(j, "prompt", where);
  r.edit.target_true = required_string(j, "ground_truth", where);
  r.edit.target_new = required_string(j, "target_new", where);
  r.edit.relation = optional_string(j, "relation", where);
  if (j.contains("id") && !j.at("id").is_null()) {
    r.edit.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  }
  auto port = [](const nlohmann::json& p, const std::string& here) {
    return PortabilityProbe{required_string(p, "prompt", here), required_string(p, "ground_truth", here)};
  };
  auto loc = [](const nlohmann::json& p, const std::string& here) {
    return LocalityProbe{required_string(p, "prompt", here), optional_string(p, "ground_truth", here)};
  };
  const auto* portability = section(j, "portability", where);
  r.saa = probe_list<PortabilityProbe>(portability, "Subject_Aliasing", "portability.", port);
  r.lga = probe_list<PortabilityProbe>(portability, "Logical_Generalization", "portability.", port);
  r.ra = probe_list<PortabilityProbe>(portability, "Reasoning", "portability.", port);
  const auto* locality = section(j, "locality", where);
  r.rsa = probe_list<LocalityProbe>(locality, "Relation_Specificity", "locality.", loc);
  r.fa = probe_list<LocalityProbe>(locality, "Forgetfulness", "locality.", loc);
  for (const auto& p : r.saa) {
    if (p.ground_truth.empty()) throw InputError("portability probe with empty ground_truth");
  }
  return r;
}

std::vector<EvalRecord> parse_records(std::istream& in, const std::string& source) {
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + "invalid JSON at line " + std::to_string(number) + " (" + e.what() + ")");
    }
    try {
      EvalRecord r = EvalRecord::from_json(j);
      if (r.edit.id.empty()) r.edit.id = std::to_string(out.size());
      out.push_back(std::move(r));
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
  }
  if (in.bad()) throw IoError("failed reading " + source);
  return out;
}

std::vector<EvalRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open records file " + path.string());
  return parse_records(in, path.string());
}

std::string records_to_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.to_json().dump();
    out += '\n';
  }
  return out;
}

void save_records(const std::vector<EvalRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << records_to_jsonl(records);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fine
