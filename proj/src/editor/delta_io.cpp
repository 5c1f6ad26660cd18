#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fine/checkpoint.hpp"
#include "fine/editor.hpp"
#include "fine/error.hpp"

namespace fine {

namespace {

constexpr char kDeltaMagic[8] = {'F', 'I', 'N', 'E', 'D', 'L', 'T', '1'};

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << v;
  return s.str();
}

}  // namespace

template <typename T>
void save_delta(const EditDelta<T>& delta, const std::filesystem::path& path) {
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& n : delta.neurons) neurons.push_back(to_string(n));
  const std::size_t width = delta.neurons.empty() ? 0 : delta.rows.cols();
  const nlohmann::json header = {{"neurons", neurons},
                                 {"fingerprint", hex64(delta.fingerprint)},
                                 {"dtype", to_string(precision_of<T>())},
                                 {"hidden_size", width}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(kDeltaMagic, sizeof(kDeltaMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!delta.neurons.empty()) {
    out.write(reinterpret_cast<const char*>(delta.rows.ptr()), static_cast<std::streamsize>(delta.rows.size() * sizeof(T)));
  }
  if (!out) throw IoError("failed writing delta " + path.string());
}

template <typename T>
EditDelta<T> load_delta(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open delta " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  std::size_t pos = 0;
  auto take = [&](std::size_t n) {
    if (n > buf.size() - pos) throw CorruptCheckpointError("delta " + where + " is truncated");
    const char* p = buf.data() + pos;
    pos += n;
    return p;
  };
  if (std::memcmp(take(sizeof(kDeltaMagic)), kDeltaMagic, sizeof(kDeltaMagic)) != 0) {
    throw CorruptCheckpointError(where + " is not a delta file (bad magic)");
  }
  std::uint64_t len;
  std::memcpy(&len, take(sizeof(len)), sizeof(len));
  const char* text = take(len);
  EditDelta<T> delta;
  std::size_t width = 0;
  try {
    const auto header = nlohmann::json::parse(text, text + len);
    if (parse_precision(header.at("dtype").get<std::string>()) != precision_of<T>()) {
      throw ConfigError("delta " + where + " stores " + header.at("dtype").get<std::string>() + " values");
    }
    for (const auto& n : header.at("neurons")) delta.neurons.push_back(parse_neuron_id(n.get<std::string>()));
    delta.fingerprint = std::stoull(header.at("fingerprint").get<std::string>(), nullptr, 16);
    width = header.at("hidden_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError("delta " + where + " has a malformed header: " + e.what());
  } catch (const std::invalid_argument&) {
    throw CorruptCheckpointError("delta " + where + " has a malformed fingerprint");
  }
  if (!delta.neurons.empty()) {
    if (width == 0) throw CorruptCheckpointError("delta " + where + " has zero hidden_size");
    const std::size_t n = delta.neurons.size() * width;
    std::vector<T> data(n);
    std::memcpy(data.data(), take(n * sizeof(T)), n * sizeof(T));
    delta.rows = Tensor<T>({delta.neurons.size(), width}, std::move(data));
  }
  if (pos != buf.size()) throw CorruptCheckpointError("delta " + where + " has trailing bytes");
  return delta;
}

template void save_delta(const EditDelta<float>&, const std::filesystem::path&);
template void save_delta(const EditDelta<double>&, const std::filesystem::path&);
template EditDelta<float> load_delta<float>(const std::filesystem::path&);
template EditDelta<double> load_delta<double>(const std::filesystem::path&);

}  // namespace fine
