#include "fine/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <vector>

#include "fine/error.hpp"

namespace fine {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

namespace {

constexpr char kMagic[4] = {'F', 'I', 'N', 'E'};

class Writer {
 public:
  template <typename I>
  void put(I value) {
    const auto* b = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), b, b + sizeof(I));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* b = static_cast<const char*>(data);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  template <typename I>
  I get(const char* what) {
    I value;
    std::memcpy(&value, take(sizeof(I), what), sizeof(I));
    return value;
  }
  const char* take(std::size_t n, const char* what) {
    if (n > buf_.size() - pos_) {
      throw CorruptCheckpointError("checkpoint " + path_ + " is truncated while reading " + what);
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading checkpoint " + path.string());
  return buf;
}

struct Header {
  std::uint32_t version;
  nlohmann::json json;
};

Header read_header(Reader& r, const std::string& path) {
  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptCheckpointError(path + " is not a FINE checkpoint (bad magic)");
  Header h;
  h.version = r.get<std::uint32_t>("version");
  if (h.version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint " + path + " has format version " + std::to_string(h.version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto len = r.get<std::uint64_t>("header length");
  const char* text = r.take(len, "header");
  try {
    h.json = nlohmann::json::parse(text, text + len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError("checkpoint " + path + " has an unreadable header: " + e.what());
  }
  for (const char* key : {"config", "tokenizer", "dtype", "num_tensors"}) {
    if (!h.json.contains(key)) throw CorruptCheckpointError("checkpoint " + path + " header lacks '" + key + "'");
  }
  return h;
}

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& checkpoint, const std::filesystem::path& path) {
  const auto& params = checkpoint.params;
  validate_parameters(params);
  std::size_t count = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor<T>&) { ++count; });
  nlohmann::json header = {{"config", params.config.to_json()},
                           {"tokenizer", checkpoint.tokenizer.words()},
                           {"dtype", to_string(precision_of<T>())},
                           {"num_tensors", count},
                           {"metadata", checkpoint.metadata}};
  const std::string text = header.dump();
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  const std::uint8_t dtype = precision_of<T>() == Precision::f32 ? 0 : 1;
  for_each_tensor(params, [&](const std::string& name, const Tensor<T>& t) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(dtype);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.bytes(t.ptr(), t.size() * sizeof(T));
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  Reader r(buf, path.string());
  Header h = read_header(r, path.string());
  CheckpointInfo info;
  info.version = h.version;
  try {
    info.precision = parse_precision(h.json.at("dtype").get<std::string>());
    info.config = ModelConfig::from_json(h.json.at("config"));
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
  info.metadata = h.json.value("metadata", nlohmann::json::object());
  return info;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  const auto buf = read_file(path);
  Reader r(buf, where);
  Header h = read_header(r, where);
  Checkpoint<T> ck;
  Precision stored;
  std::size_t count;
  try {
    stored = parse_precision(h.json.at("dtype").get<std::string>());
    ck.params.config = ModelConfig::from_json(h.json.at("config"));
    ck.tokenizer = Tokenizer(h.json.at("tokenizer").get<std::vector<std::string>>());
    count = h.json.at("num_tensors").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError("checkpoint " + where + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError("checkpoint " + where + ": " + e.what());
  } catch (const InputError& e) {
    throw CorruptCheckpointError("checkpoint " + where + ": " + e.what());
  }
  if (stored != precision_of<T>()) {
    throw ConfigError("checkpoint " + where + " stores " + to_string(stored) + " weights but " +
                      to_string(precision_of<T>()) + " was requested");
  }
  ck.metadata = h.json.value("metadata", nlohmann::json::object());

  std::map<std::string, Tensor<T>> tensors;
  for (std::size_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    std::string name(r.take(name_len, "tensor name"), name_len);
    const auto dtype = r.get<std::uint8_t>("dtype tag");
    if (dtype != (precision_of<T>() == Precision::f32 ? 0 : 1)) {
      throw CorruptCheckpointError("tensor " + name + " in " + where + " has dtype tag " + std::to_string(dtype));
    }
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw CorruptCheckpointError("tensor " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dims");
      if (d == 0) throw CorruptCheckpointError("tensor " + name + " has a zero dimension");
    }
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw CorruptCheckpointError("tensor " + name + " is implausibly large");
    std::vector<T> data(n);
    std::memcpy(data.data(), r.take(n * sizeof(T), "tensor data"), n * sizeof(T));
    tensors.emplace(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CorruptCheckpointError("checkpoint " + where + " has trailing bytes");

  ck.params.layers.resize(ck.params.config.num_layers);
  for_each_tensor(ck.params, [&](const std::string& name, Tensor<T>& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CorruptCheckpointError("checkpoint " + where + " lacks tensor " + name);
    t = std::move(it->second);
  });
  try {
    validate_parameters(ck.params);
  } catch (const Error& e) {
    throw CorruptCheckpointError("checkpoint " + where + ": " + e.what());
  }
  if (ck.tokenizer.size() > ck.params.config.vocab_size) {
    throw CorruptCheckpointError("checkpoint " + where + ": tokenizer larger than vocab_size");
  }
  return ck;
}

template void save_checkpoint(const Checkpoint<float>&, const std::filesystem::path&);
template void save_checkpoint(const Checkpoint<double>&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace fine
