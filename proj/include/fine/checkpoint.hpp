#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "fine/model.hpp"
#include "fine/tokenizer.hpp"

// Binary checkpoint layout (all integers little-endian):
//
//   "FINE" | u32 version | u64 header_len | header JSON
//   then, per tensor: u32 name_len | name | u8 dtype (0 = f32, 1 = f64)
//                     | u32 rank | u64 dims[rank] | raw little-endian values
//
// The header carries {"config", "tokenizer": [words], "dtype", "num_tensors", "metadata"}.
namespace fine {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

template <typename T>
struct Checkpoint {
  ModelParameters<T> params;
  Tokenizer tokenizer;
  nlohmann::json metadata = nlohmann::json::object();
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  Precision precision = Precision::f32;
  ModelConfig config;
  nlohmann::json metadata;
};

// Throws IoError if the file cannot be written.
template <typename T>
void save_checkpoint(const Checkpoint<T>& checkpoint, const std::filesystem::path& path);

// Header only. Throws IoError, CorruptCheckpointError or VersionMismatchError.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Throws IoError, CorruptCheckpointError, VersionMismatchError, or ConfigError when the
// stored precision differs from T.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace fine
