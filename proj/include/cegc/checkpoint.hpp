#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cegc/model.hpp"

namespace cegc {

inline constexpr char kCheckpointMagic[4] = {'C', 'E', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// The file does not start with "CEGC".
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// The magic matches but the format version is not supported.
class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Blob {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Layout: "CEGC", u32 version, u32 blob count, then per blob: u32 name length,
/// name bytes, u32 rank, u32 dims[rank], float32 values. All little-endian.
void write_blobs(const std::string& path, const std::vector<Blob>& blobs);
std::vector<Blob> read_blobs(const std::string& path);

/// Parameters plus a "config" blob holding the model configuration as text
/// (one byte per element).
void save_checkpoint(const std::string& path, const Model& model);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace cegc
