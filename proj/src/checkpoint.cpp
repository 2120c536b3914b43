#include "cegc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cegc/io.hpp"

namespace cegc {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;
const std::string kConfigBlob = "config";

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::string& path, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError(path + ": truncated while reading " + what);
  return v;
}

std::string config_text(const ModelConfig& config) {
  std::ostringstream out;
  for (const auto& [key, value] : config.to_values()) out << key << '=' << format_double(value) << '\n';
  return out.str();
}

ModelConfig parse_config_text(const std::string& text, const std::string& path) {
  std::map<std::string, double> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(path + ": malformed config entry '" + line + "'");
    try {
      values[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw CheckpointError(path + ": malformed config entry '" + line + "'");
    }
  }
  return ModelConfig::from_values(values);
}

}  // namespace

void write_blobs(const std::string& path, const std::vector<Blob>& blobs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    if (shape_numel(b.shape) != b.values.size()) throw CheckpointError("blob " + b.name + ": shape/value mismatch");
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(b.values.data()), static_cast<std::streamsize>(b.values.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Blob> read_blobs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw BadMagicError(path + ": not a checkpoint (bad magic bytes)");
  }
  const std::uint32_t version = get_u32(in, path, "version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError(path + ": unsupported checkpoint version " + std::to_string(version) +
                                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = get_u32(in, path, "blob count");
  std::vector<Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    const std::uint32_t len = get_u32(in, path, "name length");
    if (len > kMaxNameLength) throw CheckpointError(path + ": blob name too long");
    b.name.resize(len);
    if (!in.read(b.name.data(), len)) throw CheckpointError(path + ": truncated blob name");
    const std::uint32_t rank = get_u32(in, path, "rank");
    if (rank > kMaxRank) throw CheckpointError(path + ": blob " + b.name + " has rank " + std::to_string(rank));
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(get_u32(in, path, "dims"));
      numel *= b.shape.back();
    }
    if (numel > (std::size_t{1} << 30)) throw CheckpointError(path + ": blob " + b.name + " is implausibly large");
    b.values.resize(numel);
    if (!in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(numel * 4))) {
      throw CheckpointError(path + ": truncated data for blob " + b.name);
    }
    blobs.push_back(std::move(b));
  }
  return blobs;
}

void save_checkpoint(const std::string& path, const Model& model) {
  std::vector<Blob> blobs;
  const std::string text = config_text(model.config());
  Blob config{kConfigBlob, {text.size()}, {}};
  for (unsigned char c : text) config.values.push_back(static_cast<float>(c));
  blobs.push_back(std::move(config));
  for (const auto& [name, tensor] : model.parameters().named()) {
    Blob b{name, tensor.shape(), {}};
    b.values.reserve(tensor.numel());
    for (double v : tensor.data()) b.values.push_back(static_cast<float>(v));
    blobs.push_back(std::move(b));
  }
  for (const auto& [name, state] : model.parameters().norm_states()) {
    for (const auto& [suffix, stats] : {std::pair{".running_mean", &state->running_mean},
                                        std::pair{".running_var", &state->running_var}}) {
      Blob b{name + suffix, {stats->size()}, {}};
      for (double v : *stats) b.values.push_back(static_cast<float>(v));
      blobs.push_back(std::move(b));
    }
  }
  write_blobs(path, blobs);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  const auto blobs = read_blobs(path);
  if (blobs.empty() || blobs.front().name != kConfigBlob) throw CheckpointError(path + ": missing config blob");
  std::string text;
  for (float c : blobs.front().values) text.push_back(static_cast<char>(static_cast<unsigned char>(c)));
  auto model = std::make_unique<Model>(parse_config_text(text, path));
  const auto& params = model->parameters().named();
  const auto& states = model->parameters().norm_states();
  if (blobs.size() != params.size() + 2 * states.size() + 1) {
    throw CheckpointError(path + ": expected " + std::to_string(params.size() + 2 * states.size()) +
                          " tensors, found " + std::to_string(blobs.size() - 1));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Blob& b = blobs[i + 1];
    Tensor t = params[i].second;
    if (b.name != params[i].first || b.shape != t.shape()) {
      throw CheckpointError(path + ": parameter " + std::to_string(i) + " is " + b.name + " " +
                            shape_str(b.shape) + ", expected " + params[i].first + " " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<double>(b.values[j]);
  }
  std::size_t next = params.size() + 1;
  for (const auto& [name, state] : states) {
    for (const auto& [suffix, stats] : {std::pair{".running_mean", &state->running_mean},
                                        std::pair{".running_var", &state->running_var}}) {
      const Blob& b = blobs[next++];
      if (b.name != name + suffix || b.shape != Shape{stats->size()}) {
        throw CheckpointError(path + ": expected norm statistics " + name + suffix + ", found " + b.name);
      }
      for (std::size_t j = 0; j < stats->size(); ++j) (*stats)[j] = static_cast<double>(b.values[j]);
    }
  }
  return model;
}

}  // namespace cegc
