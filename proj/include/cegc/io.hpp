#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cegc/data.hpp"

namespace cegc {

namespace fs = std::filesystem;

/// Malformed file content; `line()` is 1-based (0 when not line-specific).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Missing or unreadable / unwritable file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CloudFormat { xyz, ply, off };

/// Picks the format from the extension (.xyz/.txt, .ply, .off).
CloudFormat format_from_path(const fs::path& path);

PointCloud load_cloud(const fs::path& path, CloudFormat format);
PointCloud load_cloud(const fs::path& path);
Mesh load_mesh(const fs::path& path);

void save_cloud_xyz(const PointCloud& cloud, const fs::path& path);
void save_mesh_off(const Mesh& mesh, const fs::path& path);

/// Four lines: three rows of R, then t. An optional fifth line "residual <v>".
void write_transform(const fs::path& path, const RigidTransform& T,
                     std::optional<double> residual = std::nullopt);
RigidTransform read_transform(const fs::path& path);

/// Pair archive: source.xyz, target.xyz, gt.txt, mask_src.txt, mask_tgt.txt
/// (one 0/1 per line) and meta.txt (key=value).
void save_pair(const RegistrationPair& pair, const fs::path& dir);
RegistrationPair load_pair(const fs::path& dir);

/// A line of whitespace separated key=value tokens.
struct Record {
  std::size_t line = 0;
  std::map<std::string, std::string> fields;

  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
};

/// Reads a record file, skipping blank lines and '#' comments.
std::vector<Record> read_records(const fs::path& path);
std::string format_record(const std::map<std::string, std::string>& fields,
                          const std::vector<std::string>& order);

std::string format_double(double v);

}  // namespace cegc
