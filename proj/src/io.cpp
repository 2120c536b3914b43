#include "cegc/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cegc {

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
      line_(line) {}

namespace {

std::ifstream open_in(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

bool parse_double(const std::string& s, double& v) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && ptr == last;
}

bool parse_size(const std::string& s, std::size_t& v) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  return ec == std::errc() && ptr == last;
}

std::string trim(const std::string& s) {
  auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
  return b < e ? std::string(b, e) : std::string();
}

Vec3 parse_point(const std::vector<std::string>& tok, std::size_t first, const std::string& path,
                 std::size_t line) {
  Vec3 p;
  for (int k = 0; k < 3; ++k) {
    if (first + k >= tok.size() || !parse_double(tok[first + k], p[k])) {
      throw ParseError(path, line, "expected three numeric coordinates");
    }
  }
  if (!p.allFinite()) throw ParseError(path, line, "non-finite coordinate");
  return p;
}

// Reads lines, tracking the 1-based line number.
struct LineReader {
  std::ifstream in;
  std::string path;
  std::size_t number = 0;

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++number;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return true;
    }
    return false;
  }
  // next line that is not blank and not a comment
  bool next_content(std::string& line, char comment = '#') {
    while (next(line)) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == comment) continue;
      line = t;
      return true;
    }
    return false;
  }
};

PointCloud load_xyz(const fs::path& path) {
  LineReader r{open_in(path), path.string()};
  PointCloud cloud;
  cloud.id = path.stem().string();
  std::string line;
  while (r.next_content(line)) {
    const auto tok = tokens(line);
    if (tok.size() != 3) throw ParseError(r.path, r.number, "expected 'x y z', got " + std::to_string(tok.size()) + " fields");
    cloud.points.push_back(parse_point(tok, 0, r.path, r.number));
  }
  if (cloud.empty()) throw ParseError(r.path, 0, "no points");
  return cloud;
}

void add_polygon(Mesh& mesh, const std::vector<std::size_t>& poly, const std::string& path,
                 std::size_t line) {
  if (poly.size() < 3) throw ParseError(path, line, "face with fewer than 3 vertices");
  for (auto v : poly) {
    if (v >= mesh.vertices.size()) throw ParseError(path, line, "face index out of range");
  }
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
}

Mesh load_off(const fs::path& path) {
  LineReader r{open_in(path), path.string()};
  std::string line;
  if (!r.next_content(line) || line.rfind("OFF", 0) != 0) throw ParseError(r.path, r.number, "missing OFF header");
  // Some exporters write the counts on the header line ("OFF8 6 0").
  std::string rest = trim(line.substr(3));
  if (rest.empty() && !r.next_content(line)) throw ParseError(r.path, r.number, "missing counts line");
  if (!rest.empty()) line = rest;
  const auto counts = tokens(line);
  std::size_t nv = 0, nf = 0;
  if (counts.size() < 2 || !parse_size(counts[0], nv) || !parse_size(counts[1], nf)) {
    throw ParseError(r.path, r.number, "malformed vertex/face counts");
  }
  Mesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!r.next_content(line)) throw ParseError(r.path, r.number, "unexpected end of file in vertex list");
    mesh.vertices.push_back(parse_point(tokens(line), 0, r.path, r.number));
  }
  for (std::size_t i = 0; i < nf; ++i) {
    if (!r.next_content(line)) throw ParseError(r.path, r.number, "unexpected end of file in face list");
    const auto tok = tokens(line);
    std::size_t k = 0;
    if (tok.empty() || !parse_size(tok[0], k) || tok.size() < k + 1) throw ParseError(r.path, r.number, "malformed face");
    std::vector<std::size_t> poly(k);
    for (std::size_t j = 0; j < k; ++j) {
      if (!parse_size(tok[1 + j], poly[j])) throw ParseError(r.path, r.number, "malformed face index");
    }
    add_polygon(mesh, poly, r.path, r.number);
  }
  if (mesh.vertices.empty()) throw ParseError(r.path, 0, "no points");
  return mesh;
}

Mesh load_ply(const fs::path& path) {
  LineReader r{open_in(path), path.string()};
  std::string line;
  if (!r.next(line) || trim(line) != "ply") throw ParseError(r.path, r.number, "missing ply magic");
  std::size_t nv = 0, nf = 0;
  std::vector<std::string> vertex_props;
  std::string current;
  bool ascii = false;
  while (true) {
    if (!r.next(line)) throw ParseError(r.path, r.number, "missing end_header");
    const auto tok = tokens(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw ParseError(r.path, r.number, "only ascii PLY is supported");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(r.path, r.number, "malformed element line");
      current = tok[1];
      std::size_t n = 0;
      if (!parse_size(tok[2], n)) throw ParseError(r.path, r.number, "malformed element count");
      if (current == "vertex") nv = n;
      else if (current == "face") nf = n;
      else if (n != 0) throw ParseError(r.path, r.number, "unsupported element '" + current + "'");
    } else if (tok[0] == "property") {
      if (current == "vertex") {
        if (tok.size() != 3) throw ParseError(r.path, r.number, "malformed vertex property");
        vertex_props.push_back(tok[2]);
      }
    } else {
      throw ParseError(r.path, r.number, "unexpected header line");
    }
  }
  if (!ascii) throw ParseError(r.path, 0, "missing format line");
  std::size_t ix[3];
  const char* names[3] = {"x", "y", "z"};
  for (int k = 0; k < 3; ++k) {
    auto it = std::find(vertex_props.begin(), vertex_props.end(), names[k]);
    if (it == vertex_props.end()) throw ParseError(r.path, 0, std::string("vertex property '") + names[k] + "' missing");
    ix[k] = static_cast<std::size_t>(it - vertex_props.begin());
  }
  Mesh mesh;
  for (std::size_t i = 0; i < nv; ++i) {
    if (!r.next_content(line)) throw ParseError(r.path, r.number, "unexpected end of file in vertex list");
    const auto tok = tokens(line);
    if (tok.size() != vertex_props.size()) throw ParseError(r.path, r.number, "vertex row has wrong field count");
    Vec3 p;
    for (int k = 0; k < 3; ++k) {
      if (!parse_double(tok[ix[k]], p[k])) throw ParseError(r.path, r.number, "malformed coordinate");
    }
    if (!p.allFinite()) throw ParseError(r.path, r.number, "non-finite coordinate");
    mesh.vertices.push_back(p);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    if (!r.next_content(line)) throw ParseError(r.path, r.number, "unexpected end of file in face list");
    const auto tok = tokens(line);
    std::size_t k = 0;
    if (tok.empty() || !parse_size(tok[0], k) || tok.size() != k + 1) throw ParseError(r.path, r.number, "malformed face");
    std::vector<std::size_t> poly(k);
    for (std::size_t j = 0; j < k; ++j) {
      if (!parse_size(tok[1 + j], poly[j])) throw ParseError(r.path, r.number, "malformed face index");
    }
    add_polygon(mesh, poly, r.path, r.number);
  }
  if (mesh.vertices.empty()) throw ParseError(r.path, 0, "no points");
  return mesh;
}

std::vector<bool> read_mask(const fs::path& path, std::size_t expected) {
  LineReader r{open_in(path), path.string()};
  std::vector<bool> mask;
  std::string line;
  while (r.next_content(line)) {
    if (line != "0" && line != "1") throw ParseError(r.path, r.number, "mask lines must be 0 or 1");
    mask.push_back(line == "1");
  }
  if (mask.size() != expected) {
    throw ParseError(r.path, 0, "mask has " + std::to_string(mask.size()) + " entries, expected " +
                                    std::to_string(expected));
  }
  return mask;
}

void write_mask(const std::vector<bool>& mask, const fs::path& path) {
  auto out = open_out(path);
  for (bool b : mask) out << (b ? "1\n" : "0\n");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CloudFormat format_from_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz;
  if (ext == ".ply") return CloudFormat::ply;
  if (ext == ".off") return CloudFormat::off;
  throw IoError("unrecognised point cloud extension: " + path.string());
}

PointCloud load_cloud(const fs::path& path, CloudFormat format) {
  if (format == CloudFormat::xyz) return load_xyz(path);
  Mesh mesh = format == CloudFormat::off ? load_off(path) : load_ply(path);
  PointCloud cloud;
  cloud.id = path.stem().string();
  cloud.points = std::move(mesh.vertices);
  return cloud;
}

PointCloud load_cloud(const fs::path& path) { return load_cloud(path, format_from_path(path)); }

Mesh load_mesh(const fs::path& path) {
  switch (format_from_path(path)) {
    case CloudFormat::off: return load_off(path);
    case CloudFormat::ply: return load_ply(path);
    default: throw IoError("meshes must be .off or .ply: " + path.string());
  }
}

void save_cloud_xyz(const PointCloud& cloud, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& p : cloud.points) {
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void save_mesh_off(const Mesh& mesh, const fs::path& path) {
  auto out = open_out(path);
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const auto& p : mesh.vertices) {
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  }
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_transform(const fs::path& path, const RigidTransform& T, std::optional<double> residual) {
  auto out = open_out(path);
  for (int i = 0; i < 3; ++i) {
    out << format_double(T.R(i, 0)) << ' ' << format_double(T.R(i, 1)) << ' '
        << format_double(T.R(i, 2)) << '\n';
  }
  out << format_double(T.t.x()) << ' ' << format_double(T.t.y()) << ' ' << format_double(T.t.z())
      << '\n';
  if (residual) out << "residual " << format_double(*residual) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

RigidTransform read_transform(const fs::path& path) {
  LineReader r{open_in(path), path.string()};
  RigidTransform T;
  std::string line;
  for (int i = 0; i < 4; ++i) {
    if (!r.next_content(line)) throw ParseError(r.path, r.number, "expected 4 transform rows");
    const auto tok = tokens(line);
    if (tok.size() != 3) throw ParseError(r.path, r.number, "transform rows need 3 values");
    const Vec3 row = parse_point(tok, 0, r.path, r.number);
    if (i < 3) T.R.row(i) = row.transpose();
    else T.t = row;
  }
  if (!is_rotation(T.R, 1e-5)) throw ParseError(r.path, 0, "rotation block is not a proper rotation");
  return T;
}

void save_pair(const RegistrationPair& pair, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  save_cloud_xyz(pair.source, dir / "source.xyz");
  save_cloud_xyz(pair.target, dir / "target.xyz");
  write_transform(dir / "gt.txt", pair.gt);
  write_mask(pair.gt_mask_src, dir / "mask_src.txt");
  write_mask(pair.gt_mask_tgt, dir / "mask_tgt.txt");
  auto meta = open_out(dir / "meta.txt");
  meta << "id=" << (pair.source.id.empty() ? "pair" : pair.source.id)
       << " overlap_ratio=" << format_double(pair.overlap_ratio) << '\n';
}

RegistrationPair load_pair(const fs::path& dir) {
  RegistrationPair pair;
  pair.source = load_cloud(dir / "source.xyz", CloudFormat::xyz);
  pair.target = load_cloud(dir / "target.xyz", CloudFormat::xyz);
  pair.gt = read_transform(dir / "gt.txt");
  pair.gt_mask_src = read_mask(dir / "mask_src.txt", pair.source.size());
  pair.gt_mask_tgt = read_mask(dir / "mask_tgt.txt", pair.target.size());
  const auto records = read_records(dir / "meta.txt");
  if (records.empty()) throw ParseError((dir / "meta.txt").string(), 0, "empty meta file");
  double ratio = 0.0;
  const std::string& raw = records.front().get("overlap_ratio");
  if (!parse_double(raw, ratio)) throw ParseError((dir / "meta.txt").string(), records.front().line, "malformed overlap_ratio");
  pair.overlap_ratio = ratio;
  pair.source.id = records.front().get_or("id", dir.filename().string());
  pair.target.id = pair.source.id;
  return pair;
}

const std::string& Record::get(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) throw std::out_of_range("line " + std::to_string(line) + ": missing key '" + key + "'");
  return it->second;
}

std::string Record::get_or(const std::string& key, const std::string& fallback) const {
  auto it = fields.find(key);
  return it == fields.end() ? fallback : it->second;
}

std::vector<Record> read_records(const fs::path& path) {
  LineReader r{open_in(path), path.string()};
  std::vector<Record> records;
  std::string line;
  while (r.next_content(line)) {
    Record rec;
    rec.line = r.number;
    for (const auto& tok : tokens(line)) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) throw ParseError(r.path, r.number, "expected key=value, got '" + tok + "'");
      rec.fields[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_record(const std::map<std::string, std::string>& fields,
                          const std::vector<std::string>& order) {
  std::string out;
  for (const auto& key : order) {
    auto it = fields.find(key);
    if (it == fields.end()) continue;
    if (!out.empty()) out += ' ';
    out += key + "=" + it->second;
  }
  return out;
}

}  // namespace cegc
