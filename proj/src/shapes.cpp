#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cegc/data.hpp"

namespace cegc {

namespace {

void add_quad(Mesh& m, std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  m.faces.push_back({a, b, c});
  m.faces.push_back({a, c, d});
}

void add_box(Mesh& m, const Vec3& center, const Vec3& half) {
  const std::size_t base = m.vertices.size();
  for (int i = 0; i < 8; ++i) {
    const Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    m.vertices.push_back(center + s.cwiseProduct(half));
  }
  add_quad(m, base + 0, base + 2, base + 3, base + 1);  // -z
  add_quad(m, base + 4, base + 5, base + 7, base + 6);  // +z
  add_quad(m, base + 0, base + 1, base + 5, base + 4);  // -y
  add_quad(m, base + 2, base + 6, base + 7, base + 3);  // +y
  add_quad(m, base + 0, base + 4, base + 6, base + 2);  // -x
  add_quad(m, base + 1, base + 3, base + 7, base + 5);  // +x
}

// Frustum along z between z0 (radius r0) and z1 (radius r1), capped.
void add_frustum(Mesh& m, const Vec3& base_center, double r0, double r1, double height,
                 int segments = 24) {
  const std::size_t start = m.vertices.size();
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    m.vertices.push_back(base_center + Vec3(r0 * std::cos(a), r0 * std::sin(a), 0.0));
    m.vertices.push_back(base_center + Vec3(r1 * std::cos(a), r1 * std::sin(a), height));
  }
  const std::size_t bottom = m.vertices.size();
  m.vertices.push_back(base_center);
  m.vertices.push_back(base_center + Vec3(0, 0, height));
  for (int i = 0; i < segments; ++i) {
    const std::size_t j = (i + 1) % segments;
    const std::size_t b0 = start + 2 * i, t0 = b0 + 1;
    const std::size_t b1 = start + 2 * j, t1 = b1 + 1;
    add_quad(m, b0, b1, t1, t0);
    m.faces.push_back({bottom, b1, b0});
    if (r1 > 0.0) m.faces.push_back({bottom + 1, t0, t1});
  }
}

Mesh chair() {
  Mesh m;
  add_box(m, {0, 0, 0}, {0.5, 0.45, 0.05});          // seat
  add_box(m, {0, -0.42, 0.5}, {0.5, 0.04, 0.45});    // backrest
  add_box(m, {0.3, -0.42, 1.0}, {0.12, 0.05, 0.06}); // off-centre headrest knob
  for (double x : {-0.44, 0.44})
    for (double y : {-0.39, 0.39}) add_box(m, {x, y, -0.35}, {0.04, 0.04, 0.3});
  add_box(m, {0.54, 0.1, 0.2}, {0.04, 0.3, 0.03});   // single armrest
  return m;
}

Mesh lamp() {
  Mesh m;
  add_frustum(m, {0, 0, 0}, 0.35, 0.3, 0.06);        // base
  add_frustum(m, {0.2, 0, 0.06}, 0.04, 0.04, 0.9);   // pole, off-centre
  add_box(m, {0.0, 0.0, 0.98}, {0.25, 0.03, 0.03});  // arm
  add_frustum(m, {-0.25, 0, 0.7}, 0.22, 0.06, 0.3);  // shade
  return m;
}

Mesh bracket() {
  Mesh m;
  add_box(m, {0, 0, 0}, {0.8, 0.2, 0.08});
  add_box(m, {0.72, 0.45, 0}, {0.08, 0.25, 0.08});
  add_box(m, {-0.7, 0, 0.35}, {0.1, 0.1, 0.27});
  add_box(m, {0.1, -0.1, 0.14}, {0.15, 0.06, 0.06});
  return m;
}

Mesh table() {
  Mesh m;
  add_box(m, {0, 0, 0.5}, {0.8, 0.45, 0.04});
  for (double x : {-0.72, 0.72})
    for (double y : {-0.38, 0.38}) add_box(m, {x, y, 0.0}, {0.05, 0.05, 0.46});
  add_box(m, {0.35, 0, 0.1}, {0.4, 0.4, 0.02});  // lower shelf on one side
  return m;
}

Mesh stairs() {
  Mesh m;
  add_box(m, {0, 0, 0.1}, {0.6, 0.3, 0.1});
  add_box(m, {0, 0.2, 0.35}, {0.6, 0.2, 0.15});
  add_box(m, {0, 0.35, 0.65}, {0.6, 0.1, 0.15});
  add_box(m, {0.62, 0.0, 0.5}, {0.02, 0.3, 0.5});  // side wall
  return m;
}

Mesh mug() {
  Mesh m;
  add_frustum(m, {0, 0, 0}, 0.4, 0.45, 0.9);
  add_box(m, {0.55, 0, 0.65}, {0.12, 0.04, 0.04});
  add_box(m, {0.55, 0, 0.25}, {0.12, 0.04, 0.04});
  add_box(m, {0.65, 0, 0.45}, {0.03, 0.04, 0.24});
  return m;
}

}  // namespace

std::vector<std::string> builtin_shape_names() {
  return {"chair", "lamp", "bracket", "table", "stairs", "mug"};
}

Mesh builtin_shape(const std::string& name) {
  Mesh m;
  if (name == "chair") m = chair();
  else if (name == "lamp") m = lamp();
  else if (name == "bracket") m = bracket();
  else if (name == "table") m = table();
  else if (name == "stairs") m = stairs();
  else if (name == "mug") m = mug();
  else throw std::invalid_argument("unknown built-in shape '" + name + "'");
  return normalize_unit_sphere(m);
}

}  // namespace cegc
