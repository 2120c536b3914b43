#include <doctest.h>

#include <cmath>

#include "cegc/data.hpp"
#include "cegc/solver.hpp"
#include "gradcheck.hpp"

using namespace cegc;
using namespace cegc::testing;

namespace {

struct Instance {
  std::vector<Vec3> src, tgt;
  std::vector<double> w;
  RigidTransform gt;
};

Instance exact_instance(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  in.gt = random_transform(seed);
  for (std::size_t i = 0; i < n; ++i) {
    in.src.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    in.tgt.push_back(in.gt.apply(in.src.back()));
    in.w.push_back(rng.uniform(0.1, 1.0));
  }
  return in;
}

Tensor points_tensor(const std::vector<Vec3>& p) { return to_tensor(p); }

}  // namespace

TEST_CASE("weighted Kabsch recovers 100 random exact instances") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const Instance in = exact_instance(10 + rng.index(91), s);
    const PoseSolution sol = weighted_kabsch(in.src, in.tgt, in.w);
    CHECK((sol.transform.R - in.gt.R).norm() < 1e-5);
    CHECK((sol.transform.t - in.gt.t).norm() < 1e-5);
    CHECK(sol.residual < 1e-9);
    CHECK(is_rotation(sol.transform.R));
  }
}

TEST_CASE("zero-weight gross outliers do not disturb the fit") {
  Instance in = exact_instance(10, 99);
  in.tgt[3] += Vec3(5, -3, 2);
  in.tgt[7] += Vec3(-4, 4, 9);
  in.w[3] = in.w[7] = 0.0;
  const PoseSolution sol = weighted_kabsch(in.src, in.tgt, in.w);
  CHECK((sol.transform.R - in.gt.R).norm() < 1e-5);
  CHECK((sol.transform.t - in.gt.t).norm() < 1e-5);
}

TEST_CASE("identity and the Rz(30) reference case") {
  Instance in = exact_instance(10, 3);
  const PoseSolution same = weighted_kabsch(in.src, in.src, std::vector<double>(10, 1.0));
  CHECK((same.transform.R - Mat3::Identity()).norm() < 1e-6);
  CHECK(same.transform.t.norm() < 1e-6);
  RigidTransform T;
  T.R = rotation_z(M_PI / 6.0);
  T.t = Vec3(0.1, 0.2, 0.3);
  std::vector<Vec3> tgt;
  for (const auto& p : in.src) tgt.push_back(T.apply(p));
  const PoseSolution sol = weighted_kabsch(in.src, tgt, std::vector<double>(10, 1.0));
  CHECK((sol.transform.R - T.R).norm() < 1e-5);
  CHECK((sol.transform.t - T.t).norm() < 1e-5);
}

TEST_CASE("scaling every weight leaves the pose unchanged") {
  Instance in = exact_instance(30, 5);
  Rng rng(5);
  for (auto& p : in.tgt) p += Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
  const PoseSolution base = weighted_kabsch(in.src, in.tgt, in.w);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> w = in.w;
    for (auto& v : w) v *= c;
    const PoseSolution s = weighted_kabsch(in.src, in.tgt, w);
    CHECK((s.transform.R - base.transform.R).norm() < 1e-9);
    CHECK((s.transform.t - base.transform.t).norm() < 1e-9);
  }
}

TEST_CASE("rotating both clouds conjugates the solution") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Instance in = exact_instance(25, 200 + s);
    const Mat3 Q = random_transform(500 + s).R;
    std::vector<Vec3> qs, qt;
    for (std::size_t i = 0; i < in.src.size(); ++i) {
      qs.push_back(Q * in.src[i]);
      qt.push_back(Q * in.tgt[i]);
    }
    const Mat3 R = weighted_kabsch(in.src, in.tgt, in.w).transform.R;
    const Mat3 Rq = weighted_kabsch(qs, qt, in.w).transform.R;
    CHECK((Rq - Q * R * Q.transpose()).norm() < 1e-9);
  }
}

TEST_CASE("a mirrored target still yields a proper rotation") {
  Rng rng(6);
  std::vector<Vec3> src, mirrored;
  for (int i = 0; i < 20; ++i) {
    src.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    mirrored.emplace_back(src.back().x(), -src.back().y(), src.back().z());
  }
  const PoseSolution s = weighted_kabsch(src, mirrored, std::vector<double>(20, 1.0));
  CHECK(s.transform.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(is_rotation(s.transform.R));
}

TEST_CASE("degenerate and invalid inputs raise") {
  const std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
  CHECK_THROWS_AS(weighted_kabsch(line, line, std::vector<double>(4, 1.0)), DegenerateConfiguration);
  const Instance in = exact_instance(5, 1);
  CHECK_THROWS_AS(weighted_kabsch(in.src, in.tgt, std::vector<double>(5, 0.0)), DegenerateConfiguration);
  CHECK_THROWS_AS(weighted_kabsch(in.src, in.tgt, std::vector<double>{1, 1, 0, 0, 0}), DegenerateConfiguration);
  CHECK_THROWS_AS(weighted_kabsch(in.src, in.tgt, std::vector<double>(4, 1.0)), std::invalid_argument);
  auto bad = in.src;
  bad[2].x() = std::nan("");
  CHECK_THROWS_AS(weighted_kabsch(bad, in.tgt, std::vector<double>(5, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(weighted_kabsch(in.src, in.tgt, std::vector<double>{1, 1, 1, 1, -1}), std::invalid_argument);
}

TEST_CASE("argmax selection matches a row scan on 100 matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(10), m = 1 + rng.index(10);
    std::vector<double> v(n * m);
    for (auto& x : v) x = std::round(rng.uniform(-3, 3));
    const auto sel = select_correspondences(Tensor::from({n, m}, v));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m; ++j)
        if (v[i * m + j] > v[i * m + best]) best = j;
      CHECK(sel[i] == best);
    }
  }
  CHECK(select_correspondences(Tensor::full({3, 3}, 2.0)) == std::vector<std::size_t>{0, 0, 0});
  CHECK(select_correspondences(Tensor::from({2, 2}, {1, 0, 0, 1})) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("confidence weights: zero head, range, and row-max ordering") {
  Rng rng(8);
  ParameterStore store;
  ConfidenceWeightHead head(store, "w", 1, rng);
  Tensor mod = random_tensor({6, 5, 1}, rng, 3.0);
  const Tensor w0 = head.forward(mod);
  for (double w : w0.data()) CHECK((w > 0.0 && w < 1.0));
  Linear& p = head.projection();
  p.weight.mutable_data()[0] = 1.0;
  p.bias.mutable_data()[0] = 0.0;
  const Tensor w = head.forward(mod);
  for (std::size_t i = 0; i < 6; ++i) {
    double rmax = -1e9;
    for (std::size_t j = 0; j < 5; ++j) rmax = std::max(rmax, mod.at({i, j, 0}));
    CHECK(w.data()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-rmax))).epsilon(1e-12));
  }
  p.weight.mutable_data()[0] = 0.0;
  const Tensor half = head.forward(mod);
  for (double v : half.data()) CHECK(v == 0.5);
}

TEST_CASE("confidence weight head passes gradcheck") {
  Rng rng(9);
  ParameterStore store;
  ConfidenceWeightHead head(store, "w", 4, rng);
  Tensor mod = random_tensor({5, 4, 4}, rng);
  auto r = gradcheck(with_parameters(store, {{"modulated", mod}}), [&] { return random_projection(head.forward(mod), 1); });
  INFO(r.where);
  CHECK(r.ok);
}

TEST_CASE("SVD rotation backward matches finite differences") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    Tensor h = random_tensor({3, 3}, rng);
    auto r = gradcheck({{"H", h}}, [&] { return random_projection(kabsch_rotation(h), s); });
    INFO(r.where);
    CHECK(r.ok);
  }
}

TEST_CASE("tensor Kabsch agrees with the double solver and passes gradcheck") {
  Rng rng(10);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Instance in = exact_instance(8, 300 + s);
    for (auto& p : in.tgt) p += Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    Tensor src = points_tensor(in.src), tgt = points_tensor(in.tgt), w = Tensor::from({8}, in.w);
    const TensorPose tp = weighted_kabsch_tensor(src, tgt, w);
    const PoseSolution ref = weighted_kabsch(in.src, in.tgt, in.w);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) CHECK(tp.rotation.at({r, c}) == doctest::Approx(ref.transform.R(r, c)).epsilon(1e-10));
      CHECK(tp.translation.data()[r] == doctest::Approx(ref.transform.t[r]).epsilon(1e-10));
    }
    auto g = gradcheck({{"src", src}, {"tgt", tgt}, {"w", w}}, [&] {
      const TensorPose p = weighted_kabsch_tensor(src, tgt, w);
      return random_projection(p.rotation, 1) + random_projection(p.translation, 2);
    });
    INFO(g.where);
    CHECK(g.ok);
  }
}

TEST_CASE("straight-through matching: hard value, soft gradient") {
  Rng rng(11);
  Tensor scores = random_tensor({4, 5}, rng), oy = random_tensor({5, 3}, rng);
  const double tau = 0.1;
  const Tensor matched = matched_points(scores, oy, tau);
  const auto sel = select_correspondences(scores);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(matched.at({i, c}) == oy.at({sel[i], c}));

  scores.set_requires_grad(true);
  oy.set_requires_grad(true);
  backward(random_projection(matched_points(scores, oy, tau), 4));
  const std::vector<double> g_scores(scores.grad().begin(), scores.grad().end());
  const std::vector<double> g_oy(oy.grad().begin(), oy.grad().end());
  scores.node()->grad.clear();
  oy.node()->grad.clear();
  backward(random_projection(matmul(softmax(scale(scores, 1.0 / tau), 1), oy), 4));
  for (std::size_t i = 0; i < g_scores.size(); ++i) CHECK(g_scores[i] == doctest::Approx(scores.grad()[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < g_oy.size(); ++i) CHECK(g_oy[i] == doctest::Approx(oy.grad()[i]).epsilon(1e-12));
}

TEST_CASE("every emitted rotation is audited and valid") {
  reset_rotation_audit();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Instance in = exact_instance(12, s);
    weighted_kabsch(in.src, in.tgt, in.w);
  }
  const RotationAuditSummary a = rotation_audit();
  CHECK(a.count >= 10);
  CHECK(a.violations == 0);
  CHECK(a.worst_orthogonality < 1e-5);
  CHECK(a.worst_det_deviation < 1e-5);
}
