#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "avg/toyface.hpp"

using namespace avg;
using namespace avg::mesh;

namespace {

VertexSequence one_frame(const Tensor& verts) {
  VertexSequence s;
  s.fps = 25.0;
  s.frames = verts.reshaped({1, verts.dim(0), 3});
  return s;
}

}  // namespace

TEST_CASE("toyface topology is valid and sized as documented") {
  MeshTopology t = toyface_topology();
  CHECK(t.vertex_count == kToyfaceVertices);
  CHECK(t.lip_count() == kToyfaceLipVertices);
  CHECK(t.lip_key_pairs.size() == 4);
  CHECK(t.faces.size() > 100);
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("pose output is finite for corner poses") {
  for (double a : {0.0, 1.0})
    for (double w : {0.0, 1.0})
      for (double p : {0.0, 1.0}) {
        Tensor v = toyface_pose({a, w, p});
        CHECK(v.shape() == std::vector<int64_t>{kToyfaceVertices, 3});
        CHECK(v.all_finite());
      }
}

TEST_CASE("aperture drives the key-pair gap monotonically") {
  MeshTopology t = toyface_topology();
  double prev = -1.0;
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    auto g = lip_aperture(one_frame(toyface_pose({a, 0.5, 0.15})), t);
    CHECK(g[0] > prev);
    prev = g[0];
  }
  // full closure really closes
  auto closed = lip_aperture(one_frame(toyface_pose({0.0, 0.5, 0.15})), t);
  CHECK(closed[0] < 0.2);
  auto open = lip_aperture(one_frame(toyface_pose({1.0, 0.5, 0.15})), t);
  CHECK(open[0] > 7.0);
}

TEST_CASE("width spreads the lip corners") {
  MeshTopology t = toyface_topology();
  auto xspan = [&](double w) {
    Tensor v = toyface_pose({0.25, w, 0.15});
    double lo = 1e9, hi = -1e9;
    for (int64_t i : t.lip_vertex_indices) {
      lo = std::min(lo, v.at(i, 0));
      hi = std::max(hi, v.at(i, 0));
    }
    return hi - lo;
  };
  CHECK(xspan(0.0) < xspan(0.5));
  CHECK(xspan(0.5) < xspan(1.0));
}

TEST_CASE("protrusion pushes the lips forward, not the shell") {
  Tensor a = toyface_pose({0.25, 0.5, 0.0});
  Tensor b = toyface_pose({0.25, 0.5, 1.0});
  MeshTopology t = toyface_topology();
  double dz = 0.0;
  for (int64_t i : t.lip_vertex_indices) dz += b.at(i, 2) - a.at(i, 2);
  dz /= static_cast<double>(t.lip_count());
  CHECK(dz > 3.0);
  // non-lip vertices must not move with any articulation parameter
  for (int64_t i = 0; i < kToyfaceVertices - kToyfaceLipVertices; ++i)
    for (int64_t c = 0; c < 3; ++c) CHECK(a.at(i, c) == b.at(i, c));
}

TEST_CASE("template equals the default pose") {
  Tensor tp = toyface_template();
  Tensor dp = toyface_pose(ToyfacePose{});
  for (int64_t i = 0; i < tp.numel(); ++i) CHECK(tp[i] == dp[i]);
}

TEST_CASE("generated topology survives the text format") {
  MeshTopology t = toyface_topology();
  auto p = (std::filesystem::temp_directory_path() / "avg_toyface_rt.topo").string();
  save_topology(t, p);
  MeshTopology r = load_topology(p);
  CHECK(r.vertex_count == t.vertex_count);
  CHECK(r.faces == t.faces);
  CHECK(r.lip_vertex_indices == t.lip_vertex_indices);
  CHECK(r.lip_key_pairs == t.lip_key_pairs);
  std::remove(p.c_str());
}

TEST_CASE("camera-facing geometry: face normals point toward +z on average") {
  MeshTopology t = toyface_topology();
  Tensor v = toyface_template();
  int backfacing = 0;
  for (const auto& [i, j, k] : t.faces) {
    double ax = v.at(j, 0) - v.at(i, 0), ay = v.at(j, 1) - v.at(i, 1),
           az = v.at(j, 2) - v.at(i, 2);
    double bx = v.at(k, 0) - v.at(i, 0), by = v.at(k, 1) - v.at(i, 1),
           bz = v.at(k, 2) - v.at(i, 2);
    double nz = ax * by - ay * bx;
    (void)az;
    (void)bz;
    if (nz <= 0.0) ++backfacing;
  }
  CHECK(backfacing == 0);
}
