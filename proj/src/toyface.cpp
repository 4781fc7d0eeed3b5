#include "avg/toyface.hpp"

#include <cmath>

namespace avg::mesh {

namespace {

constexpr int kShellRows = 13;
constexpr int kShellCols = 22;
constexpr int kShellVerts = kShellRows * kShellCols;  // 286
constexpr int kCavityRows = 2;
constexpr int kCavityCols = 6;
constexpr int kCavityBase = kShellVerts;              // 286..297
constexpr int kLipCols = 10;
constexpr int kUpperOuterBase = kCavityBase + kCavityRows * kCavityCols;  // 298
constexpr int kUpperInnerBase = kUpperOuterBase + kLipCols;               // 308
constexpr int kLowerInnerBase = kUpperInnerBase + kLipCols;               // 318
constexpr int kLowerOuterBase = kLowerInnerBase + kLipCols;               // 328

constexpr double kPi = 3.14159265358979323846;

// ellipsoid semi-axes (mm)
constexpr double kAx = 65.0, kAy = 85.0, kAz = 55.0;
// mouth placement
constexpr double kMouthY = -30.0;
constexpr double kMouthHalfWidth = 20.0;
constexpr double kLipZ = 54.0;
constexpr double kMaxGap = 11.0;       // inner-rim gap at aperture 1
constexpr double kMaxProtrude = 6.0;

// mouth cut-out box on the shell (x, y extents)
constexpr double kHoleHalfX = 27.0;
constexpr double kHoleYLo = -44.0;
constexpr double kHoleYHi = -16.0;

double arch(int k) {  // lip arch profile across columns, ~1 at center
  return std::sin(kPi * (k + 0.5) / kLipCols);
}

void shell_vertex(int r, int c, double* xyz) {
  double v = (-75.0 + 150.0 * r / (kShellRows - 1)) * kPi / 180.0;  // elevation
  double u = (-75.0 + 150.0 * c / (kShellCols - 1)) * kPi / 180.0;  // azimuth
  xyz[0] = kAx * std::sin(u) * std::cos(v);
  xyz[1] = kAy * std::sin(v);
  xyz[2] = kAz * std::cos(u) * std::cos(v);
}

}  // namespace

Tensor toyface_pose(const ToyfacePose& pose) {
  Tensor verts({kToyfaceVertices, 3});
  // static shell
  for (int r = 0; r < kShellRows; ++r)
    for (int c = 0; c < kShellCols; ++c) {
      double xyz[3];
      shell_vertex(r, c, xyz);
      int64_t i = r * kShellCols + c;
      for (int64_t a = 0; a < 3; ++a) verts.at(i, a) = xyz[a];
    }
  // static cavity band: tilted plane behind the mouth opening, catches little
  // light, so the opening reads dark against the shell
  for (int r = 0; r < kCavityRows; ++r)
    for (int c = 0; c < kCavityCols; ++c) {
      int64_t i = kCavityBase + r * kCavityCols + c;
      double fx = static_cast<double>(c) / (kCavityCols - 1);
      verts.at(i, 0) = -24.0 + 48.0 * fx;
      verts.at(i, 1) = (r == 0) ? -21.0 : -39.0;
      verts.at(i, 2) = (r == 0) ? kLipZ - 4.0 : kLipZ - 44.0;
    }
  // articulated lips
  double gap = pose.aperture * kMaxGap;
  double ws = 0.75 + 0.5 * pose.width;
  double pz = pose.protrusion * kMaxProtrude;
  for (int k = 0; k < kLipCols; ++k) {
    double a = arch(k);
    double x = (-kMouthHalfWidth + 2.0 * kMouthHalfWidth * k / (kLipCols - 1)) * ws;
    // outer rings move with half the rim excursion, giving the lips thickness
    int64_t uo = kUpperOuterBase + k, ui = kUpperInnerBase + k;
    int64_t li = kLowerInnerBase + k, lo = kLowerOuterBase + k;
    verts.at(ui, 0) = x;
    verts.at(ui, 1) = kMouthY + 0.5 * gap * a;
    verts.at(ui, 2) = kLipZ + pz + 1.5 * a;
    verts.at(uo, 0) = x * 1.08;
    verts.at(uo, 1) = kMouthY + 7.5 + 0.25 * gap * a;
    verts.at(uo, 2) = kLipZ + 0.6 * pz;
    verts.at(li, 0) = x;
    verts.at(li, 1) = kMouthY - 0.5 * gap * a;
    verts.at(li, 2) = kLipZ + pz + 1.5 * a;
    verts.at(lo, 0) = x * 1.08;
    verts.at(lo, 1) = kMouthY - 7.5 - 0.25 * gap * a;
    verts.at(lo, 2) = kLipZ + 0.6 * pz;
  }
  return verts;
}

Tensor toyface_template() { return toyface_pose(ToyfacePose{}); }

MeshTopology toyface_topology() {
  MeshTopology topo;
  topo.vertex_count = kToyfaceVertices;
  Tensor tmpl = toyface_pose(ToyfacePose{1.0, 0.5, 0.0});  // widest pose for hole test
  auto inside_hole = [&](int64_t i) {
    double x = tmpl.at(i, 0), y = tmpl.at(i, 1);
    return std::abs(x) < kHoleHalfX && y > kHoleYLo && y < kHoleYHi;
  };
  // shell quads, skipping any quad fully inside the mouth cut-out
  for (int r = 0; r + 1 < kShellRows; ++r)
    for (int c = 0; c + 1 < kShellCols; ++c) {
      int64_t v00 = r * kShellCols + c, v01 = v00 + 1;
      int64_t v10 = v00 + kShellCols, v11 = v10 + 1;
      if (inside_hole(v00) && inside_hole(v01) && inside_hole(v10) && inside_hole(v11))
        continue;
      topo.faces.push_back({v00, v01, v11});
      topo.faces.push_back({v00, v11, v10});
    }
  // cavity quads
  for (int c = 0; c + 1 < kCavityCols; ++c) {
    int64_t v00 = kCavityBase + c, v01 = v00 + 1;
    int64_t v10 = v00 + kCavityCols, v11 = v10 + 1;
    topo.faces.push_back({v00, v11, v01});
    topo.faces.push_back({v00, v10, v11});
  }
  // lip strips: outer ring to inner rim
  for (int k = 0; k + 1 < kLipCols; ++k) {
    int64_t uo0 = kUpperOuterBase + k, uo1 = uo0 + 1;
    int64_t ui0 = kUpperInnerBase + k, ui1 = ui0 + 1;
    topo.faces.push_back({uo0, ui1, uo1});
    topo.faces.push_back({uo0, ui0, ui1});
    int64_t li0 = kLowerInnerBase + k, li1 = li0 + 1;
    int64_t lo0 = kLowerOuterBase + k, lo1 = lo0 + 1;
    topo.faces.push_back({li0, lo1, li1});
    topo.faces.push_back({li0, lo0, lo1});
  }
  for (int64_t i = kUpperOuterBase; i < kToyfaceVertices; ++i)
    topo.lip_vertex_indices.push_back(i);
  for (int k : {3, 4, 5, 6})
    topo.lip_key_pairs.emplace_back(kUpperInnerBase + k, kLowerInnerBase + k);
  topo.validate();
  return topo;
}

}  // namespace avg::mesh
