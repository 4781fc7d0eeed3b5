#pragma once

#include "avg/mesh.hpp"

namespace avg::mesh {

// Bundled desk-scale head: a front half-ellipsoid shell with a cut-out mouth,
// a recessed cavity band behind the opening, and two articulated lip strips
// (outer ring + inner rim, 10 columns each). 338 vertices, 40 of them lips,
// 4 key pairs on the inner rims. All coordinates in millimeters.
//
// The mouth pose is controlled by three articulation parameters in [0,1]:
//   aperture   0 = full bilabial closure, 1 = widest opening (~11 mm)
//   width      0 = fully rounded/narrow, 1 = fully spread
//   protrusion 0 = retracted, 1 = pushed forward (~6 mm)

struct ToyfacePose {
  double aperture = 0.25;
  double width = 0.5;
  double protrusion = 0.15;
};

MeshTopology toyface_topology();

// Vertex positions for a mouth pose; [V,3].
Tensor toyface_pose(const ToyfacePose& pose);

// Neutral template (slightly parted lips).
Tensor toyface_template();

constexpr int64_t kToyfaceVertices = 338;
constexpr int64_t kToyfaceLipVertices = 40;

}  // namespace avg::mesh
