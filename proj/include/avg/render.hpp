#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/config.hpp"
#include "avg/mesh.hpp"
#include "avg/tensor.hpp"

namespace avg::render {

// Orthographic frontal camera. x maps right, y maps up in world millimeters;
// pixel rows grow downward. Larger world z is closer to the camera, and the
// single light shines along -z with unit direction (0,0,1).
struct Camera {
  double pixels_per_mm = 0.72;
  double cx = 64.0, cy = 64.0;  // principal point, pixels
  int64_t height = 128, width = 128;

  void validate() const;
  // World mm -> continuous pixel coordinates (u right, v down).
  double u_of(double x_mm) const { return cx + pixels_per_mm * x_mm; }
  double v_of(double y_mm) const { return cy - pixels_per_mm * y_mm; }
};
Camera make_camera(const cfg::Config& c);

struct FrameSequence {
  Tensor images;  // [T, H, W], grayscale in [0, 1]
  double fps = 0.0;
  void validate() const;
};

// Square crop window in pixel coordinates (per-sequence, shared by frames).
struct CropBox {
  double x0 = 0.0, y0 = 0.0, side = 0.0;
};

struct LipFrames {
  Tensor crops;  // [T, h, w] in [0, 1]
  std::vector<CropBox> boxes;  // one per frame (identical under this policy)
  double fps = 0.0;
  void validate() const;
};

// Optional integer pixel window restricting rasterization; pixels outside
// stay background. Full frames and ROI renders agree bit for bit inside.
struct PixelRect {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
};

// Soft rasterizer: per-pixel, per-triangle occupancy sigmoid(d|d|/sigma) on
// the signed pixel-space distance d to the triangle boundary (in normalized
// device units), aggregated across triangles by a depth softmax against a
// background of 0, with flat Lambertian shading. Differentiable with respect
// to every vertex coordinate; degenerate triangles contribute nothing.
ag::Var soft_render(const ag::Var& verts, const mesh::MeshTopology& topo, const Camera& cam,
                    double sigma, const PixelRect* roi = nullptr);  // [T,V,3] -> [T,H,W]

// Per-sequence square lip window: bounding box of projected lip vertices over
// all frames, each axis inflated to 2*(1+margin) times its extent, made
// square, capped and shifted into the image. Raises when a frame's lips all
// project outside the image.
CropBox lip_crop_box(const Tensor& verts, const mesh::MeshTopology& topo, const Camera& cam,
                     double margin);

// Differentiable bilinear resample of frames restricted to `box` at out size.
ag::Var bilinear_crop(const ag::Var& frames, const CropBox& box, int64_t out_h, int64_t out_w);

// Box from lip geometry (stop-gradient), then crop.
ag::Var crop_lips(const ag::Var& frames, const Tensor& verts, const mesh::MeshTopology& topo,
                  const Camera& cam, double margin, int64_t out_h, int64_t out_w,
                  CropBox* box_out = nullptr);

// Fused training path: box from the vertex values, render only that window,
// resample. Identical pixels to soft_render + crop_lips.
ag::Var render_lip_crops(const ag::Var& verts, const mesh::MeshTopology& topo, const Camera& cam,
                         double sigma, double margin, int64_t out_h, int64_t out_w,
                         CropBox* box_out = nullptr);

// Plain-value conveniences used by evaluation and the CLI.
FrameSequence render_frames(const mesh::VertexSequence& seq, const mesh::MeshTopology& topo,
                            const Camera& cam, double sigma);
LipFrames crop_lips(const FrameSequence& frames, const mesh::VertexSequence& seq,
                    const mesh::MeshTopology& topo, const Camera& cam, double margin,
                    int64_t out_h, int64_t out_w);

// Max relative error between analytic and central finite-difference gradients
// of the summed lip-crop intensity on a small two-frame fixture.
double image_gradient_check(double sigma, double step_mm = 1e-4);

// 8-bit grayscale PNG.
void write_png_gray(const Tensor& img, const std::string& path);

constexpr double kAlbedo = 0.8;
constexpr double kDepthTemperature = 1e-3;  // softmax over normalized depth
constexpr double kNearMm = 100.0, kFarMm = -100.0;

}  // namespace avg::render
