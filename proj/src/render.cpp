#include "avg/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include <zlib.h>

#include "avg/error.hpp"

namespace avg::render {
namespace {

// Occupancy below this is dropped; keeps ROI and full renders bit-identical.
constexpr double kOccCut = 1e-12;

struct Vec2 {
  double x = 0, y = 0;
};
struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double cross2(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

// One pixel-triangle interaction, everything needed to replay its gradient.
struct Contrib {
  int32_t face;
  int32_t px, py;
  double d;       // signed boundary distance, ndc units (>0 inside)
  double occ;     // sigmoid occupancy
  double zbar;    // normalized centroid depth
  double shade;   // Lambertian intensity (already >= 0)
  int8_t edge;    // nearest edge index
  int8_t tcase;   // 0 = interior of edge, 1 = endpoint a, 2 = endpoint b
  int8_t lit;     // normal faced the light (shade gradient live)
};

struct FrameStore {
  std::vector<Contrib> contribs;  // sorted by pixel
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Signed distance from q to the triangle boundary; positive inside.
double signed_distance(const Vec2& q, const Vec2 p[3], double area2, int* edge, int* tcase) {
  double best = 1e300;
  int best_e = 0, best_c = 0;
  bool inside = true;
  double sa = area2 >= 0 ? 1.0 : -1.0;
  for (int e = 0; e < 3; ++e) {
    const Vec2& a = p[e];
    const Vec2& b = p[(e + 1) % 3];
    Vec2 ab{b.x - a.x, b.y - a.y};
    Vec2 aq{q.x - a.x, q.y - a.y};
    double cr = cross2(ab, aq);
    if (cr * sa < 0.0) inside = false;
    double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = (ab.x * aq.x + ab.y * aq.y) / len2;
    double d2;
    int c;
    if (t <= 0.0) {
      d2 = aq.x * aq.x + aq.y * aq.y;
      c = 1;
    } else if (t >= 1.0) {
      double bx = q.x - b.x, by = q.y - b.y;
      d2 = bx * bx + by * by;
      c = 2;
    } else {
      d2 = cr * cr / len2;
      c = 0;
    }
    if (d2 < best) {
      best = d2;
      best_e = e;
      best_c = c;
    }
  }
  *edge = best_e;
  *tcase = best_c;
  double dist = std::sqrt(best);
  return inside ? dist : -dist;
}

struct FaceGeom {
  Vec2 p[3];     // ndc
  Vec3 v[3];     // mm
  double area2;  // 2D signed area (ndc)
  double zbar;
  double shade;
  bool lit;
  bool ok;
};

FaceGeom face_geometry(const Tensor& verts, int64_t t, const std::array<int64_t, 3>& f,
                       const Camera& cam) {
  FaceGeom g;
  for (int k = 0; k < 3; ++k) {
    g.v[k] = {verts.at(t, f[size_t(k)], 0), verts.at(t, f[size_t(k)], 1),
              verts.at(t, f[size_t(k)], 2)};
    double u = cam.u_of(g.v[k].x), vv = cam.v_of(g.v[k].y);
    g.p[k] = {2.0 * u / double(cam.width) - 1.0, 2.0 * vv / double(cam.height) - 1.0};
  }
  g.area2 = cross2({g.p[1].x - g.p[0].x, g.p[1].y - g.p[0].y},
                   {g.p[2].x - g.p[0].x, g.p[2].y - g.p[0].y});
  Vec3 n = cross3(sub3(g.v[1], g.v[0]), sub3(g.v[2], g.v[0]));
  double nn = std::sqrt(n.x * n.x + n.y * n.y + n.z * n.z);
  g.ok = std::abs(g.area2) > 1e-18 && nn > 1e-18;
  g.lit = g.ok && n.z > 0.0;
  g.shade = g.lit ? kAlbedo * n.z / nn : 0.0;
  double zc = (g.v[0].z + g.v[1].z + g.v[2].z) / 3.0;
  g.zbar = (zc - kFarMm) / (kNearMm - kFarMm);
  return g;
}

// Forward rasterization of one frame; contribs end up sorted by pixel.
void rasterize_frame(const Tensor& verts, int64_t t, const mesh::MeshTopology& topo,
                     const Camera& cam, double sigma, const PixelRect& roi,
                     std::vector<Contrib>* out) {
  double r_cut = std::sqrt(sigma * std::log(1e12));
  double pad_x = r_cut * double(cam.width) * 0.5;
  double pad_y = r_cut * double(cam.height) * 0.5;
  for (size_t fi = 0; fi < topo.faces.size(); ++fi) {
    FaceGeom g = face_geometry(verts, t, topo.faces[fi], cam);
    if (!g.ok) continue;  // degenerate: zero occupancy
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (int k = 0; k < 3; ++k) {
      double u = (g.p[k].x + 1.0) * 0.5 * double(cam.width);
      double vv = (g.p[k].y + 1.0) * 0.5 * double(cam.height);
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, vv);
      vmax = std::max(vmax, vv);
    }
    int64_t jx0 = std::max(roi.x0, int64_t(std::floor(umin - pad_x)));
    int64_t jx1 = std::min(roi.x1, int64_t(std::ceil(umax + pad_x)) + 1);
    int64_t jy0 = std::max(roi.y0, int64_t(std::floor(vmin - pad_y)));
    int64_t jy1 = std::min(roi.y1, int64_t(std::ceil(vmax + pad_y)) + 1);
    for (int64_t py = jy0; py < jy1; ++py) {
      for (int64_t px = jx0; px < jx1; ++px) {
        Vec2 q{2.0 * (double(px) + 0.5) / double(cam.width) - 1.0,
               2.0 * (double(py) + 0.5) / double(cam.height) - 1.0};
        int edge = 0, tcase = 0;
        double d = signed_distance(q, g.p, g.area2, &edge, &tcase);
        if (d < -r_cut) continue;
        double occ = sigmoid(d * std::abs(d) / sigma);
        if (occ < kOccCut) continue;
        out->push_back({int32_t(fi), int32_t(px), int32_t(py), d, occ, g.zbar, g.shade,
                        int8_t(edge), int8_t(tcase), int8_t(g.lit ? 1 : 0)});
      }
    }
  }
  std::stable_sort(out->begin(), out->end(), [&](const Contrib& a, const Contrib& b) {
    return int64_t(a.py) * cam.width + a.px < int64_t(b.py) * cam.width + b.px;
  });
}

// Softmax-over-depth aggregation of one pixel group against background 0.
void aggregate_pixel(const Contrib* c, size_t n, double* value, double* denom, double* m_out) {
  double m = 0.0;  // background depth in normalized units
  for (size_t i = 0; i < n; ++i) m = std::max(m, double(c[i].zbar));
  double den = std::exp((0.0 - m) / kDepthTemperature);
  double num = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double w = double(c[i].occ) * std::exp((double(c[i].zbar) - m) / kDepthTemperature);
    den += w;
    num += w * double(c[i].shade);
  }
  *value = num / den;
  *denom = den;
  *m_out = m;
}

}  // namespace

void Camera::validate() const {
  AVG_CHECK(pixels_per_mm > 0.0, ValidationError, "camera scale must be positive");
  AVG_CHECK(height >= 16 && width >= 16, ValidationError, "camera image must be at least 16x16");
}

Camera make_camera(const cfg::Config& c) {
  Camera cam;
  int64_t size = c.get_int("render.image_size");
  cam.pixels_per_mm = c.get_num("render.pixels_per_mm");
  cam.width = cam.height = size;
  cam.cx = cam.cy = double(size) / 2.0;
  cam.validate();
  return cam;
}

void FrameSequence::validate() const {
  AVG_CHECK(images.ndim() == 3, ValidationError, "frames must be [T,H,W]");
  AVG_CHECK(fps > 0.0, ValidationError, "frame sequence fps must be positive");
  for (int64_t i = 0; i < images.numel(); ++i)
    AVG_CHECK(images[i] >= 0.0 && images[i] <= 1.0, ValidationError,
              "rendered values must lie in [0,1]");
}

void LipFrames::validate() const {
  AVG_CHECK(crops.ndim() == 3, ValidationError, "crops must be [T,h,w]");
  AVG_CHECK(int64_t(boxes.size()) == crops.dim(0), ValidationError,
            "one crop box per frame required");
  for (int64_t i = 0; i < crops.numel(); ++i)
    AVG_CHECK(crops[i] >= 0.0 && crops[i] <= 1.0, ValidationError,
              "crop values must lie in [0,1]");
}

ag::Var soft_render(const ag::Var& verts, const mesh::MeshTopology& topo, const Camera& cam,
                    double sigma, const PixelRect* roi_in) {
  cam.validate();
  AVG_CHECK(sigma > 0.0, ContractError, "sigma must be positive");
  const Tensor& v = verts.value();
  AVG_CHECK(v.ndim() == 3 && v.dim(2) == 3, ContractError, "soft_render expects [T,V,3]");
  AVG_CHECK(v.dim(1) == topo.vertex_count, ContractError,
            "vertex count does not match topology");
  int64_t T = v.dim(0);
  PixelRect roi{0, 0, cam.width, cam.height};
  if (roi_in) {
    roi = *roi_in;
    roi.x0 = std::max<int64_t>(0, roi.x0);
    roi.y0 = std::max<int64_t>(0, roi.y0);
    roi.x1 = std::min(cam.width, roi.x1);
    roi.y1 = std::min(cam.height, roi.y1);
  }

  bool need_grad = ag::grad_enabled() && verts.requires_grad();
  auto store = std::make_shared<std::vector<FrameStore>>();
  if (need_grad) store->resize(size_t(T));

  Tensor out({T, cam.height, cam.width});
  std::vector<Contrib> scratch;
  for (int64_t t = 0; t < T; ++t) {
    scratch.clear();
    rasterize_frame(v, t, topo, cam, sigma, roi, &scratch);
    for (size_t i = 0; i < scratch.size();) {
      size_t j = i;
      while (j < scratch.size() && scratch[j].px == scratch[i].px &&
             scratch[j].py == scratch[i].py)
        ++j;
      double val, den, m;
      aggregate_pixel(&scratch[i], j - i, &val, &den, &m);
      out.at(t, scratch[i].py, scratch[i].px) = val;
      i = j;
    }
    if (need_grad) (*store)[size_t(t)].contribs = scratch;
  }

  if (!need_grad) return ag::Var::constant(std::move(out));

  Camera cam_c = cam;
  double sigma_c = sigma;
  auto topo_faces = std::make_shared<std::vector<std::array<int64_t, 3>>>(topo.faces);
  return ag::make_custom(
      {verts}, std::move(out),
      [store, cam_c, sigma_c, topo_faces](const Tensor& gout,
                                          const std::vector<ag::NodeRef>& parents,
                                          const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        const Tensor& vv = parents[0]->value;
        Tensor& gv = *grads[0];
        int64_t T = vv.dim(0);
        double inv_depth_range = 1.0 / (kNearMm - kFarMm);
        for (int64_t t = 0; t < T; ++t) {
          const auto& contribs = (*store)[size_t(t)].contribs;
          for (size_t i = 0; i < contribs.size();) {
            size_t j = i;
            while (j < contribs.size() && contribs[j].px == contribs[i].px &&
                   contribs[j].py == contribs[i].py)
              ++j;
            double val, den, m;
            aggregate_pixel(&contribs[i], j - i, &val, &den, &m);
            double g = gout.at(t, contribs[i].py, contribs[i].px);
            if (g == 0.0) {
              i = j;
              continue;
            }
            for (size_t k = i; k < j; ++k) {
              const Contrib& c = contribs[k];
              const auto& f = (*topo_faces)[size_t(c.face)];
              FaceGeom geo = face_geometry(vv, t, f, cam_c);
              double e = std::exp((double(c.zbar) - m) / kDepthTemperature);
              double occ = double(c.occ), shade = double(c.shade);
              double g_occ = g * e * (shade - val) / den;
              double g_shade = g * occ * e / den;
              double g_zbar = g * occ * e * (shade - val) / (den * kDepthTemperature);

              // depth: zbar = (mean z - far) / (near - far)
              for (int kk = 0; kk < 3; ++kk)
                gv.at(t, f[size_t(kk)], 2) += g_zbar * inv_depth_range / 3.0;

              // shading: c = albedo * nz / |n|, n = (v1-v0) x (v2-v0)
              if (c.lit) {
                Vec3 a = sub3(geo.v[1], geo.v[0]);
                Vec3 b = sub3(geo.v[2], geo.v[0]);
                Vec3 n = cross3(a, b);
                double nn = std::sqrt(n.x * n.x + n.y * n.y + n.z * n.z);
                double inv = 1.0 / nn;
                double nz_hat = n.z * inv;
                Vec3 gn{-nz_hat * n.x * inv * inv, -nz_hat * n.y * inv * inv,
                        (1.0 - nz_hat * n.z * inv) * inv};
                gn = {gn.x * g_shade * kAlbedo, gn.y * g_shade * kAlbedo,
                      gn.z * g_shade * kAlbedo};
                Vec3 ga = cross3(b, gn);
                Vec3 gb = cross3(gn, a);
                gv.at(t, f[1], 0) += ga.x;
                gv.at(t, f[1], 1) += ga.y;
                gv.at(t, f[1], 2) += ga.z;
                gv.at(t, f[2], 0) += gb.x;
                gv.at(t, f[2], 1) += gb.y;
                gv.at(t, f[2], 2) += gb.z;
                gv.at(t, f[0], 0) -= ga.x + gb.x;
                gv.at(t, f[0], 1) -= ga.y + gb.y;
                gv.at(t, f[0], 2) -= ga.z + gb.z;
              }

              // occupancy: occ = sigmoid(d|d|/sigma)
              double dd = double(c.d);
              double g_d = g_occ * occ * (1.0 - occ) * 2.0 * std::abs(dd) / sigma_c;
              if (g_d != 0.0) {
                Vec2 q{2.0 * (double(c.px) + 0.5) / double(cam_c.width) - 1.0,
                       2.0 * (double(c.py) + 0.5) / double(cam_c.height) - 1.0};
                int e0 = c.edge, e1 = (c.edge + 1) % 3;
                Vec2 pa = geo.p[e0], pb = geo.p[e1];
                double sgn = dd >= 0 ? 1.0 : -1.0;  // d = sgn * dist
                Vec2 gpa{0, 0}, gpb{0, 0};
                if (c.tcase == 1) {
                  double dist = std::abs(dd);
                  if (dist > 1e-12) {
                    gpa = {(pa.x - q.x) / dist, (pa.y - q.y) / dist};
                  }
                } else if (c.tcase == 2) {
                  double dist = std::abs(dd);
                  if (dist > 1e-12) {
                    gpb = {(pb.x - q.x) / dist, (pb.y - q.y) / dist};
                  }
                } else {
                  Vec2 ab{pb.x - pa.x, pb.y - pa.y};
                  Vec2 aq{q.x - pa.x, q.y - pa.y};
                  double C = cross2(ab, aq);
                  double L = std::sqrt(ab.x * ab.x + ab.y * ab.y);
                  double sC = C >= 0 ? 1.0 : -1.0;
                  double gC = sC / L;
                  double gL = -std::abs(C) / (L * L);
                  gpa = {gC * (pb.y - q.y) + gL * (pa.x - pb.x) / L,
                         gC * (q.x - pb.x) + gL * (pa.y - pb.y) / L};
                  gpb = {gC * (q.y - pa.y) + gL * (pb.x - pa.x) / L,
                         gC * (pa.x - q.x) + gL * (pb.y - pa.y) / L};
                }
                // ndc -> mm: X = 2(cx + s*x)/W - 1, Y = 2(cy - s*y)/H - 1
                double dxdX = 2.0 * cam_c.pixels_per_mm / double(cam_c.width);
                double dydY = -2.0 * cam_c.pixels_per_mm / double(cam_c.height);
                gv.at(t, f[size_t(e0)], 0) += g_d * sgn * gpa.x * dxdX;
                gv.at(t, f[size_t(e0)], 1) += g_d * sgn * gpa.y * dydY;
                gv.at(t, f[size_t(e1)], 0) += g_d * sgn * gpb.x * dxdX;
                gv.at(t, f[size_t(e1)], 1) += g_d * sgn * gpb.y * dydY;
              }
            }
            i = j;
          }
        }
      });
}

CropBox lip_crop_box(const Tensor& verts, const mesh::MeshTopology& topo, const Camera& cam,
                     double margin) {
  cam.validate();
  AVG_CHECK(margin >= 0.0, ContractError, "margin must be nonnegative");
  AVG_CHECK(verts.ndim() == 3 && verts.dim(2) == 3, ContractError, "expected [T,V,3]");
  AVG_CHECK(!topo.lip_vertex_indices.empty(), ContractError, "topology has no lip vertices");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (int64_t t = 0; t < verts.dim(0); ++t) {
    double fx0 = 1e300, fx1 = -1e300, fy0 = 1e300, fy1 = -1e300;
    for (int64_t li : topo.lip_vertex_indices) {
      double u = cam.u_of(verts.at(t, li, 0));
      double v = cam.v_of(verts.at(t, li, 1));
      fx0 = std::min(fx0, u);
      fx1 = std::max(fx1, u);
      fy0 = std::min(fy0, v);
      fy1 = std::max(fy1, v);
    }
    AVG_CHECK(fx1 >= 0.0 && fx0 <= double(cam.width) && fy1 >= 0.0 && fy0 <= double(cam.height),
              ValidationError,
              "lip crop is empty: lips project outside the image in frame " + std::to_string(t));
    xmin = std::min(xmin, fx0);
    xmax = std::max(xmax, fx1);
    ymin = std::min(ymin, fy0);
    ymax = std::max(ymax, fy1);
  }
  double w = xmax - xmin, h = ymax - ymin;
  double side = 2.0 * (1.0 + margin) * std::max(w, h);
  side = std::max(side, 2.0);
  side = std::min(side, double(std::min(cam.width, cam.height)));
  double x0 = (xmin + xmax) * 0.5 - side * 0.5;
  double y0 = (ymin + ymax) * 0.5 - side * 0.5;
  x0 = std::clamp(x0, 0.0, double(cam.width) - side);
  y0 = std::clamp(y0, 0.0, double(cam.height) - side);
  return {x0, y0, side};
}

ag::Var bilinear_crop(const ag::Var& frames, const CropBox& box, int64_t out_h, int64_t out_w) {
  const Tensor& fv = frames.value();
  AVG_CHECK(fv.ndim() == 3, ContractError, "bilinear_crop expects [T,H,W]");
  AVG_CHECK(out_h >= 1 && out_w >= 1, ContractError, "output size must be positive");
  AVG_CHECK(box.side > 0.0, ContractError, "crop box must have positive side");
  int64_t T = fv.dim(0), H = fv.dim(1), W = fv.dim(2);

  struct Tap {
    int64_t r0, c0, r1, c1;
    double fy, fx;
  };
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(size_t(out_h * out_w));
  for (int64_t i = 0; i < out_h; ++i) {
    for (int64_t j = 0; j < out_w; ++j) {
      double u = box.x0 + (double(j) + 0.5) * box.side / double(out_w);
      double v = box.y0 + (double(i) + 0.5) * box.side / double(out_h);
      double cf = std::clamp(u - 0.5, 0.0, double(W - 1));
      double rf = std::clamp(v - 0.5, 0.0, double(H - 1));
      Tap tp;
      tp.c0 = int64_t(std::floor(cf));
      tp.r0 = int64_t(std::floor(rf));
      tp.fx = cf - double(tp.c0);
      tp.fy = rf - double(tp.r0);
      tp.c1 = std::min(tp.c0 + 1, W - 1);
      tp.r1 = std::min(tp.r0 + 1, H - 1);
      taps->push_back(tp);
    }
  }

  Tensor out({T, out_h, out_w});
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t i = 0; i < out_h; ++i) {
      for (int64_t j = 0; j < out_w; ++j) {
        const Tap& tp = (*taps)[size_t(i * out_w + j)];
        out.at(t, i, j) = (1 - tp.fy) * ((1 - tp.fx) * fv.at(t, tp.r0, tp.c0) +
                                         tp.fx * fv.at(t, tp.r0, tp.c1)) +
                          tp.fy * ((1 - tp.fx) * fv.at(t, tp.r1, tp.c0) +
                                   tp.fx * fv.at(t, tp.r1, tp.c1));
      }
    }
  }
  if (!ag::grad_enabled() || !frames.requires_grad()) return ag::Var::constant(std::move(out));

  int64_t oh = out_h, ow = out_w;
  return ag::make_custom(
      {frames}, std::move(out),
      [taps, oh, ow](const Tensor& gout, const std::vector<ag::NodeRef>& parents,
                     const std::vector<Tensor*>& grads) {
        if (!grads[0]) return;
        Tensor& gf = *grads[0];
        int64_t T = parents[0]->value.dim(0);
        for (int64_t t = 0; t < T; ++t) {
          for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
              const Tap& tp = (*taps)[size_t(i * ow + j)];
              double g = gout.at(t, i, j);
              if (g == 0.0) continue;
              gf.at(t, tp.r0, tp.c0) += g * (1 - tp.fy) * (1 - tp.fx);
              gf.at(t, tp.r0, tp.c1) += g * (1 - tp.fy) * tp.fx;
              gf.at(t, tp.r1, tp.c0) += g * tp.fy * (1 - tp.fx);
              gf.at(t, tp.r1, tp.c1) += g * tp.fy * tp.fx;
            }
          }
        }
      });
}

ag::Var crop_lips(const ag::Var& frames, const Tensor& verts, const mesh::MeshTopology& topo,
                  const Camera& cam, double margin, int64_t out_h, int64_t out_w,
                  CropBox* box_out) {
  CropBox box = lip_crop_box(verts, topo, cam, margin);
  if (box_out) *box_out = box;
  return bilinear_crop(frames, box, out_h, out_w);
}

ag::Var render_lip_crops(const ag::Var& verts, const mesh::MeshTopology& topo, const Camera& cam,
                         double sigma, double margin, int64_t out_h, int64_t out_w,
                         CropBox* box_out) {
  CropBox box = lip_crop_box(verts.value(), topo, cam, margin);
  if (box_out) *box_out = box;
  // Two extra pixels cover the outermost bilinear taps.
  PixelRect roi{int64_t(std::floor(box.x0)) - 2, int64_t(std::floor(box.y0)) - 2,
                int64_t(std::ceil(box.x0 + box.side)) + 2,
                int64_t(std::ceil(box.y0 + box.side)) + 2};
  ag::Var frames = soft_render(verts, topo, cam, sigma, &roi);
  return bilinear_crop(frames, box, out_h, out_w);
}

FrameSequence render_frames(const mesh::VertexSequence& seq, const mesh::MeshTopology& topo,
                            const Camera& cam, double sigma) {
  seq.validate();
  ag::NoGradGuard guard;
  FrameSequence out;
  out.images = soft_render(ag::Var::constant(seq.frames), topo, cam, sigma).value();
  out.fps = seq.fps;
  out.validate();
  return out;
}

LipFrames crop_lips(const FrameSequence& frames, const mesh::VertexSequence& seq,
                    const mesh::MeshTopology& topo, const Camera& cam, double margin,
                    int64_t out_h, int64_t out_w) {
  ag::NoGradGuard guard;
  CropBox box = lip_crop_box(seq.frames, topo, cam, margin);
  LipFrames out;
  out.crops = bilinear_crop(ag::Var::constant(frames.images), box, out_h, out_w).value();
  out.boxes.assign(size_t(frames.images.dim(0)), box);
  out.fps = frames.fps;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// gradient-check fixture: four quads (one off-screen), two frames

namespace {

struct GradFixture {
  mesh::MeshTopology topo;
  Tensor verts;  // [2,16,3]
  Camera cam;
};

GradFixture grad_fixture() {
  GradFixture fx;
  fx.cam.pixels_per_mm = 2.0;
  fx.cam.cx = fx.cam.cy = 32.0;
  fx.cam.width = fx.cam.height = 64;

  // Quad corner layout: (x0,y0) (x1,y0) (x1,y1) (x0,y1).
  auto quad = [](std::vector<double>* v, double x0, double y0, double x1, double y1, double z,
                 double zx, double zy) {
    double xs[4] = {x0, x1, x1, x0};
    double ys[4] = {y0, y0, y1, y1};
    for (int k = 0; k < 4; ++k) {
      v->push_back(xs[k]);
      v->push_back(ys[k]);
      v->push_back(z + zx * xs[k] + zy * ys[k]);
    }
  };
  std::vector<double> base;
  quad(&base, -6.0, -5.0, 2.0, 3.0, 10.0, 0.05, 0.00);   // lower lip sheet
  quad(&base, -5.0, 0.0, 4.0, 6.0, 11.0, 0.00, 0.08);    // upper sheet, overlaps
  quad(&base, 3.0, -4.0, 10.0, 4.0, 8.0, -0.03, 0.02);   // cheek sheet
  quad(&base, 500.0, 500.0, 510.0, 510.0, 5.0, 0.0, 0.0);  // far off-screen

  fx.topo.vertex_count = 16;
  for (int qi = 0; qi < 4; ++qi) {
    int64_t o = qi * 4;
    fx.topo.faces.push_back({o, o + 1, o + 2});
    fx.topo.faces.push_back({o, o + 2, o + 3});
  }
  fx.topo.lip_vertex_indices = {0, 1, 2, 3, 4, 5, 6, 7};
  fx.topo.lip_key_pairs = {{4, 0}, {5, 1}};
  fx.topo.validate();

  fx.verts = Tensor({2, 16, 3});
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t vtx = 0; vtx < 16; ++vtx)
      for (int64_t c = 0; c < 3; ++c) fx.verts.at(t, vtx, c) = base[size_t(vtx * 3 + c)];
  // Second frame: everything drifts a little, the upper sheet lifts.
  for (int64_t vtx = 0; vtx < 16; ++vtx) {
    fx.verts.at(1, vtx, 1) += 0.8;
    if (vtx >= 4 && vtx < 8) fx.verts.at(1, vtx, 2) += 0.7;
    if (vtx < 4) fx.verts.at(1, vtx, 0) -= 0.5;
  }
  return fx;
}

// Crop-window sum with the box held fixed: the box is a stop-gradient in the
// training path, so finite differences must not move it.
double crop_sum(const GradFixture& fx, const Tensor& verts, double sigma, const CropBox& box) {
  ag::NoGradGuard guard;
  PixelRect roi{int64_t(std::floor(box.x0)) - 2, int64_t(std::floor(box.y0)) - 2,
                int64_t(std::ceil(box.x0 + box.side)) + 2,
                int64_t(std::ceil(box.y0 + box.side)) + 2};
  ag::Var frames = soft_render(ag::Var::constant(verts), fx.topo, fx.cam, sigma, &roi);
  ag::Var crops = bilinear_crop(frames, box, 20, 20);
  double s = 0.0;
  for (int64_t i = 0; i < crops.value().numel(); ++i) s += crops.value()[i];
  return s;
}

}  // namespace

double image_gradient_check(double sigma, double step_mm) {
  GradFixture fx = grad_fixture();
  ag::Var verts = ag::Var::param(fx.verts);
  CropBox box;
  ag::Var crops = render_lip_crops(verts, fx.topo, fx.cam, sigma, 0.25, 20, 20, &box);
  ag::Var total = ag::sum(crops);
  ag::backward(total);
  Tensor analytic = verts.grad();

  double max_rel = 0.0;
  for (int64_t i = 0; i < fx.verts.numel(); ++i) {
    Tensor plus = fx.verts, minus = fx.verts;
    plus[i] += step_mm;
    minus[i] -= step_mm;
    double fd =
        (crop_sum(fx, plus, sigma, box) - crop_sum(fx, minus, sigma, box)) / (2.0 * step_mm);
    double a = analytic[i];
    double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

void put_u32(std::vector<unsigned char>* v, uint32_t x) {
  v->push_back((x >> 24) & 0xff);
  v->push_back((x >> 16) & 0xff);
  v->push_back((x >> 8) & 0xff);
  v->push_back(x & 0xff);
}

void put_chunk(std::ofstream* out, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> head;
  put_u32(&head, uint32_t(data.size()));
  out->write(reinterpret_cast<const char*>(head.data()), 4);
  out->write(type, 4);
  if (!data.empty()) out->write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  std::vector<unsigned char> tail;
  put_u32(&tail, uint32_t(crc));
  out->write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_gray(const Tensor& img, const std::string& path) {
  AVG_CHECK(img.ndim() == 2, ContractError, "png writer expects [H,W]");
  int64_t H = img.dim(0), W = img.dim(1);
  std::vector<unsigned char> raw;
  raw.reserve(size_t(H * (W + 1)));
  for (int64_t r = 0; r < H; ++r) {
    raw.push_back(0);  // filter: none
    for (int64_t c = 0; c < W; ++c) {
      double v = std::clamp(img.at(r, c), 0.0, 1.0);
      raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> packed(bound);
  AVG_CHECK(compress2(packed.data(), &bound, raw.data(), uLong(raw.size()), 6) == Z_OK,
            IoError, "png deflate failed");
  packed.resize(bound);

  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<unsigned char> ihdr;
  put_u32(&ihdr, uint32_t(W));
  put_u32(&ihdr, uint32_t(H));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(&out, "IHDR", ihdr);
  put_chunk(&out, "IDAT", packed);
  put_chunk(&out, "IEND", {});
  AVG_CHECK(out.good(), IoError, "write failed for " + path);
}

}  // namespace avg::render
