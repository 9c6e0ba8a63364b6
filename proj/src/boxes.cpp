#include "h23d/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "h23d/error.hpp"

namespace h23d {

namespace {
// Collinear/degenerate edge tolerance, metres.
constexpr double kEdgeEps = 1e-9;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}
}  // namespace

bool Box3D::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) &&
         std::isfinite(yaw) && l > 0 && w > 0 && h > 0 && std::isfinite(l) &&
         std::isfinite(w) && std::isfinite(h);
}

void Box3D::validate() const {
  if (!valid()) throw ShapeError("degenerate box (non-positive size or non-finite field)");
}

double normalize_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

BoxResidual encode_box(const Box3D& box, const Box3D& anchor) {
  anchor.validate();
  box.validate();
  const double diag = std::hypot(anchor.l, anchor.w);
  return {(box.x - anchor.x) / diag,
          (box.y - anchor.y) / diag,
          (box.z - anchor.z) / anchor.h,
          std::log(box.l / anchor.l),
          std::log(box.w / anchor.w),
          std::log(box.h / anchor.h),
          box.yaw - anchor.yaw};
}

Box3D decode_box(const BoxResidual& r, const Box3D& anchor) {
  anchor.validate();
  const double diag = std::hypot(anchor.l, anchor.w);
  Box3D b;
  b.x = anchor.x + r[0] * diag;
  b.y = anchor.y + r[1] * diag;
  b.z = anchor.z + r[2] * anchor.h;
  b.l = anchor.l * std::exp(r[3]);
  b.w = anchor.w * std::exp(r[4]);
  b.h = anchor.h * std::exp(r[5]);
  b.yaw = normalize_angle(anchor.yaw + r[6]);
  b.label = anchor.label;
  return b;
}

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = b.l / 2, hw = b.w / 2;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = {b.x + c * local[i].x - s * local[i].y, b.y + s * local[i].x + c * local[i].y};
  return out;
}

double polygon_area(std::span<const Vec2> poly) {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return acc / 2.0;
}

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len < kEdgeEps) continue;
    // Signed distance to the edge line, positive on the inner (left) side.
    auto dist = [&](const Vec2& p) { return cross(a, b, p) / len; };
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& cur = in[i];
      const Vec2& prev = in[(i + in.size() - 1) % in.size()];
      const double dc = dist(cur), dp = dist(prev);
      const bool cur_in = dc >= -kEdgeEps, prev_in = dp >= -kEdgeEps;
      if (cur_in != prev_in) {
        const double t = dp / (dp - dc);
        out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
      }
      if (cur_in) out.push_back(cur);
    }
  }
  return out;
}

bool bev_far_apart(const Box3D& a, const Box3D& b) {
  const double ra = std::hypot(a.l, a.w) / 2, rb = std::hypot(b.l, b.w) / 2;
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy > (ra + rb) * (ra + rb);
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  if (bev_far_apart(a, b)) return 0.0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const auto poly = clip_convex(ca, cb);
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

double bev_rotated_iou(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.l * a.w + b.l * b.w - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou3d(const Box3D& a, const Box3D& b) {
  const double zlo = std::max(a.z - a.h / 2, b.z - b.h / 2);
  const double zhi = std::min(a.z + a.h / 2, b.z + b.h / 2);
  const double dz = zhi - zlo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace h23d
