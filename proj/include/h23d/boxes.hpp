#pragma once

#include <array>
#include <span>
#include <vector>

namespace h23d {

// 7-DoF oriented box: geometric centre, size along (heading, lateral,
// vertical), yaw about +z in (-pi, pi].
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;
  double score = 0.0;
  int label = 1;

  bool valid() const;
  void validate() const;  // throws ShapeError
};

double normalize_angle(double a);  // into (-pi, pi]

using BoxResidual = std::array<double, 7>;

// Centre deltas scaled by the anchor's BEV diagonal (z by anchor height),
// log size ratios, raw yaw difference.
BoxResidual encode_box(const Box3D& box, const Box3D& anchor);
Box3D decode_box(const BoxResidual& residual, const Box3D& anchor);

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// Counter-clockwise BEV footprint.
std::array<Vec2, 4> bev_corners(const Box3D& box);

double polygon_area(std::span<const Vec2> poly);  // shoelace, signed CCW > 0
// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject,
                              std::span<const Vec2> clip);

double bev_intersection_area(const Box3D& a, const Box3D& b);
double bev_rotated_iou(const Box3D& a, const Box3D& b);
double iou3d(const Box3D& a, const Box3D& b);

// Cheap reject: true when the BEV circumcircles are disjoint.
bool bev_far_apart(const Box3D& a, const Box3D& b);

}  // namespace h23d
