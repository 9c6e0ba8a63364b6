#pragma once

#include <string>
#include <vector>

#include "h23d/boxes.hpp"
#include "h23d/geometry.hpp"

namespace h23d {

// Records of four little-endian float32 (x, y, z, r). Reflectance is clamped
// to [0, 1]. Throws FormatError on a length not divisible by 16.
PointCloud load_kitti_bin(const std::string& path);
PointCloud parse_kitti_bin(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_kitti_bin(const PointCloud& cloud);
void write_kitti_bin(const std::string& path, const PointCloud& cloud);

struct DetectionSet {
  std::vector<Box3D> boxes;  // score and label filled
  std::size_t size() const noexcept { return boxes.size(); }
  bool empty() const noexcept { return boxes.empty(); }
};

const char* class_name(int label);
int class_label(const std::string& name);  // 0 when unknown

inline constexpr std::size_t kLabelFields = 16;

// KITTI label field order, LiDAR frame: type, truncated (0), occluded (0),
// alpha (-10), 2D box (0 0 0 0), h w l, x y z (box centre), yaw, score.
// Numbers use the shortest exact decimal form.
std::string write_kitti_labels(const DetectionSet& dets);
DetectionSet parse_kitti_labels(const std::string& text);

}  // namespace h23d
