#include "h23d/kitti_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "h23d/error.hpp"

namespace h23d {

namespace {
float read_le_f32(const unsigned char* p) {
  std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                    std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  return std::bit_cast<float>(u);
}

void write_le_f32(float v, std::vector<unsigned char>& out) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(u >> s));
}

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_num(const std::string& s, std::size_t line) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw FormatError("labels line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}
}  // namespace

PointCloud parse_kitti_bin(const std::vector<unsigned char>& bytes) {
  if (bytes.size() % 16 != 0)
    throw FormatError("kitti bin: length " + std::to_string(bytes.size()) +
                      " is not a multiple of 16 bytes");
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    Point p;
    p.x = read_le_f32(&bytes[off]);
    p.y = read_le_f32(&bytes[off + 4]);
    p.z = read_le_f32(&bytes[off + 8]);
    p.r = std::clamp<double>(read_le_f32(&bytes[off + 12]), 0.0, 1.0);
    cloud.points.push_back(p);
  }
  return cloud;
}

PointCloud load_kitti_bin(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("kitti bin: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return parse_kitti_bin(bytes);
}

std::vector<unsigned char> encode_kitti_bin(const PointCloud& cloud) {
  std::vector<unsigned char> out;
  out.reserve(cloud.size() * 16);
  for (const Point& p : cloud.points) {
    write_le_f32(static_cast<float>(p.x), out);
    write_le_f32(static_cast<float>(p.y), out);
    write_le_f32(static_cast<float>(p.z), out);
    write_le_f32(static_cast<float>(p.r), out);
  }
  return out;
}

void write_kitti_bin(const std::string& path, const PointCloud& cloud) {
  const auto bytes = encode_kitti_bin(cloud);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("kitti bin: cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

const char* class_name(int label) {
  switch (label) {
    case 1: return "Car";
    case 2: return "Pedestrian";
    case 3: return "Cyclist";
    default: return "DontCare";
  }
}

int class_label(const std::string& name) {
  if (name == "Car") return 1;
  if (name == "Pedestrian") return 2;
  if (name == "Cyclist") return 3;
  return 0;
}

std::string write_kitti_labels(const DetectionSet& dets) {
  std::string out;
  for (const Box3D& b : dets.boxes) {
    out += class_name(b.label);
    out += " 0 0 -10 0 0 0 0 ";
    out += num(b.h) + " " + num(b.w) + " " + num(b.l) + " ";
    out += num(b.x) + " " + num(b.y) + " " + num(b.z) + " ";
    out += num(b.yaw) + " " + num(b.score) + "\n";
  }
  return out;
}

DetectionSet parse_kitti_labels(const std::string& text) {
  DetectionSet d;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> f{std::istream_iterator<std::string>(ls),
                               std::istream_iterator<std::string>()};
    if (f.empty()) continue;
    if (f.size() != kLabelFields)
      throw FormatError("labels line " + std::to_string(lineno) + ": expected " +
                        std::to_string(kLabelFields) + " fields, got " +
                        std::to_string(f.size()));
    Box3D b;
    b.label = class_label(f[0]);
    b.h = parse_num(f[8], lineno);
    b.w = parse_num(f[9], lineno);
    b.l = parse_num(f[10], lineno);
    b.x = parse_num(f[11], lineno);
    b.y = parse_num(f[12], lineno);
    b.z = parse_num(f[13], lineno);
    b.yaw = parse_num(f[14], lineno);
    b.score = parse_num(f[15], lineno);
    d.boxes.push_back(b);
  }
  return d;
}

}  // namespace h23d
