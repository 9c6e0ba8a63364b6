// Writes the per-stage fixture file: the input cloud and the output of every
// eval-mode pipeline stage of a small seeded model.
//
//   make_fixtures <out.json>

#include <cstdio>
#include <fstream>

#include "fixture_io.hpp"
#include "h23d/model.hpp"
#include "support.hpp"

using namespace h23d;
using nlohmann::json;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_fixtures <out.json>\n");
    return 2;
  }
  const PipelineConfig cfg = test::fixture_config();
  Model model(cfg);
  PointCloud cloud = test::random_cloud(120, cfg, 99);
  const Box3D planted{1.8, 0.2, -1.0, 1.6, 0.8, 0.8, 0.3};
  const Box3D boxes[] = {planted};
  for (const Point& p : synthetic_scene(boxes, 80, 0, cfg, 4).points) cloud.points.push_back(p);

  ForwardState st;
  model.extract(cloud, Mode::eval, st);
  st.rois = model.propose(st.rpn);
  model.refine(st, Mode::eval, cfg.seed);
  const DetectionSet det = model.detections(st);

  json cl = json::array();
  for (const Point& p : cloud.points) cl.push_back({p.x, p.y, p.z, p.r});
  json triples = json::array();
  for (const auto& t : st.voxels.triples) triples.push_back(t);
  const json j = {
      {"config", dump_config(cfg)},
      {"cloud", cl},
      {"input", test::to_json(st.input)},
      {"f_raw", test::to_json(st.f_raw)},
      {"pv_map", test::to_json(st.pv_map.values)},
      {"pv_out", test::to_json(st.pv_out)},
      {"f_pv", test::to_json(st.f_pv)},
      {"f_bev_input", test::to_json(st.f_bev_input)},
      {"bev_map", test::to_json(st.bev_map.values)},
      {"bev_out", test::to_json(st.bev_out)},
      {"f_bev", test::to_json(st.f_bev)},
      {"rpn_cls", test::to_json(st.rpn.cls)},
      {"rpn_reg", test::to_json(st.rpn.reg)},
      {"f_h3d", test::to_json(st.f_h3d)},
      {"voxel_triples", triples},
      {"voxel_features", test::to_json(st.voxels.features())},
      {"rois", test::to_json(st.rois)},
      {"pooled", test::to_json(st.pooled)},
      {"head_conf", test::to_json(st.head.conf)},
      {"head_reg", test::to_json(st.head.reg)},
      {"detections", test::to_json(det.boxes)},
  };
  std::ofstream(argv[1]) << j.dump() << "\n";
  std::printf("%zu points, %zu voxels, %zu rois, %zu detections\n", st.cloud.size(),
              st.voxels.size(), st.rois.size(), det.size());
  return 0;
}
