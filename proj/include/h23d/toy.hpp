#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "h23d/model.hpp"

namespace h23d {

struct ToyOptions {
  std::size_t steps = 0;  // 0: config train.steps
  std::size_t points_per_box = 600;
  std::size_t clutter = 400;
  std::uint64_t scene_seed = 11;
};

struct ToyResult {
  PointCloud scene;
  std::vector<Box3D> planted;
  std::vector<double> losses;  // L_Total per step
  double initial_loss = 0.0;   // mean of the first five steps
  double final_loss = 0.0;     // mean of the last five steps
  double reduction = 0.0;      // 1 - final / initial
  DetectionSet detections;     // run_forward after training
  std::vector<double> best_iou;  // per planted box, best 3D IoU over detections
  double seconds = 0.0;
};

// Overfits `model` to the two-box synthetic scene and evaluates it.
ToyResult train_toy(Model& model, const ToyOptions& opts,
                    const std::function<void(std::size_t, const TrainStepResult&)>& on_step = {});

}  // namespace h23d
