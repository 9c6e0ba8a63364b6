#include "h23d/toy.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace h23d {

namespace {
double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
}  // namespace

ToyResult train_toy(Model& model, const ToyOptions& opts,
                    const std::function<void(std::size_t, const TrainStepResult&)>& on_step) {
  const auto t0 = std::chrono::steady_clock::now();
  ToyResult res;
  res.planted = toy_planted_boxes();
  res.scene = synthetic_scene(res.planted, opts.points_per_box, opts.clutter, model.config(),
                              opts.scene_seed);
  const std::size_t steps = opts.steps ? opts.steps : model.config().train.steps;
  TrainState state;
  for (std::size_t s = 0; s < steps; ++s) {
    const TrainStepResult r = train_step(model, res.scene, res.planted, state);
    res.losses.push_back(r.loss.total);
    if (on_step) on_step(s, r);
  }
  const std::size_t w = std::min<std::size_t>(5, res.losses.size());
  res.initial_loss = mean_of(std::span<const double>(res.losses).first(w));
  res.final_loss = mean_of(std::span<const double>(res.losses).last(w));
  res.reduction = res.initial_loss > 0.0 ? 1.0 - res.final_loss / res.initial_loss : 0.0;
  res.detections = run_forward(res.scene, model);
  for (const Box3D& g : res.planted) {
    double best = 0.0;
    for (const Box3D& d : res.detections.boxes) best = std::max(best, iou3d(d, g));
    res.best_iou.push_back(best);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace h23d
