#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "h23d/layers.hpp"

namespace h23d {

struct SgdHyper {
  double lr = 0.01;
  double momentum = 0.0;
};

struct AdamHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style)
};

struct OptimizerState {
  std::vector<std::vector<double>> first;   // momentum / Adam m
  std::vector<std::vector<double>> second;  // Adam v
  std::uint64_t step = 0;
};

// Each step consumes the gradients in params[i]->value.grad() and bumps
// params[i]->version.
void sgd_step(std::span<Param* const> params, const SgdHyper& hyper,
              OptimizerState& state);
void adam_step(std::span<Param* const> params, const AdamHyper& hyper,
               OptimizerState& state);

void zero_grads(std::span<Param* const> params);

// One-cycle learning rate: cosine warm-up from lr_max / div_factor to lr_max
// over pct_start of the run, then cosine decay to
// lr_max / (div_factor * final_div_factor).
struct OneCycleSchedule {
  double lr_max = 0.01;
  std::size_t total_steps = 1;
  double pct_start = 0.4;
  double div_factor = 10.0;
  double final_div_factor = 1e4;

  double lr(std::size_t step) const;
};

}  // namespace h23d
