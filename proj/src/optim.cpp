#include "h23d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "h23d/error.hpp"

namespace h23d {

namespace {
void ensure_slots(std::vector<std::vector<double>>& slots,
                  std::span<Param* const> params) {
  if (slots.empty()) {
    slots.reserve(params.size());
    for (const Param* p : params) slots.emplace_back(p->value.size(), 0.0);
  }
  if (slots.size() != params.size())
    throw ShapeError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (slots[i].size() != params[i]->value.size())
      throw ShapeError("optimizer state shape mismatch for " + params[i]->name);
}
}  // namespace

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->value.zero_grad();
}

void sgd_step(std::span<Param* const> params, const SgdHyper& hyper,
              OptimizerState& state) {
  if (hyper.momentum != 0.0) ensure_slots(state.first, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    auto g = p.value.grad();
    auto v = p.value.data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      double step = g[j];
      if (hyper.momentum != 0.0) {
        state.first[i][j] = hyper.momentum * state.first[i][j] + g[j];
        step = state.first[i][j];
      }
      v[j] -= hyper.lr * step;
    }
    ++p.version;
  }
  ++state.step;
}

void adam_step(std::span<Param* const> params, const AdamHyper& hyper,
               OptimizerState& state) {
  ensure_slots(state.first, params);
  ensure_slots(state.second, params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    auto g = p.value.grad();
    auto v = p.value.data();
    auto& m = state.first[i];
    auto& s = state.second[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1 - hyper.beta1) * g[j];
      s[j] = hyper.beta2 * s[j] + (1 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double shat = s[j] / c2;
      v[j] -= hyper.lr * (mhat / (std::sqrt(shat) + hyper.eps) + hyper.weight_decay * v[j]);
    }
    ++p.version;
  }
}

double OneCycleSchedule::lr(std::size_t step) const {
  const double total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
  const double pos = std::min(static_cast<double>(step), total) / total;
  const double lo = lr_max / div_factor;
  const double floor = lo / final_div_factor;
  auto cos_anneal = [](double a, double b, double frac) {
    return b + (a - b) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
  };
  if (pos <= pct_start) return cos_anneal(lo, lr_max, pct_start > 0 ? pos / pct_start : 1.0);
  return cos_anneal(lr_max, floor, (pos - pct_start) / std::max(1e-12, 1.0 - pct_start));
}

}  // namespace h23d
