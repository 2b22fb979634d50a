#pragma once

#include <functional>
#include <limits>

#include <nlohmann/json.hpp>

#include "matdiff/grid.hpp"
#include "matdiff/nn/modules.hpp"
#include "matdiff/svbrdf.hpp"

namespace matdiff {

// Wrap-boundary discontinuity normalized by interior gradient magnitude,
// pooled over both axes and all channels. 0 = perfectly tileable.
double seam_score(const Grid& g);

// Pooled over the full 9-channel map stack.
double material_seam_score(const MaterialMaps& maps);

// Plain-tensor circular shift for [N,C,H,W] (no autodiff involvement).
nn::Tensor tensor_roll2d(const nn::Tensor& t, int dy, int dx);

// Roll the noisy latent by a seeded per-step shift, denoise, unroll.
nn::Tensor noise_rolling_step(
    const nn::Tensor& z_t,
    const std::function<nn::Tensor(const nn::Tensor&)>& denoise_fn,
    uint64_t seed, int step);

// Per-step feature-rolling plan: zero shifts before active_from_step
// (the structured-material delay), seeded random shifts afterwards.
nn::RollPlan step_roll_plan(const std::vector<nn::RollSite>& sites,
                            uint64_t seed, int step, int active_from_step);

nlohmann::json roll_plan_to_json(const nn::RollPlan& plan, uint64_t seed,
                                 int active_from_step);
nn::RollPlan roll_plan_from_json(const nlohmann::json& j);

} // namespace matdiff
