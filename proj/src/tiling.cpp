#include "matdiff/tiling.hpp"

namespace matdiff {

double seam_score(const Grid& g) {
    int H = g.height, W = g.width;
    if (H < 4 || W < 4) throw std::runtime_error("seam_score: grid too small");
    double num = 0.0;
    int64_t num_cnt = 0;
    double den = 0.0;
    int64_t den_cnt = 0;
    // numerator: wrap pairs along both axes; denominator: neighbor pairs
    // strictly inside the interior ring
    for (int c = 0; c < g.channels; ++c) {
        for (int y = 0; y < H; ++y) {
            num += std::fabs((double)g.at(c, y, W - 1) - g.at(c, y, 0));
            ++num_cnt;
        }
        for (int x = 0; x < W; ++x) {
            num += std::fabs((double)g.at(c, H - 1, x) - g.at(c, 0, x));
            ++num_cnt;
        }
        for (int y = 1; y + 1 < H; ++y)
            for (int x = 1; x + 2 < W; ++x) {
                den += std::fabs((double)g.at(c, y, x + 1) - g.at(c, y, x));
                ++den_cnt;
            }
        for (int x = 1; x + 1 < W; ++x)
            for (int y = 1; y + 2 < H; ++y) {
                den += std::fabs((double)g.at(c, y + 1, x) - g.at(c, y, x));
                ++den_cnt;
            }
    }
    double num_mean = num / (double)num_cnt;
    double den_mean = den / (double)den_cnt;
    if (den_mean == 0.0)
        return num_mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num_mean / den_mean;
}

double material_seam_score(const MaterialMaps& maps) {
    nn::Tensor stack = maps_to_stack(maps);
    Grid g(kStackChannels, maps.height_px(), maps.width_px());
    std::memcpy(g.data.data(), stack.data(), sizeof(float) * g.data.size());
    return seam_score(g);
}

nn::Tensor tensor_roll2d(const nn::Tensor& t, int dy, int dx) {
    int N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    nn::Tensor out = nn::Tensor::zeros(t.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                int sy = wrap_index(y - dy, H);
                for (int x = 0; x < W; ++x)
                    out.at4(n, c, y, x) =
                        t.at4(n, c, sy, wrap_index(x - dx, W));
            }
    return out;
}

nn::Tensor noise_rolling_step(
    const nn::Tensor& z_t,
    const std::function<nn::Tensor(const nn::Tensor&)>& denoise_fn,
    uint64_t seed, int step) {
    int H = z_t.dim(2), W = z_t.dim(3);
    Rng rng(seed_for(seed, "noise-roll-step-" + std::to_string(step)));
    int dy = (int)rng.below((uint64_t)H);
    int dx = (int)rng.below((uint64_t)W);
    if (dy == 0 && dx == 0) return denoise_fn(z_t);
    nn::Tensor rolled = tensor_roll2d(z_t, dy, dx);
    nn::Tensor denoised = denoise_fn(rolled);
    return tensor_roll2d(denoised, -dy, -dx);
}

nn::RollPlan step_roll_plan(const std::vector<nn::RollSite>& sites,
                            uint64_t seed, int step, int active_from_step) {
    if (step < active_from_step) return nn::RollPlan::zeros(sites);
    Rng rng(seed_for(seed, "feature-roll-step-" + std::to_string(step)));
    return nn::RollPlan::random(sites, rng);
}

nlohmann::json roll_plan_to_json(const nn::RollPlan& plan, uint64_t seed,
                                 int active_from_step) {
    nlohmann::json j;
    j["seed"] = seed;
    j["active_from_step"] = active_from_step;
    nlohmann::json shifts = nlohmann::json::array();
    for (auto [a, b] : plan.shifts) shifts.push_back({a, b});
    j["shifts"] = shifts;
    return j;
}

nn::RollPlan roll_plan_from_json(const nlohmann::json& j) {
    nn::RollPlan plan;
    for (const auto& s : j.at("shifts"))
        plan.shifts.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    return plan;
}

} // namespace matdiff
