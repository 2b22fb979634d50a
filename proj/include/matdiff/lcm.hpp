#pragma once

#include <filesystem>

#include "matdiff/diffusion.hpp"

namespace matdiff {

// Boundary-exact consistency coefficients: c_skip(t_min) = 1 and
// c_out(t_min) = 0 bitwise, both smooth in t and inside [0, 1] across the
// schedule. t must lie in [t_min, T].
float c_skip(const NoiseSchedule& s, int t, int t_min);
float c_out(const NoiseSchedule& s, int t, int t_min);

// Student/target pair for consistency distillation. The student rides a full
// denoiser bundle (schedule, codec, latent scale); the target mirrors the
// student net and trails it by EMA.
struct ConsistencyBundle {
    DenoiserBundle student;
    UNet target;
    float omega_lo = 1.0f;
    float omega_hi = 6.0f;
    int skip = 0; // distillation hop; 0 = T / 32
    int t_min = 1;
    int64_t step = 0;

    int hop() const {
        return skip > 0 ? skip : std::max(1, student.schedule.T / 32);
    }
};

// wraps a trained bundle; the target starts as an exact copy of the student
ConsistencyBundle make_consistency(DenoiserBundle base);

// z0 estimate c_skip(t) * z_t + c_out(t) * net(z_t, t, c, omega), with the
// guidance scale embedded alongside the timestep; t == t_min returns z_t
// without evaluating the net
nn::Var consistency_apply(UNet& net, const NoiseSchedule& s, int t_min,
                          const nn::Var& z_t, int t, const nn::Var& cond,
                          float omega, nn::RollContext* ctx = nullptr);

struct LcmTrainConfig {
    int steps = 400;
    int batch = 4;
    float lr = 5e-4f;
    float lr_min_frac = 0.05f;
    float mu = 0.95f; // EMA retention of the target
    uint64_t seed = 9;
    int log_every = 25;
    int max_items = 0; // cap per source; 0 = full train split
    std::filesystem::path abort_path;
};

// Distills the frozen teacher into the student consistency function: one
// CFG-guided DDIM hop of the teacher from t to t - hop supervises the
// student against the EMA target. The guidance scale is drawn per step from
// the bundle's omega range.
void train_lcm(ConsistencyBundle& cons, DenoiserBundle& teacher,
               const Corpus& corpus, const LcmTrainConfig& cfg,
               const LogFn& log = nullptr);

struct LcmSampleConfig {
    int n_steps = 4;
    float omega = -1.0f; // < 0 uses the student bundle's cfg_scale
    uint64_t seed = 0;
    std::string rolling = ""; // "" uses the student bundle's rolling_mode
};

// few-step sampling: predict z0 from seeded noise at t = T, then re-noise the
// prediction down the uniform sub-schedule and repeat
SampleResult lcm_sample(ConsistencyBundle& cons, const Condition& cond,
                        const LcmSampleConfig& cfg);

void save_consistency(ConsistencyBundle& cons,
                      const std::filesystem::path& path);
ConsistencyBundle load_consistency(const std::filesystem::path& path);

} // namespace matdiff
