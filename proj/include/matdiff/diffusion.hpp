#pragma once

#include <optional>
#include <string>
#include <vector>

#include "matdiff/codec.hpp"
#include "matdiff/tiling.hpp"

namespace matdiff {

// ---- noise schedule ----

// Linear beta ramp expressed per 1000 steps and rescaled by 1000/T, so
// different T values accumulate the same total noise. alpha_bar has T + 1
// entries with alpha_bar[0] = 1; beta[i] belongs to step t = i + 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<float> beta;
    std::vector<float> alpha_bar;

    void validate() const;
};

NoiseSchedule make_schedule(int T);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, 1 <= t <= T
nn::Tensor forward_noise(const NoiseSchedule& s, const nn::Tensor& z0, int t,
                         const nn::Tensor& eps);
nn::Var forward_noise(const NoiseSchedule& s, const nn::Var& z0, int t,
                      const nn::Var& eps);

// Deterministic DDIM update from abar_t to abar_prev given the eps estimate.
nn::Tensor ddim_step(const nn::Tensor& z_t, const nn::Tensor& eps_hat,
                     float abar_t, float abar_prev);
nn::Var ddim_step(const nn::Var& z_t, const nn::Var& eps_hat, float abar_t,
                  float abar_prev);

// eps_u + omega * (eps_c - eps_u); omega 0 and 1 return the inputs untouched
nn::Tensor cfg_combine(const nn::Tensor& eps_uncond,
                       const nn::Tensor& eps_cond, float omega);

// ---- conditioning ----

inline constexpr int kCondDim = 128;

enum class Modality { None, Text, Image };

struct Condition {
    Modality modality = Modality::None;
    nn::Tensor vec; // [kCondDim], zero for None, else unit L2 norm

    static Condition none();
};

// Hashed bag-of-tokens, L2-normalized; empty or all-separator prompts give
// the None condition.
Condition embed_text(const std::string& prompt);

// Stats of a 16x16 box-downsampled luma/chroma image pushed through a fixed
// seeded random projection, L2-normalized. Input must have 3 channels.
Condition embed_image(const Grid& rgb);

// Training-time conditioning dropout: 10% unconditional, otherwise keep
// exactly one modality (image 75%, text 25% of the remainder).
Condition drop_modality(const Condition& text, const Condition& image,
                        Rng& rng);

// [N, kCondDim] constant from per-sample conditions
nn::Var conditions_to_var(const std::vector<Condition>& conds);

// ---- denoising network ----

struct UNetConfig {
    int in_channels = kLatentChannels;
    std::vector<int> widths = {64, 128, 256};
    int groups = 8;
    int time_dim = 0; // 0 = 4 * widths[0]
    nn::Pad pad = nn::Pad::Zero;
    uint64_t seed = 1;

    int time_dim_or_default() const {
        return time_dim > 0 ? time_dim : 4 * widths.at(0);
    }
};

nlohmann::json unet_config_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const nlohmann::json& j);

// Three resolution levels; self-attention on the lowest, single-token
// cross-attention on the two lowest, sinusoidal timestep embedding fed to
// every ResBlock through a two-layer MLP. The final conv starts at zero so
// an untrained net predicts eps = 0.
struct UNet {
    UNetConfig config;
    nn::Linear t1, t2;
    nn::Conv2d stem;
    nn::ResBlock enc0;
    nn::Conv2d down0;
    nn::ResBlock enc1;
    nn::CrossAttention2d ca1;
    nn::Conv2d down1;
    nn::ResBlock enc2;
    nn::SelfAttention2d sa2;
    nn::CrossAttention2d ca2;
    nn::ResBlock mid;
    nn::Conv2d up1;
    nn::ResBlock dec1;
    nn::CrossAttention2d ca1d;
    nn::Conv2d up0;
    nn::ResBlock dec0;
    nn::GroupNormLayer out_norm;
    nn::Conv2d head;

    UNet() = default;
    explicit UNet(const UNetConfig& cfg);

    // omega, when given, is a per-sample guidance scale embedded like a
    // timestep and added onto the time embedding
    nn::Var forward(const nn::Var& x, const std::vector<float>& t,
                    const nn::Var& cond, nn::RollContext* ctx = nullptr,
                    const std::vector<float>* omega = nullptr);

    // enumerate rollable sites by a throwaway record pass at the given
    // latent resolution
    std::vector<nn::RollSite> roll_sites(int h, int w);

    void visit(const std::string& p, const nn::ParamFn& fn);
};

// ---- denoiser bundle ----

struct DenoiserConfig {
    UNetConfig unet;
    int T = 256;
    float cfg_scale = 3.0f;
    std::string rolling_mode = "off"; // off | noise | feature
    float structured_delay = 0.0f;    // fraction of steps rolled with zeros
};

struct DenoiserBundle {
    DenoiserConfig config;
    NoiseSchedule schedule;
    UNet net;
    CodecBundle codec;
    // RMS of single-encoder latents, estimated at the start of training;
    // diffusion runs in z / latent_scale units
    float latent_scale = 0.0f;
    int64_t step = 0;

    void visit(const std::string& p, const nn::ParamFn& fn) {
        net.visit(p + ".net", fn);
        codec.visit(p + ".codec", fn);
    }
};

DenoiserBundle make_denoiser(const DenoiserConfig& cfg, CodecBundle codec);

// accepts off | noise | feature
void check_rolling_mode(const std::string& mode);

struct DiffusionTrainConfig {
    int steps = 400;
    int batch = 4;
    float lr = 1e-3f;
    float lr_min_frac = 0.05f;
    uint64_t seed = 3;
    int log_every = 25;
    int max_items = 0;
    std::filesystem::path abort_path; // checkpoint destination on abort
};

// eps-prediction training on material latents only; the codec stays frozen
// and is hash-checked.
void train_diffusion_supervised(DenoiserBundle& bundle, const Corpus& corpus,
                                const DiffusionTrainConfig& cfg,
                                const LogFn& log = nullptr);

// ---- sampling ----

struct SampleConfig {
    int n_steps = 50;
    float omega = -1.0f;      // < 0 uses bundle cfg_scale
    uint64_t seed = 0;
    std::string rolling = ""; // "" uses bundle rolling_mode
};

struct SampleResult {
    MaterialMaps maps;
    nn::Tensor z0; // final latent, codec units
    std::vector<int> timesteps;
    std::vector<nn::RollPlan> plans; // feature mode, one per step
};

SampleResult sample_material(DenoiserBundle& bundle, const Condition& cond,
                             const SampleConfig& cfg);

// checkpoint header shared by denoiser-family bundles, and its inverse
// (reconstructs the bundle shell without weights)
nlohmann::json denoiser_meta(const DenoiserBundle& bundle);
DenoiserBundle denoiser_from_meta(const nlohmann::json& meta);

void save_denoiser(DenoiserBundle& bundle, const std::filesystem::path& path);
DenoiserBundle load_denoiser(const std::filesystem::path& path);

} // namespace matdiff
