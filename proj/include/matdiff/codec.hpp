#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "matdiff/errors.hpp"
#include "matdiff/nn/checkpoint.hpp"
#include "matdiff/nn/modules.hpp"
#include "matdiff/svbrdf.hpp"
#include "matdiff/synth.hpp"

namespace matdiff {

inline constexpr int kLatentChannels = 18;
inline constexpr int kLatentFactor = 8;

struct LatentSlice {
    std::string map;
    int c0 = 0, c1 = 0;
};

// Channel allocation inside the latent: basecolor 4, normal 4, height 2,
// roughness 4, metalness 4 (sums to 18).
const std::vector<LatentSlice>& latent_slices();
LatentSlice latent_slice(const std::string& map);

struct LatentGrid {
    nn::Tensor values; // [18, h, w]

    int height() const { return values.dim(1); }
    int width() const { return values.dim(2); }
    nn::Tensor slice(const std::string& map) const;
};

struct CodecConfig {
    int resolution = 64;
    std::array<int, 3> widths = {16, 24, 32};
    int groups = 8;
    uint64_t seed = 1;

    int latent_res() const { return resolution / kLatentFactor; }
};

// Three stride-2 stages down to 1/8 resolution, (mean, logvar) head.
struct MapEncoder {
    nn::Conv2d stem, down0, down1, down2, head;
    nn::ResBlock r0, r1, r2, mid;
    nn::GroupNormLayer out_norm;
    int z_out = 0;

    MapEncoder() = default;
    MapEncoder(int c_in, int z_out_, const CodecConfig& cfg, Rng& rng);

    // returns (mean, logvar), each [N, z_out, h, w]
    std::pair<nn::Var, nn::Var> forward(const nn::Var& x);
    void visit(const std::string& p, const nn::ParamFn& fn);
};

struct Decoder {
    nn::Conv2d stem, up0, up1, up2, head;
    nn::ResBlock mid, r0, r1, r2;
    nn::GroupNormLayer out_norm;

    Decoder() = default;
    Decoder(int z_in, int c_out, const CodecConfig& cfg, Rng& rng);

    nn::Var forward(const nn::Var& z); // raw [N, 9, H, W], unclamped
    void visit(const std::string& p, const nn::ParamFn& fn);
};

// Two stride-2 stages then a 1-channel logit map over patches.
struct PatchCritic {
    nn::Conv2d c0, c1, c2;
    nn::GroupNormLayer n1;

    PatchCritic() = default;
    PatchCritic(int c_in, const CodecConfig& cfg, Rng& rng);

    nn::Var forward(const nn::Var& x); // [N, 1, H/4, W/4] logits
    void visit(const std::string& p, const nn::ParamFn& fn);
};

struct CodecBundle {
    CodecConfig config;
    std::array<MapEncoder, 5> map_encoders; // basecolor, normal, height,
                                            // roughness, metalness
    MapEncoder single_encoder;              // 9-channel stack in
    MapEncoder texture_encoder;             // 3-channel RGB in
    Decoder decoder;
    PatchCritic critic;
    int64_t step = 0;

    void visit(const std::string& p, const nn::ParamFn& fn);
};

CodecBundle make_codec(const CodecConfig& cfg);

int64_t multi_encoder_param_count(CodecBundle& b);
int64_t single_encoder_param_count(CodecBundle& b);

enum class EncoderKind { Multi, Single, Texture };

// sample=false returns the posterior mean; otherwise mean + sigma * eps with
// eps drawn from the seed.
LatentGrid encode(CodecBundle& bundle, const MaterialMaps& maps,
                  EncoderKind which, uint64_t seed, bool sample = true);
LatentGrid encode_texture(CodecBundle& bundle, const Grid& rgb, uint64_t seed,
                          bool sample = true);
MaterialMaps decode(CodecBundle& bundle, const LatentGrid& z);
nn::Tensor decode_stack(CodecBundle& bundle, const nn::Tensor& z); // [N,9,H,W]

// ---- loss pieces (exposed for oracle tests) ----

// mean over elements of 0.5 * (mean^2 + exp(logvar) - 1 - logvar)
nn::Var kl_penalty(const nn::Var& mean, const nn::Var& logvar);

// hinge pair over patch logit maps
nn::Var hinge_d_loss(const nn::Var& s_real, const nn::Var& s_fake);
nn::Var hinge_g_loss(const nn::Var& s_fake);

std::pair<double, double> patch_disc_loss(CodecBundle& bundle,
                                          const MaterialMaps& real,
                                          const MaterialMaps& fake);

// Multi-scale gradient L1 between two [N,C,H,W] images (3 scales).
nn::Var perceptual_proxy(const nn::Var& a, const nn::Var& b);
double perceptual_distance(const Grid& a, const Grid& b);

// Differentiable directional+ambient render of a 9-channel material stack.
nn::Var render_stack(const nn::Var& stack, const RenderConfig& cfg);

// ---- training ----

struct VaeTrainConfig {
    int steps = 600;
    int batch = 4;
    float lr = 2e-3f;
    float lr_min_frac = 0.05f; // cosine decay floor as a fraction of lr
    float critic_lr = 2e-3f;
    float lambda_kl = 1e-6f;
    float lambda_rend = 1.0f;
    float lambda_lpips = 0.5f;
    float lambda_adv = 0.25f;
    float adv_warmup_frac = 0.3f;
    int render_lights = 1;
    uint64_t seed = 1;
    int log_every = 25;
    int max_items = 0; // cap on training items; 0 = use the full train split
};

struct StepLog {
    int64_t step = 0;
    std::vector<std::pair<std::string, double>> values;
};
using LogFn = std::function<void(const StepLog&)>;

void train_vae(CodecBundle& bundle, const Corpus& corpus,
               const VaeTrainConfig& cfg, const LogFn& log = nullptr);

struct DistillTrainConfig {
    int steps = 400;
    int batch = 4;
    float lr = 2e-3f;
    float lr_min_frac = 0.05f;
    float lambda_recon = 1.0f;
    uint64_t seed = 2;
    int log_every = 25;
    int max_items = 0;
};

void distill_single_encoder(CodecBundle& bundle, const Corpus& corpus,
                            const DistillTrainConfig& cfg,
                            const LogFn& log = nullptr);
void distill_texture_encoder(CodecBundle& bundle, const Corpus& corpus,
                             const DistillTrainConfig& cfg,
                             const LogFn& log = nullptr);

// Mean per-map reconstruction RMSE of an encode/decode round trip over the
// given entries (deterministic encode).
std::map<std::string, double> codec_rmse(CodecBundle& bundle,
                                         const Corpus& corpus,
                                         std::span<const CorpusEntry* const> entries,
                                         EncoderKind which);

void save_codec(CodecBundle& bundle, const std::filesystem::path& path);
CodecBundle load_codec(const std::filesystem::path& path);

} // namespace matdiff
