#pragma once

#include <filesystem>

#include "matdiff/diffusion.hpp"
#include "matdiff/nn/optim.hpp"

namespace matdiff {

// ---- time-conditional latent discriminator ----

// Mirrors the denoising net's encoder path module for module (same names,
// same shapes), then scores each sample through a pooled linear head. Fresh
// instances share the generator's topology; make_latent_discriminator also
// copies the shared weights so the critic starts out seeing the latent space
// through the generator's own features.
struct LatentDiscriminator {
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
    nn::Linear score;

    LatentDiscriminator() = default;
    explicit LatentDiscriminator(const UNetConfig& cfg);

    // [N,C,h,w] latents -> [N,1] realness scores
    nn::Var forward(const nn::Var& x, const std::vector<float>& t,
                    const nn::Var& cond);

    void visit(const std::string& p, const nn::ParamFn& fn);
};

// build a critic on the generator's config and copy every shared module;
// only the scoring head keeps its fresh initialization
LatentDiscriminator make_latent_discriminator(UNet& generator);

void save_latent_discriminator(LatentDiscriminator& ld,
                               const std::filesystem::path& path);
LatentDiscriminator load_latent_discriminator(const std::filesystem::path& p);

// ---- training batch ----

// Latents are in normalized (z / latent_scale) units: the material half from
// the deterministic single encoder, the texture half from the texture
// encoder. Both halves share the timestep but keep their own conditions and
// noise draws.
struct TrainBatch {
    nn::Tensor z0_mat; // [B,C,h,w]
    nn::Tensor z0_tex; // [B,C,h,w], same shape as z0_mat
    std::vector<Condition> cond_mat;
    std::vector<Condition> cond_tex;
    nn::Tensor eps_mat;
    nn::Tensor eps_tex;
    int t = 1;
};

void validate_batch(const NoiseSchedule& s, const TrainBatch& b);

// ---- losses ----

// mean squared eps residual over one half
nn::Var eps_mse(const nn::Var& pred, const nn::Tensor& eps);

// material residual + alpha * texture residual; alpha == 0 drops the texture
// term from the graph entirely
nn::Var supervised_loss(const nn::Var& pred_mat, const nn::Var& pred_tex,
                        const TrainBatch& batch, float alpha);
// same, running the denoiser on both forward-noised halves first
nn::Var supervised_loss(DenoiserBundle& bundle, const TrainBatch& batch,
                        float alpha);

// one deterministic DDIM step from t to t - 1; t = 1 lands on the clean
// latent prediction
nn::Var denoised_prev(const NoiseSchedule& s, const nn::Var& z_t,
                      const nn::Var& eps_hat, int t);

// critic reals: ground-truth material latents forward-noised to t - 1 with
// the batch's own noise draw (the texture half never enters), duplicated to
// match the two-half fake batch
nn::Tensor real_latents(const NoiseSchedule& s, const TrainBatch& b);

// -mean critic score over the batch concatenation of both denoised halves;
// conds stacks the material conditions then the texture conditions
nn::Var adv_gen_loss(LatentDiscriminator& ld, const nn::Var& z_prev_mat,
                     const nn::Var& z_prev_tex, int t, const nn::Var& conds);

// hinge on critic scores: reals pushed above +1, fakes below -1
nn::Var disc_loss(LatentDiscriminator& ld, const nn::Var& real,
                  const nn::Var& fake, int t, const nn::Var& conds_real,
                  const nn::Var& conds_fake);

// ---- alternating update ----

struct SemisupStepMetrics {
    double sup_mat = 0.0;
    double sup_tex = 0.0;
    double adv = 0.0;
    double d_loss = 0.0;
    double ld_real = 0.0;
    double ld_fake = 0.0;
};

// Generator update on L_sup + lambda_adv * L_adv, then critic update on the
// hinge loss, 1:1. lambda_adv == 0 runs the pure supervised step and leaves
// the critic untouched; with alpha == 0 as well this is exactly the baseline
// material-only step.
SemisupStepMetrics semisup_train_step(DenoiserBundle& bundle,
                                      LatentDiscriminator& ld,
                                      const TrainBatch& batch, float alpha,
                                      float lambda_adv, nn::Adam& g_opt,
                                      nn::Adam& d_opt);

struct SemisupTrainConfig {
    int steps = 300;
    int batch = 2; // per half
    float lr = 2e-4f;
    float d_lr = 2e-4f;
    float lr_min_frac = 0.05f;
    float alpha = 0.15f;
    float lambda_adv = 0.1f;
    int adv_warmin = 100; // steps to ramp lambda_adv in linearly
    uint64_t seed = 5;
    int log_every = 25;
    int max_items = 0; // cap per half; 0 = full train split
    std::filesystem::path metrics_path; // line-delimited JSON; empty = off
    std::filesystem::path abort_path;   // checkpoint destination on abort
};

// Adversarial fine-tune of a supervisedly pre-trained bundle: material half
// from annotated maps, texture half from unannotated texture images. The
// codec stays frozen and is hash-checked.
void train_semisup(DenoiserBundle& bundle, LatentDiscriminator& ld,
                   const Corpus& corpus, const SemisupTrainConfig& cfg,
                   const LogFn& log = nullptr);

} // namespace matdiff
