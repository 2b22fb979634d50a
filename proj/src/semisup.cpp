#include "matdiff/semisup.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "matdiff/nn/checkpoint.hpp"
#include "matdiff/nn/optim.hpp"
#include "train_util.hpp"

namespace matdiff {

using namespace nn;

namespace {

using trainutil::MaterialCache;
using trainutil::check_finite;
using trainutil::draw_indices;
using trainutil::gather_batch;
using trainutil::normal_tensor;
using trainutil::scalar;

double mean_of(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) s += t.data()[i];
    return s / (double)t.numel();
}

int count_params(LatentDiscriminator& ld) {
    int n = 0;
    ld.visit("", [&](const std::string&, Parameter&) { ++n; });
    return n;
}

} // namespace

// ---- latent discriminator ----

LatentDiscriminator::LatentDiscriminator(const UNetConfig& cfg)
    : config(cfg) {
    if (cfg.widths.size() != 3)
        throw std::runtime_error("latent critic: exactly three widths expected");
    int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
    int td = cfg.time_dim_or_default();
    int g = cfg.groups;
    Pad p = cfg.pad;
    Rng rng(seed_for(cfg.seed, "latent-critic-init"));

    t1 = Linear(w0, td, rng);
    t2 = Linear(td, td, rng);
    stem = Conv2d(cfg.in_channels, w0, 3, 1, p, rng);
    enc0 = ResBlock(w0, w0, td, g, p, rng);
    down0 = Conv2d(w0, w1, 3, 2, p, rng);
    enc1 = ResBlock(w1, w1, td, g, p, rng);
    ca1 = CrossAttention2d(w1, kCondDim, g, p, rng);
    down1 = Conv2d(w1, w2, 3, 2, p, rng);
    enc2 = ResBlock(w2, w2, td, g, p, rng);
    sa2 = SelfAttention2d(w2, g, p, rng);
    ca2 = CrossAttention2d(w2, kCondDim, g, p, rng);
    mid = ResBlock(w2, w2, td, g, p, rng);
    score = Linear(w2, 1, rng);
}

Var LatentDiscriminator::forward(const Var& x, const std::vector<float>& t,
                                 const Var& cond) {
    if (x.dim(1) != config.in_channels)
        throw std::runtime_error("latent critic: wrong input channel count");
    if ((int)t.size() != x.dim(0))
        throw std::runtime_error(
            "latent critic: one timestep per sample expected");
    if (cond.dim(0) != x.dim(0) || cond.dim(1) != kCondDim)
        throw std::runtime_error("latent critic: condition batch mismatch");

    Var temb = Var::leaf(sinusoidal_embedding(t, config.widths[0]));
    Var te = t2(silu(t1(temb)));

    Var h0 = enc0.forward(stem(x), te, nullptr);
    Var h1 = enc1.forward(down0(h0), te, nullptr);
    h1 = ca1.forward(h1, cond, nullptr);
    Var h2 = enc2.forward(down1(h1), te, nullptr);
    h2 = sa2.forward(h2, nullptr);
    h2 = ca2.forward(h2, cond, nullptr);
    Var m = mid.forward(h2, te, nullptr);
    return score(global_mean_pool(m));
}

void LatentDiscriminator::visit(const std::string& p, const ParamFn& fn) {
    t1.visit(p + ".t1", fn);
    t2.visit(p + ".t2", fn);
    stem.visit(p + ".stem", fn);
    enc0.visit(p + ".enc0", fn);
    down0.visit(p + ".down0", fn);
    enc1.visit(p + ".enc1", fn);
    ca1.visit(p + ".ca1", fn);
    down1.visit(p + ".down1", fn);
    enc2.visit(p + ".enc2", fn);
    sa2.visit(p + ".sa2", fn);
    ca2.visit(p + ".ca2", fn);
    mid.visit(p + ".mid", fn);
    score.visit(p + ".score", fn);
}

LatentDiscriminator make_latent_discriminator(UNet& generator) {
    LatentDiscriminator ld(generator.config);
    int copied = copy_matching_params(generator, ld);
    int fresh = 0;
    ld.score.visit("", [&](const std::string&, Parameter&) { ++fresh; });
    if (copied != count_params(ld) - fresh)
        throw std::runtime_error(
            "latent critic: encoder does not mirror the generator");
    return ld;
}

void save_latent_discriminator(LatentDiscriminator& ld,
                               const std::filesystem::path& path) {
    Checkpoint ck;
    ck.meta["kind"] = "latent-critic";
    ck.meta["config"] = unet_config_json(ld.config);
    ck.put_module("ld", ld);
    ck.save(path);
}

LatentDiscriminator load_latent_discriminator(const std::filesystem::path& p) {
    Checkpoint ck = Checkpoint::load(p);
    if (ck.meta.value("kind", "") != "latent-critic")
        throw std::runtime_error("not a latent critic checkpoint: " +
                                 p.string());
    LatentDiscriminator ld(unet_config_from_json(ck.meta.at("config")));
    ck.load_module("ld", ld);
    return ld;
}

// ---- training batch ----

void validate_batch(const NoiseSchedule& s, const TrainBatch& b) {
    if (b.z0_mat.shape() != b.z0_tex.shape())
        throw std::runtime_error("batch halves must have equal shape");
    if (b.eps_mat.shape() != b.z0_mat.shape() ||
        b.eps_tex.shape() != b.z0_tex.shape())
        throw std::runtime_error("noise draws must match latent shape");
    if ((int)b.cond_mat.size() != b.z0_mat.dim(0) ||
        (int)b.cond_tex.size() != b.z0_tex.dim(0))
        throw std::runtime_error("one condition per sample expected");
    if (b.t < 1 || b.t > s.T)
        throw std::runtime_error("timestep " + std::to_string(b.t) +
                                 " outside [1, T]");
}

// ---- losses ----

Var eps_mse(const Var& pred, const Tensor& eps) {
    return mean_all(square(sub(pred, Var::leaf(eps))));
}

Var supervised_loss(const Var& pred_mat, const Var& pred_tex,
                    const TrainBatch& batch, float alpha) {
    if (alpha < 0.0f)
        throw std::runtime_error("alpha must be >= 0");
    Var mat = eps_mse(pred_mat, batch.eps_mat);
    if (alpha == 0.0f) return mat;
    return add(mat, mul_scalar(eps_mse(pred_tex, batch.eps_tex), alpha));
}

Var supervised_loss(DenoiserBundle& bundle, const TrainBatch& batch,
                    float alpha) {
    validate_batch(bundle.schedule, batch);
    std::vector<float> ts(batch.z0_mat.dim(0), (float)batch.t);
    Var zt_mat = Var::leaf(
        forward_noise(bundle.schedule, batch.z0_mat, batch.t, batch.eps_mat));
    Var pred_mat =
        bundle.net.forward(zt_mat, ts, conditions_to_var(batch.cond_mat));
    if (alpha == 0.0f) return supervised_loss(pred_mat, pred_mat, batch, 0.0f);
    Var zt_tex = Var::leaf(
        forward_noise(bundle.schedule, batch.z0_tex, batch.t, batch.eps_tex));
    Var pred_tex =
        bundle.net.forward(zt_tex, ts, conditions_to_var(batch.cond_tex));
    return supervised_loss(pred_mat, pred_tex, batch, alpha);
}

Var denoised_prev(const NoiseSchedule& s, const Var& z_t, const Var& eps_hat,
                  int t) {
    if (t < 1 || t > s.T)
        throw std::runtime_error("timestep " + std::to_string(t) +
                                 " outside [1, T]");
    return ddim_step(z_t, eps_hat, s.alpha_bar[t], s.alpha_bar[t - 1]);
}

Tensor real_latents(const NoiseSchedule& s, const TrainBatch& b) {
    Tensor prev = b.t == 1 ? b.z0_mat
                           : forward_noise(s, b.z0_mat, b.t - 1, b.eps_mat);
    std::vector<int> shape = prev.shape();
    shape[0] *= 2;
    Tensor out = Tensor::zeros(shape);
    std::memcpy(out.data(), prev.data(), sizeof(float) * prev.numel());
    std::memcpy(out.data() + prev.numel(), prev.data(),
                sizeof(float) * prev.numel());
    return out;
}

Var adv_gen_loss(LatentDiscriminator& ld, const Var& z_prev_mat,
                 const Var& z_prev_tex, int t, const Var& conds) {
    Var x = concat_batch(z_prev_mat, z_prev_tex);
    std::vector<float> ts(x.dim(0), (float)t);
    return neg(mean_all(ld.forward(x, ts, conds)));
}

Var disc_loss(LatentDiscriminator& ld, const Var& real, const Var& fake,
              int t, const Var& conds_real, const Var& conds_fake) {
    std::vector<float> ts_real(real.dim(0), (float)t);
    std::vector<float> ts_fake(fake.dim(0), (float)t);
    return hinge_d_loss(ld.forward(real, ts_real, conds_real),
                        ld.forward(fake, ts_fake, conds_fake));
}

// ---- alternating update ----

SemisupStepMetrics semisup_train_step(DenoiserBundle& bundle,
                                      LatentDiscriminator& ld,
                                      const TrainBatch& batch, float alpha,
                                      float lambda_adv, Adam& g_opt,
                                      Adam& d_opt) {
    validate_batch(bundle.schedule, batch);
    const NoiseSchedule& s = bundle.schedule;
    bool adv = lambda_adv > 0.0f;
    std::vector<float> ts(batch.z0_mat.dim(0), (float)batch.t);

    zero_grads(bundle.net);
    Var zt_mat =
        Var::leaf(forward_noise(s, batch.z0_mat, batch.t, batch.eps_mat));
    Var cv_mat = conditions_to_var(batch.cond_mat);
    Var pred_mat = bundle.net.forward(zt_mat, ts, cv_mat);
    Var mse_mat = eps_mse(pred_mat, batch.eps_mat);

    SemisupStepMetrics m;
    Var total = mse_mat;
    Var pred_tex, zt_tex;
    bool tex_run = alpha > 0.0f || adv;
    if (tex_run) {
        zt_tex =
            Var::leaf(forward_noise(s, batch.z0_tex, batch.t, batch.eps_tex));
        pred_tex = bundle.net.forward(zt_tex, ts,
                                      conditions_to_var(batch.cond_tex));
        Var mse_tex = eps_mse(pred_tex, batch.eps_tex);
        m.sup_tex = scalar(mse_tex);
        if (alpha > 0.0f) total = add(total, mul_scalar(mse_tex, alpha));
    }
    m.sup_mat = scalar(mse_mat);

    Var fake, cv_fake;
    if (adv) {
        std::vector<Condition> all = batch.cond_mat;
        all.insert(all.end(), batch.cond_tex.begin(), batch.cond_tex.end());
        cv_fake = conditions_to_var(all);
        Var zp_mat = denoised_prev(s, zt_mat, pred_mat, batch.t);
        Var zp_tex = denoised_prev(s, zt_tex, pred_tex, batch.t);
        Var l_adv = adv_gen_loss(ld, zp_mat, zp_tex, batch.t, cv_fake);
        m.adv = scalar(l_adv);
        total = add(total, mul_scalar(l_adv, lambda_adv));
        fake = concat_batch(zp_mat, zp_tex).detach();
    }

    check_finite(scalar(total), "semisup generator loss");
    backward(total);
    g_opt.step(bundle.net);
    zero_grads(bundle.net);

    if (adv) {
        // the generator backward accumulated into the critic too
        zero_grads(ld);
        std::vector<Condition> dup = batch.cond_mat;
        dup.insert(dup.end(), batch.cond_mat.begin(), batch.cond_mat.end());
        Var real = Var::leaf(real_latents(s, batch));
        std::vector<float> ts2(real.dim(0), (float)batch.t);
        Var s_real = ld.forward(real, ts2, conditions_to_var(dup));
        Var s_fake = ld.forward(fake, ts2, cv_fake);
        Var d = hinge_d_loss(s_real, s_fake);
        check_finite(scalar(d), "critic loss");
        backward(d);
        d_opt.step(ld);
        zero_grads(ld);
        m.d_loss = scalar(d);
        m.ld_real = mean_of(s_real.val());
        m.ld_fake = mean_of(s_fake.val());
    }
    return m;
}

// ---- training loop ----

namespace {

struct SemisupSet {
    std::vector<Tensor> z_mat, z_tex;
    std::vector<Condition> text_mat, img_mat, img_tex;
};

SemisupSet build_semisup_set(DenoiserBundle& bundle, const Corpus& corpus,
                             int max_items) {
    if (bundle.latent_scale <= 0.0f)
        throw std::runtime_error(
            "semisup: bundle not pre-trained (latent scale unset)");
    float inv = 1.0f / bundle.latent_scale;
    int res = bundle.codec.config.resolution;
    SemisupSet set;

    MaterialCache mats(corpus, "train", res, max_items);
    for (size_t i = 0; i < mats.maps.size(); ++i) {
        LatentGrid z =
            encode(bundle.codec, mats.maps[i], EncoderKind::Single, 0, false);
        for (int64_t j = 0; j < z.values.numel(); ++j) z.values[j] *= inv;
        set.z_mat.push_back(std::move(z.values));
        set.text_mat.push_back(embed_text(mats.prompts[i]));
        set.img_mat.push_back(
            embed_image(render(mats.maps[i], RenderConfig{})));
    }
    for (const CorpusEntry* e : corpus.texture_split("train")) {
        if (max_items > 0 && (int)set.z_tex.size() >= max_items) break;
        Grid rgb = corpus.load_texture(*e);
        if (rgb.height != res)
            throw std::runtime_error("corpus resolution mismatch");
        LatentGrid z = encode_texture(bundle.codec, rgb, 0, false);
        for (int64_t j = 0; j < z.values.numel(); ++j) z.values[j] *= inv;
        set.z_tex.push_back(std::move(z.values));
        set.img_tex.push_back(embed_image(rgb));
    }
    if (set.z_tex.empty())
        throw std::runtime_error("no training textures in corpus");
    return set;
}

} // namespace

void train_semisup(DenoiserBundle& bundle, LatentDiscriminator& ld,
                   const Corpus& corpus, const SemisupTrainConfig& cfg,
                   const LogFn& log) {
    SemisupSet set = build_semisup_set(bundle, corpus, cfg.max_items);
    uint64_t codec_hash0 = param_hash(bundle.codec);
    Rng rng(seed_for(cfg.seed, "semisup-train"));
    Adam g_opt({cfg.lr, 0.9f, 0.99f});
    Adam d_opt({cfg.d_lr, 0.9f, 0.99f});
    std::ofstream metrics;
    if (!cfg.metrics_path.empty())
        metrics.open(cfg.metrics_path, std::ios::app);

    for (int step = 0; step < cfg.steps; ++step) {
        g_opt.config().lr = cosine_lr(cfg.lr, cfg.lr_min_frac, step, cfg.steps);
        d_opt.config().lr =
            cosine_lr(cfg.d_lr, cfg.lr_min_frac, step, cfg.steps);

        TrainBatch b;
        b.t = 1 + (int)rng.below((uint64_t)bundle.schedule.T);
        auto im = draw_indices(rng, (int)set.z_mat.size(), cfg.batch);
        auto it = draw_indices(rng, (int)set.z_tex.size(), cfg.batch);
        b.z0_mat = gather_batch(set.z_mat, im);
        b.z0_tex = gather_batch(set.z_tex, it);
        Rng em = rng.fork("eps-mat-" + std::to_string(step));
        b.eps_mat = normal_tensor(b.z0_mat.shape(), em);
        Rng et = rng.fork("eps-tex-" + std::to_string(step));
        b.eps_tex = normal_tensor(b.z0_tex.shape(), et);
        Rng dr = rng.fork("drop-" + std::to_string(step));
        for (int i : im)
            b.cond_mat.push_back(
                drop_modality(set.text_mat[i], set.img_mat[i], dr));
        for (int i : it)
            b.cond_tex.push_back(
                drop_modality(Condition::none(), set.img_tex[i], dr));

        float ramp = cfg.adv_warmin > 0
                         ? std::min(1.0f, (float)step / (float)cfg.adv_warmin)
                         : 1.0f;
        SemisupStepMetrics m;
        try {
            m = semisup_train_step(bundle, ld, b, cfg.alpha,
                                   cfg.lambda_adv * ramp, g_opt, d_opt);
        } catch (const NumericalAbort&) {
            if (!cfg.abort_path.empty()) {
                save_denoiser(bundle, cfg.abort_path);
                save_latent_discriminator(
                    ld, cfg.abort_path.string() + ".ld");
            }
            throw;
        }
        ++bundle.step;

        if (metrics.is_open()) {
            nlohmann::json j = {
                {"step", bundle.step},   {"sup_mat", m.sup_mat},
                {"sup_tex", m.sup_tex},  {"adv", m.adv},
                {"d_loss", m.d_loss},    {"ld_real", m.ld_real},
                {"ld_fake", m.ld_fake}};
            metrics << j.dump() << '\n' << std::flush;
        }
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log({bundle.step,
                 {{"sup_mat", m.sup_mat},
                  {"sup_tex", m.sup_tex},
                  {"adv", m.adv},
                  {"d", m.d_loss}}});
    }
    if (param_hash(bundle.codec) != codec_hash0)
        throw std::runtime_error("codec weights drifted during training");
}

} // namespace matdiff
