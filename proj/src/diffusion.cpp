#include "matdiff/diffusion.hpp"

#include <cctype>
#include <cmath>

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

} // namespace

// ---- noise schedule ----

void NoiseSchedule::validate() const {
    if (T < 1) throw std::runtime_error("schedule: T must be positive");
    if ((int)beta.size() != T || (int)alpha_bar.size() != T + 1)
        throw std::runtime_error("schedule: table sizes do not match T");
    if (alpha_bar[0] != 1.0f)
        throw std::runtime_error("schedule: alpha_bar[0] must be 1");
    for (int i = 0; i < T; ++i) {
        if (!(beta[i] > 0.0f && beta[i] < 1.0f))
            throw std::runtime_error("schedule: beta outside (0, 1)");
        if (!(alpha_bar[i + 1] < alpha_bar[i]))
            throw std::runtime_error("schedule: alpha_bar not decreasing");
    }
    if (T > 1 && !(beta.front() < beta.back()))
        throw std::runtime_error("schedule: beta must increase");
}

NoiseSchedule make_schedule(int T) {
    if (T < 1) throw std::runtime_error("schedule: T must be positive");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0f;
    float scale = 1000.0f / (float)T;
    for (int i = 0; i < T; ++i) {
        float frac = T > 1 ? (float)i / (float)(T - 1) : 0.0f;
        s.beta[i] = scale * (1e-4f + (0.02f - 1e-4f) * frac);
        s.alpha_bar[i + 1] = s.alpha_bar[i] * (1.0f - s.beta[i]);
    }
    s.validate();
    return s;
}

namespace {

void check_t(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T)
        throw std::runtime_error("timestep " + std::to_string(t) +
                                 " outside [1, " + std::to_string(s.T) + "]");
}

} // namespace

Tensor forward_noise(const NoiseSchedule& s, const Tensor& z0, int t,
                     const Tensor& eps) {
    check_t(s, t);
    if (z0.shape() != eps.shape())
        throw std::runtime_error("forward_noise: shape mismatch");
    float a = std::sqrt(s.alpha_bar[t]);
    float b = std::sqrt(1.0f - s.alpha_bar[t]);
    Tensor out = Tensor::zeros(z0.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = a * z0.data()[i] + b * eps.data()[i];
    return out;
}

Var forward_noise(const NoiseSchedule& s, const Var& z0, int t,
                  const Var& eps) {
    check_t(s, t);
    float a = std::sqrt(s.alpha_bar[t]);
    float b = std::sqrt(1.0f - s.alpha_bar[t]);
    return add(mul_scalar(z0, a), mul_scalar(eps, b));
}

namespace {

void check_abar(float abar_t, float abar_prev) {
    if (!(abar_t > 0.0f && abar_t <= 1.0f) ||
        !(abar_prev > 0.0f && abar_prev <= 1.0f))
        throw std::runtime_error("ddim_step: alpha_bar outside (0, 1]");
}

} // namespace

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, float abar_t,
                 float abar_prev) {
    check_abar(abar_t, abar_prev);
    if (z_t.shape() != eps_hat.shape())
        throw std::runtime_error("ddim_step: shape mismatch");
    float rt = std::sqrt(abar_t);
    float st = std::sqrt(1.0f - abar_t);
    float rp = std::sqrt(abar_prev);
    float sp = std::sqrt(1.0f - abar_prev);
    Tensor out = Tensor::zeros(z_t.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        float z0 = (z_t.data()[i] - st * eps_hat.data()[i]) / rt;
        out[i] = rp * z0 + sp * eps_hat.data()[i];
    }
    return out;
}

Var ddim_step(const Var& z_t, const Var& eps_hat, float abar_t,
              float abar_prev) {
    check_abar(abar_t, abar_prev);
    float rt = std::sqrt(abar_t);
    float st = std::sqrt(1.0f - abar_t);
    float rp = std::sqrt(abar_prev);
    float sp = std::sqrt(1.0f - abar_prev);
    Var z0 = mul_scalar(sub(z_t, mul_scalar(eps_hat, st)), 1.0f / rt);
    return add(mul_scalar(z0, rp), mul_scalar(eps_hat, sp));
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond,
                   float omega) {
    if (omega == 0.0f) return eps_uncond;
    if (omega == 1.0f) return eps_cond;
    if (eps_uncond.shape() != eps_cond.shape())
        throw std::runtime_error("cfg_combine: shape mismatch");
    Tensor out = Tensor::zeros(eps_uncond.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = eps_uncond.data()[i] +
                 omega * (eps_cond.data()[i] - eps_uncond.data()[i]);
    return out;
}

// ---- conditioning ----

Condition Condition::none() {
    return {Modality::None, Tensor::zeros({kCondDim})};
}

Condition embed_text(const std::string& prompt) {
    Tensor v = Tensor::zeros({kCondDim});
    bool any = false;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        v[(int64_t)(fnv1a(token) % kCondDim)] += 1.0f;
        any = true;
        token.clear();
    };
    for (char c : prompt) {
        if (std::isalnum((unsigned char)c))
            token += (char)std::tolower((unsigned char)c);
        else
            flush();
    }
    flush();
    if (!any) return Condition::none();
    double n2 = 0.0;
    for (int i = 0; i < kCondDim; ++i) n2 += (double)v[i] * v[i];
    float inv = 1.0f / (float)std::sqrt(n2);
    for (int i = 0; i < kCondDim; ++i) v[i] *= inv;
    return {Modality::Text, std::move(v)};
}

Condition embed_image(const Grid& rgb) {
    if (rgb.channels != 3)
        throw std::runtime_error("embed_image: expected 3 channels");
    if (rgb.height < 16 || rgb.width < 16)
        throw std::runtime_error("embed_image: image smaller than 16x16");
    constexpr int kCells = 16;
    std::vector<float> feat(kCells * kCells * 3, 0.0f);
    for (int ty = 0; ty < kCells; ++ty) {
        int y0 = ty * rgb.height / kCells, y1 = (ty + 1) * rgb.height / kCells;
        for (int tx = 0; tx < kCells; ++tx) {
            int x0 = tx * rgb.width / kCells,
                x1 = (tx + 1) * rgb.width / kCells;
            double r = 0, g = 0, b = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    r += rgb.at(0, y, x);
                    g += rgb.at(1, y, x);
                    b += rgb.at(2, y, x);
                }
            double cnt = (double)(y1 - y0) * (x1 - x0);
            r /= cnt;
            g /= cnt;
            b /= cnt;
            double luma = 0.299 * r + 0.587 * g + 0.114 * b;
            int base = (ty * kCells + tx) * 3;
            feat[base + 0] = (float)luma;
            feat[base + 1] = (float)(b - luma);
            feat[base + 2] = (float)(r - luma);
        }
    }
    static const Tensor proj = [] {
        Rng rng(seed_for(0x1d8a6e, "image-embed"));
        return normal_tensor({kCondDim, kCells * kCells * 3}, rng);
    }();
    Tensor v = Tensor::zeros({kCondDim});
    int in_dim = kCells * kCells * 3;
    for (int i = 0; i < kCondDim; ++i) {
        double acc = 0.0;
        for (int j = 0; j < in_dim; ++j)
            acc += (double)proj.data()[(int64_t)i * in_dim + j] * feat[j];
        v[i] = (float)acc;
    }
    double n2 = 0.0;
    for (int i = 0; i < kCondDim; ++i) n2 += (double)v[i] * v[i];
    if (n2 > 1e-24) {
        float inv = 1.0f / (float)std::sqrt(n2);
        for (int i = 0; i < kCondDim; ++i) v[i] *= inv;
    }
    return {Modality::Image, std::move(v)};
}

Condition drop_modality(const Condition& text, const Condition& image,
                        Rng& rng) {
    // fixed two draws per call so callers consume a stable stream
    double u = rng.uniform();
    double v = rng.uniform();
    if (u < 0.10) return Condition::none();
    return v < 0.75 ? image : text;
}

Var conditions_to_var(const std::vector<Condition>& conds) {
    int n = (int)conds.size();
    Tensor out = Tensor::zeros({n, kCondDim});
    for (int i = 0; i < n; ++i) {
        if (conds[i].vec.numel() != kCondDim)
            throw std::runtime_error("condition vector has wrong size");
        std::memcpy(out.data() + (int64_t)i * kCondDim, conds[i].vec.data(),
                    sizeof(float) * kCondDim);
    }
    return Var::leaf(out);
}

// ---- denoising network ----

UNet::UNet(const UNetConfig& cfg) : config(cfg) {
    if (cfg.widths.size() != 3)
        throw std::runtime_error("unet: exactly three widths expected");
    int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
    int td = cfg.time_dim_or_default();
    int g = cfg.groups;
    Pad p = cfg.pad;
    Rng rng(seed_for(cfg.seed, "unet-init"));

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
    up1 = Conv2d(w2, w1, 3, 1, p, rng);
    dec1 = ResBlock(2 * w1, w1, td, g, p, rng);
    ca1d = CrossAttention2d(w1, kCondDim, g, p, rng);
    up0 = Conv2d(w1, w0, 3, 1, p, rng);
    dec0 = ResBlock(2 * w0, w0, td, g, p, rng);
    out_norm = GroupNormLayer(w0, g);
    head = Conv2d(w0, cfg.in_channels, 3, 1, p, rng, /*zero=*/true);
}

Var UNet::forward(const Var& x, const std::vector<float>& t, const Var& cond,
                  RollContext* ctx, const std::vector<float>* omega) {
    if (x.dim(1) != config.in_channels)
        throw std::runtime_error("unet: wrong input channel count");
    if ((int)t.size() != x.dim(0))
        throw std::runtime_error("unet: one timestep per sample expected");
    if (cond.dim(0) != x.dim(0) || cond.dim(1) != kCondDim)
        throw std::runtime_error("unet: condition batch mismatch");

    Tensor tb = sinusoidal_embedding(t, config.widths[0]);
    if (omega) {
        if ((int)omega->size() != x.dim(0))
            throw std::runtime_error("unet: one omega per sample expected");
        Tensor ob = sinusoidal_embedding(*omega, config.widths[0]);
        for (int64_t i = 0; i < tb.numel(); ++i) tb[i] += ob.data()[i];
    }
    Var temb = Var::leaf(tb);
    Var te = t2(silu(t1(temb)));

    Var h0 = at_site(ctx, 1, x, [&](const Var& v) { return stem(v); });
    h0 = enc0.forward(h0, te, ctx);
    Var h1 = at_site(ctx, 2, h0, [&](const Var& v) { return down0(v); });
    h1 = enc1.forward(h1, te, ctx);
    h1 = ca1.forward(h1, cond, ctx);
    Var h2 = at_site(ctx, 2, h1, [&](const Var& v) { return down1(v); });
    h2 = enc2.forward(h2, te, ctx);
    h2 = sa2.forward(h2, ctx);
    h2 = ca2.forward(h2, cond, ctx);
    Var m = mid.forward(h2, te, ctx);

    Var u1 = at_site(ctx, 1, upsample_nearest2x(m),
                     [&](const Var& v) { return up1(v); });
    Var d1 = dec1.forward(concat_ch({u1, h1}), te, ctx);
    d1 = ca1d.forward(d1, cond, ctx);
    Var u0 = at_site(ctx, 1, upsample_nearest2x(d1),
                     [&](const Var& v) { return up0(v); });
    Var d0 = dec0.forward(concat_ch({u0, h0}), te, ctx);

    Var out = silu(out_norm(d0));
    return at_site(ctx, 1, out, [&](const Var& v) { return head(v); });
}

std::vector<RollSite> UNet::roll_sites(int h, int w) {
    NoGradGuard ng;
    RollContext ctx;
    ctx.record = true;
    Tensor x = Tensor::zeros({1, config.in_channels, h, w});
    Tensor c = Tensor::zeros({1, kCondDim});
    forward(Var::leaf(x), {1.0f}, Var::leaf(c), &ctx);
    return ctx.sites;
}

void UNet::visit(const std::string& p, const ParamFn& fn) {
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
    up1.visit(p + ".up1", fn);
    dec1.visit(p + ".dec1", fn);
    ca1d.visit(p + ".ca1d", fn);
    up0.visit(p + ".up0", fn);
    dec0.visit(p + ".dec0", fn);
    out_norm.visit(p + ".out_norm", fn);
    head.visit(p + ".head", fn);
}

// ---- denoiser bundle ----

void check_rolling_mode(const std::string& mode) {
    if (mode != "off" && mode != "noise" && mode != "feature")
        throw std::runtime_error("unknown rolling mode: " + mode);
}

DenoiserBundle make_denoiser(const DenoiserConfig& cfg, CodecBundle codec) {
    check_rolling_mode(cfg.rolling_mode);
    if (cfg.structured_delay < 0.0f || cfg.structured_delay > 1.0f)
        throw std::runtime_error("structured_delay outside [0, 1]");
    if (cfg.unet.in_channels != kLatentChannels)
        throw std::runtime_error("unet channels must match the latent");
    if (codec.config.latent_res() % 4 != 0)
        throw std::runtime_error("latent resolution must be divisible by 4");
    DenoiserBundle b{cfg, make_schedule(cfg.T), UNet(cfg.unet),
                     std::move(codec)};
    return b;
}

// ---- supervised training ----

namespace {

// z_t for per-sample timesteps over a batched tensor
Tensor forward_noise_batch(const NoiseSchedule& s, const Tensor& z0,
                           const std::vector<int>& ts, const Tensor& eps) {
    int n = z0.dim(0);
    if ((int)ts.size() != n)
        throw std::runtime_error("forward_noise_batch: batch mismatch");
    Tensor out = Tensor::zeros(z0.shape());
    int64_t stride = z0.numel() / n;
    for (int i = 0; i < n; ++i) {
        check_t(s, ts[i]);
        float a = std::sqrt(s.alpha_bar[ts[i]]);
        float b = std::sqrt(1.0f - s.alpha_bar[ts[i]]);
        for (int64_t j = i * stride; j < (i + 1) * stride; ++j)
            out[j] = a * z0.data()[j] + b * eps.data()[j];
    }
    return out;
}

struct LatentSet {
    std::vector<Tensor> z0;        // normalized latents, [18,h,w]
    std::vector<Condition> text;
    std::vector<Condition> image;
};

LatentSet encode_train_latents(DenoiserBundle& bundle, const Corpus& corpus,
                               int max_items) {
    MaterialCache cache(corpus, "train", bundle.codec.config.resolution,
                        max_items);
    LatentSet set;
    std::vector<Tensor> raw;
    double sq = 0.0;
    int64_t cnt = 0;
    for (size_t i = 0; i < cache.maps.size(); ++i) {
        LatentGrid z =
            encode(bundle.codec, cache.maps[i], EncoderKind::Single, 0, false);
        for (int64_t j = 0; j < z.values.numel(); ++j)
            sq += (double)z.values.data()[j] * z.values.data()[j];
        cnt += z.values.numel();
        raw.push_back(std::move(z.values));
        set.text.push_back(embed_text(cache.prompts[i]));
        set.image.push_back(embed_image(render(cache.maps[i], RenderConfig{})));
    }
    if (bundle.latent_scale <= 0.0f)
        bundle.latent_scale =
            std::max(1e-6f, (float)std::sqrt(sq / (double)cnt));
    float inv = 1.0f / bundle.latent_scale;
    for (Tensor& t : raw) {
        for (int64_t j = 0; j < t.numel(); ++j) t[j] *= inv;
        set.z0.push_back(std::move(t));
    }
    return set;
}

} // namespace

void train_diffusion_supervised(DenoiserBundle& bundle, const Corpus& corpus,
                                const DiffusionTrainConfig& cfg,
                                const LogFn& log) {
    LatentSet set = encode_train_latents(bundle, corpus, cfg.max_items);
    uint64_t codec_hash0 = param_hash(bundle.codec);
    Rng rng(seed_for(cfg.seed, "diffusion-train"));
    Adam opt({cfg.lr, 0.9f, 0.99f});
    const NoiseSchedule& sched = bundle.schedule;

    for (int step = 0; step < cfg.steps; ++step) {
        opt.config().lr = cosine_lr(cfg.lr, cfg.lr_min_frac, step, cfg.steps);
        auto idx = draw_indices(rng, (int)set.z0.size(), cfg.batch);
        Tensor z0 = gather_batch(set.z0, idx);

        std::vector<int> ts(cfg.batch);
        for (int& t : ts) t = 1 + (int)rng.below((uint64_t)sched.T);
        Rng eps_rng = rng.fork("eps-" + std::to_string(step));
        Tensor eps = normal_tensor(z0.shape(), eps_rng);
        Tensor z_t = forward_noise_batch(sched, z0, ts, eps);

        Rng drop_rng = rng.fork("drop-" + std::to_string(step));
        std::vector<Condition> conds;
        std::vector<float> tsf;
        for (int i = 0; i < cfg.batch; ++i) {
            conds.push_back(
                drop_modality(set.text[idx[i]], set.image[idx[i]], drop_rng));
            tsf.push_back((float)ts[i]);
        }

        Var pred = bundle.net.forward(Var::leaf(z_t), tsf,
                                      conditions_to_var(conds));
        Var loss = mean_all(square(sub(pred, Var::leaf(eps))));

        try {
            check_finite(scalar(loss), "diffusion loss");
        } catch (const NumericalAbort&) {
            if (!cfg.abort_path.empty()) save_denoiser(bundle, cfg.abort_path);
            throw;
        }
        backward(loss);
        opt.step(bundle.net);
        zero_grads(bundle.net);

        ++bundle.step;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log({bundle.step, {{"loss", scalar(loss)}}});
    }
    if (param_hash(bundle.codec) != codec_hash0)
        throw std::runtime_error("codec weights drifted during training");
}

// ---- sampling ----

SampleResult sample_material(DenoiserBundle& bundle, const Condition& cond,
                             const SampleConfig& cfg) {
    const NoiseSchedule& sched = bundle.schedule;
    if (cfg.n_steps < 1 || cfg.n_steps > sched.T)
        throw std::runtime_error("n_steps outside [1, T]");
    float omega = cfg.omega < 0.0f ? bundle.config.cfg_scale : cfg.omega;
    std::string mode =
        cfg.rolling.empty() ? bundle.config.rolling_mode : cfg.rolling;
    check_rolling_mode(mode);
    float scale = bundle.latent_scale > 0.0f ? bundle.latent_scale : 1.0f;

    NoGradGuard ng;
    int n = cfg.n_steps;
    int h = bundle.codec.config.latent_res();
    SampleResult result;
    for (int k = 0; k <= n; ++k)
        result.timesteps.push_back(sched.T -
                                   (int)(((int64_t)k * sched.T) / n));

    Rng rng(seed_for(cfg.seed, "sample"));
    Rng z_rng = rng.fork("zT");
    Tensor z = normal_tensor({1, kLatentChannels, h, h}, z_rng);

    std::vector<RollSite> sites;
    int active_from = 0;
    if (mode == "feature") {
        sites = bundle.net.roll_sites(h, h);
        active_from = (int)(bundle.config.structured_delay * (float)n);
    }

    Var uncond_v = conditions_to_var({Condition::none()});
    Var cond_v = conditions_to_var({cond});

    auto denoise = [&](const Tensor& z_in, int t, int prev,
                       const RollPlan* plan) {
        auto eval = [&](const Var& cv) {
            RollContext ctx;
            RollContext* pctx = nullptr;
            if (plan) {
                ctx.plan = plan;
                pctx = &ctx;
            }
            return bundle.net
                .forward(Var::leaf(z_in), {(float)t}, cv, pctx)
                .val();
        };
        Tensor eps;
        if (omega == 0.0f)
            eps = eval(uncond_v);
        else if (omega == 1.0f)
            eps = eval(cond_v);
        else
            eps = cfg_combine(eval(uncond_v), eval(cond_v), omega);
        return ddim_step(z_in, eps, sched.alpha_bar[t], sched.alpha_bar[prev]);
    };

    for (int k = 0; k < n; ++k) {
        int t = result.timesteps[k];
        int prev = result.timesteps[k + 1];
        if (mode == "noise") {
            z = noise_rolling_step(
                z,
                [&](const Tensor& zr) { return denoise(zr, t, prev, nullptr); },
                cfg.seed, k);
        } else if (mode == "feature") {
            RollPlan plan = step_roll_plan(sites, cfg.seed, k, active_from);
            result.plans.push_back(plan);
            z = denoise(z, t, prev, &plan);
        } else {
            z = denoise(z, t, prev, nullptr);
        }
    }

    result.z0 = Tensor::zeros({kLatentChannels, h, h});
    for (int64_t i = 0; i < result.z0.numel(); ++i)
        result.z0[i] = z.data()[i] * scale;
    result.maps = decode(bundle.codec, LatentGrid{result.z0});
    return result;
}

// ---- checkpointing ----

nlohmann::json unet_config_json(const UNetConfig& cfg) {
    return {{"in_channels", cfg.in_channels},
            {"widths", cfg.widths},
            {"groups", cfg.groups},
            {"time_dim", cfg.time_dim},
            {"pad", cfg.pad == Pad::Circular ? "circular" : "zero"},
            {"seed", cfg.seed}};
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
    UNetConfig cfg;
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.widths = j.at("widths").get<std::vector<int>>();
    cfg.groups = j.at("groups").get<int>();
    cfg.time_dim = j.at("time_dim").get<int>();
    cfg.pad = j.at("pad").get<std::string>() == "circular" ? Pad::Circular
                                                           : Pad::Zero;
    cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
}

nlohmann::json denoiser_meta(const DenoiserBundle& bundle) {
    return {{"kind", "denoiser"},
            {"step", bundle.step},
            {"latent_scale", bundle.latent_scale},
            {"codec_step", bundle.codec.step},
            {"config",
             {{"T", bundle.config.T},
              {"cfg_scale", bundle.config.cfg_scale},
              {"rolling_mode", bundle.config.rolling_mode},
              {"structured_delay", bundle.config.structured_delay},
              {"unet", unet_config_json(bundle.config.unet)},
              {"codec",
               {{"resolution", bundle.codec.config.resolution},
                {"widths", bundle.codec.config.widths},
                {"groups", bundle.codec.config.groups},
                {"seed", bundle.codec.config.seed}}}}}};
}

DenoiserBundle denoiser_from_meta(const nlohmann::json& meta) {
    const auto& jc = meta.at("config");
    DenoiserConfig cfg;
    cfg.T = jc.at("T").get<int>();
    cfg.cfg_scale = jc.at("cfg_scale").get<float>();
    cfg.rolling_mode = jc.at("rolling_mode").get<std::string>();
    cfg.structured_delay = jc.at("structured_delay").get<float>();
    cfg.unet = unet_config_from_json(jc.at("unet"));
    const auto& jk = jc.at("codec");
    CodecConfig cc;
    cc.resolution = jk.at("resolution").get<int>();
    auto w = jk.at("widths").get<std::vector<int>>();
    cc.widths = {w.at(0), w.at(1), w.at(2)};
    cc.groups = jk.at("groups").get<int>();
    cc.seed = jk.at("seed").get<uint64_t>();

    DenoiserBundle b = make_denoiser(cfg, make_codec(cc));
    b.step = meta.value("step", (int64_t)0);
    b.latent_scale = meta.value("latent_scale", 0.0f);
    b.codec.step = meta.value("codec_step", (int64_t)0);
    return b;
}

void save_denoiser(DenoiserBundle& bundle, const std::filesystem::path& path) {
    Checkpoint ck;
    ck.meta = denoiser_meta(bundle);
    ck.put_module("bundle", bundle);
    ck.save(path);
}

DenoiserBundle load_denoiser(const std::filesystem::path& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", "") != "denoiser")
        throw std::runtime_error("not a denoiser checkpoint: " +
                                 path.string());
    DenoiserBundle b = denoiser_from_meta(ck.meta);
    ck.load_module("bundle", b);
    return b;
}

} // namespace matdiff
