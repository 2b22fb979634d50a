#include "matdiff/lcm.hpp"

#include <algorithm>
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

constexpr float kSigma = 0.5f;
constexpr float kSlope = 10.0f;

float shifted(const NoiseSchedule& s, int t, int t_min) {
    if (t_min < 1 || t_min > s.T)
        throw std::runtime_error("t_min outside [1, T]");
    if (t < t_min || t > s.T)
        throw std::runtime_error("timestep " + std::to_string(t) +
                                 " outside [t_min, T]");
    return (float)(t - t_min) / (float)s.T * kSlope;
}

} // namespace

float c_skip(const NoiseSchedule& s, int t, int t_min) {
    float u = shifted(s, t, t_min);
    return kSigma * kSigma / (u * u + kSigma * kSigma);
}

float c_out(const NoiseSchedule& s, int t, int t_min) {
    float u = shifted(s, t, t_min);
    return u / std::sqrt(u * u + kSigma * kSigma);
}

ConsistencyBundle make_consistency(DenoiserBundle base) {
    ConsistencyBundle cons;
    cons.student = std::move(base);
    cons.target = UNet(cons.student.config.unet);
    copy_params(cons.student.net, cons.target);
    return cons;
}

Var consistency_apply(UNet& net, const NoiseSchedule& s, int t_min,
                      const Var& z_t, int t, const Var& cond, float omega,
                      RollContext* ctx) {
    float cs = c_skip(s, t, t_min);
    float co = c_out(s, t, t_min);
    if (t == t_min) return z_t;
    std::vector<float> ts(z_t.dim(0), (float)t);
    std::vector<float> om(z_t.dim(0), omega);
    Var f = net.forward(z_t, ts, cond, ctx, &om);
    return add(mul_scalar(z_t, cs), mul_scalar(f, co));
}

// ---- distillation ----

namespace {

struct LcmPool {
    std::vector<Tensor> z0; // normalized latents
    std::vector<Condition> cond;
};

LcmPool build_lcm_pool(DenoiserBundle& bundle, const Corpus& corpus,
                       int max_items) {
    if (bundle.latent_scale <= 0.0f)
        throw std::runtime_error(
            "lcm: bundle not pre-trained (latent scale unset)");
    float inv = 1.0f / bundle.latent_scale;
    int res = bundle.codec.config.resolution;
    LcmPool pool;

    MaterialCache mats(corpus, "train", res, max_items);
    for (size_t i = 0; i < mats.maps.size(); ++i) {
        LatentGrid z =
            encode(bundle.codec, mats.maps[i], EncoderKind::Single, 0, false);
        for (int64_t j = 0; j < z.values.numel(); ++j) z.values[j] *= inv;
        pool.z0.push_back(std::move(z.values));
        pool.cond.push_back(embed_text(mats.prompts[i]));
    }
    for (const CorpusEntry* e : corpus.texture_split("train")) {
        if (max_items > 0 &&
            (int)pool.z0.size() >= (int)mats.maps.size() + max_items)
            break;
        Grid rgb = corpus.load_texture(*e);
        if (rgb.height != res)
            throw std::runtime_error("corpus resolution mismatch");
        LatentGrid z = encode_texture(bundle.codec, rgb, 0, false);
        for (int64_t j = 0; j < z.values.numel(); ++j) z.values[j] *= inv;
        pool.z0.push_back(std::move(z.values));
        pool.cond.push_back(embed_image(rgb));
    }
    return pool;
}

} // namespace

void train_lcm(ConsistencyBundle& cons, DenoiserBundle& teacher,
               const Corpus& corpus, const LcmTrainConfig& cfg,
               const LogFn& log) {
    DenoiserBundle& student = cons.student;
    const NoiseSchedule& s = student.schedule;
    if (teacher.schedule.T != s.T)
        throw std::runtime_error("lcm: teacher and student schedules differ");
    if (cfg.mu < 0.0f || cfg.mu > 1.0f)
        throw std::runtime_error("lcm: mu outside [0, 1]");
    int k = cons.hop();
    if (cons.t_min < 1 || cons.t_min + k > s.T)
        throw std::runtime_error("lcm: hop does not fit inside [t_min, T]");

    LcmPool pool = build_lcm_pool(student, corpus, cfg.max_items);
    uint64_t teacher_hash0 = param_hash(teacher);
    Rng rng(seed_for(cfg.seed, "lcm-train"));
    Adam opt({cfg.lr, 0.9f, 0.99f});

    for (int step = 0; step < cfg.steps; ++step) {
        opt.config().lr = cosine_lr(cfg.lr, cfg.lr_min_frac, step, cfg.steps);
        auto idx = draw_indices(rng, (int)pool.z0.size(), cfg.batch);
        Tensor z0 = gather_batch(pool.z0, idx);
        int span = s.T - cons.t_min - k + 1;
        int t_hi = cons.t_min + k + (int)rng.below((uint64_t)span);
        int t_lo = t_hi - k;
        float omega =
            cons.omega_lo + rng.uniform() * (cons.omega_hi - cons.omega_lo);
        Rng eps_rng = rng.fork("eps-" + std::to_string(step));
        Tensor eps = normal_tensor(z0.shape(), eps_rng);
        Tensor z_hi = forward_noise(s, z0, t_hi, eps);

        std::vector<Condition> conds;
        std::vector<Condition> unconds(cfg.batch, Condition::none());
        for (int i : idx) conds.push_back(pool.cond[i]);
        Var cv = conditions_to_var(conds);
        std::vector<float> ts_hi(cfg.batch, (float)t_hi);

        // teacher hop and target evaluation carry no gradients
        Tensor target_out;
        {
            NoGradGuard ng;
            Var zv = Var::leaf(z_hi);
            Tensor eps_u =
                teacher.net.forward(zv, ts_hi, conditions_to_var(unconds))
                    .val();
            Tensor eps_c = teacher.net.forward(zv, ts_hi, cv).val();
            Tensor guided = cfg_combine(eps_u, eps_c, omega);
            Tensor z_lo =
                ddim_step(z_hi, guided, s.alpha_bar[t_hi], s.alpha_bar[t_lo]);
            target_out = consistency_apply(cons.target, s, cons.t_min,
                                           Var::leaf(z_lo), t_lo, cv, omega)
                             .val();
        }

        Var f = consistency_apply(student.net, s, cons.t_min,
                                  Var::leaf(z_hi), t_hi, cv, omega);
        Var loss = mean_all(square(sub(f, Var::leaf(target_out))));
        try {
            check_finite(scalar(loss), "consistency loss");
        } catch (const NumericalAbort&) {
            if (!cfg.abort_path.empty()) save_consistency(cons, cfg.abort_path);
            throw;
        }
        backward(loss);
        opt.step(student.net);
        zero_grads(student.net);
        ema_update(student.net, cons.target, cfg.mu);

        ++cons.step;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log({cons.step,
                 {{"loss", scalar(loss)}, {"omega", (double)omega}}});
    }
    if (param_hash(teacher) != teacher_hash0)
        throw std::runtime_error("teacher weights drifted during distillation");
}

// ---- sampling ----

SampleResult lcm_sample(ConsistencyBundle& cons, const Condition& cond,
                        const LcmSampleConfig& cfg) {
    DenoiserBundle& bundle = cons.student;
    const NoiseSchedule& s = bundle.schedule;
    if (cfg.n_steps < 1 || cfg.n_steps > s.T)
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
    for (int kk = 0; kk < n; ++kk)
        result.timesteps.push_back(s.T - (int)(((int64_t)kk * s.T) / n));

    Rng rng(seed_for(cfg.seed, "lcm-sample"));
    Rng z_rng = rng.fork("zT");
    Tensor z = normal_tensor({1, kLatentChannels, h, h}, z_rng);

    std::vector<RollSite> sites;
    int active_from = 0;
    if (mode == "feature") {
        sites = bundle.net.roll_sites(h, h);
        active_from = (int)(bundle.config.structured_delay * (float)n);
    }
    Var cond_v = conditions_to_var({cond});

    auto predict = [&](const Tensor& z_in, int t, const RollPlan* plan) {
        RollContext ctx;
        RollContext* pctx = nullptr;
        if (plan) {
            ctx.plan = plan;
            pctx = &ctx;
        }
        return consistency_apply(bundle.net, s, cons.t_min, Var::leaf(z_in),
                                 t, cond_v, omega, pctx)
            .val();
    };

    Tensor z0_hat;
    for (int kk = 0; kk < n; ++kk) {
        int t = result.timesteps[kk];
        if (kk > 0) {
            Rng re = rng.fork("renoise-" + std::to_string(kk));
            z = forward_noise(s, z0_hat, t,
                              normal_tensor(z0_hat.shape(), re));
        }
        if (mode == "noise") {
            z0_hat = noise_rolling_step(
                z, [&](const Tensor& zr) { return predict(zr, t, nullptr); },
                cfg.seed, kk);
        } else if (mode == "feature") {
            RollPlan plan = step_roll_plan(sites, cfg.seed, kk, active_from);
            result.plans.push_back(plan);
            z0_hat = predict(z, t, &plan);
        } else {
            z0_hat = predict(z, t, nullptr);
        }
    }

    result.z0 = Tensor::zeros({kLatentChannels, h, h});
    for (int64_t i = 0; i < result.z0.numel(); ++i)
        result.z0[i] = z0_hat.data()[i] * scale;
    result.maps = decode(bundle.codec, LatentGrid{result.z0});
    return result;
}

// ---- checkpoints ----

void save_consistency(ConsistencyBundle& cons,
                      const std::filesystem::path& path) {
    Checkpoint ck;
    ck.meta = denoiser_meta(cons.student);
    ck.meta["consistency"] = true;
    ck.meta["omega_lo"] = cons.omega_lo;
    ck.meta["omega_hi"] = cons.omega_hi;
    ck.meta["skip"] = cons.skip;
    ck.meta["t_min"] = cons.t_min;
    ck.meta["consistency_step"] = cons.step;
    ck.put_module("bundle", cons.student);
    ck.put_module("target", cons.target);
    ck.save(path);
}

ConsistencyBundle load_consistency(const std::filesystem::path& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (!ck.meta.value("consistency", false))
        throw std::runtime_error("not a consistency checkpoint: " +
                                 path.string());
    ConsistencyBundle cons;
    cons.student = denoiser_from_meta(ck.meta);
    ck.load_module("bundle", cons.student);
    cons.target = UNet(cons.student.config.unet);
    ck.load_module("target", cons.target);
    cons.omega_lo = ck.meta.value("omega_lo", 1.0f);
    cons.omega_hi = ck.meta.value("omega_hi", 6.0f);
    cons.skip = ck.meta.value("skip", 0);
    cons.t_min = ck.meta.value("t_min", 1);
    cons.step = ck.meta.value("consistency_step", (int64_t)0);
    return cons;
}

} // namespace matdiff
