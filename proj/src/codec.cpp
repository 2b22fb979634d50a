#include "matdiff/codec.hpp"

#include <cmath>

#include "matdiff/nn/optim.hpp"
#include "matdiff/tiling.hpp"
#include "train_util.hpp"

namespace matdiff {

using namespace nn;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr Pad kPad = Pad::Circular; // codec tiles by construction

const char* kMapNames[5] = {"basecolor", "normal", "height", "roughness",
                            "metalness"};
const int kMapChannels[5] = {3, 3, 1, 1, 1};

using trainutil::normal_tensor;

Tensor batch_of_one(const Tensor& t) {
    std::vector<int> shape = {1};
    for (int i = 0; i < t.ndim(); ++i) shape.push_back(t.dim(i));
    return t.reshaped(shape);
}

Tensor drop_batch(const Tensor& t) {
    std::vector<int> shape;
    for (int i = 1; i < t.ndim(); ++i) shape.push_back(t.dim(i));
    return t.reshaped(shape);
}

Grid map_of(const MaterialMaps& m, int i) {
    switch (i) {
        case 0: return m.basecolor;
        case 1: return m.normal;
        case 2: return m.height;
        case 3: return m.roughness;
        default: return m.metalness;
    }
}

Tensor grid_tensor(const Grid& g) {
    Tensor t = Tensor::zeros({g.channels, g.height, g.width});
    std::memcpy(t.data(), g.data.data(), sizeof(float) * g.data.size());
    return t;
}

} // namespace

const std::vector<LatentSlice>& latent_slices() {
    static const std::vector<LatentSlice> s = {
        {"basecolor", 0, 4},   {"normal", 4, 8},     {"height", 8, 10},
        {"roughness", 10, 14}, {"metalness", 14, 18},
    };
    return s;
}

LatentSlice latent_slice(const std::string& map) {
    for (const auto& s : latent_slices())
        if (s.map == map) return s;
    throw std::runtime_error("no latent slice for map: " + map);
}

nn::Tensor LatentGrid::slice(const std::string& map) const {
    LatentSlice s = latent_slice(map);
    int h = height(), w = width();
    Tensor out = Tensor::zeros({s.c1 - s.c0, h, w});
    std::memcpy(out.data(), values.data() + (int64_t)s.c0 * h * w,
                sizeof(float) * out.numel());
    return out;
}

// ---- modules ----

MapEncoder::MapEncoder(int c_in, int z_out_, const CodecConfig& cfg, Rng& rng)
    : stem(c_in, cfg.widths[0], 3, 1, kPad, rng),
      down0(cfg.widths[0], cfg.widths[1], 3, 2, kPad, rng),
      down1(cfg.widths[1], cfg.widths[2], 3, 2, kPad, rng),
      down2(cfg.widths[2], cfg.widths[2], 3, 2, kPad, rng),
      head(cfg.widths[2], 2 * z_out_, 3, 1, kPad, rng),
      r0(cfg.widths[0], cfg.widths[0], 0, cfg.groups, kPad, rng),
      r1(cfg.widths[1], cfg.widths[1], 0, cfg.groups, kPad, rng),
      r2(cfg.widths[2], cfg.widths[2], 0, cfg.groups, kPad, rng),
      mid(cfg.widths[2], cfg.widths[2], 0, cfg.groups, kPad, rng),
      out_norm(cfg.widths[2], cfg.groups),
      z_out(z_out_) {}

std::pair<Var, Var> MapEncoder::forward(const Var& x) {
    Var h = stem(x);
    h = r0.forward(h, Var(), nullptr);
    h = down0(h);
    h = r1.forward(h, Var(), nullptr);
    h = down1(h);
    h = r2.forward(h, Var(), nullptr);
    h = down2(h);
    h = mid.forward(h, Var(), nullptr);
    Var out = head(silu(out_norm(h)));
    Var mean = slice_ch(out, 0, z_out);
    Var logvar = clamp(slice_ch(out, z_out, 2 * z_out), -8.0f, 8.0f);
    return {mean, logvar};
}

void MapEncoder::visit(const std::string& p, const ParamFn& fn) {
    stem.visit(p + ".stem", fn);
    r0.visit(p + ".r0", fn);
    down0.visit(p + ".down0", fn);
    r1.visit(p + ".r1", fn);
    down1.visit(p + ".down1", fn);
    r2.visit(p + ".r2", fn);
    down2.visit(p + ".down2", fn);
    mid.visit(p + ".mid", fn);
    out_norm.visit(p + ".out_norm", fn);
    head.visit(p + ".head", fn);
}

Decoder::Decoder(int z_in, int c_out, const CodecConfig& cfg, Rng& rng)
    : stem(z_in, cfg.widths[2], 3, 1, kPad, rng),
      up0(cfg.widths[2], cfg.widths[1], 3, 1, kPad, rng),
      up1(cfg.widths[1], cfg.widths[0], 3, 1, kPad, rng),
      up2(cfg.widths[0], cfg.widths[0], 3, 1, kPad, rng),
      head(cfg.widths[0], c_out, 3, 1, kPad, rng),
      mid(cfg.widths[2], cfg.widths[2], 0, cfg.groups, kPad, rng),
      r0(cfg.widths[2], cfg.widths[2], 0, cfg.groups, kPad, rng),
      r1(cfg.widths[1], cfg.widths[1], 0, cfg.groups, kPad, rng),
      r2(cfg.widths[0], cfg.widths[0], 0, cfg.groups, kPad, rng),
      out_norm(cfg.widths[0], cfg.groups) {}

Var Decoder::forward(const Var& z) {
    Var h = stem(z);
    h = mid.forward(h, Var(), nullptr);
    h = r0.forward(h, Var(), nullptr);
    h = up0(upsample_nearest2x(h));
    h = r1.forward(h, Var(), nullptr);
    h = up1(upsample_nearest2x(h));
    h = r2.forward(h, Var(), nullptr);
    h = up2(upsample_nearest2x(h));
    return head(silu(out_norm(h)));
}

void Decoder::visit(const std::string& p, const ParamFn& fn) {
    stem.visit(p + ".stem", fn);
    mid.visit(p + ".mid", fn);
    r0.visit(p + ".r0", fn);
    up0.visit(p + ".up0", fn);
    r1.visit(p + ".r1", fn);
    up1.visit(p + ".up1", fn);
    r2.visit(p + ".r2", fn);
    up2.visit(p + ".up2", fn);
    out_norm.visit(p + ".out_norm", fn);
    head.visit(p + ".head", fn);
}

PatchCritic::PatchCritic(int c_in, const CodecConfig& cfg, Rng& rng)
    : c0(c_in, cfg.widths[0], 3, 2, Pad::Zero, rng),
      c1(cfg.widths[0], cfg.widths[1], 3, 2, Pad::Zero, rng),
      c2(cfg.widths[1], 1, 3, 1, Pad::Zero, rng),
      n1(cfg.widths[1], cfg.groups) {}

Var PatchCritic::forward(const Var& x) {
    Var h = leaky_relu(c0(x));
    h = leaky_relu(n1(c1(h)));
    return c2(h);
}

void PatchCritic::visit(const std::string& p, const ParamFn& fn) {
    c0.visit(p + ".c0", fn);
    c1.visit(p + ".c1", fn);
    n1.visit(p + ".n1", fn);
    c2.visit(p + ".c2", fn);
}

void CodecBundle::visit(const std::string& p, const ParamFn& fn) {
    for (int i = 0; i < 5; ++i)
        map_encoders[i].visit(p + ".enc." + kMapNames[i], fn);
    single_encoder.visit(p + ".single", fn);
    texture_encoder.visit(p + ".texture", fn);
    decoder.visit(p + ".dec", fn);
    critic.visit(p + ".critic", fn);
}

CodecBundle make_codec(const CodecConfig& cfg) {
    if (cfg.resolution % kLatentFactor != 0)
        throw std::runtime_error("codec resolution must be divisible by 8");
    Rng rng(seed_for(cfg.seed, "codec-init"));
    CodecBundle b;
    b.config = cfg;
    const auto& slices = latent_slices();
    for (int i = 0; i < 5; ++i)
        b.map_encoders[i] = MapEncoder(kMapChannels[i],
                                       slices[i].c1 - slices[i].c0, cfg, rng);
    b.single_encoder = MapEncoder(kStackChannels, kLatentChannels, cfg, rng);
    b.texture_encoder = MapEncoder(3, kLatentChannels, cfg, rng);
    b.decoder = Decoder(kLatentChannels, kStackChannels, cfg, rng);
    b.critic = PatchCritic(kStackChannels, cfg, rng);
    return b;
}

namespace {

struct MultiEncoderView {
    CodecBundle& b;
    void visit(const std::string& p, const ParamFn& fn) {
        for (int i = 0; i < 5; ++i)
            b.map_encoders[i].visit(p + ".enc." + kMapNames[i], fn);
    }
};

struct AutoencoderView {
    CodecBundle& b;
    void visit(const std::string& p, const ParamFn& fn) {
        MultiEncoderView{b}.visit(p, fn);
        b.decoder.visit(p + ".dec", fn);
    }
};

// (mean, logvar) of the multi-encoder ensemble, slices concatenated
std::pair<Var, Var> multi_forward(CodecBundle& b, const Var& stack) {
    std::vector<Var> means, logvars;
    int c0 = 0;
    for (int i = 0; i < 5; ++i) {
        Var part = slice_ch(stack, c0, c0 + kMapChannels[i]);
        c0 += kMapChannels[i];
        auto [m, lv] = b.map_encoders[i].forward(part);
        means.push_back(m);
        logvars.push_back(lv);
    }
    return {concat_ch(means), concat_ch(logvars)};
}

std::pair<Var, Var> encoder_forward(CodecBundle& b, const Var& input,
                                    EncoderKind which) {
    switch (which) {
        case EncoderKind::Multi: return multi_forward(b, input);
        case EncoderKind::Single: return b.single_encoder.forward(input);
        default: return b.texture_encoder.forward(input);
    }
}

} // namespace

int64_t multi_encoder_param_count(CodecBundle& b) {
    MultiEncoderView v{b};
    return param_count(v);
}

int64_t single_encoder_param_count(CodecBundle& b) {
    return param_count(b.single_encoder);
}

LatentGrid encode(CodecBundle& bundle, const MaterialMaps& maps,
                  EncoderKind which, uint64_t seed, bool sample) {
    if (which == EncoderKind::Texture)
        throw std::runtime_error("encode: texture encoder takes an RGB grid");
    if (maps.height_px() != bundle.config.resolution)
        throw std::runtime_error("encode: resolution mismatch");
    NoGradGuard ng;
    Var input = Var::leaf(batch_of_one(maps_to_stack(maps)));
    auto [mean, logvar] = encoder_forward(bundle, input, which);
    Tensor z = mean.val().clone();
    if (sample) {
        Rng rng(seed_for(seed, "latent-eps"));
        const Tensor& lv = logvar.val();
        for (int64_t i = 0; i < z.numel(); ++i)
            z[i] += std::exp(0.5f * lv.data()[i]) * rng.normal();
    }
    return {drop_batch(z)};
}

LatentGrid encode_texture(CodecBundle& bundle, const Grid& rgb, uint64_t seed,
                          bool sample) {
    if (rgb.channels != 3)
        throw std::runtime_error("encode_texture: need 3 channels");
    if (rgb.height != bundle.config.resolution)
        throw std::runtime_error("encode_texture: resolution mismatch");
    NoGradGuard ng;
    Var input = Var::leaf(batch_of_one(grid_tensor(rgb)));
    auto [mean, logvar] = bundle.texture_encoder.forward(input);
    Tensor z = mean.val().clone();
    if (sample) {
        Rng rng(seed_for(seed, "latent-eps"));
        const Tensor& lv = logvar.val();
        for (int64_t i = 0; i < z.numel(); ++i)
            z[i] += std::exp(0.5f * lv.data()[i]) * rng.normal();
    }
    return {drop_batch(z)};
}

nn::Tensor decode_stack(CodecBundle& bundle, const nn::Tensor& z) {
    NoGradGuard ng;
    return bundle.decoder.forward(Var::leaf(z)).val();
}

MaterialMaps decode(CodecBundle& bundle, const LatentGrid& z) {
    if (z.values.ndim() != 3 || z.values.dim(0) != kLatentChannels)
        throw std::runtime_error("decode: latent must be [18,h,w]");
    Tensor raw = decode_stack(bundle, batch_of_one(z.values));
    return stack_to_maps(drop_batch(raw));
}

// ---- loss pieces ----

Var kl_penalty(const Var& mean, const Var& logvar) {
    Var inner = sub(add(square(mean), vexp(logvar)),
                    add_scalar(logvar, 1.0f));
    return mul_scalar(mean_all(inner), 0.5f);
}

Var hinge_d_loss(const Var& s_real, const Var& s_fake) {
    Var real_term = mean_all(relu(add_scalar(neg(s_real), 1.0f)));
    Var fake_term = mean_all(relu(add_scalar(s_fake, 1.0f)));
    return add(real_term, fake_term);
}

Var hinge_g_loss(const Var& s_fake) { return neg(mean_all(s_fake)); }

std::pair<double, double> patch_disc_loss(CodecBundle& bundle,
                                          const MaterialMaps& real,
                                          const MaterialMaps& fake) {
    if (real.height_px() != fake.height_px() ||
        real.width_px() != fake.width_px())
        throw std::runtime_error("patch_disc_loss: resolution mismatch");
    NoGradGuard ng;
    Var s_real = bundle.critic.forward(
        Var::leaf(batch_of_one(maps_to_stack(real))));
    Var s_fake = bundle.critic.forward(
        Var::leaf(batch_of_one(maps_to_stack(fake))));
    double d = hinge_d_loss(s_real, s_fake).val().data()[0];
    double g = hinge_g_loss(s_fake).val().data()[0];
    return {d, g};
}

Var perceptual_proxy(const Var& a_in, const Var& b_in) {
    Var a = a_in, b = b_in, total;
    for (int s = 0; s < 3; ++s) {
        Var gxa = sub(a, roll2d_var(a, 0, 1));
        Var gya = sub(a, roll2d_var(a, 1, 0));
        Var gxb = sub(b, roll2d_var(b, 0, 1));
        Var gyb = sub(b, roll2d_var(b, 1, 0));
        Var term = add(mean_all(vabs(sub(gxa, gxb))),
                       mean_all(vabs(sub(gya, gyb))));
        total = s == 0 ? term : add(total, term);
        if (s < 2) {
            a = avg_pool2(a);
            b = avg_pool2(b);
        }
    }
    return mul_scalar(total, 1.0f / 3.0f);
}

double perceptual_distance(const Grid& a, const Grid& b) {
    if (!a.same_shape(b))
        throw std::runtime_error("perceptual_distance: shape mismatch");
    auto downsample = [](const Grid& g) {
        Grid out(g.channels, g.height / 2, g.width / 2);
        for (int c = 0; c < g.channels; ++c)
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width; ++x)
                    out.at(c, y, x) =
                        0.25f * (g.at(c, 2 * y, 2 * x) + g.at(c, 2 * y, 2 * x + 1) +
                                 g.at(c, 2 * y + 1, 2 * x) +
                                 g.at(c, 2 * y + 1, 2 * x + 1));
        return out;
    };
    Grid ga = a, gb = b;
    double total = 0.0;
    for (int s = 0; s < 3; ++s) {
        double term = 0.0;
        int64_t cnt = 0;
        for (int c = 0; c < ga.channels; ++c)
            for (int y = 0; y < ga.height; ++y)
                for (int x = 0; x < ga.width; ++x) {
                    int xn = wrap_index(x - 1, ga.width);
                    int yn = wrap_index(y - 1, ga.height);
                    double dxa = ga.at(c, y, x) - ga.at(c, y, xn);
                    double dxb = gb.at(c, y, x) - gb.at(c, y, xn);
                    double dya = ga.at(c, y, x) - ga.at(c, yn, x);
                    double dyb = gb.at(c, y, x) - gb.at(c, yn, x);
                    term += std::fabs(dxa - dxb) + std::fabs(dya - dyb);
                    cnt += 2;
                }
        total += term * 2.0 / (double)cnt; // gx mean + gy mean
        if (s < 2) {
            ga = downsample(ga);
            gb = downsample(gb);
        }
    }
    return total / 3.0;
}

Var render_stack(const Var& stack, const RenderConfig& cfg) {
    cfg.validate();
    Var bc = slice_ch(stack, 0, 3);
    Var nenc = slice_ch(stack, 3, 6);
    Var rough = slice_ch(stack, 7, 8);
    Var metal = slice_ch(stack, 8, 9);

    Var n_raw = affine(nenc, 2.0f, -1.0f);
    Var inv_len = reciprocal(
        vsqrt(add_scalar(sum_channels(square(n_raw)), 1e-12f)));
    Var n = mul_bc1(n_raw, inv_len);

    std::vector<float> l = {cfg.light_dir[0], cfg.light_dir[1],
                            cfg.light_dir[2]};
    std::vector<float> v = {cfg.view_dir[0], cfg.view_dir[1], cfg.view_dir[2]};
    double hx = l[0] + v[0], hy = l[1] + v[1], hz = l[2] + v[2];
    double hlen = std::sqrt(hx * hx + hy * hy + hz * hz);
    std::vector<float> hvec = {(float)(hx / hlen), (float)(hy / hlen),
                               (float)(hz / hlen)};
    double vh = (v[0] * hvec[0] + v[1] * hvec[1] + v[2] * hvec[2]);
    float fres = (float)std::pow(std::max(0.0, 1.0 - vh), 5.0);

    Var nl = relu(dot_const(n, l));
    Var nv = relu(dot_const(n, v));
    Var nh = relu(dot_const(n, hvec));

    Var a2 = square(square(rough));
    Var denom = add_scalar(mul(square(nh), add_scalar(a2, -1.0f)), 1.0f);
    Var D = div(a2, mul_scalar(square(denom), (float)kPi));

    auto smith = [&](const Var& mu) {
        Var mu2 = square(add_scalar(mu, 1e-6f));
        Var ratio = div(mul(a2, add_scalar(neg(mu2), 1.0f)), mu2);
        return mul_scalar(add_scalar(vsqrt(add_scalar(relu(ratio), 1.0f)), -1.0f),
                          0.5f);
    };
    Var G = reciprocal(add_scalar(add(smith(nl), smith(nv)), 1.0f));

    Var spec_den = add_scalar(mul_scalar(mul(nl, nv), 4.0f), 1e-4f);
    Var dg = div(mul(D, G), spec_den);

    std::vector<Var> out;
    for (int c = 0; c < 3; ++c) {
        Var bcc = slice_ch(bc, c, c + 1);
        Var f0 = add_scalar(mul(add_scalar(bcc, -0.04f), metal), 0.04f);
        Var F = add(f0, mul_scalar(add_scalar(neg(f0), 1.0f), fres));
        Var diffuse = mul_scalar(mul(add_scalar(neg(metal), 1.0f), bcc),
                                 (float)(1.0 / kPi));
        Var spec = mul(dg, F);
        Var shading = mul(nl, add(diffuse, spec));
        Var px = add(mul_scalar(bcc, cfg.ambient),
                     mul_scalar(shading, cfg.light_intensity));
        out.push_back(clamp(mul_scalar(px, cfg.exposure), 0.0f, 1.0f));
    }
    return concat_ch(out);
}

// ---- training ----

namespace {

using trainutil::MaterialCache;
using trainutil::gather_batch;
using trainutil::draw_indices;
using trainutil::check_finite;
using trainutil::scalar;

} // namespace

void train_vae(CodecBundle& bundle, const Corpus& corpus,
               const VaeTrainConfig& cfg, const LogFn& log) {
    MaterialCache cache(corpus, "train", bundle.config.resolution,
                        cfg.max_items);
    Rng rng(seed_for(cfg.seed, "vae-train"));
    AutoencoderView ae{bundle};
    Adam opt({cfg.lr, 0.9f, 0.99f});
    Adam opt_critic({cfg.critic_lr, 0.9f, 0.99f});
    int warmup = (int)(cfg.adv_warmup_frac * cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        opt.config().lr = cosine_lr(cfg.lr, cfg.lr_min_frac, step, cfg.steps);
        auto idx = draw_indices(rng, (int)cache.stacks.size(), cfg.batch);
        Tensor target_t = gather_batch(cache.stacks, idx);
        Var target = Var::leaf(target_t);

        auto [mean, logvar] = multi_forward(bundle, target);
        Var z = mean;
        if (cfg.lambda_kl > 0.0f) {
            // reparameterized sample; with no KL weight the posterior width
            // is unconstrained and its optimum collapses to the mean
            Rng eps_rng = rng.fork("eps-" + std::to_string(step));
            Var eps = Var::leaf(normal_tensor(mean.val().shape(), eps_rng));
            z = add(mean, mul(vexp(mul_scalar(logvar, 0.5f)), eps));
        }
        Var recon = bundle.decoder.forward(z);

        Var l2 = mean_all(square(sub(recon, target)));
        Var total = l2;

        Var proxy;
        if (cfg.lambda_lpips > 0.0f) {
            proxy = perceptual_proxy(recon, target);
            total = add(total, mul_scalar(proxy, cfg.lambda_lpips));
        }

        Var rend;
        if (cfg.lambda_rend > 0.0f) {
            Rng light_rng = rng.fork("light-" + std::to_string(step));
            for (int li = 0; li < cfg.render_lights; ++li) {
                RenderConfig rc = random_light(light_rng);
                Var term = mean_all(vabs(sub(render_stack(recon, rc),
                                             render_stack(target, rc))));
                rend = li == 0 ? term : add(rend, term);
            }
            if (cfg.render_lights > 1)
                rend = mul_scalar(rend, 1.0f / (float)cfg.render_lights);
            total = add(total, mul_scalar(rend, cfg.lambda_rend));
        }

        Var kl;
        if (cfg.lambda_kl > 0.0f) {
            kl = kl_penalty(mean, logvar);
            total = add(total, mul_scalar(kl, cfg.lambda_kl));
        }

        bool adv_on = cfg.lambda_adv > 0.0f && step > warmup;
        Var g_loss;
        if (adv_on) {
            g_loss = hinge_g_loss(bundle.critic.forward(recon));
            total = add(total, mul_scalar(g_loss, cfg.lambda_adv));
        }

        check_finite(scalar(total), "vae loss");
        backward(total);
        opt.step(ae);
        zero_grads(bundle);

        double d_val = 0.0;
        if (adv_on) {
            Var s_real = bundle.critic.forward(target);
            Var s_fake = bundle.critic.forward(recon.detach());
            Var d_loss = hinge_d_loss(s_real, s_fake);
            d_val = scalar(d_loss);
            check_finite(d_val, "critic loss");
            backward(d_loss);
            opt_critic.step(bundle.critic);
            zero_grads(bundle);
        }

        ++bundle.step;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            StepLog entry{bundle.step,
                          {{"loss", scalar(total)},
                           {"l2", scalar(l2)},
                           {"proxy", proxy.defined() ? scalar(proxy) : 0.0},
                           {"rend", rend.defined() ? scalar(rend) : 0.0},
                           {"kl", kl.defined() ? scalar(kl) : 0.0},
                           {"g", adv_on ? scalar(g_loss) : 0.0},
                           {"d", d_val}}};
            log(entry);
        }
    }
}

namespace {

// shared driver for the two encoder distillations
void distill_encoder(CodecBundle& bundle, const Corpus& corpus,
                     const DistillTrainConfig& cfg, bool texture_input,
                     const LogFn& log) {
    MaterialCache cache(corpus, "train", bundle.config.resolution,
                        cfg.max_items);
    Rng rng(seed_for(cfg.seed,
                     texture_input ? "texture-distill" : "single-distill"));
    uint64_t decoder_hash0 = param_hash(bundle.decoder);
    Adam opt({cfg.lr, 0.9f, 0.99f});
    MapEncoder& student =
        texture_input ? bundle.texture_encoder : bundle.single_encoder;
    EncoderKind teacher_kind =
        texture_input ? EncoderKind::Single : EncoderKind::Multi;

    for (int step = 0; step < cfg.steps; ++step) {
        opt.config().lr = cosine_lr(cfg.lr, cfg.lr_min_frac, step, cfg.steps);
        auto idx = draw_indices(rng, (int)cache.stacks.size(), cfg.batch);
        Tensor target_t = gather_batch(cache.stacks, idx);

        Var mean_t, logvar_t;
        {
            NoGradGuard ng;
            auto [m, lv] =
                encoder_forward(bundle, Var::leaf(target_t), teacher_kind);
            mean_t = Var::leaf(m.val());
            logvar_t = Var::leaf(lv.val());
        }

        Var input;
        if (!texture_input) {
            input = Var::leaf(target_t);
        } else if (step % 2 == 0) {
            // basecolor channels of the stack
            input = slice_ch(Var::leaf(target_t), 0, 3);
        } else {
            Rng light_rng = rng.fork("light-" + std::to_string(step));
            RenderConfig rc = random_light(light_rng);
            NoGradGuard ng;
            input = Var::leaf(render_stack(Var::leaf(target_t), rc).val());
        }

        auto [mean_s, logvar_s] = student.forward(input);
        Var latent_l2 = add(mean_all(square(sub(mean_s, mean_t))),
                            mean_all(square(sub(logvar_s, logvar_t))));
        Var total = latent_l2;
        if (!texture_input && cfg.lambda_recon > 0.0f) {
            Var recon = bundle.decoder.forward(mean_s);
            total = add(total, mul_scalar(mean_all(square(
                                              sub(recon, Var::leaf(target_t)))),
                                          cfg.lambda_recon));
        }

        check_finite(scalar(total), "distill loss");
        backward(total);
        opt.step(student);
        zero_grads(bundle);

        ++bundle.step;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log({bundle.step,
                 {{"loss", scalar(total)}, {"latent_l2", scalar(latent_l2)}}});
    }

    if (param_hash(bundle.decoder) != decoder_hash0)
        throw std::runtime_error("decoder weights drifted during distillation");
}

} // namespace

void distill_single_encoder(CodecBundle& bundle, const Corpus& corpus,
                            const DistillTrainConfig& cfg, const LogFn& log) {
    distill_encoder(bundle, corpus, cfg, false, log);
}

void distill_texture_encoder(CodecBundle& bundle, const Corpus& corpus,
                             const DistillTrainConfig& cfg, const LogFn& log) {
    distill_encoder(bundle, corpus, cfg, true, log);
}

std::map<std::string, double> codec_rmse(
    CodecBundle& bundle, const Corpus& corpus,
    std::span<const CorpusEntry* const> entries, EncoderKind which) {
    if (entries.empty()) throw std::runtime_error("codec_rmse: no entries");
    std::map<std::string, double> sums;
    for (const CorpusEntry* e : entries) {
        MaterialMaps m = corpus.load_maps(*e);
        LatentGrid z = encode(bundle, m, which, 0, /*sample=*/false);
        MaterialMaps r = decode(bundle, z);
        sums["basecolor"] += rmse(r.basecolor, m.basecolor);
        sums["normal"] += rmse(r.normal, m.normal);
        sums["height"] += rmse(r.height, m.height);
        sums["roughness"] += rmse(r.roughness, m.roughness);
        sums["metalness"] += rmse(r.metalness, m.metalness);
    }
    for (auto& [k, v] : sums) v /= (double)entries.size();
    return sums;
}

void save_codec(CodecBundle& bundle, const std::filesystem::path& path) {
    Checkpoint ck;
    ck.meta["kind"] = "codec";
    ck.meta["step"] = bundle.step;
    ck.meta["config"] = {{"resolution", bundle.config.resolution},
                         {"widths", bundle.config.widths},
                         {"groups", bundle.config.groups},
                         {"seed", bundle.config.seed}};
    ck.put_module("codec", bundle);
    ck.save(path);
}

CodecBundle load_codec(const std::filesystem::path& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", "") != "codec")
        throw std::runtime_error("not a codec checkpoint: " + path.string());
    CodecConfig cfg;
    const auto& jc = ck.meta.at("config");
    cfg.resolution = jc.at("resolution").get<int>();
    auto w = jc.at("widths").get<std::vector<int>>();
    cfg.widths = {w.at(0), w.at(1), w.at(2)};
    cfg.groups = jc.at("groups").get<int>();
    cfg.seed = jc.at("seed").get<uint64_t>();
    CodecBundle b = make_codec(cfg);
    b.step = ck.meta.value("step", (int64_t)0);
    ck.load_module("codec", b);
    return b;
}

} // namespace matdiff
