#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "matdiff/semisup.hpp"

using namespace matdiff;
using nn::Adam;
using nn::Tensor;
using nn::Var;

namespace {

const Corpus& test_corpus() {
    static Corpus c = [] {
        auto root = std::filesystem::temp_directory_path() /
                    ("matdiff_semisup_corpus_" + std::to_string(::getpid()));
        std::filesystem::remove_all(root);
        CorpusConfig cfg;
        cfg.n_materials = 18;
        cfg.n_textures = 12;
        cfg.resolution = 32;
        cfg.master_seed = 7;
        cfg.n_hires_materials = 0;
        return build_corpus(cfg, root);
    }();
    return c;
}

CodecConfig micro_codec_config() {
    CodecConfig cfg;
    cfg.resolution = 32;
    cfg.widths = {8, 12, 16};
    cfg.groups = 4;
    cfg.seed = 11;
    return cfg;
}

UNetConfig micro_unet_config() {
    UNetConfig cfg;
    cfg.widths = {16, 24, 32};
    cfg.groups = 4;
    cfg.seed = 21;
    return cfg;
}

DenoiserBundle micro_denoiser(int T = 64) {
    DenoiserConfig cfg;
    cfg.unet = micro_unet_config();
    cfg.T = T;
    return make_denoiser(cfg, make_codec(micro_codec_config()));
}

bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

Tensor rand_tensor(std::vector<int> shape, uint64_t seed, float scale = 1.0f) {
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

TrainBatch rand_batch(int B, int t, uint64_t seed) {
    TrainBatch b;
    std::vector<int> shape = {B, kLatentChannels, 4, 4};
    b.z0_mat = rand_tensor(shape, seed);
    b.z0_tex = rand_tensor(shape, seed + 1);
    b.eps_mat = rand_tensor(shape, seed + 2);
    b.eps_tex = rand_tensor(shape, seed + 3);
    for (int i = 0; i < B; ++i) {
        b.cond_mat.push_back(embed_text("material " + std::to_string(i)));
        b.cond_tex.push_back(Condition::none());
    }
    b.t = t;
    return b;
}

void fill_params(LatentDiscriminator& ld, float v) {
    ld.visit("", [&](const std::string&, nn::Parameter& p) {
        for (int64_t i = 0; i < p.value.numel(); ++i) p.value[i] = v;
    });
}

void set_params(LatentDiscriminator& ld, const std::string& what, float v) {
    ld.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n.find(what) == std::string::npos) return;
        for (int64_t i = 0; i < p.value.numel(); ++i) p.value[i] = v;
    });
}

Tensor permute_batch(const Tensor& t, const std::vector<int>& perm) {
    Tensor out = Tensor::zeros(t.shape());
    int64_t stride = t.numel() / t.dim(0);
    for (size_t i = 0; i < perm.size(); ++i)
        std::memcpy(out.data() + i * stride, t.data() + perm[i] * stride,
                    sizeof(float) * stride);
    return out;
}

TrainBatch permuted(const TrainBatch& b, const std::vector<int>& perm) {
    TrainBatch out;
    out.z0_mat = permute_batch(b.z0_mat, perm);
    out.z0_tex = permute_batch(b.z0_tex, perm);
    out.eps_mat = permute_batch(b.eps_mat, perm);
    out.eps_tex = permute_batch(b.eps_tex, perm);
    for (int i : perm) {
        out.cond_mat.push_back(b.cond_mat[i]);
        out.cond_tex.push_back(b.cond_tex[i]);
    }
    out.t = b.t;
    return out;
}

} // namespace

TEST_CASE("supervised residual matches the scalar oracle") {
    TrainBatch b = rand_batch(2, 3, 100);
    std::vector<int> shape = b.eps_mat.shape();
    Var zero_pred = Var::leaf(Tensor::zeros(shape));

    auto mean_sq = [](const Tensor& t) {
        double s = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i)
            s += (double)t.data()[i] * t.data()[i];
        return s / (double)t.numel();
    };

    double want = mean_sq(b.eps_mat) + 0.15 * mean_sq(b.eps_tex);
    Var loss = supervised_loss(zero_pred, zero_pred, b, 0.15f);
    CHECK(loss.val().data()[0] == doctest::Approx(want).epsilon(1e-6));

    Var mat_only = supervised_loss(zero_pred, zero_pred, b, 0.0f);
    CHECK(mat_only.val().data()[0] ==
          doctest::Approx(mean_sq(b.eps_mat)).epsilon(1e-6));

    Tensor pm = rand_tensor(shape, 7);
    Tensor pt = rand_tensor(shape, 8);
    double wm = 0.0, wt = 0.0;
    for (int64_t i = 0; i < pm.numel(); ++i) {
        double dm = pm.data()[i] - b.eps_mat.data()[i];
        double dt = pt.data()[i] - b.eps_tex.data()[i];
        wm += dm * dm;
        wt += dt * dt;
    }
    wm /= (double)pm.numel();
    wt /= (double)pt.numel();
    Var full = supervised_loss(Var::leaf(pm), Var::leaf(pt), b, 0.4f);
    CHECK(full.val().data()[0] ==
          doctest::Approx(wm + 0.4 * wt).epsilon(1e-6));

    CHECK_THROWS(supervised_loss(zero_pred, zero_pred, b, -0.1f));
}

TEST_CASE("previous-step latents follow the one-step ddim oracle") {
    NoiseSchedule s = make_schedule(64);
    int t = 40;
    float at = s.alpha_bar[t], ap = s.alpha_bar[t - 1];

    Tensor z = rand_tensor({1, 2, 2, 2}, 5);
    Tensor e = rand_tensor({1, 2, 2, 2}, 6);
    Var prev = denoised_prev(s, Var::leaf(z), Var::leaf(e), t);
    for (int64_t i = 0; i < z.numel(); ++i) {
        double z0 = (z.data()[i] - std::sqrt(1.0 - at) * e.data()[i]) /
                    std::sqrt(at);
        double want = std::sqrt(ap) * z0 + std::sqrt(1.0 - ap) * e.data()[i];
        CHECK(prev.val().data()[i] == doctest::Approx(want).epsilon(1e-5));
    }

    CHECK_THROWS(denoised_prev(s, Var::leaf(z), Var::leaf(e), 0));
    CHECK_THROWS(denoised_prev(s, Var::leaf(z), Var::leaf(e), 65));

    // with the true noise the step inverts the forward process exactly
    Tensor z0 = rand_tensor({1, 3, 2, 2}, 9);
    Tensor eps = rand_tensor({1, 3, 2, 2}, 10);
    for (int tt : {2, 17, 64}) {
        Tensor zt = forward_noise(s, z0, tt, eps);
        Var got = denoised_prev(s, Var::leaf(zt), Var::leaf(eps), tt);
        Tensor want = forward_noise(s, z0, tt - 1, eps);
        for (int64_t i = 0; i < z0.numel(); ++i)
            CHECK(got.val().data()[i] ==
                  doctest::Approx(want.data()[i]).epsilon(1e-4));
    }
    Tensor z1 = forward_noise(s, z0, 1, eps);
    Var back = denoised_prev(s, Var::leaf(z1), Var::leaf(eps), 1);
    for (int64_t i = 0; i < z0.numel(); ++i)
        CHECK(back.val().data()[i] ==
              doctest::Approx(z0.data()[i]).epsilon(1e-4));
}

TEST_CASE("critic scores drive the adversarial losses") {
    LatentDiscriminator ld(micro_unet_config());
    fill_params(ld, 0.0f);

    int B = 2;
    Var zp_mat = Var::leaf(rand_tensor({B, kLatentChannels, 4, 4}, 1));
    Var zp_tex = Var::leaf(rand_tensor({B, kLatentChannels, 4, 4}, 2));
    Var conds = Var::leaf(Tensor::zeros({2 * B, kCondDim}));

    // all-zero critic scores everything 0
    Var g0 = adv_gen_loss(ld, zp_mat, zp_tex, 5, conds);
    CHECK(g0.val().data()[0] == doctest::Approx(0.0).epsilon(1e-9));
    Var d0 = disc_loss(ld, zp_mat, zp_tex, 5, Var::leaf(Tensor::zeros(
                 {B, kCondDim})), Var::leaf(Tensor::zeros({B, kCondDim})));
    CHECK(d0.val().data()[0] == doctest::Approx(2.0).epsilon(1e-9));

    // constant positive score c gives -c, and margins met give 0
    set_params(ld, ".score.b", 5.0f);
    Var g5 = adv_gen_loss(ld, zp_mat, zp_tex, 5, conds);
    CHECK(g5.val().data()[0] == doctest::Approx(-5.0).epsilon(1e-6));

    set_params(ld, ".score.b", -2.0f);
    Var gm = adv_gen_loss(ld, zp_mat, zp_tex, 5, conds);
    CHECK(gm.val().data()[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g5.val().data()[0] < gm.val().data()[0]);
}

TEST_CASE("critic hinge agrees with direct score evaluation") {
    LatentDiscriminator ld(micro_unet_config());
    int B = 3;
    Var real = Var::leaf(rand_tensor({B, kLatentChannels, 4, 4}, 21));
    Var fake = Var::leaf(rand_tensor({B, kLatentChannels, 4, 4}, 22));
    Var cr = Var::leaf(rand_tensor({B, kCondDim}, 23, 0.1f));
    Var cf = Var::leaf(rand_tensor({B, kCondDim}, 24, 0.1f));

    Var d = disc_loss(ld, real, fake, 9, cr, cf);
    std::vector<float> ts(B, 9.0f);
    Var want = hinge_d_loss(ld.forward(real, ts, cr), ld.forward(fake, ts, cf));
    CHECK(d.val().data()[0] == want.val().data()[0]);
    CHECK(d.val().data()[0] >= 0.0f);
}

TEST_CASE("critic starts from the generator encoder weights") {
    DenoiserBundle bundle = micro_denoiser();
    LatentDiscriminator ld = make_latent_discriminator(bundle.net);

    std::map<std::string, Tensor> gen;
    bundle.net.visit("", [&](const std::string& n, nn::Parameter& p) {
        gen[n] = p.value;
    });
    int shared = 0, fresh = 0;
    ld.visit("", [&](const std::string& n, nn::Parameter& p) {
        auto it = gen.find(n);
        if (it == gen.end()) {
            ++fresh;
            CHECK(n.find(".score") != std::string::npos);
            return;
        }
        ++shared;
        CHECK(same_bits(p.value, it->second));
    });
    CHECK(shared > 0);
    CHECK(fresh == 2);

    // decoder-side generator weights have no mirror in the critic
    CHECK(nn::param_count(ld) < nn::param_count(bundle.net));

    int B = 2;
    Var x = Var::leaf(rand_tensor({B, kLatentChannels, 4, 4}, 3));
    Var c = Var::leaf(Tensor::zeros({B, kCondDim}));
    Var s1 = ld.forward(x, {4.0f, 9.0f}, c);
    CHECK(s1.val().shape() == std::vector<int>{B, 1});
    Var s2 = ld.forward(x, {4.0f, 9.0f}, c);
    CHECK(same_bits(s1.val(), s2.val()));
}

TEST_CASE("critic validates its inputs") {
    LatentDiscriminator ld(micro_unet_config());
    Var ok = Var::leaf(rand_tensor({2, kLatentChannels, 4, 4}, 1));
    Var bad_ch = Var::leaf(rand_tensor({2, 4, 4, 4}, 1));
    Var c = Var::leaf(Tensor::zeros({2, kCondDim}));
    CHECK_THROWS(ld.forward(bad_ch, {1.0f, 2.0f}, c));
    CHECK_THROWS(ld.forward(ok, {1.0f}, c));
    CHECK_THROWS(ld.forward(ok, {1.0f, 2.0f},
                            Var::leaf(Tensor::zeros({1, kCondDim}))));
}

TEST_CASE("critic reals come only from the material half") {
    NoiseSchedule s = make_schedule(64);
    TrainBatch a = rand_batch(2, 5, 40);
    TrainBatch b = a;
    b.z0_tex = rand_tensor(b.z0_tex.shape(), 999);
    b.eps_tex = rand_tensor(b.eps_tex.shape(), 998);

    Tensor ra = real_latents(s, a);
    Tensor rb = real_latents(s, b);
    CHECK(same_bits(ra, rb));

    // both halves of the duplicated batch carry the same noised materials
    CHECK(ra.dim(0) == 4);
    Tensor want = forward_noise(s, a.z0_mat, 4, a.eps_mat);
    int64_t n = want.numel();
    for (int64_t i = 0; i < n; ++i) {
        CHECK(ra.data()[i] == want.data()[i]);
        CHECK(ra.data()[n + i] == want.data()[i]);
    }

    // at t = 1 the reals are the clean latents themselves
    a.t = 1;
    Tensor r1 = real_latents(s, a);
    for (int64_t i = 0; i < n; ++i)
        CHECK(r1.data()[i] == a.z0_mat.data()[i]);
}

TEST_CASE("zero adversarial weight reduces to the supervised step") {
    DenoiserBundle b1 = micro_denoiser();
    DenoiserBundle b2 = micro_denoiser();
    REQUIRE(nn::param_hash(b1.net) == nn::param_hash(b2.net));
    LatentDiscriminator ld = make_latent_discriminator(b1.net);
    uint64_t ld0 = nn::param_hash(ld);

    TrainBatch batch = rand_batch(2, 11, 50);
    Adam g1({1e-3f, 0.9f, 0.99f}), d1({1e-3f, 0.9f, 0.99f});
    SemisupStepMetrics m =
        semisup_train_step(b1, ld, batch, 0.15f, 0.0f, g1, d1);
    CHECK(m.d_loss == 0.0);
    CHECK(m.adv == 0.0);

    // supervised reference: same batch, same formula, fresh optimizer
    Adam g2({1e-3f, 0.9f, 0.99f});
    nn::zero_grads(b2.net);
    std::vector<float> ts(2, (float)batch.t);
    Var zt_mat = Var::leaf(
        forward_noise(b2.schedule, batch.z0_mat, batch.t, batch.eps_mat));
    Var pred_mat =
        b2.net.forward(zt_mat, ts, conditions_to_var(batch.cond_mat));
    Var zt_tex = Var::leaf(
        forward_noise(b2.schedule, batch.z0_tex, batch.t, batch.eps_tex));
    Var pred_tex =
        b2.net.forward(zt_tex, ts, conditions_to_var(batch.cond_tex));
    Var loss = supervised_loss(pred_mat, pred_tex, batch, 0.15f);
    nn::backward(loss);
    g2.step(b2.net);

    CHECK(nn::param_hash(b1.net) == nn::param_hash(b2.net));
    CHECK(nn::param_hash(ld) == ld0);
}

TEST_CASE("adversarial weight changes the update and trains the critic") {
    DenoiserBundle b1 = micro_denoiser();
    DenoiserBundle b2 = micro_denoiser();
    LatentDiscriminator ld1 = make_latent_discriminator(b1.net);
    LatentDiscriminator ld2 = make_latent_discriminator(b2.net);
    uint64_t ld_start = nn::param_hash(ld1);

    TrainBatch batch = rand_batch(2, 11, 50);
    Adam ga({1e-3f, 0.9f, 0.99f}), da({1e-3f, 0.9f, 0.99f});
    Adam gb({1e-3f, 0.9f, 0.99f}), db({1e-3f, 0.9f, 0.99f});
    SemisupStepMetrics ma =
        semisup_train_step(b1, ld1, batch, 0.15f, 0.1f, ga, da);
    SemisupStepMetrics mb =
        semisup_train_step(b2, ld2, batch, 0.15f, 0.0f, gb, db);

    CHECK(nn::param_hash(b1.net) != nn::param_hash(b2.net));
    CHECK(nn::param_hash(ld1) != ld_start);
    CHECK(nn::param_hash(ld2) == ld_start);
    CHECK(std::isfinite(ma.adv));
    CHECK(ma.d_loss >= 0.0);
    CHECK(std::isfinite(ma.ld_real));
    CHECK(std::isfinite(ma.ld_fake));
    CHECK(ma.sup_mat == mb.sup_mat);
    CHECK(ma.sup_tex == mb.sup_tex);
}

TEST_CASE("losses are invariant under batch permutation") {
    DenoiserBundle bundle = micro_denoiser();
    LatentDiscriminator ld = make_latent_discriminator(bundle.net);
    TrainBatch b = rand_batch(3, 23, 60);
    std::vector<int> perm = {2, 0, 1};
    TrainBatch p = permuted(b, perm);

    double s1 = supervised_loss(bundle, b, 0.15f).val().data()[0];
    double s2 = supervised_loss(bundle, p, 0.15f).val().data()[0];
    CHECK(s1 == doctest::Approx(s2).epsilon(1e-6));

    auto adv_of = [&](const TrainBatch& x) {
        std::vector<float> ts(3, (float)x.t);
        Var zt_m = Var::leaf(
            forward_noise(bundle.schedule, x.z0_mat, x.t, x.eps_mat));
        Var zt_x = Var::leaf(
            forward_noise(bundle.schedule, x.z0_tex, x.t, x.eps_tex));
        Var pm = bundle.net.forward(zt_m, ts, conditions_to_var(x.cond_mat));
        Var px = bundle.net.forward(zt_x, ts, conditions_to_var(x.cond_tex));
        std::vector<Condition> all = x.cond_mat;
        all.insert(all.end(), x.cond_tex.begin(), x.cond_tex.end());
        return adv_gen_loss(ld, denoised_prev(bundle.schedule, zt_m, pm, x.t),
                            denoised_prev(bundle.schedule, zt_x, px, x.t),
                            x.t, conditions_to_var(all))
            .val()
            .data()[0];
    };
    CHECK(adv_of(b) == doctest::Approx(adv_of(p)).epsilon(1e-6));

    auto d_of = [&](const TrainBatch& x) {
        Var real = Var::leaf(real_latents(bundle.schedule, x));
        Var fake = Var::leaf(rand_tensor({6, kLatentChannels, 4, 4}, 71));
        std::vector<Condition> dup = x.cond_mat;
        dup.insert(dup.end(), x.cond_mat.begin(), x.cond_mat.end());
        std::vector<Condition> all = x.cond_mat;
        all.insert(all.end(), x.cond_tex.begin(), x.cond_tex.end());
        return disc_loss(ld, real, fake, x.t, conditions_to_var(dup),
                         conditions_to_var(all))
            .val()
            .data()[0];
    };
    CHECK(d_of(b) == doctest::Approx(d_of(p)).epsilon(1e-6));
}

TEST_CASE("batch validation rejects malformed halves") {
    NoiseSchedule s = make_schedule(64);
    TrainBatch ok = rand_batch(2, 5, 80);
    CHECK_NOTHROW(validate_batch(s, ok));

    TrainBatch bad = ok;
    bad.z0_tex = rand_tensor({3, kLatentChannels, 4, 4}, 1);
    CHECK_THROWS_WITH(validate_batch(s, bad),
                      "batch halves must have equal shape");

    bad = ok;
    bad.eps_mat = rand_tensor({2, kLatentChannels, 2, 2}, 1);
    CHECK_THROWS(validate_batch(s, bad));

    bad = ok;
    bad.cond_tex.pop_back();
    CHECK_THROWS_WITH(validate_batch(s, bad),
                      "one condition per sample expected");

    bad = ok;
    bad.t = 0;
    CHECK_THROWS(validate_batch(s, bad));
    bad.t = 65;
    CHECK_THROWS(validate_batch(s, bad));
}

TEST_CASE("adversarial fine-tune runs end to end and repeats bitwise") {
    const Corpus& corpus = test_corpus();
    auto metrics_path =
        std::filesystem::temp_directory_path() /
        ("matdiff_semisup_metrics_" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(metrics_path);

    auto run = [&](bool keep_metrics) {
        DenoiserBundle bundle = micro_denoiser();
        bundle.latent_scale = 1.0f;
        LatentDiscriminator ld = make_latent_discriminator(bundle.net);
        SemisupTrainConfig cfg;
        cfg.steps = 5;
        cfg.batch = 2;
        cfg.adv_warmin = 2;
        cfg.seed = 13;
        if (keep_metrics) cfg.metrics_path = metrics_path;
        train_semisup(bundle, ld, corpus, cfg);
        CHECK(bundle.step == 5);
        return std::pair{nn::param_hash(bundle.net), nn::param_hash(ld)};
    };

    auto [g1, d1] = run(true);
    auto [g2, d2] = run(false);
    CHECK(g1 == g2);
    CHECK(d1 == d2);

    std::ifstream in(metrics_path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("step"));
        CHECK(j.contains("sup_mat"));
        CHECK(j.contains("sup_tex"));
        CHECK(j.contains("adv"));
        CHECK(j.contains("d_loss"));
        CHECK(j.contains("ld_real"));
        CHECK(j.contains("ld_fake"));
        CHECK(std::isfinite(j["sup_mat"].get<double>()));
        ++lines;
    }
    CHECK(lines == 5);
    std::filesystem::remove(metrics_path);

    // an untrained bundle is rejected outright
    DenoiserBundle fresh = micro_denoiser();
    LatentDiscriminator ld = make_latent_discriminator(fresh.net);
    SemisupTrainConfig cfg;
    cfg.steps = 1;
    CHECK_THROWS_WITH(train_semisup(fresh, ld, corpus, cfg),
                      "semisup: bundle not pre-trained (latent scale unset)");
}

TEST_CASE("non-finite losses abort with checkpoints") {
    const Corpus& corpus = test_corpus();
    DenoiserBundle bundle = micro_denoiser();
    bundle.latent_scale = 1.0f;
    LatentDiscriminator ld = make_latent_discriminator(bundle.net);
    bundle.net.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n.find(".stem.w") != std::string::npos)
            p.value[0] = std::nanf("");
    });

    auto abort_path =
        std::filesystem::temp_directory_path() /
        ("matdiff_semisup_abort_" + std::to_string(::getpid()) + ".ckpt");
    SemisupTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.abort_path = abort_path;
    CHECK_THROWS_AS(train_semisup(bundle, ld, corpus, cfg), NumericalAbort);
    CHECK(std::filesystem::exists(abort_path));
    auto ld_path = std::filesystem::path(abort_path.string() + ".ld");
    CHECK(std::filesystem::exists(ld_path));
    CHECK_NOTHROW(load_latent_discriminator(ld_path));
    std::filesystem::remove(abort_path);
    std::filesystem::remove(ld_path);
}

TEST_CASE("critic checkpoints round trip") {
    DenoiserBundle bundle = micro_denoiser();
    LatentDiscriminator ld = make_latent_discriminator(bundle.net);
    auto path = std::filesystem::temp_directory_path() /
                ("matdiff_critic_" + std::to_string(::getpid()) + ".ckpt");
    save_latent_discriminator(ld, path);
    LatentDiscriminator back = load_latent_discriminator(path);
    std::filesystem::remove(path);

    CHECK(back.config.widths == ld.config.widths);
    CHECK(back.config.groups == ld.config.groups);
    CHECK(nn::param_hash(back) == nn::param_hash(ld));

    Var x = Var::leaf(rand_tensor({2, kLatentChannels, 4, 4}, 5));
    Var c = Var::leaf(Tensor::zeros({2, kCondDim}));
    CHECK(same_bits(ld.forward(x, {3.0f, 7.0f}, c).val(),
                    back.forward(x, {3.0f, 7.0f}, c).val()));
}
