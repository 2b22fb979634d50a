#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>

#include "matdiff/lcm.hpp"
#include "matdiff/nn/optim.hpp"

using namespace matdiff;
using nn::Tensor;
using nn::Var;

namespace {

const Corpus& test_corpus() {
    static Corpus c = [] {
        auto root = std::filesystem::temp_directory_path() /
                    ("matdiff_lcm_corpus_" + std::to_string(::getpid()));
        std::filesystem::remove_all(root);
        CorpusConfig cfg;
        cfg.n_materials = 18;
        cfg.n_textures = 18;
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

DenoiserBundle micro_denoiser(int T = 64) {
    DenoiserConfig cfg;
    cfg.unet.widths = {16, 24, 32};
    cfg.unet.groups = 4;
    cfg.unet.seed = 21;
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

void perturb_head(UNet& net, uint64_t seed) {
    Rng rng(seed);
    net.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n.find(".head.") == std::string::npos) return;
        for (int64_t i = 0; i < p.value.numel(); ++i)
            p.value[i] += 0.05f * rng.normal();
    });
}

// wakes the zero-initialized convs so the embedding path reaches the output
void perturb_all(UNet& net, uint64_t seed) {
    Rng rng(seed);
    net.visit("", [&](const std::string&, nn::Parameter& p) {
        for (int64_t i = 0; i < p.value.numel(); ++i)
            p.value[i] += 0.05f * rng.normal();
    });
}

// Self-consistency along the teacher trajectory on held-out materials: hop
// z_hi to z_lo with one teacher ddim step, then compare the student's z0
// estimates at both points. Distillation trains exactly this agreement.
double trajectory_gap(ConsistencyBundle& cons, DenoiserBundle& teacher,
                      const Corpus& corpus, int t_hi, int t_lo) {
    nn::NoGradGuard ng;
    const NoiseSchedule& s = cons.student.schedule;
    auto held = corpus.material_split("test");
    int nb = std::min<int>(4, (int)held.size());
    double acc = 0.0;
    int64_t cnt = 0;
    Rng rng(77);
    Var uncond = conditions_to_var({Condition::none()});
    for (int i = 0; i < nb; ++i) {
        MaterialMaps m = corpus.load_maps(*held[i]);
        LatentGrid z =
            encode(cons.student.codec, m, EncoderKind::Single, 0, false);
        Tensor z0 = Tensor::zeros({1, kLatentChannels, 4, 4});
        for (int64_t j = 0; j < z0.numel(); ++j)
            z0[j] = z.values.data()[j] / cons.student.latent_scale;
        Tensor eps = Tensor::zeros(z0.shape());
        for (int64_t j = 0; j < eps.numel(); ++j) eps[j] = rng.normal();
        Tensor z_hi = forward_noise(s, z0, t_hi, eps);
        std::vector<float> ts(1, (float)t_hi);
        Tensor eps_hat =
            teacher.net.forward(Var::leaf(z_hi), ts, uncond).val();
        Tensor z_lo =
            ddim_step(z_hi, eps_hat, s.alpha_bar[t_hi], s.alpha_bar[t_lo]);
        Tensor fa = consistency_apply(cons.student.net, s, cons.t_min,
                                      Var::leaf(z_hi), t_hi, uncond, 3.0f)
                        .val();
        Tensor fb = consistency_apply(cons.student.net, s, cons.t_min,
                                      Var::leaf(z_lo), t_lo, uncond, 3.0f)
                        .val();
        for (int64_t j = 0; j < fa.numel(); ++j) {
            acc += std::fabs((double)fa.data()[j] - fb.data()[j]);
            ++cnt;
        }
    }
    return acc / (double)cnt;
}

} // namespace

TEST_CASE("consistency coefficients meet the boundary and stay bounded") {
    NoiseSchedule s = make_schedule(64);
    for (int t_min : {1, 4}) {
        CHECK(c_skip(s, t_min, t_min) == 1.0f);
        CHECK(c_out(s, t_min, t_min) == 0.0f);
        float prev_skip = 2.0f, prev_out = -1.0f;
        for (int t = t_min; t <= 64; ++t) {
            float cs = c_skip(s, t, t_min);
            float co = c_out(s, t, t_min);
            CHECK(cs > 0.0f);
            CHECK(cs <= 1.0f);
            CHECK(co >= 0.0f);
            CHECK(co < 1.0f);
            CHECK(cs < prev_skip);
            CHECK(co > prev_out);
            prev_skip = cs;
            prev_out = co;
        }
    }
    CHECK_THROWS(c_skip(s, 0, 1));
    CHECK_THROWS(c_skip(s, 3, 4));
    CHECK_THROWS(c_skip(s, 65, 1));
    CHECK_THROWS(c_out(s, 2, 0));
}

TEST_CASE("consistency function is the identity at the boundary") {
    NoiseSchedule s = make_schedule(64);
    UNetConfig uc;
    uc.widths = {16, 24, 32};
    uc.groups = 4;
    uc.seed = 21;
    UNet net(uc);
    Tensor z = rand_tensor({2, kLatentChannels, 4, 4}, 5);
    Var cond = conditions_to_var({Condition::none(), Condition::none()});

    for (int t_min : {1, 3})
        CHECK(same_bits(
            consistency_apply(net, s, t_min, Var::leaf(z), t_min, cond, 4.0f)
                .val(),
            z));

    // a zero head makes the raw net output vanish, leaving c_skip * z_t
    for (int t : {2, 17, 64}) {
        Tensor got =
            consistency_apply(net, s, 1, Var::leaf(z), t, cond, 4.0f).val();
        float cs = c_skip(s, t, 1);
        for (int64_t i = 0; i < z.numel(); ++i)
            CHECK(got.data()[i] == cs * z.data()[i]);
    }

    CHECK_THROWS(consistency_apply(net, s, 3, Var::leaf(z), 2, cond, 4.0f));
}

TEST_CASE("guidance scale feeds the network as an embedding") {
    NoiseSchedule s = make_schedule(64);
    UNetConfig uc;
    uc.widths = {16, 24, 32};
    uc.groups = 4;
    uc.seed = 21;
    UNet net(uc);
    perturb_all(net, 99);
    Tensor z = rand_tensor({1, kLatentChannels, 4, 4}, 6);
    Var cond = conditions_to_var({Condition::none()});

    Tensor lo = consistency_apply(net, s, 1, Var::leaf(z), 20, cond, 1.0f).val();
    Tensor hi = consistency_apply(net, s, 1, Var::leaf(z), 20, cond, 6.0f).val();
    Tensor lo2 =
        consistency_apply(net, s, 1, Var::leaf(z), 20, cond, 1.0f).val();
    CHECK(same_bits(lo, lo2));
    CHECK_FALSE(same_bits(lo, hi));

    std::vector<float> wrong = {1.0f, 2.0f};
    CHECK_THROWS(net.forward(Var::leaf(z), {20.0f}, cond, nullptr, &wrong));
}

TEST_CASE("ema target is a contraction toward the online weights") {
    DenoiserBundle a = micro_denoiser();
    ConsistencyBundle cons = make_consistency(std::move(a));
    CHECK(nn::param_hash(cons.target) == nn::param_hash(cons.student.net));
    CHECK(cons.hop() == 2);
    cons.skip = 5;
    CHECK(cons.hop() == 5);

    perturb_head(cons.student.net, 4);
    // mu = 1 keeps every value; compare as floats since adding a signed
    // zero can rewrite -0.0 bits without changing the value
    std::map<std::string, Tensor> snap;
    cons.target.visit("", [&](const std::string& n, nn::Parameter& p) {
        snap[n] = p.value.clone();
    });
    nn::ema_update(cons.student.net, cons.target, 1.0f);
    cons.target.visit("", [&](const std::string& n, nn::Parameter& p) {
        const Tensor& s = snap.at(n);
        for (int64_t i = 0; i < p.value.numel(); ++i)
            CHECK(p.value[i] == s.data()[i]);
    });

    // scalar hand case on one weight: 0.95 * e + 0.05 * o
    float e0 = 0.0f, o0 = 0.0f;
    cons.target.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n == ".head.w") e0 = p.value[0];
    });
    cons.student.net.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n == ".head.w") o0 = p.value[0];
    });
    nn::ema_update(cons.student.net, cons.target, 0.95f);
    cons.target.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n == ".head.w")
            CHECK(p.value[0] ==
                  doctest::Approx(0.95f * e0 + 0.05f * o0).epsilon(1e-6));
    });

    nn::ema_update(cons.student.net, cons.target, 0.0f);
    CHECK(nn::param_hash(cons.target) == nn::param_hash(cons.student.net));
}

TEST_CASE("distillation shrinks the self-consistency gap") {
    const Corpus& corpus = test_corpus();
    DenoiserBundle teacher = micro_denoiser();
    DiffusionTrainConfig tc;
    tc.steps = 400;
    tc.batch = 4;
    tc.lr = 2e-3f;
    tc.seed = 3;
    train_diffusion_supervised(teacher, corpus, tc);

    auto clone_path =
        std::filesystem::temp_directory_path() /
        ("matdiff_lcm_teacher_" + std::to_string(::getpid()) + ".ckpt");
    save_denoiser(teacher, clone_path);
    ConsistencyBundle cons = make_consistency(load_denoiser(clone_path));
    std::filesystem::remove(clone_path);

    double before_hi = trajectory_gap(cons, teacher, corpus, 48, 16);
    double before_lo = trajectory_gap(cons, teacher, corpus, 32, 8);
    uint64_t teacher_hash = nn::param_hash(teacher);

    double first_loss = -1.0;
    LcmTrainConfig lc;
    lc.steps = 800;
    lc.batch = 4;
    lc.lr = 1e-3f;
    lc.seed = 9;
    train_lcm(cons, teacher, corpus, lc, [&](const StepLog& l) {
        if (first_loss < 0.0) first_loss = l.values[0].second;
    });

    CHECK(first_loss >= 0.0);
    CHECK(first_loss < 10.0);
    CHECK(nn::param_hash(teacher) == teacher_hash);
    CHECK(cons.step == 800);

    CHECK(trajectory_gap(cons, teacher, corpus, 48, 16) < 0.8 * before_hi);
    CHECK(trajectory_gap(cons, teacher, corpus, 32, 8) < 0.8 * before_lo);
}

TEST_CASE("distillation mechanics are deterministic and guarded") {
    const Corpus& corpus = test_corpus();

    auto run = [&](int steps) {
        DenoiserBundle teacher = micro_denoiser();
        teacher.latent_scale = 1.0f;
        ConsistencyBundle cons = make_consistency(micro_denoiser());
        cons.student.latent_scale = 1.0f;
        LcmTrainConfig lc;
        lc.steps = steps;
        lc.batch = 2;
        lc.seed = 15;
        train_lcm(cons, teacher, corpus, lc);
        return std::pair{nn::param_hash(cons.student.net),
                         nn::param_hash(cons.target)};
    };
    auto [s1, t1] = run(3);
    auto [s2, t2] = run(3);
    CHECK(s1 == s2);
    CHECK(t1 == t2);

    // the student moves and the ema target trails it
    ConsistencyBundle cons = make_consistency(micro_denoiser());
    cons.student.latent_scale = 1.0f;
    uint64_t start = nn::param_hash(cons.student.net);
    DenoiserBundle teacher = micro_denoiser();
    teacher.latent_scale = 1.0f;
    LcmTrainConfig lc;
    lc.steps = 3;
    lc.batch = 2;
    lc.seed = 15;
    train_lcm(cons, teacher, corpus, lc);
    CHECK(nn::param_hash(cons.student.net) != start);
    CHECK(nn::param_hash(cons.target) != start);
    CHECK(nn::param_hash(cons.target) != nn::param_hash(cons.student.net));

    // config guards
    ConsistencyBundle bad = make_consistency(micro_denoiser());
    bad.student.latent_scale = 1.0f;
    LcmTrainConfig guard;
    guard.steps = 1;
    guard.mu = 1.5f;
    CHECK_THROWS_WITH(train_lcm(bad, teacher, corpus, guard),
                      "lcm: mu outside [0, 1]");
    bad.t_min = 63;
    guard.mu = 0.95f;
    CHECK_THROWS_WITH(train_lcm(bad, teacher, corpus, guard),
                      "lcm: hop does not fit inside [t_min, T]");
    bad.t_min = 1;
    DenoiserBundle other_T = micro_denoiser(32);
    other_T.latent_scale = 1.0f;
    CHECK_THROWS_WITH(train_lcm(bad, other_T, corpus, guard),
                      "lcm: teacher and student schedules differ");

    ConsistencyBundle fresh = make_consistency(micro_denoiser());
    CHECK_THROWS_WITH(train_lcm(fresh, teacher, corpus, guard),
                      "lcm: bundle not pre-trained (latent scale unset)");

    // a poisoned student aborts with a loadable checkpoint
    ConsistencyBundle sick = make_consistency(micro_denoiser());
    sick.student.latent_scale = 1.0f;
    sick.student.net.visit("", [&](const std::string& n, nn::Parameter& p) {
        if (n.find(".stem.w") != std::string::npos)
            p.value[0] = std::nanf("");
    });
    auto abort_path =
        std::filesystem::temp_directory_path() /
        ("matdiff_lcm_abort_" + std::to_string(::getpid()) + ".ckpt");
    LcmTrainConfig ac;
    ac.steps = 2;
    ac.batch = 2;
    ac.abort_path = abort_path;
    CHECK_THROWS_AS(train_lcm(sick, teacher, corpus, ac), NumericalAbort);
    CHECK(std::filesystem::exists(abort_path));
    CHECK_NOTHROW(load_consistency(abort_path));
    std::filesystem::remove(abort_path);
}

TEST_CASE("few-step sampling is deterministic over the sub-schedule") {
    ConsistencyBundle cons = make_consistency(micro_denoiser());
    cons.student.latent_scale = 1.0f;

    LcmSampleConfig sc;
    sc.seed = 31;
    SampleResult a = lcm_sample(cons, embed_text("rust metal"), sc);
    SampleResult b = lcm_sample(cons, embed_text("rust metal"), sc);
    CHECK(a.timesteps == std::vector<int>{64, 48, 32, 16});
    CHECK(same_bits(a.z0, b.z0));
    CHECK(a.maps.check());

    sc.seed = 32;
    SampleResult c = lcm_sample(cons, embed_text("rust metal"), sc);
    CHECK_FALSE(same_bits(a.z0, c.z0));

    sc.seed = 31;
    sc.n_steps = 1;
    SampleResult one = lcm_sample(cons, embed_text("rust metal"), sc);
    CHECK(one.timesteps == std::vector<int>{64});

    sc.n_steps = 0;
    CHECK_THROWS(lcm_sample(cons, Condition::none(), sc));
    sc.n_steps = 65;
    CHECK_THROWS(lcm_sample(cons, Condition::none(), sc));

    sc.n_steps = 4;
    sc.rolling = "feature";
    SampleResult f1 = lcm_sample(cons, Condition::none(), sc);
    SampleResult f2 = lcm_sample(cons, Condition::none(), sc);
    CHECK(f1.plans.size() == 4);
    CHECK(same_bits(f1.z0, f2.z0));

    sc.rolling = "noise";
    SampleResult n1 = lcm_sample(cons, Condition::none(), sc);
    SampleResult n2 = lcm_sample(cons, Condition::none(), sc);
    CHECK(same_bits(n1.z0, n2.z0));
    CHECK(n1.plans.empty());

    sc.rolling = "diagonal";
    CHECK_THROWS(lcm_sample(cons, Condition::none(), sc));
}

TEST_CASE("consistency checkpoints round trip") {
    ConsistencyBundle cons = make_consistency(micro_denoiser());
    cons.student.latent_scale = 1.25f;
    cons.omega_lo = 2.0f;
    cons.omega_hi = 5.0f;
    cons.skip = 3;
    cons.t_min = 2;
    cons.step = 17;
    perturb_head(cons.student.net, 8);

    auto path = std::filesystem::temp_directory_path() /
                ("matdiff_lcm_ckpt_" + std::to_string(::getpid()) + ".ckpt");
    save_consistency(cons, path);
    ConsistencyBundle back = load_consistency(path);

    CHECK(back.omega_lo == 2.0f);
    CHECK(back.omega_hi == 5.0f);
    CHECK(back.skip == 3);
    CHECK(back.t_min == 2);
    CHECK(back.step == 17);
    CHECK(back.student.latent_scale == 1.25f);
    CHECK(nn::param_hash(back.student.net) ==
          nn::param_hash(cons.student.net));
    CHECK(nn::param_hash(back.target) == nn::param_hash(cons.target));

    LcmSampleConfig sc;
    sc.seed = 5;
    CHECK(same_bits(lcm_sample(cons, embed_text("brick"), sc).z0,
                    lcm_sample(back, embed_text("brick"), sc).z0));

    // the same container also opens as a plain denoiser (the student half)
    DenoiserBundle student = load_denoiser(path);
    CHECK(nn::param_hash(student.net) == nn::param_hash(cons.student.net));
    std::filesystem::remove(path);

    // a plain denoiser checkpoint is not a consistency bundle
    DenoiserBundle plain = micro_denoiser();
    save_denoiser(plain, path);
    CHECK_THROWS(load_consistency(path));
    std::filesystem::remove(path);
}
