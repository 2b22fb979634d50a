#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "matdiff/svbrdf.hpp"
#include "matdiff/rng.hpp"

using namespace matdiff;

namespace {

constexpr double kPi = 3.14159265358979323846;

Grid uniform_grid(int c, int h, int w, float v) { return Grid(c, h, w, v); }

// procedural but valid material: smooth height, derived normals
MaterialMaps test_material(int R, uint64_t seed) {
    Rng rng(seed);
    float phase = (float)rng.uniform(0.0, kPi);
    float blue = (float)rng.uniform(0.2, 0.8);
    MaterialMaps m;
    m.basecolor = Grid(3, R, R);
    m.height = Grid(1, R, R);
    m.roughness = Grid(1, R, R);
    m.metalness = Grid(1, R, R);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            float u = (float)x / R, v = (float)y / R;
            m.basecolor.at(0, y, x) = 0.2f + 0.6f * u;
            m.basecolor.at(1, y, x) = 0.3f + 0.4f * v;
            m.basecolor.at(2, y, x) = blue;
            m.height.at(0, y, x) =
                0.5f + 0.25f * std::sin(2.0f * (float)kPi * u + phase) *
                           std::cos(2.0f * (float)kPi * v);
            m.roughness.at(0, y, x) = 0.3f + 0.5f * v;
            m.metalness.at(0, y, x) = x < R / 2 ? 0.0f : 1.0f;
        }
    m.normal = encode_normal(height_to_normal(m.height, 2.0f));
    m.tags = {"test"};
    return m;
}

// scalar reference for a single pixel of the render model, independent code path
double render_pixel_ref(double n[3], double bc, double metal, double rough,
                        double l[3], double v[3], double intensity,
                        double ambient, double exposure) {
    auto dot3 = [](const double* a, const double* b) {
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    };
    double h[3] = {l[0] + v[0], l[1] + v[1], l[2] + v[2]};
    double hl = std::sqrt(dot3(h, h));
    for (double& c : h) c /= hl;
    double out = ambient * bc;
    double nl = dot3(n, l), nv = dot3(n, v);
    if (nl > 0.0) {
        double a = rough * rough, a2 = a * a;
        double nh = std::max(dot3(n, h), 0.0);
        double den = nh * nh * (a2 - 1.0) + 1.0;
        double D = a2 / (kPi * den * den);
        auto lam = [&](double mu) {
            return 0.5 * (-1.0 + std::sqrt(1.0 + a2 * (1.0 - mu * mu) / (mu * mu)));
        };
        double G = nv > 1e-9 ? 1.0 / (1.0 + lam(nl) + lam(nv)) : 0.0;
        double vh = std::max(dot3(v, h), 0.0);
        double fres = std::pow(1.0 - vh, 5.0);
        double f0 = 0.04 + (bc - 0.04) * metal;
        double F = f0 + (1.0 - f0) * fres;
        double spec = nv > 1e-9 ? D * F * G / (4.0 * nl * nv) : 0.0;
        out += intensity * nl * ((1.0 - metal) * bc / kPi + spec);
    }
    return std::min(1.0, std::max(0.0, exposure * out));
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() /
             ("matdiff_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("normal encode/decode round trip") {
    Grid n(3, 4, 4);
    Rng rng(7);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double a = rng.uniform(0.0, 2.0 * kPi), z = rng.uniform(0.4, 1.0);
            double r = std::sqrt(1.0 - z * z);
            n.at(0, y, x) = (float)(r * std::cos(a));
            n.at(1, y, x) = (float)(r * std::sin(a));
            n.at(2, y, x) = (float)z;
        }
    Grid enc = encode_normal(n);
    for (float v : enc.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    int flagged = -1;
    Grid dec = decode_normal(enc, &flagged);
    CHECK(flagged == 0);
    for (size_t i = 0; i < n.data.size(); ++i)
        CHECK(dec.data[i] == doctest::Approx(n.data[i]).epsilon(1e-5));

    // axis vectors map to exact channel values
    Grid up(3, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) up.at(2, y, x) = 1.0f;
    Grid enc_up = encode_normal(up);
    CHECK(enc_up.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(enc_up.at(1, 0, 0) == doctest::Approx(0.5));
    CHECK(enc_up.at(2, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("decode_normal flags zero-length vectors and substitutes +z") {
    Grid rgb(3, 2, 2, 0.5f); // all-encoded-zero vectors
    int flagged = 0;
    Grid dec = decode_normal(rgb, &flagged);
    CHECK(flagged == 4);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            CHECK(dec.at(0, y, x) == 0.0f);
            CHECK(dec.at(1, y, x) == 0.0f);
            CHECK(dec.at(2, y, x) == 1.0f);
        }
    // non-unit but nonzero input is renormalized, not flagged
    Grid rgb2(3, 2, 2, 0.5f);
    rgb2.at(0, 0, 0) = 0.6f; // vector (0.2, 0, 0)
    Grid dec2 = decode_normal(rgb2, &flagged);
    CHECK(flagged == 3);
    CHECK(dec2.at(0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("height_to_normal: constant height gives +z everywhere") {
    Grid h = uniform_grid(1, 8, 8, 0.37f);
    Grid n = height_to_normal(h, 3.0f);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(n.at(0, y, x) == 0.0f);
            CHECK(n.at(1, y, x) == 0.0f);
            CHECK(n.at(2, y, x) == 1.0f);
        }
}

TEST_CASE("height_to_normal matches central differences on a linear ramp") {
    // height = k*x away from the wrap column: interior slope dx = k exactly
    // (k is a power of two, so the float products are exact)
    int R = 16;
    float k = 0.015625f, s = 2.5f;
    Grid h(1, R, R);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) h.at(0, y, x) = k * x;
    Grid n = height_to_normal(h, s);
    for (int y = 0; y < R; ++y)
        for (int x = 2; x < R - 2; ++x) {
            double ex = -s * k, ez = 1.0;
            double len = std::sqrt(ex * ex + ez * ez);
            CHECK(n.at(0, y, x) == doctest::Approx(ex / len).epsilon(1e-6));
            CHECK(n.at(1, y, x) == doctest::Approx(0.0).epsilon(1e-6));
            CHECK(n.at(2, y, x) == doctest::Approx(ez / len).epsilon(1e-6));
        }
}

TEST_CASE("height_to_normal is equivariant under circular shifts") {
    Rng rng(11);
    Grid h(1, 12, 12);
    for (float& v : h.data) v = (float)rng.uniform(0.0, 1.0);
    Grid n = height_to_normal(h, 4.0f);
    for (auto [dx, dy] : {std::pair{3, 5}, {7, 1}, {11, 11}}) {
        Grid ns = height_to_normal(roll2d(h, dx, dy), 4.0f);
        Grid nr = roll2d(n, dx, dy);
        CHECK(rmse(ns, nr) == 0.0);
    }
}

TEST_CASE("render: zero intensity leaves only clamped ambient basecolor") {
    MaterialMaps m = test_material(32, 3);
    RenderConfig cfg;
    cfg.light_intensity = 0.0f;
    cfg.ambient = 0.25f;
    Grid img = render(m, cfg);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                CHECK(img.at(c, y, x) ==
                      doctest::Approx(0.25f * m.basecolor.at(c, y, x))
                          .epsilon(1e-6));
}

TEST_CASE("render matches the scalar per-pixel reference on uniform maps") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        Rng rng(seed);
        float bc = (float)rng.uniform(0.1, 0.9);
        float rough = (float)rng.uniform(0.1, 0.95);
        float metal = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        MaterialMaps m;
        m.basecolor = uniform_grid(3, 32, 32, bc);
        m.normal = encode_normal(uniform_grid(3, 32, 32, 0.0f));
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) m.normal.at(2, y, x) = 1.0f;
        m.height = uniform_grid(1, 32, 32, 0.5f);
        m.roughness = uniform_grid(1, 32, 32, rough);
        m.metalness = uniform_grid(1, 32, 32, metal);

        RenderConfig cfg = random_light(rng);
        Grid img = render(m, cfg);

        double n[3] = {0.0, 0.0, 1.0};
        double l[3] = {cfg.light_dir[0], cfg.light_dir[1], cfg.light_dir[2]};
        double v[3] = {cfg.view_dir[0], cfg.view_dir[1], cfg.view_dir[2]};
        double want = render_pixel_ref(n, bc, metal, rough, l, v,
                                       cfg.light_intensity, cfg.ambient,
                                       cfg.exposure);
        CHECK(img.at(0, 5, 9) == doctest::Approx(want).epsilon(1e-6));
        CHECK(img.at(1, 20, 3) == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("render: grazing light below the horizon contributes nothing") {
    MaterialMaps m = test_material(32, 5);
    // normals tilted +x; light from -x at a shallow angle so n.l < 0
    Grid n(3, 32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            n.at(0, y, x) = 0.8f;
            n.at(2, y, x) = 0.6f;
        }
    m.normal = encode_normal(n);
    RenderConfig cfg;
    cfg.light_dir = {-0.8f, 0.0f, 0.6f}; // n.l = -0.28
    cfg.ambient = 0.0f;
    Grid img = render(m, cfg);
    for (float v : img.data) CHECK(v == 0.0f);
}

TEST_CASE("render does not read the height map") {
    MaterialMaps m = test_material(32, 9);
    RenderConfig cfg;
    cfg.light_dir = {0.3f, -0.2f, (float)std::sqrt(1.0 - 0.09 - 0.04)};
    Grid a = render(m, cfg);
    for (float& v : m.height.data) v = 1.0f - v;
    Grid b = render(m, cfg);
    CHECK(rmse(a, b) == 0.0);
}

TEST_CASE("render commutes with circular shifts of the maps") {
    MaterialMaps m = test_material(32, 13);
    RenderConfig cfg;
    cfg.light_dir = {0.4f, 0.1f, (float)std::sqrt(1.0 - 0.16 - 0.01)};
    Grid img = render(m, cfg);
    MaterialMaps ms;
    ms.basecolor = roll2d(m.basecolor, 5, 11);
    ms.normal = roll2d(m.normal, 5, 11);
    ms.height = roll2d(m.height, 5, 11);
    ms.roughness = roll2d(m.roughness, 5, 11);
    ms.metalness = roll2d(m.metalness, 5, 11);
    Grid imgs = render(ms, cfg);
    CHECK(rmse(imgs, roll2d(img, 5, 11)) == 0.0);
}

TEST_CASE("render brightness grows with light intensity before clamping") {
    MaterialMaps m;
    m.basecolor = uniform_grid(3, 32, 32, 0.4f);
    m.normal = encode_normal(uniform_grid(3, 32, 32, 0.0f));
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) m.normal.at(2, y, x) = 1.0f;
    m.height = uniform_grid(1, 32, 32, 0.5f);
    m.roughness = uniform_grid(1, 32, 32, 0.8f);
    m.metalness = uniform_grid(1, 32, 32, 0.0f);
    RenderConfig cfg;
    cfg.ambient = 0.05f;
    double prev = -1.0;
    for (float it : {0.2f, 0.6f, 1.2f, 2.0f}) {
        cfg.light_intensity = it;
        double v = render(m, cfg).at(0, 0, 0);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("rendering_loss: identical inputs give exactly zero") {
    MaterialMaps m = test_material(32, 21);
    CHECK(rendering_loss(m, m, 3, 77) == 0.0);
}

TEST_CASE("rendering_loss is symmetric and seed-deterministic") {
    MaterialMaps a = test_material(32, 22);
    MaterialMaps b = test_material(32, 23);
    double ab = rendering_loss(a, b, 4, 123);
    CHECK(ab == rendering_loss(b, a, 4, 123));
    CHECK(ab == rendering_loss(a, b, 4, 123));
    CHECK(ab != rendering_loss(a, b, 4, 124));
    CHECK(ab > 0.0);
}

TEST_CASE("rendering_loss: ambient-only closed form for basecolor offset") {
    // flat normals, light off: render = ambient * basecolor, so the loss
    // must equal ambient * delta exactly
    MaterialMaps a, b;
    a.basecolor = uniform_grid(3, 32, 32, 0.5f);
    b.basecolor = uniform_grid(3, 32, 32, 0.7f);
    for (MaterialMaps* m : {&a, &b}) {
        m->normal = encode_normal(uniform_grid(3, 32, 32, 0.0f));
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) m->normal.at(2, y, x) = 1.0f;
        m->height = uniform_grid(1, 32, 32, 0.5f);
        m->roughness = uniform_grid(1, 32, 32, 0.5f);
        m->metalness = uniform_grid(1, 32, 32, 0.0f);
    }
    RenderConfig cfg;
    cfg.light_intensity = 0.0f;
    cfg.ambient = 0.2f;
    double loss = rendering_loss_with(a, b, std::vector<RenderConfig>{cfg});
    CHECK(loss == doctest::Approx(0.2 * 0.2).epsilon(1e-6));
}

TEST_CASE("save/load round trip stays within quantization error") {
    MaterialMaps m = test_material(32, 31);
    m.tags = {"bricks", "red"};
    auto dir = temp_dir("saveload");
    save_material(m, dir, "a red brick wall");
    std::string prompt;
    MaterialMaps r = load_material(dir, &prompt);
    CHECK(prompt == "a red brick wall");
    CHECK(r.tags == m.tags);
    const double q = 0.5 / 65535.0 + 1e-9;
    auto max_abs = [](const Grid& a, const Grid& b) {
        double worst = 0.0;
        for (size_t i = 0; i < a.data.size(); ++i)
            worst = std::max(worst, std::fabs((double)a.data[i] - b.data[i]));
        return worst;
    };
    CHECK(max_abs(r.basecolor, m.basecolor) <= q);
    CHECK(max_abs(r.normal, m.normal) <= q);
    CHECK(max_abs(r.height, m.height) <= q);
    CHECK(max_abs(r.roughness, m.roughness) <= q);
    CHECK(max_abs(r.metalness, m.metalness) <= q);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_material names the first missing map") {
    MaterialMaps m = test_material(32, 33);
    auto dir = temp_dir("missing");
    save_material(m, dir);
    std::filesystem::remove(dir / "roughness.png");
    CHECK_THROWS_WITH(load_material(dir), "missing map: roughness");
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_material rejects a manifest resolution mismatch") {
    MaterialMaps m = test_material(32, 34);
    auto dir = temp_dir("badres");
    save_material(m, dir);
    {
        std::ofstream f(dir / "manifest.json");
        f << "{\"resolution\": [64, 64], \"tags\": [], \"prompt\": \"\"}\n";
    }
    CHECK_THROWS(load_material(dir));
    std::filesystem::remove_all(dir);
}

TEST_CASE("maps_to_stack/stack_to_maps round trip on a valid material") {
    MaterialMaps m = test_material(32, 41);
    nn::Tensor stack = maps_to_stack(m);
    CHECK(stack.dim(0) == kStackChannels);
    CHECK(stack.dim(1) == 32);
    CHECK(stack.dim(2) == 32);
    // slice layout
    CHECK(stack.data()[0] == m.basecolor.at(0, 0, 0));
    CHECK(stack.data()[(int64_t)6 * 32 * 32] == m.height.at(0, 0, 0));
    CHECK(stack.data()[(int64_t)8 * 32 * 32] == m.metalness.at(0, 0, 0));
    MaterialMaps r = stack_to_maps(stack);
    CHECK(rmse(r.basecolor, m.basecolor) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rmse(r.height, m.height) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rmse(r.roughness, m.roughness) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rmse(r.metalness, m.metalness) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rmse(r.normal, m.normal) < 1e-5);
    r.validate();
}

TEST_CASE("stack_to_maps clamps ranges and renormalizes normals") {
    nn::Tensor stack = nn::Tensor::zeros({kStackChannels, 32, 32});
    for (int64_t i = 0; i < stack.numel(); ++i)
        stack[i] = 1.7f; // way out of range
    MaterialMaps m = stack_to_maps(stack);
    std::string why;
    CHECK(m.check(&why));
}

TEST_CASE("validate rejects broken materials with a reason") {
    MaterialMaps m = test_material(32, 51);
    std::string why;
    CHECK(m.check(&why));

    MaterialMaps bad = m;
    bad.basecolor.at(0, 3, 3) = 1.5f;
    CHECK_FALSE(bad.check(&why));
    CHECK(why == "values out of [0,1]");

    bad = m;
    bad.normal.at(0, 2, 2) = 0.9f; // breaks unit length
    CHECK_FALSE(bad.check(&why));
    CHECK(why == "decoded normal not unit length");

    bad = m;
    bad.roughness = Grid(1, 16, 16, 0.5f);
    CHECK_FALSE(bad.check(&why));
    CHECK(why == "resolution mismatch");

    MaterialMaps tiny = test_material(16, 52);
    CHECK_FALSE(tiny.check(&why));
    CHECK(why == "resolution must be a power of two >= 32");
    CHECK_THROWS(tiny.validate());
}

TEST_CASE("RenderConfig::validate enforces direction and range rules") {
    RenderConfig ok;
    ok.validate();
    RenderConfig bad = ok;
    bad.light_dir = {0.0f, 0.0f, -1.0f};
    CHECK_THROWS(bad.validate());
    bad = ok;
    bad.light_dir = {0.5f, 0.5f, 0.5f};
    CHECK_THROWS(bad.validate());
    bad = ok;
    bad.light_intensity = -1.0f;
    CHECK_THROWS(bad.validate());
    bad = ok;
    bad.ambient = 1.5f;
    CHECK_THROWS(bad.validate());
    bad = ok;
    bad.exposure = 0.0f;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("random_light samples stay inside the documented ranges") {
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        RenderConfig cfg = random_light(rng);
        cfg.validate();
        CHECK(cfg.light_dir[2] >= 0.3f);
        CHECK(cfg.light_intensity >= 0.5f);
        CHECK(cfg.light_intensity <= 3.0f);
        CHECK(cfg.ambient >= 0.05f);
        CHECK(cfg.ambient <= 0.3f);
    }
}
