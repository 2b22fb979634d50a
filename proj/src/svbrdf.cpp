#include "matdiff/svbrdf.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "matdiff/png16.hpp"

namespace matdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

bool grid_in_range(const Grid& g, float lo, float hi, float tol) {
    for (float v : g.data)
        if (v < lo - tol || v > hi + tol) return false;
    return true;
}

struct Vec3 {
    double x, y, z;
};

Vec3 normalize(Vec3 v) {
    double len = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (len < 1e-12) return {0.0, 0.0, 1.0};
    return {v.x / len, v.y / len, v.z / len};
}

double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Smith height-correlated GGX lambda
double smith_lambda(double mu, double a2) {
    double mu2 = mu * mu;
    return 0.5 * (-1.0 + std::sqrt(1.0 + a2 * (1.0 - mu2) / mu2));
}

} // namespace

bool MaterialMaps::check(std::string* why) const {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    int H = basecolor.height, W = basecolor.width;
    if (basecolor.channels != 3 || normal.channels != 3 ||
        height.channels != 1 || roughness.channels != 1 ||
        metalness.channels != 1)
        return fail("wrong channel counts");
    for (const Grid* g : {&normal, &height, &roughness, &metalness})
        if (g->height != H || g->width != W) return fail("resolution mismatch");
    if (!is_pow2(H) || !is_pow2(W) || H < 32 || W < 32)
        return fail("resolution must be a power of two >= 32");
    const float tol = 1e-6f;
    for (const Grid* g :
         {&basecolor, &normal, &height, &roughness, &metalness})
        if (!grid_in_range(*g, 0.0f, 1.0f, tol)) return fail("values out of [0,1]");
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double nx = 2.0 * normal.at(0, y, x) - 1.0;
            double ny = 2.0 * normal.at(1, y, x) - 1.0;
            double nz = 2.0 * normal.at(2, y, x) - 1.0;
            double len = std::sqrt(nx * nx + ny * ny + nz * nz);
            if (std::fabs(len - 1.0) > 1e-3)
                return fail("decoded normal not unit length");
        }
    return true;
}

void MaterialMaps::validate() const {
    std::string why;
    if (!check(&why)) throw std::runtime_error("invalid material: " + why);
}

void RenderConfig::validate() const {
    auto unit = [](const std::array<float, 3>& v) {
        double len = std::sqrt((double)v[0] * v[0] + (double)v[1] * v[1] +
                               (double)v[2] * v[2]);
        return std::fabs(len - 1.0) < 1e-4;
    };
    if (!unit(light_dir) || light_dir[2] <= 0.0f)
        throw std::runtime_error("light_dir must be unit with positive z");
    if (!unit(view_dir) || view_dir[2] <= 0.0f)
        throw std::runtime_error("view_dir must be unit with positive z");
    if (light_intensity < 0.0f) throw std::runtime_error("negative intensity");
    if (ambient < 0.0f || ambient > 1.0f) throw std::runtime_error("bad ambient");
    if (exposure <= 0.0f) throw std::runtime_error("exposure must be positive");
}

Grid encode_normal(const Grid& n) {
    Grid out(3, n.height, n.width);
    for (size_t i = 0; i < n.data.size(); ++i)
        out.data[i] = 0.5f * (n.data[i] + 1.0f);
    return out;
}

Grid decode_normal(const Grid& rgb, int* flagged) {
    Grid out(3, rgb.height, rgb.width);
    int bad = 0;
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            double nx = 2.0 * rgb.at(0, y, x) - 1.0;
            double ny = 2.0 * rgb.at(1, y, x) - 1.0;
            double nz = 2.0 * rgb.at(2, y, x) - 1.0;
            double len = std::sqrt(nx * nx + ny * ny + nz * nz);
            if (len < 1e-6) {
                nx = 0.0;
                ny = 0.0;
                nz = 1.0;
                ++bad;
            } else {
                nx /= len;
                ny /= len;
                nz /= len;
            }
            out.at(0, y, x) = (float)nx;
            out.at(1, y, x) = (float)ny;
            out.at(2, y, x) = (float)nz;
        }
    if (flagged) *flagged = bad;
    return out;
}

Grid height_to_normal(const Grid& height, float strength) {
    int H = height.height, W = height.width;
    Grid out(3, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double dx = 0.5 * ((double)height.at(0, y, wrap_index(x + 1, W)) -
                               height.at(0, y, wrap_index(x - 1, W)));
            double dy = 0.5 * ((double)height.at(0, wrap_index(y + 1, H), x) -
                               height.at(0, wrap_index(y - 1, H), x));
            Vec3 n = normalize({-strength * dx, -strength * dy, 1.0});
            out.at(0, y, x) = (float)n.x;
            out.at(1, y, x) = (float)n.y;
            out.at(2, y, x) = (float)n.z;
        }
    return out;
}

Grid render(const MaterialMaps& maps, const RenderConfig& cfg) {
    int H = maps.height_px(), W = maps.width_px();
    Grid out(3, H, W);
    Vec3 l{cfg.light_dir[0], cfg.light_dir[1], cfg.light_dir[2]};
    Vec3 v{cfg.view_dir[0], cfg.view_dir[1], cfg.view_dir[2]};
    Vec3 h = normalize({l.x + v.x, l.y + v.y, l.z + v.z});
    double intensity = cfg.light_intensity;
    double ambient = cfg.ambient;
    double exposure = cfg.exposure;

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double nx = 2.0 * maps.normal.at(0, y, x) - 1.0;
            double ny = 2.0 * maps.normal.at(1, y, x) - 1.0;
            double nz = 2.0 * maps.normal.at(2, y, x) - 1.0;
            Vec3 n = normalize({nx, ny, nz});

            double bc[3] = {maps.basecolor.at(0, y, x),
                            maps.basecolor.at(1, y, x),
                            maps.basecolor.at(2, y, x)};
            double metal = maps.metalness.at(0, y, x);
            double rough = maps.roughness.at(0, y, x);

            double nl = dot(n, l);
            double nv = dot(n, v);

            double rgb[3];
            for (int c = 0; c < 3; ++c) rgb[c] = ambient * bc[c];

            if (nl > 0.0) {
                double a = rough * rough;
                double a2 = a * a;
                double nh = std::max(dot(n, h), 0.0);
                double denom = nh * nh * (a2 - 1.0) + 1.0;
                double D = a2 / (kPi * denom * denom);
                double G = 0.0;
                if (nv > 1e-9)
                    G = 1.0 /
                        (1.0 + smith_lambda(nl, a2) + smith_lambda(nv, a2));
                double vh = std::max(dot(v, h), 0.0);
                double fres = std::pow(1.0 - vh, 5.0);
                for (int c = 0; c < 3; ++c) {
                    double f0 = 0.04 + (bc[c] - 0.04) * metal;
                    double F = f0 + (1.0 - f0) * fres;
                    double diffuse = (1.0 - metal) * bc[c] / kPi;
                    double spec = 0.0;
                    if (nv > 1e-9) spec = D * F * G / (4.0 * nl * nv);
                    rgb[c] += intensity * nl * (diffuse + spec);
                }
            }
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) =
                    (float)std::min(1.0, std::max(0.0, exposure * rgb[c]));
        }
    return out;
}

RenderConfig random_light(Rng& rng) {
    RenderConfig cfg;
    double z = rng.uniform(0.3, 1.0);
    double phi = rng.uniform(0.0, 2.0 * kPi);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    cfg.light_dir = {(float)(r * std::cos(phi)), (float)(r * std::sin(phi)),
                     (float)z};
    cfg.light_intensity = (float)rng.uniform(0.5, 3.0);
    cfg.ambient = (float)rng.uniform(0.05, 0.3);
    cfg.view_dir = {0.0f, 0.0f, 1.0f};
    cfg.exposure = 1.0f;
    return cfg;
}

double rendering_loss_with(const MaterialMaps& a, const MaterialMaps& b,
                           std::span<const RenderConfig> lights) {
    if (a.height_px() != b.height_px() || a.width_px() != b.width_px())
        throw std::runtime_error("rendering_loss: resolution mismatch");
    double total = 0.0;
    for (const RenderConfig& cfg : lights) {
        Grid ra = render(a, cfg);
        Grid rb = render(b, cfg);
        double s = 0.0;
        for (size_t i = 0; i < ra.data.size(); ++i)
            s += std::fabs((double)ra.data[i] - rb.data[i]);
        total += s / (double)ra.data.size();
    }
    return lights.empty() ? 0.0 : total / (double)lights.size();
}

double rendering_loss(const MaterialMaps& a, const MaterialMaps& b,
                      int n_lights, uint64_t seed) {
    if (n_lights < 1) throw std::runtime_error("rendering_loss: n_lights >= 1");
    Rng rng(seed);
    std::vector<RenderConfig> lights;
    lights.reserve(n_lights);
    for (int i = 0; i < n_lights; ++i) lights.push_back(random_light(rng));
    return rendering_loss_with(a, b, lights);
}

void save_material(const MaterialMaps& maps, const std::filesystem::path& dir,
                   const std::string& prompt) {
    std::filesystem::create_directories(dir);
    write_png16(dir / "basecolor.png", maps.basecolor);
    write_png16(dir / "normal.png", maps.normal);
    write_png16(dir / "height.png", maps.height);
    write_png16(dir / "roughness.png", maps.roughness);
    write_png16(dir / "metallic.png", maps.metalness);
    nlohmann::json manifest;
    manifest["resolution"] = {maps.height_px(), maps.width_px()};
    manifest["tags"] = maps.tags;
    manifest["prompt"] = prompt;
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << "\n";
}

MaterialMaps load_material(const std::filesystem::path& dir,
                           std::string* prompt) {
    const std::pair<const char*, const char*> files[] = {
        {"basecolor", "basecolor.png"}, {"normal", "normal.png"},
        {"height", "height.png"},       {"roughness", "roughness.png"},
        {"metallic", "metallic.png"},
    };
    for (auto [name, file] : files)
        if (!std::filesystem::exists(dir / file))
            throw std::runtime_error(std::string("missing map: ") + name);
    if (!std::filesystem::exists(dir / "manifest.json"))
        throw std::runtime_error("missing manifest.json in " + dir.string());

    MaterialMaps m;
    m.basecolor = read_png16(dir / "basecolor.png");
    m.normal = read_png16(dir / "normal.png");
    m.height = read_png16(dir / "height.png");
    m.roughness = read_png16(dir / "roughness.png");
    m.metalness = read_png16(dir / "metallic.png");

    std::ifstream f(dir / "manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(f);
    auto res = manifest.at("resolution").get<std::vector<int>>();
    if (res.size() != 2 || res[0] != m.height_px() || res[1] != m.width_px())
        throw std::runtime_error("manifest resolution mismatch in " +
                                 dir.string());
    m.tags = manifest.value("tags", std::vector<std::string>{});
    if (prompt) *prompt = manifest.value("prompt", std::string{});
    return m;
}

nn::Tensor maps_to_stack(const MaterialMaps& maps) {
    int H = maps.height_px(), W = maps.width_px();
    nn::Tensor t = nn::Tensor::zeros({kStackChannels, H, W});
    auto put = [&](int c0, const Grid& g) {
        std::memcpy(t.data() + (int64_t)c0 * H * W, g.data.data(),
                    sizeof(float) * g.data.size());
    };
    put(0, maps.basecolor);
    put(3, maps.normal);
    put(6, maps.height);
    put(7, maps.roughness);
    put(8, maps.metalness);
    return t;
}

MaterialMaps stack_to_maps(const nn::Tensor& stack) {
    if (stack.ndim() != 3 || stack.dim(0) != kStackChannels)
        throw std::runtime_error("stack_to_maps: need [9,H,W]");
    int H = stack.dim(1), W = stack.dim(2);
    MaterialMaps m;
    auto take = [&](int c0, int nc) {
        Grid g(nc, H, W);
        std::memcpy(g.data.data(), stack.data() + (int64_t)c0 * H * W,
                    sizeof(float) * g.data.size());
        return g;
    };
    m.basecolor = clamp01(take(0, 3));
    Grid rawn = take(3, 3);
    m.normal = encode_normal(decode_normal(clamp01(rawn)));
    m.height = clamp01(take(6, 1));
    m.roughness = clamp01(take(7, 1));
    m.metalness = clamp01(take(8, 1));
    return m;
}

} // namespace matdiff
