#include "matdiff/synth.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "matdiff/png16.hpp"

namespace matdiff {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct NamedColor {
    const char* name;
    float r, g, b;
};

constexpr NamedColor kPalette[] = {
    {"red", 0.70f, 0.20f, 0.18f},    {"green", 0.25f, 0.55f, 0.25f},
    {"blue", 0.20f, 0.35f, 0.65f},   {"yellow", 0.85f, 0.75f, 0.30f},
    {"orange", 0.85f, 0.50f, 0.20f}, {"purple", 0.50f, 0.30f, 0.55f},
    {"white", 0.88f, 0.88f, 0.86f},  {"gray", 0.50f, 0.50f, 0.52f},
    {"brown", 0.45f, 0.30f, 0.20f},  {"teal", 0.20f, 0.55f, 0.55f},
    {"beige", 0.80f, 0.72f, 0.60f},
};

constexpr NamedColor kMetals[] = {
    {"silver", 0.75f, 0.77f, 0.80f},
    {"gold", 0.85f, 0.65f, 0.30f},
    {"copper", 0.72f, 0.45f, 0.32f},
};

struct PickedColor {
    std::string name;
    float r, g, b;
};

PickedColor pick_color(Rng& rng, const NamedColor* list, size_t n) {
    const NamedColor& c = list[rng.below(n)];
    auto j = [&](float v) {
        return std::min(0.95f, std::max(0.05f, v + (float)rng.uniform(-0.03, 0.03)));
    };
    return {c.name, j(c.r), j(c.g), j(c.b)};
}

PickedColor pick_palette(Rng& rng) {
    return pick_color(rng, kPalette, std::size(kPalette));
}

// deterministic per-cell jitter in [-1, 1]
float cell_jitter(uint64_t seed, int a, int b) {
    uint64_t h = seed_for(seed, std::to_string(a) + "," + std::to_string(b));
    return (float)((h >> 16) % 20001) / 10000.0f - 1.0f;
}

void set_rgb(Grid& g, int y, int x, float r, float gg, float b) {
    g.at(0, y, x) = r;
    g.at(1, y, x) = gg;
    g.at(2, y, x) = b;
}

// last column/row duplicate the first so the wrap pair is exactly equal
void make_tileable(Grid& g) {
    for (int c = 0; c < g.channels; ++c) {
        for (int y = 0; y < g.height; ++y)
            g.at(c, y, g.width - 1) = g.at(c, y, 0);
        for (int x = 0; x < g.width; ++x)
            g.at(c, g.height - 1, x) = g.at(c, 0, x);
    }
}

// constant band two pixels wide on every edge; keeps the normals derived
// from circular central differences flat (and therefore seam-free) there
void flatten_frame(Grid& h, float value) {
    int H = h.height, W = h.width;
    for (int y = 0; y < H; ++y)
        for (int x : {0, 1, W - 2, W - 1}) h.at(0, y, x) = value;
    for (int x = 0; x < W; ++x)
        for (int y : {0, 1, H - 2, H - 1}) h.at(0, y, x) = value;
}

struct PatternResult {
    Grid basecolor, height, roughness, metalness;
    float frame_height = 0.5f;
    std::string prompt_material;
    std::string prompt_texture;
    std::vector<std::string> tags;
};

PatternResult pattern_checker(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "checker"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int cell = R / (rng.uniform() < 0.5 ? 4 : 8);
    PickedColor a = pick_palette(rng), b = pick_palette(rng);
    float ha = 0.35f + (float)rng.uniform(-0.05, 0.05);
    float hb = 0.65f + (float)rng.uniform(-0.05, 0.05);
    float ra = (float)rng.uniform(0.30, 0.50), rb = (float)rng.uniform(0.55, 0.80);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            bool odd = ((x / cell) + (y / cell)) % 2;
            const PickedColor& c = odd ? b : a;
            set_rgb(p.basecolor, y, x, c.r, c.g, c.b);
            p.height.at(0, y, x) = odd ? hb : ha;
            p.roughness.at(0, y, x) = odd ? rb : ra;
        }
    p.frame_height = 0.5f;
    p.prompt_material =
        "a checker tile material with " + a.name + " and " + b.name + " squares";
    p.prompt_texture =
        "a checker tile texture with " + a.name + " and " + b.name + " squares";
    p.tags = {"checker", a.name, b.name};
    return p;
}

PatternResult pattern_bricks(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "bricks"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int rh = R / 8, bw = R / 4;
    PickedColor brick = pick_palette(rng);
    PickedColor mortar = pick_color(rng, kPalette + 6, 2); // white or gray
    float rough_b = (float)rng.uniform(0.60, 0.85);
    for (int y = 0; y < R; ++y) {
        int row = y / rh;
        int off = (row % 2) ? bw / 2 : 0;
        for (int x = 0; x < R; ++x) {
            int xs = (x + off) % R;
            bool is_mortar = (y % rh) < 1 || (xs % bw) < 1;
            if (is_mortar) {
                set_rgb(p.basecolor, y, x, mortar.r, mortar.g, mortar.b);
                p.height.at(0, y, x) = 0.25f;
                p.roughness.at(0, y, x) = 0.45f;
            } else {
                float j = 0.06f * cell_jitter(seed, row, xs / bw);
                set_rgb(p.basecolor, y, x,
                        std::clamp(brick.r + j, 0.05f, 0.95f),
                        std::clamp(brick.g + j, 0.05f, 0.95f),
                        std::clamp(brick.b + j, 0.05f, 0.95f));
                p.height.at(0, y, x) =
                    0.62f + 0.08f * cell_jitter(seed, xs / bw, row);
                p.roughness.at(0, y, x) = rough_b;
            }
        }
    }
    p.frame_height = 0.25f;
    p.prompt_material = "a brick wall material with " + brick.name +
                        " bricks and " + mortar.name + " mortar";
    p.prompt_texture = "a brick wall texture with " + brick.name +
                       " bricks and " + mortar.name + " mortar";
    p.tags = {"bricks", brick.name, mortar.name};
    return p;
}

PatternResult pattern_stripes(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "stripes"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    const char* orients[] = {"horizontal", "vertical", "diagonal"};
    int oi = (int)rng.below(3);
    int sw = R / (rng.uniform() < 0.5 ? 4 : 8);
    PickedColor a = pick_palette(rng), b = pick_palette(rng);
    float ra = (float)rng.uniform(0.25, 0.5), rb = (float)rng.uniform(0.55, 0.85);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            int u = oi == 0 ? y : (oi == 1 ? x : (x + y) % R);
            bool odd = (u / sw) % 2;
            const PickedColor& c = odd ? b : a;
            set_rgb(p.basecolor, y, x, c.r, c.g, c.b);
            p.height.at(0, y, x) = odd ? 0.58f : 0.42f;
            p.roughness.at(0, y, x) = odd ? rb : ra;
        }
    p.frame_height = 0.5f;
    std::string o = orients[oi];
    p.prompt_material = "a " + o + " striped material with " + a.name + " and " +
                        b.name + " bands";
    p.prompt_texture = "a " + o + " striped texture with " + a.name + " and " +
                       b.name + " bands";
    p.tags = {"stripes", o, a.name, b.name};
    return p;
}

PatternResult pattern_noise_stone(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "noise_stone"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    struct Wave {
        int fx, fy;
        double amp, phase;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i) {
        int fx = (int)rng.below(4), fy = (int)rng.below(4);
        if (fx == 0 && fy == 0) fx = 1;
        waves.push_back({fx, fy, 1.0 / (1.0 + fx + fy), rng.uniform(0.0, kTau)});
    }
    Grid field(1, R, R);
    double lo = 1e9, hi = -1e9;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            double v = 0.0;
            for (const Wave& w : waves)
                v += w.amp *
                     std::cos(kTau * (w.fx * x + w.fy * y) / (double)R + w.phase);
            field.at(0, y, x) = (float)v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    PickedColor tone = pick_palette(rng);
    bool darkish = rng.uniform() < 0.5;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            float t = (float)((field.at(0, y, x) - lo) / (hi - lo + 1e-9));
            float base = darkish ? 0.35f : 0.6f;
            float m = base + 0.3f * t;
            set_rgb(p.basecolor, y, x, std::clamp(tone.r * m + 0.1f, 0.05f, 0.95f),
                    std::clamp(tone.g * m + 0.1f, 0.05f, 0.95f),
                    std::clamp(tone.b * m + 0.1f, 0.05f, 0.95f));
            p.height.at(0, y, x) = 0.3f + 0.4f * t;
            p.roughness.at(0, y, x) = 0.75f - 0.3f * t;
        }
    p.frame_height = 0.5f;
    p.prompt_material = "a rough " + tone.name + " stone material with mottled surface";
    p.prompt_texture = "a rough " + tone.name + " stone texture with mottled surface";
    p.tags = {"noise_stone", tone.name};
    return p;
}

PatternResult pattern_metal_grid(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "metal_grid"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int sp = R / (rng.uniform() < 0.5 ? 4 : 8);
    int t = std::max(1, sp / 4);
    PickedColor metal = pick_color(rng, kMetals, std::size(kMetals));
    float bg = 0.14f + (float)rng.uniform(0.0, 0.06);
    float rough_m = (float)rng.uniform(0.15, 0.35);
    float rough_b = (float)rng.uniform(0.60, 0.80);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            bool on = (x % sp) < t || (y % sp) < t;
            if (on) {
                set_rgb(p.basecolor, y, x, metal.r, metal.g, metal.b);
                p.metalness.at(0, y, x) = 1.0f;
                p.height.at(0, y, x) = 0.70f;
                p.roughness.at(0, y, x) = rough_m;
            } else {
                set_rgb(p.basecolor, y, x, bg, bg, bg + 0.02f);
                p.metalness.at(0, y, x) = 0.0f;
                p.height.at(0, y, x) = 0.30f;
                p.roughness.at(0, y, x) = rough_b;
            }
        }
    p.frame_height = 0.7f;
    p.prompt_material = "a " + metal.name + " metal grid material on a dark base";
    p.prompt_texture = "a " + metal.name + " metal grid texture on a dark base";
    p.tags = {"metal_grid", metal.name};
    return p;
}

PatternResult pattern_wood_rings(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "wood_rings"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int k = 3 + (int)rng.below(4);
    double wob = rng.uniform(2.0, 5.0);
    const NamedColor tones[] = {kPalette[8], kPalette[10]}; // brown, beige
    PickedColor tone = pick_color(rng, tones, 2);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            double v = std::sin(kTau *
                                (k * x + wob * std::sin(kTau * y / (double)R)) /
                                (double)R);
            float t = 0.5f + 0.5f * (float)v;
            float m = 0.55f + 0.45f * t;
            set_rgb(p.basecolor, y, x, std::clamp(tone.r * m, 0.05f, 0.95f),
                    std::clamp(tone.g * m, 0.05f, 0.95f),
                    std::clamp(tone.b * m, 0.05f, 0.95f));
            p.height.at(0, y, x) = 0.4f + 0.2f * t;
            p.roughness.at(0, y, x) = 0.5f + 0.25f * (1.0f - t);
        }
    p.frame_height = 0.5f;
    p.prompt_material = "a " + tone.name + " wood grain material with wavy rings";
    p.prompt_texture = "a " + tone.name + " wood grain texture with wavy rings";
    p.tags = {"wood_rings", tone.name};
    return p;
}

PatternResult pattern_woven(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "woven"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int sw = R / 8;
    PickedColor a = pick_palette(rng), b = pick_palette(rng);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            bool horiz = ((x / sw) + (y / sw)) % 2;
            int u = horiz ? y % sw : x % sw;
            float shade =
                0.55f + 0.45f * (float)std::sin(kTau / 2.0 * (u + 0.5) / sw);
            const PickedColor& c = horiz ? a : b;
            set_rgb(p.basecolor, y, x, std::clamp(c.r * shade, 0.05f, 0.95f),
                    std::clamp(c.g * shade, 0.05f, 0.95f),
                    std::clamp(c.b * shade, 0.05f, 0.95f));
            p.height.at(0, y, x) = 0.4f + 0.2f * shade;
            p.roughness.at(0, y, x) = 0.7f;
        }
    p.prompt_texture = "a woven basket texture with " + a.name + " and " +
                       b.name + " strands";
    p.prompt_material = p.prompt_texture;
    p.tags = {"woven", a.name, b.name};
    return p;
}

PatternResult pattern_scales(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "scales"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int cell = R / 8;
    PickedColor c = pick_palette(rng);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            int row = y / cell;
            int xs = (x + (row % 2) * cell / 2) % R;
            float cx = (float)(xs % cell) - cell / 2.0f + 0.5f;
            float cy = (float)(y % cell);
            float d = std::sqrt(cx * cx + cy * cy) / (float)cell;
            float shade = std::clamp(1.1f - d, 0.15f, 1.0f);
            set_rgb(p.basecolor, y, x, std::clamp(c.r * shade, 0.05f, 0.95f),
                    std::clamp(c.g * shade, 0.05f, 0.95f),
                    std::clamp(c.b * shade, 0.05f, 0.95f));
            p.height.at(0, y, x) = 0.3f + 0.4f * shade;
            p.roughness.at(0, y, x) = 0.5f;
        }
    p.prompt_texture =
        "a fish scale texture with overlapping " + c.name + " scales";
    p.prompt_material = p.prompt_texture;
    p.tags = {"scales", c.name};
    return p;
}

PatternResult pattern_mosaic(uint64_t seed, int R) {
    Rng rng(seed_for(seed, "mosaic"));
    PatternResult p{Grid(3, R, R), Grid(1, R, R), Grid(1, R, R), Grid(1, R, R)};
    int cell = R / 8;
    PickedColor c1 = pick_palette(rng), c2 = pick_palette(rng);
    PickedColor opts[4] = {c1, c2,
                           {c1.name, c1.r * 0.7f, c1.g * 0.7f, c1.b * 0.7f},
                           {c2.name, std::min(1.0f, c2.r * 1.25f),
                            std::min(1.0f, c2.g * 1.25f),
                            std::min(1.0f, c2.b * 1.25f)}};
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            bool grout = (x % cell) < 1 || (y % cell) < 1;
            if (grout) {
                set_rgb(p.basecolor, y, x, 0.18f, 0.18f, 0.18f);
                p.height.at(0, y, x) = 0.3f;
                p.roughness.at(0, y, x) = 0.6f;
            } else {
                uint64_t h = seed_for(seed, std::to_string(x / cell) + ";" +
                                                std::to_string(y / cell));
                const PickedColor& c = opts[h % 4];
                set_rgb(p.basecolor, y, x, c.r, c.g, c.b);
                p.height.at(0, y, x) = 0.55f;
                p.roughness.at(0, y, x) = 0.25f;
            }
        }
    p.prompt_texture = "a mosaic tile texture with " + c1.name + " and " +
                       c2.name + " pieces";
    p.prompt_material = p.prompt_texture;
    p.tags = {"mosaic", c1.name, c2.name};
    return p;
}

PatternResult build_pattern(const std::string& kind, uint64_t seed, int R) {
    if (kind == "checker") return pattern_checker(seed, R);
    if (kind == "bricks") return pattern_bricks(seed, R);
    if (kind == "stripes") return pattern_stripes(seed, R);
    if (kind == "noise_stone") return pattern_noise_stone(seed, R);
    if (kind == "metal_grid") return pattern_metal_grid(seed, R);
    if (kind == "wood_rings") return pattern_wood_rings(seed, R);
    if (kind == "woven") return pattern_woven(seed, R);
    if (kind == "scales") return pattern_scales(seed, R);
    if (kind == "mosaic") return pattern_mosaic(seed, R);
    throw std::runtime_error("unknown family: " + kind);
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

} // namespace

float normal_strength_for(const std::string& kind) {
    if (kind == "checker" || kind == "stripes") return 2.0f;
    if (kind == "noise_stone") return 4.0f;
    return 3.0f;
}

const std::vector<std::string>& material_families() {
    static const std::vector<std::string> f = {
        "checker", "bricks", "stripes", "noise_stone", "metal_grid",
        "wood_rings"};
    return f;
}

const std::vector<std::string>& texture_families() {
    static const std::vector<std::string> f = {
        "checker", "bricks", "stripes", "noise_stone", "metal_grid",
        "wood_rings", "woven", "scales", "mosaic"};
    return f;
}

std::vector<std::string> prompt_vocabulary() {
    std::vector<std::string> words = {
        "a",        "and",    "with",    "on",      "checker", "tile",
        "material", "texture", "squares", "brick",  "wall",    "bricks",
        "mortar",   "striped", "bands",   "rough",  "stone",   "mottled",
        "surface",  "metal",   "grid",    "dark",   "base",    "wood",
        "grain",    "wavy",    "rings",   "woven",  "basket",  "strands",
        "fish",     "scale",   "overlapping", "scales", "mosaic", "pieces",
        "horizontal", "vertical", "diagonal"};
    for (const auto& c : kPalette) words.push_back(c.name);
    for (const auto& c : kMetals) words.push_back(c.name);
    return words;
}

MaterialSample make_material(const std::string& kind, uint64_t seed,
                             int resolution) {
    bool known = false;
    for (const auto& f : material_families()) known = known || f == kind;
    if (!known) throw std::runtime_error("unknown material family: " + kind);
    if (!is_pow2(resolution))
        throw std::runtime_error("resolution must be a power of two");

    PatternResult p = build_pattern(kind, seed, resolution);
    make_tileable(p.basecolor);
    make_tileable(p.roughness);
    make_tileable(p.metalness);
    make_tileable(p.height);
    flatten_frame(p.height, p.frame_height);

    MaterialSample s;
    s.maps.basecolor = std::move(p.basecolor);
    s.maps.height = std::move(p.height);
    s.maps.roughness = std::move(p.roughness);
    s.maps.metalness = std::move(p.metalness);
    s.maps.normal =
        encode_normal(height_to_normal(s.maps.height, normal_strength_for(kind)));
    s.maps.tags = std::move(p.tags);
    s.prompt = std::move(p.prompt_material);
    return s;
}

TextureSample make_texture(const std::string& kind, uint64_t seed,
                           int resolution) {
    bool known = false;
    for (const auto& f : texture_families()) known = known || f == kind;
    if (!known) throw std::runtime_error("unknown texture family: " + kind);
    if (!is_pow2(resolution))
        throw std::runtime_error("resolution must be a power of two");
    PatternResult p = build_pattern(kind, seed, resolution);
    make_tileable(p.basecolor);
    return {std::move(p.basecolor), std::move(p.prompt_texture)};
}

namespace {

std::vector<int> family_counts(int total, int n_families) {
    std::vector<int> counts(n_families, total / n_families);
    for (int i = 0; i < total % n_families; ++i) ++counts[i];
    return counts;
}

} // namespace

Corpus build_corpus(const CorpusConfig& cfg, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (fs::exists(root) && !fs::is_empty(root) && !cfg.overwrite)
        throw std::runtime_error("corpus path exists and is not empty: " +
                                 root.string());
    fs::create_directories(root);

    Corpus corpus;
    corpus.root = root;
    corpus.config = cfg;

    auto add_entries = [&](const std::vector<std::string>& families, int total,
                           const std::string& section, int resolution,
                           std::vector<CorpusEntry>& out) {
        std::vector<int> counts = family_counts(total, (int)families.size());
        for (size_t fi = 0; fi < families.size(); ++fi) {
            const std::string& fam = families[fi];
            int n = counts[fi];
            int n_train = (int)(0.9 * n);
            for (int k = 0; k < n; ++k) {
                uint64_t seed =
                    seed_for(cfg.master_seed,
                             section + "/" + fam + "/" + std::to_string(k)) &
                    0xffffffffull;
                CorpusEntry e;
                e.family = fam;
                e.seed = seed;
                e.split = k < n_train ? "train" : "test";
                e.path = section + "/" + fam + "/" + std::to_string(seed);
                fs::path dir = root / e.path;
                if (section == "textures") {
                    TextureSample t = make_texture(fam, seed, resolution);
                    fs::create_directories(dir);
                    write_png16(dir / "texture.png", t.rgb);
                    std::ofstream pf(dir / "prompt.txt");
                    pf << t.prompt << "\n";
                    e.prompt = t.prompt;
                } else {
                    MaterialSample m = make_material(fam, seed, resolution);
                    save_material(m.maps, dir, m.prompt);
                    e.prompt = m.prompt;
                }
                out.push_back(std::move(e));
            }
        }
    };

    add_entries(material_families(), cfg.n_materials, "materials",
                cfg.resolution, corpus.materials);
    add_entries(texture_families(), cfg.n_textures, "textures", cfg.resolution,
                corpus.textures);
    add_entries(material_families(), cfg.n_hires_materials, "hires",
                cfg.resolution * cfg.hires_factor, corpus.hires);

    nlohmann::json index;
    index["config"] = {{"n_materials", cfg.n_materials},
                       {"n_textures", cfg.n_textures},
                       {"resolution", cfg.resolution},
                       {"master_seed", cfg.master_seed},
                       {"n_hires_materials", cfg.n_hires_materials},
                       {"hires_factor", cfg.hires_factor}};
    auto dump_entries = [](const std::vector<CorpusEntry>& list) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : list)
            arr.push_back({{"family", e.family},
                           {"seed", e.seed},
                           {"split", e.split},
                           {"path", e.path},
                           {"prompt", e.prompt}});
        return arr;
    };
    index["materials"] = dump_entries(corpus.materials);
    index["textures"] = dump_entries(corpus.textures);
    index["hires"] = dump_entries(corpus.hires);
    std::ofstream f(root / "index.json");
    f << index.dump(2) << "\n";
    return corpus;
}

Corpus Corpus::open(const std::filesystem::path& root) {
    std::ifstream f(root / "index.json");
    if (!f) throw std::runtime_error("no corpus index at " + root.string());
    nlohmann::json index = nlohmann::json::parse(f);
    Corpus c;
    c.root = root;
    const auto& jc = index.at("config");
    c.config.n_materials = jc.value("n_materials", 0);
    c.config.n_textures = jc.value("n_textures", 0);
    c.config.resolution = jc.value("resolution", 0);
    c.config.master_seed = jc.value("master_seed", (uint64_t)0);
    c.config.n_hires_materials = jc.value("n_hires_materials", 0);
    c.config.hires_factor = jc.value("hires_factor", 2);
    auto parse_entries = [](const nlohmann::json& arr) {
        std::vector<CorpusEntry> out;
        for (const auto& j : arr) {
            CorpusEntry e;
            e.family = j.at("family").get<std::string>();
            e.seed = j.at("seed").get<uint64_t>();
            e.split = j.at("split").get<std::string>();
            e.path = j.at("path").get<std::string>();
            e.prompt = j.at("prompt").get<std::string>();
            out.push_back(std::move(e));
        }
        return out;
    };
    c.materials = parse_entries(index.at("materials"));
    c.textures = parse_entries(index.at("textures"));
    c.hires = parse_entries(index.at("hires"));
    return c;
}

std::vector<const CorpusEntry*> Corpus::material_split(
    const std::string& s) const {
    std::vector<const CorpusEntry*> out;
    for (const auto& e : materials)
        if (e.split == s) out.push_back(&e);
    return out;
}

std::vector<const CorpusEntry*> Corpus::texture_split(
    const std::string& s) const {
    std::vector<const CorpusEntry*> out;
    for (const auto& e : textures)
        if (e.split == s) out.push_back(&e);
    return out;
}

MaterialMaps Corpus::load_maps(const CorpusEntry& e) const {
    return load_material(root / e.path);
}

Grid Corpus::load_texture(const CorpusEntry& e) const {
    return read_png16(root / e.path / "texture.png");
}

} // namespace matdiff
