#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "matdiff/grid.hpp"
#include "matdiff/nn/tensor.hpp"
#include "matdiff/rng.hpp"

namespace matdiff {

struct MaterialMaps {
    Grid basecolor; // 3 channels
    Grid normal;    // 3 channels, encoded as c = (n+1)/2
    Grid height;    // 1 channel
    Grid roughness; // 1 channel
    Grid metalness; // 1 channel
    std::vector<std::string> tags;

    int height_px() const { return basecolor.height; }
    int width_px() const { return basecolor.width; }

    // Throws if any range/shape/normal-length invariant is broken.
    void validate() const;
    bool check(std::string* why = nullptr) const;
};

struct RenderConfig {
    std::array<float, 3> light_dir{0.0f, 0.0f, 1.0f}; // toward the light
    float light_intensity = 3.0f;
    float ambient = 0.1f;
    std::array<float, 3> view_dir{0.0f, 0.0f, 1.0f};
    float exposure = 1.0f;

    void validate() const;
};

Grid encode_normal(const Grid& n);
// flagged (optional) counts zero-length vectors replaced by (0,0,1)
Grid decode_normal(const Grid& rgb, int* flagged = nullptr);

// n = normalize(-s*dh/dx, -s*dh/dy, 1), central differences, circular wrap,
// slopes in pixel units. Returns raw unit vectors (not encoded).
Grid height_to_normal(const Grid& height, float strength);

// Directional light + uniform ambient, Cook-Torrance GGX specular lobe.
Grid render(const MaterialMaps& maps, const RenderConfig& cfg);

RenderConfig random_light(Rng& rng);

double rendering_loss(const MaterialMaps& a, const MaterialMaps& b,
                      int n_lights, uint64_t seed);
double rendering_loss_with(const MaterialMaps& a, const MaterialMaps& b,
                           std::span<const RenderConfig> lights);

void save_material(const MaterialMaps& maps, const std::filesystem::path& dir,
                   const std::string& prompt = "");
MaterialMaps load_material(const std::filesystem::path& dir,
                           std::string* prompt = nullptr);

// Channel stack used by the codec: basecolor 0-2, normal 3-5, height 6,
// roughness 7, metalness 8.
inline constexpr int kStackChannels = 9;
nn::Tensor maps_to_stack(const MaterialMaps& maps);
// Clamps ranges and renormalizes the normal slice.
MaterialMaps stack_to_maps(const nn::Tensor& stack);

} // namespace matdiff
