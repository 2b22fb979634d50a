#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "matdiff/svbrdf.hpp"

namespace matdiff {

struct MaterialSample {
    MaterialMaps maps;
    std::string prompt;
};

struct TextureSample {
    Grid rgb;
    std::string prompt;
};

const std::vector<std::string>& material_families();
// Superset of material families; the extras never yield material maps.
const std::vector<std::string>& texture_families();

// Every word that can appear in a generated prompt.
std::vector<std::string> prompt_vocabulary();

// Slope scale each family uses to derive its normal map from its height map.
float normal_strength_for(const std::string& kind);

MaterialSample make_material(const std::string& kind, uint64_t seed,
                             int resolution);
TextureSample make_texture(const std::string& kind, uint64_t seed,
                           int resolution);

struct CorpusConfig {
    int n_materials = 120;
    int n_textures = 180;
    int resolution = 64;
    uint64_t master_seed = 1;
    int n_hires_materials = 24;
    int hires_factor = 2; // hires resolution = resolution * factor
    bool overwrite = false;
};

struct CorpusEntry {
    std::string family;
    uint64_t seed = 0;
    std::string split; // train | test
    std::string path;  // relative to corpus root
    std::string prompt;
};

struct Corpus {
    std::filesystem::path root;
    CorpusConfig config;
    std::vector<CorpusEntry> materials;
    std::vector<CorpusEntry> textures;
    std::vector<CorpusEntry> hires;

    static Corpus open(const std::filesystem::path& root);

    std::vector<const CorpusEntry*> material_split(const std::string& s) const;
    std::vector<const CorpusEntry*> texture_split(const std::string& s) const;

    MaterialMaps load_maps(const CorpusEntry& e) const;
    Grid load_texture(const CorpusEntry& e) const;
};

Corpus build_corpus(const CorpusConfig& cfg, const std::filesystem::path& root);

} // namespace matdiff
