#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "matdiff/errors.hpp"
#include "matdiff/nn/autodiff.hpp"
#include "matdiff/rng.hpp"
#include "matdiff/svbrdf.hpp"
#include "matdiff/synth.hpp"

namespace matdiff::trainutil {

struct MaterialCache {
    std::vector<nn::Tensor> stacks; // [9,R,R] each
    std::vector<MaterialMaps> maps;
    std::vector<std::string> prompts;

    MaterialCache(const Corpus& corpus, const std::string& split, int res,
                  int max_items = 0) {
        for (const CorpusEntry* e : corpus.material_split(split)) {
            if (max_items > 0 && (int)stacks.size() >= max_items) break;
            MaterialMaps m = corpus.load_maps(*e);
            if (m.height_px() != res)
                throw std::runtime_error("corpus resolution mismatch");
            stacks.push_back(maps_to_stack(m));
            maps.push_back(std::move(m));
            prompts.push_back(e->prompt);
        }
        if (stacks.empty())
            throw std::runtime_error("no training materials in corpus");
    }
};

inline nn::Tensor gather_batch(const std::vector<nn::Tensor>& pool,
                               const std::vector<int>& idx) {
    int C = pool[0].dim(0), H = pool[0].dim(1), W = pool[0].dim(2);
    nn::Tensor out = nn::Tensor::zeros({(int)idx.size(), C, H, W});
    int64_t stride = (int64_t)C * H * W;
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * stride, pool[idx[i]].data(),
                    sizeof(float) * stride);
    return out;
}

inline std::vector<int> draw_indices(Rng& rng, int n, int count) {
    std::vector<int> idx(count);
    for (int& v : idx) v = (int)rng.below((uint64_t)n);
    return idx;
}

inline void check_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw NumericalAbort(std::string(what) + " is non-finite");
}

inline double scalar(const nn::Var& v) { return v.val().data()[0]; }

inline nn::Tensor normal_tensor(const std::vector<int>& shape, Rng& rng) {
    nn::Tensor t = nn::Tensor::zeros(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

} // namespace matdiff::trainutil
