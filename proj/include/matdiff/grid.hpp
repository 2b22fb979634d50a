#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace matdiff {

// Planar CxHxW float image. Value semantics (deep copies), unlike nn::Tensor.
struct Grid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Grid() = default;
    Grid(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w),
          data((size_t)c * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[((size_t)c * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[((size_t)c * height + y) * width + x];
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool same_shape(const Grid& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

inline int wrap_index(int a, int m) { return ((a % m) + m) % m; }

// Circular shift: out(y, x) = in(y - dy, x - dx) with wraparound.
inline Grid roll2d(const Grid& g, int dx, int dy) {
    Grid out(g.channels, g.height, g.width);
    for (int c = 0; c < g.channels; ++c)
        for (int y = 0; y < g.height; ++y) {
            int sy = wrap_index(y - dy, g.height);
            for (int x = 0; x < g.width; ++x)
                out.at(c, y, x) = g.at(c, sy, wrap_index(x - dx, g.width));
        }
    return out;
}

inline double mean_value(const Grid& g) {
    double s = 0.0;
    for (float v : g.data) s += v;
    return g.data.empty() ? 0.0 : s / (double)g.data.size();
}

inline double rmse(const Grid& a, const Grid& b) {
    if (!a.same_shape(b)) throw std::runtime_error("rmse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = (double)a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s / (double)a.data.size());
}

inline Grid clamp01(Grid g) {
    for (float& v : g.data) v = std::min(1.0f, std::max(0.0f, v));
    return g;
}

} // namespace matdiff
