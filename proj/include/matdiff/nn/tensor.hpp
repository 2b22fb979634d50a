#pragma once

#include <atomic>
#include <cassert>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace matdiff::nn {

// Global accounting of live tensor bytes. The peak is the number the
// memory budget tests look at; reset_peak() starts a fresh measurement.
struct AllocStats {
    static std::atomic<int64_t>& live() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static std::atomic<int64_t>& peak() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static void on_alloc(int64_t bytes) {
        int64_t now = live().fetch_add(bytes) + bytes;
        int64_t p = peak().load();
        while (now > p && !peak().compare_exchange_weak(p, now)) {}
    }
    static void on_free(int64_t bytes) { live().fetch_sub(bytes); }
    static void reset_peak() { peak().store(live().load()); }
};

// Dense float tensor, row-major, shape given explicitly. Copies are shallow
// (shared storage); clone() makes a deep copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        Tensor t(std::move(shape));
        std::memset(t.data(), 0, sizeof(float) * t.numel());
        return t;
    }

    static Tensor full(std::vector<int> shape, float v) {
        Tensor t(std::move(shape));
        float* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = v;
        return t;
    }

    static Tensor from(std::vector<int> shape, const std::vector<float>& vals) {
        Tensor t(std::move(shape));
        if ((int64_t)vals.size() != t.numel())
            throw std::runtime_error("tensor init size mismatch");
        std::memcpy(t.data(), vals.data(), sizeof(float) * t.numel());
        return t;
    }

    static Tensor scalar(float v) { return full({1}, v); }

    bool defined() const { return storage_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(i); }
    int ndim() const { return (int)shape_.size(); }
    int64_t numel() const { return numel_; }

    float* data() { return storage_.get(); }
    const float* data() const { return storage_.get(); }

    float& operator[](int64_t i) { return storage_.get()[i]; }
    float operator[](int64_t i) const { return storage_.get()[i]; }

    // NCHW accessors
    float& at4(int n, int c, int h, int w) {
        return data()[((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at4(int n, int c, int h, int w) const {
        return data()[((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float& at2(int r, int c) { return data()[int64_t(r) * shape_[1] + c]; }
    float at2(int r, int c) const { return data()[int64_t(r) * shape_[1] + c]; }

    Tensor clone() const {
        Tensor t(shape_);
        std::memcpy(t.data(), data(), sizeof(float) * numel());
        return t;
    }

    // Shares storage under a new shape with the same element count.
    Tensor reshaped(std::vector<int> shape) const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        if (n != numel_) throw std::runtime_error("reshape numel mismatch");
        Tensor t;
        t.storage_ = storage_;
        t.shape_ = std::move(shape);
        t.numel_ = n;
        return t;
    }

    void fill(float v) {
        float* p = data();
        for (int64_t i = 0; i < numel_; ++i) p[i] = v;
    }

    void add_(const Tensor& o, float scale = 1.0f) {
        assert(o.numel() == numel_);
        float* p = data();
        const float* q = o.data();
        for (int64_t i = 0; i < numel_; ++i) p[i] += scale * q[i];
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + "]";
    }

  private:
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        numel_ = 1;
        for (int d : shape_) {
            if (d <= 0) throw std::runtime_error("bad tensor dim");
            numel_ *= d;
        }
        int64_t bytes = numel_ * (int64_t)sizeof(float);
        AllocStats::on_alloc(bytes);
        storage_ = std::shared_ptr<float>(new float[numel_], [bytes](float* p) {
            delete[] p;
            AllocStats::on_free(bytes);
        });
    }

    std::shared_ptr<float> storage_;
    std::vector<int> shape_;
    int64_t numel_ = 0;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape();
}

} // namespace matdiff::nn
