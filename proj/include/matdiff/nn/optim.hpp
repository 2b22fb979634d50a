#pragma once

#include <cmath>
#include <map>

#include "matdiff/nn/modules.hpp"

namespace matdiff::nn {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    AdamConfig& config() { return cfg_; }

    template <typename M>
    void step(M& m) {
        ++t_;
        float bc1 = 1.0f - std::pow(cfg_.beta1, (float)t_);
        float bc2 = 1.0f - std::pow(cfg_.beta2, (float)t_);
        m.visit("", [&](const std::string& name, Parameter& p) {
            State& st = states_[name];
            if (!st.m.defined()) {
                st.m = Tensor::zeros(p.value.shape());
                st.v = Tensor::zeros(p.value.shape());
            }
            float* w = p.value.data();
            const float* g = p.grad.data();
            float* mp = st.m.data();
            float* vp = st.v.data();
            for (int64_t i = 0; i < p.value.numel(); ++i) {
                mp[i] = cfg_.beta1 * mp[i] + (1.0f - cfg_.beta1) * g[i];
                vp[i] = cfg_.beta2 * vp[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
                float mh = mp[i] / bc1;
                float vh = vp[i] / bc2;
                w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        });
    }

    int64_t steps() const { return t_; }

  private:
    struct State {
        Tensor m, v;
    };
    AdamConfig cfg_;
    std::map<std::string, State> states_;
    int64_t t_ = 0;
};

// cosine decay from base_lr at step 0 down to min_frac * base_lr
inline float cosine_lr(float base_lr, float min_frac, int step, int total) {
    if (total <= 1) return base_lr;
    float lo = base_lr * min_frac;
    float t = (float)step / (float)(total - 1);
    return lo + 0.5f * (base_lr - lo) * (1.0f + std::cos(3.14159265f * t));
}

// theta_ema = mu * theta_ema + (1 - mu) * theta
template <typename A, typename B>
void ema_update(A& online, B& ema, float mu) {
    std::map<std::string, Parameter*> src;
    online.visit("", [&](const std::string& n, Parameter& p) { src[n] = &p; });
    ema.visit("", [&](const std::string& n, Parameter& p) {
        auto it = src.find(n);
        if (it == src.end())
            throw std::runtime_error("ema_update: missing param " + n);
        float* e = p.value.data();
        const float* o = it->second->value.data();
        for (int64_t i = 0; i < p.value.numel(); ++i)
            e[i] = mu * e[i] + (1.0f - mu) * o[i];
    });
}

} // namespace matdiff::nn
