#pragma once

#include "matdiff/nn/autodiff.hpp"

namespace matdiff::nn {

enum class Pad { Zero, Circular };

// 3x3 or 1x1 same-size convolution, stride 1 or 2 (output H/stride).
// The batch loop is serial and per-sample so a sample's output never
// depends on what else is in the batch.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, Pad pad);

// x:[N,K] w:[O,K] b:[O] -> [N,O], evaluated per sample.
Var linear(const Var& x, const Var& w, const Var& b);

// a:[N,p,q] b:[N,q,r] -> [N,p,r]
Var bmm(const Var& a, const Var& b);

// softmax over the last dimension
Var softmax_lastdim(const Var& x);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               float eps = 1e-5f);

Var upsample_nearest2x(const Var& x);
Var avg_pool2(const Var& x);

// [N,C,H,W] <-> [N,H*W,C]
Var nchw_to_ntc(const Var& x);
Var ntc_to_nchw(const Var& x, int H, int W);

// y[n,c,h,w] = x[n,c,h,w] + b[c]
Var add_bias(const Var& x, const Var& b);
// y[n,c,h,w] = x[n,c,h,w] + v[n,c]
Var add_vec_spatial(const Var& x, const Var& v);
// [N,C,H,W] -> [N,C]
Var global_mean_pool(const Var& x);

// Sinusoidal embedding of integer timesteps, [N,dim]; constant w.r.t. grads.
Tensor sinusoidal_embedding(const std::vector<float>& t, int dim);

} // namespace matdiff::nn
