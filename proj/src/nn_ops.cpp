#include "matdiff/nn/ops.hpp"

#include <Eigen/Core>

namespace matdiff::nn {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;
using MapV = Eigen::Map<Eigen::VectorXf>;
using CMapV = Eigen::Map<const Eigen::VectorXf>;

inline int wrap(int a, int m) { return ((a % m) + m) % m; }

void im2col(const float* x, int Ci, int H, int W, int kh, int kw, int pad,
            int stride, bool circ, int Ho, int Wo, float* cols) {
    for (int ci = 0; ci < Ci; ++ci) {
        const float* xc = x + (int64_t)ci * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                float* dst = cols + ((int64_t)(ci * kh + ky) * kw + kx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (circ) iy = wrap(iy, H);
                    bool rowin = iy >= 0 && iy < H;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (circ) ix = wrap(ix, W);
                        float v = 0.0f;
                        if (rowin && ix >= 0 && ix < W) v = xc[(int64_t)iy * W + ix];
                        dst[(int64_t)oy * Wo + ox] = v;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, int Ci, int H, int W, int kh, int kw, int pad,
                int stride, bool circ, int Ho, int Wo, float* gx) {
    for (int ci = 0; ci < Ci; ++ci) {
        float* gc = gx + (int64_t)ci * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const float* src = cols + ((int64_t)(ci * kh + ky) * kw + kx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (circ) iy = wrap(iy, H);
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (circ) ix = wrap(ix, W);
                        if (ix < 0 || ix >= W) continue;
                        gc[(int64_t)iy * W + ix] += src[(int64_t)oy * Wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, Pad pad) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != Ci) throw std::runtime_error("conv2d: channel mismatch");
    if (stride != 1 && stride != 2) throw std::runtime_error("conv2d: stride");
    if (H % stride || W % stride) throw std::runtime_error("conv2d: size/stride");
    int p = kh / 2;
    int Ho = H / stride, Wo = W / stride;
    int ckk = Ci * kh * kw;
    bool circ = (pad == Pad::Circular);
    bool has_b = b.defined();

    Tensor out = Tensor::zeros({N, Co, Ho, Wo});
    {
        Tensor cols = Tensor::zeros({ckk, Ho * Wo});
        CMapM Wm(wv.data(), Co, ckk);
        for (int n = 0; n < N; ++n) {
            im2col(xv.data() + (int64_t)n * Ci * H * W, Ci, H, W, kh, kw, p,
                   stride, circ, Ho, Wo, cols.data());
            MapM On(out.data() + (int64_t)n * Co * Ho * Wo, Co, Ho * Wo);
            CMapM Cm(cols.data(), ckk, Ho * Wo);
            On.noalias() = Wm * Cm;
            if (has_b) On.colwise() += CMapV(b.val().data(), Co);
        }
    }

    std::vector<Var> parents = has_b ? std::vector<Var>{x, w, b}
                                     : std::vector<Var>{x, w};
    auto bw = [N, Ci, H, W, Co, kh, kw, p, stride, circ, Ho, Wo, ckk,
               has_b](Node& nd) {
        const Tensor& g = nd.grad;
        Node& xn = *nd.parents[0];
        Node& wn = *nd.parents[1];
        bool need_x = xn.requires_grad;
        bool need_w = wn.requires_grad;
        bool need_b = has_b && nd.parents[2]->requires_grad;
        Tensor cols = Tensor::zeros({ckk, Ho * Wo});
        Tensor gcols = Tensor::zeros({ckk, Ho * Wo});
        CMapM Wm(wn.value.data(), Co, ckk);
        for (int n = 0; n < N; ++n) {
            CMapM Gn(g.data() + (int64_t)n * Co * Ho * Wo, Co, Ho * Wo);
            if (need_w) {
                im2col(xn.value.data() + (int64_t)n * Ci * H * W, Ci, H, W, kh,
                       kw, p, stride, circ, Ho, Wo, cols.data());
                MapM Gw(wn.grad_buffer().data(), Co, ckk);
                CMapM Cm(cols.data(), ckk, Ho * Wo);
                Gw.noalias() += Gn * Cm.transpose();
            }
            if (need_b) {
                MapV Gb(nd.parents[2]->grad_buffer().data(), Co);
                Gb += Gn.rowwise().sum();
            }
            if (need_x) {
                MapM Gc(gcols.data(), ckk, Ho * Wo);
                Gc.noalias() = Wm.transpose() * Gn;
                col2im_add(gcols.data(), Ci, H, W, kh, kw, p, stride, circ, Ho,
                           Wo, xn.grad_buffer().data() + (int64_t)n * Ci * H * W);
            }
        }
    };
    return make_op(std::move(out), std::move(parents), std::move(bw));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    int N = xv.dim(0), K = xv.dim(1);
    int O = wv.dim(0);
    if (wv.dim(1) != K) throw std::runtime_error("linear: K mismatch");
    bool has_b = b.defined();
    Tensor out = Tensor::zeros({N, O});
    {
        CMapM Wm(wv.data(), O, K);
        for (int n = 0; n < N; ++n) {
            CMapV xn(xv.data() + (int64_t)n * K, K);
            MapV on(out.data() + (int64_t)n * O, O);
            on.noalias() = Wm * xn;
            if (has_b) on += CMapV(b.val().data(), O);
        }
    }
    std::vector<Var> parents = has_b ? std::vector<Var>{x, w, b}
                                     : std::vector<Var>{x, w};
    auto bw = [N, K, O, has_b](Node& nd) {
        const Tensor& g = nd.grad;
        Node& xn = *nd.parents[0];
        Node& wn = *nd.parents[1];
        CMapM Wm(wn.value.data(), O, K);
        for (int n = 0; n < N; ++n) {
            CMapV gn(g.data() + (int64_t)n * O, O);
            if (xn.requires_grad) {
                MapV gx(xn.grad_buffer().data() + (int64_t)n * K, K);
                gx.noalias() += Wm.transpose() * gn;
            }
            if (wn.requires_grad) {
                CMapV xrow(xn.value.data() + (int64_t)n * K, K);
                MapM gw(wn.grad_buffer().data(), O, K);
                gw.noalias() += gn * xrow.transpose();
            }
            if (has_b && nd.parents[2]->requires_grad) {
                MapV gb(nd.parents[2]->grad_buffer().data(), O);
                gb += gn;
            }
        }
    };
    return make_op(std::move(out), std::move(parents), std::move(bw));
}

Var bmm(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    int N = av.dim(0), P = av.dim(1), Q = av.dim(2), R = bv.dim(2);
    if (bv.dim(0) != N || bv.dim(1) != Q) throw std::runtime_error("bmm shapes");
    Tensor out = Tensor::zeros({N, P, R});
    for (int n = 0; n < N; ++n) {
        CMapM An(av.data() + (int64_t)n * P * Q, P, Q);
        CMapM Bn(bv.data() + (int64_t)n * Q * R, Q, R);
        MapM On(out.data() + (int64_t)n * P * R, P, R);
        On.noalias() = An * Bn;
    }
    return make_op(std::move(out), {a, b}, [N, P, Q, R](Node& nd) {
        const Tensor& g = nd.grad;
        Node& an = *nd.parents[0];
        Node& bn = *nd.parents[1];
        for (int n = 0; n < N; ++n) {
            CMapM Gn(g.data() + (int64_t)n * P * R, P, R);
            CMapM An(an.value.data() + (int64_t)n * P * Q, P, Q);
            CMapM Bn(bn.value.data() + (int64_t)n * Q * R, Q, R);
            if (an.requires_grad) {
                MapM Ga(an.grad_buffer().data() + (int64_t)n * P * Q, P, Q);
                Ga.noalias() += Gn * Bn.transpose();
            }
            if (bn.requires_grad) {
                MapM Gb(bn.grad_buffer().data() + (int64_t)n * Q * R, Q, R);
                Gb.noalias() += An.transpose() * Gn;
            }
        }
    });
}

Var softmax_lastdim(const Var& x) {
    const Tensor& xv = x.val();
    int L = xv.dim(xv.ndim() - 1);
    int64_t rows = xv.numel() / L;
    Tensor out = Tensor::zeros(xv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = xv.data() + r * L;
        float* yr = out.data() + r * L;
        float m = xr[0];
        for (int i = 1; i < L; ++i) m = std::max(m, xr[i]);
        double s = 0.0;
        for (int i = 0; i < L; ++i) {
            yr[i] = std::exp(xr[i] - m);
            s += yr[i];
        }
        float inv = (float)(1.0 / s);
        for (int i = 0; i < L; ++i) yr[i] *= inv;
    }
    return make_op(std::move(out), {x}, [L, rows](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& y = nd.value;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
            const float* gr = g.data() + r * L;
            const float* yr = y.data() + r * L;
            float* gxr = gx.data() + r * L;
            double dot = 0.0;
            for (int i = 0; i < L; ++i) dot += (double)gr[i] * yr[i];
            for (int i = 0; i < L; ++i)
                gxr[i] += yr[i] * (gr[i] - (float)dot);
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               float eps) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (C % groups) throw std::runtime_error("group_norm: C % groups != 0");
    int cg = C / groups;
    int64_t m = (int64_t)cg * H * W;
    Tensor out = Tensor::zeros(xv.shape());
    Tensor stats = Tensor::zeros({N, groups, 2}); // mean, inv_std
    const float* gm = gamma.val().data();
    const float* bt = beta.val().data();
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const float* xs = xv.data() + ((int64_t)n * C + (int64_t)g * cg) * H * W;
            double mu = 0.0;
            for (int64_t i = 0; i < m; ++i) mu += xs[i];
            mu /= (double)m;
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = xs[i] - mu;
                var += d * d;
            }
            var /= (double)m;
            float istd = (float)(1.0 / std::sqrt(var + eps));
            stats.data()[((int64_t)n * groups + g) * 2 + 0] = (float)mu;
            stats.data()[((int64_t)n * groups + g) * 2 + 1] = istd;
            float* ys = out.data() + ((int64_t)n * C + (int64_t)g * cg) * H * W;
            for (int c = 0; c < cg; ++c) {
                float ga = gm[g * cg + c];
                float be = bt[g * cg + c];
                const float* xr = xs + (int64_t)c * H * W;
                float* yr = ys + (int64_t)c * H * W;
                for (int64_t i = 0; i < (int64_t)H * W; ++i)
                    yr[i] = ga * (xr[i] - (float)mu) * istd + be;
            }
        }
    }
    return make_op(
        std::move(out), {x, gamma, beta},
        [N, C, H, W, groups, cg, m, stats](Node& nd) {
            const Tensor& g = nd.grad;
            Node& xn = *nd.parents[0];
            Node& gn = *nd.parents[1];
            Node& bn = *nd.parents[2];
            const float* gmv = gn.value.data();
            int64_t hw = (int64_t)H * W;
            for (int n = 0; n < N; ++n) {
                for (int gi = 0; gi < groups; ++gi) {
                    float mu = stats.data()[((int64_t)n * groups + gi) * 2 + 0];
                    float istd = stats.data()[((int64_t)n * groups + gi) * 2 + 1];
                    const float* xs =
                        xn.value.data() + ((int64_t)n * C + (int64_t)gi * cg) * hw;
                    const float* gs = g.data() + ((int64_t)n * C + (int64_t)gi * cg) * hw;
                    // gamma/beta grads
                    if (gn.requires_grad || bn.requires_grad) {
                        for (int c = 0; c < cg; ++c) {
                            double sg = 0.0, sgx = 0.0;
                            const float* xr = xs + (int64_t)c * hw;
                            const float* gr = gs + (int64_t)c * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                sg += gr[i];
                                sgx += (double)gr[i] * (xr[i] - mu) * istd;
                            }
                            if (gn.requires_grad)
                                gn.grad_buffer().data()[gi * cg + c] += (float)sgx;
                            if (bn.requires_grad)
                                bn.grad_buffer().data()[gi * cg + c] += (float)sg;
                        }
                    }
                    if (!xn.requires_grad) continue;
                    // dL/dxhat = g * gamma; reduce to the two group sums
                    double sum_gh = 0.0, sum_ghx = 0.0;
                    for (int c = 0; c < cg; ++c) {
                        float ga = gmv[gi * cg + c];
                        const float* xr = xs + (int64_t)c * hw;
                        const float* gr = gs + (int64_t)c * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            float gh = gr[i] * ga;
                            sum_gh += gh;
                            sum_ghx += (double)gh * (xr[i] - mu);
                        }
                    }
                    float* gx =
                        xn.grad_buffer().data() + ((int64_t)n * C + (int64_t)gi * cg) * hw;
                    float inv_m = 1.0f / (float)m;
                    float istd3 = istd * istd * istd;
                    for (int c = 0; c < cg; ++c) {
                        float ga = gmv[gi * cg + c];
                        const float* xr = xs + (int64_t)c * hw;
                        const float* gr = gs + (int64_t)c * hw;
                        float* gxr = gx + (int64_t)c * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            float gh = gr[i] * ga;
                            float xc = xr[i] - mu;
                            gxr[i] += gh * istd -
                                      inv_m * istd * (float)sum_gh -
                                      inv_m * istd3 * xc * (float)sum_ghx;
                        }
                    }
                }
            }
        });
}

Var upsample_nearest2x(const Var& x) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out = Tensor::zeros({N, C, H * 2, W * 2});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    float v = xv.at4(n, c, h, w);
                    out.at4(n, c, 2 * h, 2 * w) = v;
                    out.at4(n, c, 2 * h, 2 * w + 1) = v;
                    out.at4(n, c, 2 * h + 1, 2 * w) = v;
                    out.at4(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    return make_op(std::move(out), {x}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        gx.at4(n, c, h, w) += g.at4(n, c, 2 * h, 2 * w) +
                                              g.at4(n, c, 2 * h, 2 * w + 1) +
                                              g.at4(n, c, 2 * h + 1, 2 * w) +
                                              g.at4(n, c, 2 * h + 1, 2 * w + 1);
    });
}

Var avg_pool2(const Var& x) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 || W % 2) throw std::runtime_error("avg_pool2: odd size");
    Tensor out = Tensor::zeros({N, C, H / 2, W / 2});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H / 2; ++h)
                for (int w = 0; w < W / 2; ++w)
                    out.at4(n, c, h, w) =
                        0.25f * (xv.at4(n, c, 2 * h, 2 * w) +
                                 xv.at4(n, c, 2 * h, 2 * w + 1) +
                                 xv.at4(n, c, 2 * h + 1, 2 * w) +
                                 xv.at4(n, c, 2 * h + 1, 2 * w + 1));
    return make_op(std::move(out), {x}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H / 2; ++h)
                    for (int w = 0; w < W / 2; ++w) {
                        float gv = 0.25f * g.at4(n, c, h, w);
                        gx.at4(n, c, 2 * h, 2 * w) += gv;
                        gx.at4(n, c, 2 * h, 2 * w + 1) += gv;
                        gx.at4(n, c, 2 * h + 1, 2 * w) += gv;
                        gx.at4(n, c, 2 * h + 1, 2 * w + 1) += gv;
                    }
    });
}

Var nchw_to_ntc(const Var& x) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int T = H * W;
    Tensor out = Tensor::zeros({N, T, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                out.data()[((int64_t)n * T + t) * C + c] =
                    xv.data()[((int64_t)n * C + c) * T + t];
    return make_op(std::move(out), {x}, [N, C, T](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    gx.data()[((int64_t)n * C + c) * T + t] +=
                        g.data()[((int64_t)n * T + t) * C + c];
    });
}

Var ntc_to_nchw(const Var& x, int H, int W) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
    if (T != H * W) throw std::runtime_error("ntc_to_nchw: T != H*W");
    Tensor out = Tensor::zeros({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t)
                out.data()[((int64_t)n * C + c) * T + t] =
                    xv.data()[((int64_t)n * T + t) * C + c];
    return make_op(std::move(out), {x}, [N, C, T](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    gx.data()[((int64_t)n * T + t) * C + c] +=
                        g.data()[((int64_t)n * C + c) * T + t];
    });
}

Var add_bias(const Var& x, const Var& b) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (b.val().numel() != C) throw std::runtime_error("add_bias size");
    Tensor out = xv.clone();
    const float* bp = b.val().data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float* p = out.data() + ((int64_t)n * C + c) * H * W;
            for (int64_t i = 0; i < (int64_t)H * W; ++i) p[i] += bp[c];
        }
    return make_op(std::move(out), {x, b}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        if (nd.parents[0]->requires_grad)
            nd.parents[0]->grad_buffer().add_(g);
        if (nd.parents[1]->requires_grad) {
            float* gb = nd.parents[1]->grad_buffer().data();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const float* p = g.data() + ((int64_t)n * C + c) * H * W;
                    double s = 0.0;
                    for (int64_t i = 0; i < (int64_t)H * W; ++i) s += p[i];
                    gb[c] += (float)s;
                }
        }
    });
}

Var add_vec_spatial(const Var& x, const Var& v) {
    const Tensor& xv = x.val();
    const Tensor& vv = v.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (vv.dim(0) != N || vv.dim(1) != C)
        throw std::runtime_error("add_vec_spatial size");
    Tensor out = xv.clone();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float a = vv.at2(n, c);
            float* p = out.data() + ((int64_t)n * C + c) * H * W;
            for (int64_t i = 0; i < (int64_t)H * W; ++i) p[i] += a;
        }
    return make_op(std::move(out), {x, v}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        if (nd.parents[0]->requires_grad)
            nd.parents[0]->grad_buffer().add_(g);
        if (nd.parents[1]->requires_grad) {
            Tensor& gv = nd.parents[1]->grad_buffer();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const float* p = g.data() + ((int64_t)n * C + c) * H * W;
                    double s = 0.0;
                    for (int64_t i = 0; i < (int64_t)H * W; ++i) s += p[i];
                    gv.at2(n, c) += (float)s;
                }
        }
    });
}

Var global_mean_pool(const Var& x) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int64_t hw = (int64_t)H * W;
    Tensor out = Tensor::zeros({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* p = xv.data() + ((int64_t)n * C + c) * hw;
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += p[i];
            out.at2(n, c) = (float)(s / (double)hw);
        }
    return make_op(std::move(out), {x}, [N, C, hw](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float gv = g.at2(n, c) / (float)hw;
                float* p = gx.data() + ((int64_t)n * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) p[i] += gv;
            }
    });
}

Tensor sinusoidal_embedding(const std::vector<float>& t, int dim) {
    if (dim % 2) throw std::runtime_error("sinusoidal_embedding: odd dim");
    int half = dim / 2;
    Tensor out = Tensor::zeros({(int)t.size(), dim});
    for (size_t n = 0; n < t.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * (double)i /
                                   (double)std::max(half - 1, 1));
            double a = (double)t[n] * freq;
            out.at2((int)n, i) = (float)std::sin(a);
            out.at2((int)n, half + i) = (float)std::cos(a);
        }
    }
    return out;
}

} // namespace matdiff::nn
