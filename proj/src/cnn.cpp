#include "dsv/cnn.hpp"

#include "dsv/errors.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>

namespace dsv {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_he_normal(Param& p, double fan_in, std::uint64_t key, std::size_t& counter) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < p.size(); ++i)
        p.value[i] = std_dev * normal_draw(key, Substream(StreamTag::param_init, counter, 0, 0,
                                                          0, i));
    ++counter;
}

Param make_param(std::string name, std::vector<std::size_t> shape, bool learnable, bool decay,
                 double init_value = 0.0) {
    Param p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    std::size_t total = 1;
    for (std::size_t d : p.shape) total *= d;
    p.value.assign(total, init_value);
    p.grad.assign(total, 0.0);
    p.learnable = learnable;
    p.decay = decay;
    return p;
}

void check_input(const Tensor4& x, std::size_t channels, const std::string& stage) {
    if (x.c != channels)
        throw DimensionError("stage '" + stage + "': expected " + std::to_string(channels) +
                             " channels, got " + std::to_string(x.c));
    if (x.n == 0 || x.h == 0 || x.w == 0)
        throw DimensionError("stage '" + stage + "': empty tensor");
}

} // namespace

namespace nn {

// ---------------------------------------------------------------- DscConv

DscConv::DscConv(std::string name, std::size_t c_in, std::size_t c_out)
    : name_(std::move(name)), cin_(c_in), cout_(c_out),
      dw_(make_param(name_ + ".dw", {c_in, 3, 3}, true, true)),
      pw_(make_param(name_ + ".pw", {c_out, c_in}, true, true)) {}

void DscConv::init(std::uint64_t key, std::size_t& counter) {
    fill_he_normal(dw_, 9.0, key, counter);
    fill_he_normal(pw_, double(cin_), key, counter);
}

void DscConv::collect(std::vector<Param*>& out) {
    out.push_back(&dw_);
    out.push_back(&pw_);
}

Tensor4 DscConv::forward(const Tensor4& x, bool training) {
    (void)training;
    check_input(x, cin_, name_);
    const std::size_t H = x.h, W = x.w;
    Tensor4 mid(x.n, cin_, H, W);
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t c = 0; c < cin_; ++c) {
            const double* k = dw_.value.data() + c * 9;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xw = 0; xw < W; ++xw) {
                    double s = 0.0;
                    for (int ky = -1; ky <= 1; ++ky) {
                        const long sy = long(y) + ky;
                        if (sy < 0 || sy >= long(H)) continue;
                        for (int kx = -1; kx <= 1; ++kx) {
                            const long sx = long(xw) + kx;
                            if (sx < 0 || sx >= long(W)) continue;
                            s += k[(ky + 1) * 3 + (kx + 1)] *
                                 x.at(in, c, std::size_t(sy), std::size_t(sx));
                        }
                    }
                    mid.at(in, c, y, xw) = s;
                }
        }
    Tensor4 out(x.n, cout_, H, W);
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t o = 0; o < cout_; ++o) {
            const double* wrow = pw_.value.data() + o * cin_;
            double* dst = out.v.data() + out.idx(in, o, 0, 0);
            for (std::size_t c = 0; c < cin_; ++c) {
                const double wv = wrow[c];
                const double* src = mid.v.data() + mid.idx(in, c, 0, 0);
                for (std::size_t p = 0; p < H * W; ++p) dst[p] += wv * src[p];
            }
        }
    x_ = x;
    mid_ = mid;
    return out;
}

Tensor4 DscConv::backward(const Tensor4& gy) {
    const std::size_t H = x_.h, W = x_.w;
    if (gy.n != x_.n || gy.c != cout_ || gy.h != H || gy.w != W)
        throw DimensionError("stage '" + name_ + "': backward shape mismatch");

    Tensor4 gmid(x_.n, cin_, H, W);
    for (std::size_t in = 0; in < x_.n; ++in)
        for (std::size_t o = 0; o < cout_; ++o) {
            const double* g = gy.v.data() + gy.idx(in, o, 0, 0);
            double* wgrad = pw_.grad.data() + o * cin_;
            const double* wrow = pw_.value.data() + o * cin_;
            for (std::size_t c = 0; c < cin_; ++c) {
                const double* m = mid_.v.data() + mid_.idx(in, c, 0, 0);
                double* gm = gmid.v.data() + gmid.idx(in, c, 0, 0);
                double acc = 0.0;
                const double wv = wrow[c];
                for (std::size_t p = 0; p < H * W; ++p) {
                    acc += g[p] * m[p];
                    gm[p] += wv * g[p];
                }
                wgrad[c] += acc;
            }
        }

    Tensor4 gx(x_.n, cin_, H, W);
    for (std::size_t in = 0; in < x_.n; ++in)
        for (std::size_t c = 0; c < cin_; ++c) {
            const double* k = dw_.value.data() + c * 9;
            double* kg = dw_.grad.data() + c * 9;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xw = 0; xw < W; ++xw) {
                    const double g = gmid.at(in, c, y, xw);
                    if (g == 0.0) continue;
                    for (int ky = -1; ky <= 1; ++ky) {
                        const long sy = long(y) + ky;
                        if (sy < 0 || sy >= long(H)) continue;
                        for (int kx = -1; kx <= 1; ++kx) {
                            const long sx = long(xw) + kx;
                            if (sx < 0 || sx >= long(W)) continue;
                            kg[(ky + 1) * 3 + (kx + 1)] +=
                                g * x_.at(in, c, std::size_t(sy), std::size_t(sx));
                            gx.at(in, c, std::size_t(sy), std::size_t(sx)) +=
                                g * k[(ky + 1) * 3 + (kx + 1)];
                        }
                    }
                }
        }
    return gx;
}

// -------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, std::size_t channels, double momentum, double eps)
    : name_(std::move(name)), c_(channels), momentum_(momentum), eps_(eps),
      gamma_(make_param(name_ + ".gamma", {channels}, true, false, 1.0)),
      beta_(make_param(name_ + ".beta", {channels}, true, false, 0.0)),
      run_mean_(make_param(name_ + ".running_mean", {channels}, false, false, 0.0)),
      run_var_(make_param(name_ + ".running_var", {channels}, false, false, 1.0)) {}

void BatchNorm::collect(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&run_mean_);
    out.push_back(&run_var_);
}

Tensor4 BatchNorm::forward(const Tensor4& x, bool training) {
    check_input(x, c_, name_);
    const std::size_t K = x.n * x.h * x.w;
    Tensor4 out(x.n, x.c, x.h, x.w);
    xhat_ = Tensor4(x.n, x.c, x.h, x.w);
    inv_std_.assign(c_, 0.0);
    count_ = K;

    for (std::size_t c = 0; c < c_; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0;
            for (std::size_t in = 0; in < x.n; ++in) {
                const double* p = x.v.data() + x.idx(in, c, 0, 0);
                for (std::size_t i = 0; i < x.h * x.w; ++i) s += p[i];
            }
            mean = s / double(K);
            double v = 0.0;
            for (std::size_t in = 0; in < x.n; ++in) {
                const double* p = x.v.data() + x.idx(in, c, 0, 0);
                for (std::size_t i = 0; i < x.h * x.w; ++i) {
                    const double d = p[i] - mean;
                    v += d * d;
                }
            }
            var = v / double(K);
            run_mean_.value[c] = (1.0 - momentum_) * run_mean_.value[c] + momentum_ * mean;
            run_var_.value[c] = (1.0 - momentum_) * run_var_.value[c] + momentum_ * var;
        } else {
            mean = run_mean_.value[c];
            var = run_var_.value[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        const double g = gamma_.value[c], b = beta_.value[c];
        for (std::size_t in = 0; in < x.n; ++in) {
            const double* p = x.v.data() + x.idx(in, c, 0, 0);
            double* xh = xhat_.v.data() + xhat_.idx(in, c, 0, 0);
            double* o = out.v.data() + out.idx(in, c, 0, 0);
            for (std::size_t i = 0; i < x.h * x.w; ++i) {
                xh[i] = (p[i] - mean) * inv;
                o[i] = g * xh[i] + b;
            }
        }
    }
    train_mode_cache_ = training;
    return out;
}

Tensor4 BatchNorm::backward(const Tensor4& gy) {
    if (!gy.same_shape(xhat_))
        throw DimensionError("stage '" + name_ + "': backward shape mismatch");
    const std::size_t K = count_;
    Tensor4 gx(gy.n, gy.c, gy.h, gy.w);
    for (std::size_t c = 0; c < c_; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::size_t in = 0; in < gy.n; ++in) {
            const double* g = gy.v.data() + gy.idx(in, c, 0, 0);
            const double* xh = xhat_.v.data() + xhat_.idx(in, c, 0, 0);
            for (std::size_t i = 0; i < gy.h * gy.w; ++i) {
                sum_gy += g[i];
                sum_gy_xhat += g[i] * xh[i];
            }
        }
        gamma_.grad[c] += sum_gy_xhat;
        beta_.grad[c] += sum_gy;
        const double gm = gamma_.value[c] * inv_std_[c];
        const double mean_gy = sum_gy / double(K);
        const double mean_gy_xhat = sum_gy_xhat / double(K);
        for (std::size_t in = 0; in < gy.n; ++in) {
            const double* g = gy.v.data() + gy.idx(in, c, 0, 0);
            const double* xh = xhat_.v.data() + xhat_.idx(in, c, 0, 0);
            double* o = gx.v.data() + gx.idx(in, c, 0, 0);
            if (train_mode_cache_) {
                for (std::size_t i = 0; i < gy.h * gy.w; ++i)
                    o[i] = gm * (g[i] - mean_gy - xh[i] * mean_gy_xhat);
            } else {
                for (std::size_t i = 0; i < gy.h * gy.w; ++i) o[i] = gm * g[i];
            }
        }
    }
    return gx;
}

// ------------------------------------------------------------------- Relu

Tensor4 Relu::forward(const Tensor4& x, bool) {
    n_ = x.n;
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    mask_.assign(x.size(), 0);
    Tensor4 out(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.v[i] > 0.0) {
            out.v[i] = x.v[i];
            mask_[i] = 1;
        }
    }
    return out;
}

Tensor4 Relu::backward(const Tensor4& gy) {
    Tensor4 gx(n_, c_, h_, w_);
    for (std::size_t i = 0; i < gy.size(); ++i) gx.v[i] = mask_[i] ? gy.v[i] : 0.0;
    return gx;
}

// --------------------------------------------------------------- MaxPool2

Tensor4 MaxPool2::forward(const Tensor4& x, bool) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw DimensionError("stage '" + name_ + "': pooling needs even dims, got " +
                             std::to_string(x.h) + "x" + std::to_string(x.w));
    n_ = x.n;
    c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    const std::size_t oh = x.h / 2, ow = x.w / 2;
    Tensor4 out(x.n, x.c, oh, ow);
    argmax_.assign(out.size(), 0);
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xw = 0; xw < ow; ++xw) {
                    double best = -1e300;
                    std::size_t best_idx = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = x.idx(in, c, 2 * y + dy, 2 * xw + dx);
                            if (x.v[idx] > best) {
                                best = x.v[idx];
                                best_idx = idx;
                            }
                        }
                    out.at(in, c, y, xw) = best;
                    argmax_[out.idx(in, c, y, xw)] = best_idx;
                }
    return out;
}

Tensor4 MaxPool2::backward(const Tensor4& gy) {
    Tensor4 gx(n_, c_, in_h_, in_w_);
    for (std::size_t i = 0; i < gy.size(); ++i) gx.v[argmax_[i]] += gy.v[i];
    return gx;
}

// ------------------------------------------------------- ChannelAttention

ChannelAttention::ChannelAttention(std::string name, std::size_t channels,
                                   std::size_t reduction)
    : name_(std::move(name)), c_(channels), mid_(std::max<std::size_t>(1, channels / reduction)),
      w1_(make_param(name_ + ".mlp_w1", {mid_, c_}, true, true)),
      b1_(make_param(name_ + ".mlp_b1", {mid_}, true, false)),
      w2_(make_param(name_ + ".mlp_w2", {c_, mid_}, true, true)),
      b2_(make_param(name_ + ".mlp_b2", {c_}, true, false)) {}

void ChannelAttention::init(std::uint64_t key, std::size_t& counter) {
    fill_he_normal(w1_, double(c_), key, counter);
    fill_he_normal(w2_, double(mid_), key, counter);
}

void ChannelAttention::collect(std::vector<Param*>& out) {
    out.push_back(&w1_);
    out.push_back(&b1_);
    out.push_back(&w2_);
    out.push_back(&b2_);
}

Tensor4 ChannelAttention::forward(const Tensor4& x, bool) {
    check_input(x, c_, name_);
    const std::size_t N = x.n, HW = x.h * x.w;
    x_ = x;
    savg_.assign(N * c_, 0.0);
    smax_.assign(N * c_, 0.0);
    gate_.assign(N * c_, 0.0);
    h_avg_.assign(N * mid_, 0.0);
    h_max_.assign(N * mid_, 0.0);
    argmax_.assign(N * c_, 0);

    Tensor4 out(x.n, x.c, x.h, x.w);
    std::vector<double> za(c_), zm(c_);
    for (std::size_t in = 0; in < N; ++in) {
        for (std::size_t c = 0; c < c_; ++c) {
            const double* p = x.v.data() + x.idx(in, c, 0, 0);
            double s = 0.0, mx = p[0];
            std::size_t arg = 0;
            for (std::size_t i = 0; i < HW; ++i) {
                s += p[i];
                if (p[i] > mx) {
                    mx = p[i];
                    arg = i;
                }
            }
            savg_[in * c_ + c] = s / double(HW);
            smax_[in * c_ + c] = mx;
            argmax_[in * c_ + c] = arg;
        }
        auto mlp = [&](const double* s, double* hidden, std::vector<double>& z) {
            for (std::size_t j = 0; j < mid_; ++j) {
                double a = b1_.value[j];
                const double* wr = w1_.value.data() + j * c_;
                for (std::size_t c = 0; c < c_; ++c) a += wr[c] * s[c];
                hidden[j] = a > 0.0 ? a : 0.0;
            }
            for (std::size_t c = 0; c < c_; ++c) {
                double a = b2_.value[c];
                const double* wr = w2_.value.data() + c * mid_;
                for (std::size_t j = 0; j < mid_; ++j) a += wr[j] * hidden[j];
                z[c] = a;
            }
        };
        mlp(savg_.data() + in * c_, h_avg_.data() + in * mid_, za);
        mlp(smax_.data() + in * c_, h_max_.data() + in * mid_, zm);
        for (std::size_t c = 0; c < c_; ++c) {
            const double a = sigmoid(za[c] + zm[c]);
            gate_[in * c_ + c] = a;
            const double* p = x.v.data() + x.idx(in, c, 0, 0);
            double* o = out.v.data() + out.idx(in, c, 0, 0);
            for (std::size_t i = 0; i < HW; ++i) o[i] = p[i] * a;
        }
    }
    return out;
}

Tensor4 ChannelAttention::backward(const Tensor4& gy) {
    if (!gy.same_shape(x_))
        throw DimensionError("stage '" + name_ + "': backward shape mismatch");
    const std::size_t N = x_.n, HW = x_.h * x_.w;
    Tensor4 gx(x_.n, x_.c, x_.h, x_.w);
    std::vector<double> dz(c_), dpre(mid_), ds_avg(c_), ds_max(c_);
    for (std::size_t in = 0; in < N; ++in) {
        for (std::size_t c = 0; c < c_; ++c) {
            const double* g = gy.v.data() + gy.idx(in, c, 0, 0);
            const double* p = x_.v.data() + x_.idx(in, c, 0, 0);
            double* o = gx.v.data() + gx.idx(in, c, 0, 0);
            const double a = gate_[in * c_ + c];
            double dgate = 0.0;
            for (std::size_t i = 0; i < HW; ++i) {
                dgate += g[i] * p[i];
                o[i] = g[i] * a;
            }
            dz[c] = dgate * a * (1.0 - a);
        }
        auto mlp_back = [&](const double* s, const double* hidden, std::vector<double>& ds) {
            for (std::size_t c = 0; c < c_; ++c) {
                b2_.grad[c] += dz[c];
                double* wg = w2_.grad.data() + c * mid_;
                for (std::size_t j = 0; j < mid_; ++j) wg[j] += dz[c] * hidden[j];
            }
            for (std::size_t j = 0; j < mid_; ++j) {
                double dh = 0.0;
                for (std::size_t c = 0; c < c_; ++c) dh += w2_.value[c * mid_ + j] * dz[c];
                dpre[j] = hidden[j] > 0.0 ? dh : 0.0;
                b1_.grad[j] += dpre[j];
                double* wg = w1_.grad.data() + j * c_;
                for (std::size_t c = 0; c < c_; ++c) wg[c] += dpre[j] * s[c];
            }
            for (std::size_t c = 0; c < c_; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < mid_; ++j) acc += w1_.value[j * c_ + c] * dpre[j];
                ds[c] = acc;
            }
        };
        mlp_back(savg_.data() + in * c_, h_avg_.data() + in * mid_, ds_avg);
        mlp_back(smax_.data() + in * c_, h_max_.data() + in * mid_, ds_max);
        for (std::size_t c = 0; c < c_; ++c) {
            double* o = gx.v.data() + gx.idx(in, c, 0, 0);
            const double spread = ds_avg[c] / double(HW);
            for (std::size_t i = 0; i < HW; ++i) o[i] += spread;
            o[argmax_[in * c_ + c]] += ds_max[c];
        }
    }
    return gx;
}

// ------------------------------------------------------- SpatialAttention

SpatialAttention::SpatialAttention(std::string name)
    : name_(std::move(name)), conv_(make_param(name_ + ".conv7", {2, 7, 7}, true, true)) {}

void SpatialAttention::init(std::uint64_t key, std::size_t& counter) {
    fill_he_normal(conv_, 2.0 * 49.0, key, counter);
}

void SpatialAttention::collect(std::vector<Param*>& out) { out.push_back(&conv_); }

Tensor4 SpatialAttention::forward(const Tensor4& x, bool) {
    const std::size_t N = x.n, C = x.c, H = x.h, W = x.w;
    x_ = x;
    mavg_.assign(N * H * W, 0.0);
    mmax_.assign(N * H * W, 0.0);
    gate_.assign(N * H * W, 0.0);
    argmax_.assign(N * H * W, 0);

    Tensor4 out(N, C, H, W);
    for (std::size_t in = 0; in < N; ++in) {
        double* avg = mavg_.data() + in * H * W;
        double* mx = mmax_.data() + in * H * W;
        std::size_t* arg = argmax_.data() + in * H * W;
        for (std::size_t i = 0; i < H * W; ++i) {
            double s = 0.0, best = x.v[x.idx(in, 0, 0, 0) + i];
            std::size_t bc = 0;
            for (std::size_t c = 0; c < C; ++c) {
                const double v = x.v[x.idx(in, c, 0, 0) + i];
                s += v;
                if (v > best) {
                    best = v;
                    bc = c;
                }
            }
            avg[i] = s / double(C);
            mx[i] = best;
            arg[i] = bc;
        }
        double* gt = gate_.data() + in * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xw = 0; xw < W; ++xw) {
                double t = 0.0;
                for (int ky = -3; ky <= 3; ++ky) {
                    const long sy = long(y) + ky;
                    if (sy < 0 || sy >= long(H)) continue;
                    for (int kx = -3; kx <= 3; ++kx) {
                        const long sx = long(xw) + kx;
                        if (sx < 0 || sx >= long(W)) continue;
                        const std::size_t kidx = std::size_t(ky + 3) * 7 + std::size_t(kx + 3);
                        const std::size_t midx = std::size_t(sy) * W + std::size_t(sx);
                        t += conv_.value[kidx] * avg[midx];
                        t += conv_.value[49 + kidx] * mx[midx];
                    }
                }
                gt[y * W + xw] = sigmoid(t);
            }
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = x.v.data() + x.idx(in, c, 0, 0);
            double* o = out.v.data() + out.idx(in, c, 0, 0);
            for (std::size_t i = 0; i < H * W; ++i) o[i] = p[i] * gt[i];
        }
    }
    return out;
}

Tensor4 SpatialAttention::backward(const Tensor4& gy) {
    if (!gy.same_shape(x_))
        throw DimensionError("stage '" + name_ + "': backward shape mismatch");
    const std::size_t N = x_.n, C = x_.c, H = x_.h, W = x_.w;
    Tensor4 gx(N, C, H, W);
    std::vector<double> dt(H * W), davg(H * W), dmax(H * W);
    for (std::size_t in = 0; in < N; ++in) {
        const double* gt = gate_.data() + in * H * W;
        const double* avg = mavg_.data() + in * H * W;
        const double* mx = mmax_.data() + in * H * W;
        const std::size_t* arg = argmax_.data() + in * H * W;
        for (std::size_t i = 0; i < H * W; ++i) {
            double dgate = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t xi = x_.idx(in, c, 0, 0) + i;
                dgate += gy.v[xi] * x_.v[xi];
                gx.v[xi] += gy.v[xi] * gt[i];
            }
            dt[i] = dgate * gt[i] * (1.0 - gt[i]);
        }
        std::fill(davg.begin(), davg.end(), 0.0);
        std::fill(dmax.begin(), dmax.end(), 0.0);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xw = 0; xw < W; ++xw) {
                const double d = dt[y * W + xw];
                if (d == 0.0) continue;
                for (int ky = -3; ky <= 3; ++ky) {
                    const long sy = long(y) + ky;
                    if (sy < 0 || sy >= long(H)) continue;
                    for (int kx = -3; kx <= 3; ++kx) {
                        const long sx = long(xw) + kx;
                        if (sx < 0 || sx >= long(W)) continue;
                        const std::size_t kidx = std::size_t(ky + 3) * 7 + std::size_t(kx + 3);
                        const std::size_t midx = std::size_t(sy) * W + std::size_t(sx);
                        conv_.grad[kidx] += d * avg[midx];
                        conv_.grad[49 + kidx] += d * mx[midx];
                        davg[midx] += d * conv_.value[kidx];
                        dmax[midx] += d * conv_.value[49 + kidx];
                    }
                }
            }
        for (std::size_t i = 0; i < H * W; ++i) {
            const double spread = davg[i] / double(C);
            for (std::size_t c = 0; c < C; ++c) gx.v[gx.idx(in, c, 0, 0) + i] += spread;
            gx.v[gx.idx(in, arg[i], 0, 0) + i] += dmax[i];
        }
    }
    return gx;
}

// ------------------------------------------------------------ BilinearUp2

namespace {

struct UpAxis {
    std::size_t i0, i1;
    double frac;
};

UpAxis up_axis(std::size_t out_i, std::size_t in_n) {
    const double src = (double(out_i) + 0.5) / 2.0 - 0.5;
    UpAxis a;
    if (src <= 0.0 || in_n == 1) {
        a.i0 = a.i1 = 0;
        a.frac = 0.0;
    } else if (src >= double(in_n - 1)) {
        a.i0 = a.i1 = in_n - 1;
        a.frac = 0.0;
    } else {
        a.i0 = std::size_t(src);
        a.i1 = a.i0 + 1;
        a.frac = src - double(a.i0);
    }
    return a;
}

} // namespace

Tensor4 BilinearUp2::forward(const Tensor4& x, bool) {
    n_ = x.n;
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    Tensor4 out(x.n, x.c, 2 * x.h, 2 * x.w);
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t y = 0; y < out.h; ++y) {
                const UpAxis ay = up_axis(y, x.h);
                for (std::size_t xw = 0; xw < out.w; ++xw) {
                    const UpAxis ax = up_axis(xw, x.w);
                    const double v00 = x.at(in, c, ay.i0, ax.i0);
                    const double v01 = x.at(in, c, ay.i0, ax.i1);
                    const double v10 = x.at(in, c, ay.i1, ax.i0);
                    const double v11 = x.at(in, c, ay.i1, ax.i1);
                    out.at(in, c, y, xw) = (1 - ay.frac) * ((1 - ax.frac) * v00 + ax.frac * v01) +
                                           ay.frac * ((1 - ax.frac) * v10 + ax.frac * v11);
                }
            }
    return out;
}

Tensor4 BilinearUp2::backward(const Tensor4& gy) {
    Tensor4 gx(n_, c_, h_, w_);
    for (std::size_t in = 0; in < gy.n; ++in)
        for (std::size_t c = 0; c < gy.c; ++c)
            for (std::size_t y = 0; y < gy.h; ++y) {
                const UpAxis ay = up_axis(y, h_);
                for (std::size_t xw = 0; xw < gy.w; ++xw) {
                    const UpAxis ax = up_axis(xw, w_);
                    const double g = gy.at(in, c, y, xw);
                    gx.at(in, c, ay.i0, ax.i0) += (1 - ay.frac) * (1 - ax.frac) * g;
                    gx.at(in, c, ay.i0, ax.i1) += (1 - ay.frac) * ax.frac * g;
                    gx.at(in, c, ay.i1, ax.i0) += ay.frac * (1 - ax.frac) * g;
                    gx.at(in, c, ay.i1, ax.i1) += ay.frac * ax.frac * g;
                }
            }
    return gx;
}

// ---------------------------------------------------------------- Conv1x1

Conv1x1::Conv1x1(std::string name, std::size_t c_in, std::size_t c_out)
    : name_(std::move(name)), cin_(c_in), cout_(c_out),
      w_(make_param(name_ + ".w", {c_out, c_in}, true, true)),
      b_(make_param(name_ + ".b", {c_out}, true, false)) {}

void Conv1x1::init(std::uint64_t key, std::size_t& counter) {
    fill_he_normal(w_, double(cin_), key, counter);
}

void Conv1x1::collect(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

Tensor4 Conv1x1::forward(const Tensor4& x, bool) {
    check_input(x, cin_, name_);
    x_ = x;
    Tensor4 out(x.n, cout_, x.h, x.w);
    const std::size_t HW = x.h * x.w;
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t o = 0; o < cout_; ++o) {
            double* dst = out.v.data() + out.idx(in, o, 0, 0);
            for (std::size_t i = 0; i < HW; ++i) dst[i] = b_.value[o];
            const double* wr = w_.value.data() + o * cin_;
            for (std::size_t c = 0; c < cin_; ++c) {
                const double* src = x.v.data() + x.idx(in, c, 0, 0);
                for (std::size_t i = 0; i < HW; ++i) dst[i] += wr[c] * src[i];
            }
        }
    return out;
}

Tensor4 Conv1x1::backward(const Tensor4& gy) {
    if (gy.n != x_.n || gy.c != cout_ || gy.h != x_.h || gy.w != x_.w)
        throw DimensionError("stage '" + name_ + "': backward shape mismatch");
    Tensor4 gx(x_.n, cin_, x_.h, x_.w);
    const std::size_t HW = x_.h * x_.w;
    for (std::size_t in = 0; in < x_.n; ++in)
        for (std::size_t o = 0; o < cout_; ++o) {
            const double* g = gy.v.data() + gy.idx(in, o, 0, 0);
            for (std::size_t i = 0; i < HW; ++i) b_.grad[o] += g[i];
            const double* wr = w_.value.data() + o * cin_;
            double* wg = w_.grad.data() + o * cin_;
            for (std::size_t c = 0; c < cin_; ++c) {
                const double* src = x_.v.data() + x_.idx(in, c, 0, 0);
                double* gxp = gx.v.data() + gx.idx(in, c, 0, 0);
                double acc = 0.0;
                for (std::size_t i = 0; i < HW; ++i) {
                    acc += g[i] * src[i];
                    gxp[i] += wr[c] * g[i];
                }
                wg[c] += acc;
            }
        }
    return gx;
}

// -------------------------------------------------------- composite blocks

DoubleDsc::DoubleDsc(const std::string& name, std::size_t c_in, std::size_t c_out,
                     double bn_momentum, double bn_eps)
    : conv1(name + ".dsc1", c_in, c_out), bn1(name + ".bn1", c_out, bn_momentum, bn_eps),
      conv2(name + ".dsc2", c_out, c_out), bn2(name + ".bn2", c_out, bn_momentum, bn_eps) {}

Tensor4 DoubleDsc::forward(const Tensor4& x, bool training) {
    Tensor4 t = relu1.forward(bn1.forward(conv1.forward(x, training), training), training);
    return relu2.forward(bn2.forward(conv2.forward(t, training), training), training);
}

Tensor4 DoubleDsc::backward(const Tensor4& gy) {
    Tensor4 g = conv2.backward(bn2.backward(relu2.backward(gy)));
    return conv1.backward(bn1.backward(relu1.backward(g)));
}

void DoubleDsc::collect(std::vector<Param*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
}

void DoubleDsc::init(std::uint64_t key, std::size_t& counter) {
    conv1.init(key, counter);
    conv2.init(key, counter);
}

Cbam::Cbam(const std::string& name, std::size_t channels, std::size_t reduction)
    : channel(name + ".channel_att", channels, reduction), spatial(name + ".spatial_att") {}

Tensor4 Cbam::forward(const Tensor4& x, bool training) {
    return spatial.forward(channel.forward(x, training), training);
}

Tensor4 Cbam::backward(const Tensor4& gy) { return channel.backward(spatial.backward(gy)); }

void Cbam::collect(std::vector<Param*>& out) {
    channel.collect(out);
    spatial.collect(out);
}

void Cbam::init(std::uint64_t key, std::size_t& counter) {
    channel.init(key, counter);
    spatial.init(key, counter);
}

} // namespace nn

// ----------------------------------------------------------------- model

std::optional<std::pair<long, long>> aligned_crop_offsets(const Grid& in_grid,
                                                          const Grid& out_grid) {
    const double rel = 1e-9;
    if (std::fabs(in_grid.lat_step - out_grid.lat_step) > rel * in_grid.lat_step ||
        std::fabs(in_grid.lon_step - out_grid.lon_step) > rel * in_grid.lon_step)
        return std::nullopt;
    const double fr = (out_grid.lat_start - in_grid.lat_start) / in_grid.lat_step;
    const double fc = (out_grid.lon_start - in_grid.lon_start) / in_grid.lon_step;
    const long r = std::lround(fr), c = std::lround(fc);
    if (std::fabs(fr - double(r)) > 1e-6 || std::fabs(fc - double(c)) > 1e-6) return std::nullopt;
    if (r < 0 || c < 0 || r + long(out_grid.n_lat) > long(in_grid.n_lat) ||
        c + long(out_grid.n_lon) > long(in_grid.n_lon))
        return std::nullopt;
    return std::make_pair(r, c);
}

namespace {

std::size_t next_multiple(std::size_t v, std::size_t m) { return ((v + m - 1) / m) * m; }

// Reflected (mirror, edge not repeated) source index.
std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (long(n) - 1);
    long r = i % period;
    if (r < 0) r += period;
    if (r >= long(n)) r = period - r;
    return std::size_t(r);
}

} // namespace

CnnModel::CnnModel(const CnnConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), stem_("stem", 1, std::min<std::size_t>(cfg.base_channels, cfg.channel_cap),
                       cfg.bn_momentum, cfg.bn_eps),
      stem_att_("stem", std::min<std::size_t>(cfg.base_channels, cfg.channel_cap),
                cfg.attention_reduction),
      out_conv_("head", std::min<std::size_t>(cfg.base_channels, cfg.channel_cap), 1) {
    if (cfg.stages < 1 || cfg.stages > 6)
        throw ValidationError("cnn: stages must be in [1, 6], got " +
                              std::to_string(cfg.stages));
    if (cfg.in_h == 0 || cfg.in_w == 0 || cfg.out_h == 0 || cfg.out_w == 0)
        throw ValidationError("cnn: input and output dims must be positive");

    const std::size_t mult = std::size_t(1) << cfg.stages;
    ph_ = next_multiple(cfg.in_h, mult);
    pw_ = next_multiple(cfg.in_w, mult);
    pad_top_ = long((ph_ - cfg.in_h) / 2);
    pad_left_ = long((pw_ - cfg.in_w) / 2);
    if (std::size_t(pad_top_) + (ph_ - cfg.in_h - pad_top_) >= cfg.in_h ||
        std::size_t(pad_left_) + (pw_ - cfg.in_w - pad_left_) >= cfg.in_w)
        throw ValidationError("cnn: input too small to reflect-pad for " +
                              std::to_string(cfg.stages) + " stages");

    if (cfg.crop_top >= 0) {
        crop_top_ = pad_top_ + cfg.crop_top;
        crop_left_ = pad_left_ + cfg.crop_left;
    } else {
        crop_top_ = long((ph_ - cfg.out_h) / 2);
        crop_left_ = long((pw_ - cfg.out_w) / 2);
    }
    if (crop_top_ < 0 || crop_left_ < 0 || crop_top_ + long(cfg.out_h) > long(ph_) ||
        crop_left_ + long(cfg.out_w) > long(pw_))
        throw ValidationError("cnn: crop window exceeds the padded map");

    ch_.resize(cfg.stages + 1);
    for (int s = 0; s <= cfg.stages; ++s)
        ch_[s] = std::min<std::size_t>(std::size_t(cfg.base_channels) << s,
                                       std::size_t(cfg.channel_cap));

    for (int s = 1; s <= cfg.stages; ++s) {
        auto d = std::make_unique<Down>(Down{
            nn::MaxPool2("down" + std::to_string(s) + ".pool"),
            nn::DoubleDsc("down" + std::to_string(s), ch_[s - 1], ch_[s], cfg.bn_momentum,
                          cfg.bn_eps),
            nn::Cbam("down" + std::to_string(s), ch_[s], cfg.attention_reduction)});
        down_.push_back(std::move(d));
    }
    for (int k = 0; k < cfg.stages; ++k) {
        const int s = cfg.stages - k; // decoder step from stage s to s-1
        auto u = std::make_unique<Up>(
            Up{nn::BilinearUp2(), nn::DoubleDsc("up" + std::to_string(s), ch_[s - 1] + ch_[s],
                                                ch_[s - 1], cfg.bn_momentum, cfg.bn_eps)});
        up_.push_back(std::move(u));
    }

    std::size_t counter = 0;
    stem_.init(init_seed, counter);
    stem_att_.init(init_seed, counter);
    for (auto& d : down_) {
        d->conv.init(init_seed, counter);
        d->att.init(init_seed, counter);
    }
    for (auto& u : up_) u->conv.init(init_seed, counter);
    out_conv_.init(init_seed, counter);
}

void CnnModel::visit_params(const ParamVisitor& fn) {
    std::vector<Param*> all;
    stem_.collect(all);
    stem_att_.collect(all);
    for (auto& d : down_) {
        d->conv.collect(all);
        d->att.collect(all);
    }
    for (auto& u : up_) u->conv.collect(all);
    out_conv_.collect(all);
    for (Param* p : all) fn(*p);
}

Tensor4 CnnModel::reflect_pad(const Tensor4& x) const {
    Tensor4 out(x.n, x.c, ph_, pw_);
    for (std::size_t in = 0; in < x.n; ++in)
        for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t y = 0; y < ph_; ++y) {
                const std::size_t sy = reflect_index(long(y) - pad_top_, x.h);
                for (std::size_t xw = 0; xw < pw_; ++xw) {
                    const std::size_t sx = reflect_index(long(xw) - pad_left_, x.w);
                    out.at(in, c, y, xw) = x.at(in, c, sy, sx);
                }
            }
    return out;
}

Tensor4 CnnModel::fold_pad_gradient(const Tensor4& gpad) const {
    Tensor4 out(gpad.n, gpad.c, cfg_.in_h, cfg_.in_w);
    for (std::size_t in = 0; in < gpad.n; ++in)
        for (std::size_t c = 0; c < gpad.c; ++c)
            for (std::size_t y = 0; y < ph_; ++y) {
                const std::size_t sy = reflect_index(long(y) - pad_top_, cfg_.in_h);
                for (std::size_t xw = 0; xw < pw_; ++xw) {
                    const std::size_t sx = reflect_index(long(xw) - pad_left_, cfg_.in_w);
                    out.at(in, c, sy, sx) += gpad.at(in, c, y, xw);
                }
            }
    return out;
}

Tensor4 CnnModel::forward(const Tensor4& x, bool training) {
    if (x.c != 1 || x.h != cfg_.in_h || x.w != cfg_.in_w)
        throw DimensionError("stage 'input': expected (N, 1, " + std::to_string(cfg_.in_h) +
                             ", " + std::to_string(cfg_.in_w) + "), got (" + std::to_string(x.n) +
                             ", " + std::to_string(x.c) + ", " + std::to_string(x.h) + ", " +
                             std::to_string(x.w) + ")");
    const int S = cfg_.stages;
    enc_cache_.assign(std::size_t(S) + 1, Tensor4());

    Tensor4 e = stem_att_.forward(stem_.forward(reflect_pad(x), training), training);
    enc_cache_[0] = e;
    for (int s = 1; s <= S; ++s) {
        Down& d = *down_[s - 1];
        e = d.att.forward(d.conv.forward(d.pool.forward(e, training), training), training);
        enc_cache_[s] = e;
    }

    Tensor4 dten = e;
    for (int k = 0; k < S; ++k) {
        const int s = S - k;
        Up& u = *up_[k];
        Tensor4 upsampled = u.upsample.forward(dten, training);
        const Tensor4& skip = enc_cache_[s - 1];
        if (upsampled.h != skip.h || upsampled.w != skip.w)
            throw DimensionError("stage 'up" + std::to_string(s) + "': skip shape mismatch");
        Tensor4 cat(skip.n, skip.c + upsampled.c, skip.h, skip.w);
        for (std::size_t in = 0; in < cat.n; ++in) {
            std::copy_n(skip.v.data() + skip.idx(in, 0, 0, 0), skip.c * skip.h * skip.w,
                        cat.v.data() + cat.idx(in, 0, 0, 0));
            std::copy_n(upsampled.v.data() + upsampled.idx(in, 0, 0, 0),
                        upsampled.c * upsampled.h * upsampled.w,
                        cat.v.data() + cat.idx(in, skip.c, 0, 0));
        }
        dten = u.conv.forward(cat, training);
    }

    Tensor4 full = out_conv_.forward(dten, training);
    Tensor4 out(full.n, 1, cfg_.out_h, cfg_.out_w);
    for (std::size_t in = 0; in < full.n; ++in)
        for (std::size_t y = 0; y < cfg_.out_h; ++y)
            for (std::size_t xw = 0; xw < cfg_.out_w; ++xw)
                out.at(in, 0, y, xw) =
                    full.at(in, 0, std::size_t(crop_top_) + y, std::size_t(crop_left_) + xw);
    return out;
}

Tensor4 CnnModel::backward(const Tensor4& grad_out) {
    const int S = cfg_.stages;
    if (grad_out.c != 1 || grad_out.h != cfg_.out_h || grad_out.w != cfg_.out_w)
        throw DimensionError("stage 'output': backward shape mismatch");

    Tensor4 gfull(grad_out.n, 1, ph_, pw_);
    for (std::size_t in = 0; in < grad_out.n; ++in)
        for (std::size_t y = 0; y < cfg_.out_h; ++y)
            for (std::size_t xw = 0; xw < cfg_.out_w; ++xw)
                gfull.at(in, 0, std::size_t(crop_top_) + y, std::size_t(crop_left_) + xw) =
                    grad_out.at(in, 0, y, xw);

    Tensor4 g = out_conv_.backward(gfull);

    std::vector<Tensor4> grad_enc(std::size_t(S) + 1);
    for (int k = S - 1; k >= 0; --k) {
        const int s = S - k;
        Up& u = *up_[k];
        Tensor4 gcat = u.conv.backward(g);
        const std::size_t skip_c = ch_[s - 1];
        Tensor4 gskip(gcat.n, skip_c, gcat.h, gcat.w);
        Tensor4 gup(gcat.n, gcat.c - skip_c, gcat.h, gcat.w);
        for (std::size_t in = 0; in < gcat.n; ++in) {
            std::copy_n(gcat.v.data() + gcat.idx(in, 0, 0, 0), skip_c * gcat.h * gcat.w,
                        gskip.v.data() + gskip.idx(in, 0, 0, 0));
            std::copy_n(gcat.v.data() + gcat.idx(in, skip_c, 0, 0),
                        (gcat.c - skip_c) * gcat.h * gcat.w,
                        gup.v.data() + gup.idx(in, 0, 0, 0));
        }
        if (grad_enc[s - 1].size() == 0) {
            grad_enc[s - 1] = std::move(gskip);
        } else {
            for (std::size_t i = 0; i < gskip.size(); ++i) grad_enc[s - 1].v[i] += gskip.v[i];
        }
        g = u.upsample.backward(gup);
    }
    if (grad_enc[S].size() == 0) {
        grad_enc[S] = std::move(g);
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) grad_enc[S].v[i] += g.v[i];
    }

    for (int s = S; s >= 1; --s) {
        Down& d = *down_[s - 1];
        Tensor4 ge = d.pool.backward(d.conv.backward(d.att.backward(grad_enc[s])));
        if (grad_enc[s - 1].size() == 0) {
            grad_enc[s - 1] = std::move(ge);
        } else {
            for (std::size_t i = 0; i < ge.size(); ++i) grad_enc[s - 1].v[i] += ge.v[i];
        }
    }

    Tensor4 gpad = stem_.backward(stem_att_.backward(grad_enc[0]));
    return fold_pad_gradient(gpad);
}

} // namespace dsv
