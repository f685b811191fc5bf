#pragma once

#include "dsv/grid.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dsv {

// Minimal dense 4-D tensor (batch, channel, row, col), row-major.
struct Tensor4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
        : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t idx(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
        return ((in * c + ic) * h + iy) * w + ix;
    }
    double& at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) {
        return v[idx(in, ic, iy, ix)];
    }
    double at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
        return v[idx(in, ic, iy, ix)];
    }
    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
};

// Named parameter tensor with its gradient accumulator.
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool learnable = true;
    bool decay = false; // participates in the L2 penalty

    std::size_t size() const { return value.size(); }
};

using ParamVisitor = std::function<void(Param&)>;

namespace nn {

// 3x3 depthwise convolution followed by a 1x1 pointwise mix, zero padding,
// stride 1, no bias (batch norm follows).
class DscConv {
public:
    DscConv(std::string name, std::size_t c_in, std::size_t c_out);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);
    std::size_t c_in() const { return cin_; }
    std::size_t c_out() const { return cout_; }

private:
    std::string name_;
    std::size_t cin_, cout_;
    Param dw_; // (Cin, 3, 3)
    Param pw_; // (Cout, Cin)
    Tensor4 x_, mid_;
};

class BatchNorm {
public:
    BatchNorm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);

private:
    std::string name_;
    std::size_t c_;
    double momentum_, eps_;
    Param gamma_, beta_;
    Param run_mean_, run_var_; // non-learnable buffers
    Tensor4 xhat_;
    std::vector<double> inv_std_;
    std::size_t count_ = 0;
    bool train_mode_cache_ = true;
};

class Relu {
public:
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);

private:
    std::vector<std::uint8_t> mask_;
    std::size_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

class MaxPool2 {
public:
    explicit MaxPool2(std::string name) : name_(std::move(name)) {}
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);

private:
    std::string name_;
    std::vector<std::size_t> argmax_;
    std::size_t in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
};

// CBAM channel gate: shared two-layer perceptron over average- and
// max-pooled channel descriptors, summed, squashed by a sigmoid.
class ChannelAttention {
public:
    ChannelAttention(std::string name, std::size_t channels, std::size_t reduction);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);

private:
    std::string name_;
    std::size_t c_, mid_;
    Param w1_, b1_, w2_, b2_;
    Tensor4 x_;
    std::vector<double> savg_, smax_, gate_;
    std::vector<double> h_avg_, h_max_; // post-ReLU hidden activations
    std::vector<std::size_t> argmax_;
};

// CBAM spatial gate: 7x7 convolution over channel-wise mean and max maps.
class SpatialAttention {
public:
    explicit SpatialAttention(std::string name);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);

private:
    std::string name_;
    Param conv_; // (2, 7, 7)
    Tensor4 x_;
    std::vector<double> mavg_, mmax_, gate_;
    std::vector<std::size_t> argmax_;
};

// Deterministic x2 bilinear upsampling (half-pixel centers, clamped edges).
class BilinearUp2 {
public:
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);

private:
    std::size_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

class Conv1x1 {
public:
    Conv1x1(std::string name, std::size_t c_in, std::size_t c_out);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);

private:
    std::string name_;
    std::size_t cin_, cout_;
    Param w_, b_;
    Tensor4 x_;
};

// [DSC -> BN -> ReLU] twice.
struct DoubleDsc {
    DoubleDsc(const std::string& name, std::size_t c_in, std::size_t c_out, double bn_momentum,
              double bn_eps);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);

    DscConv conv1;
    BatchNorm bn1;
    Relu relu1;
    DscConv conv2;
    BatchNorm bn2;
    Relu relu2;
};

// Channel gate followed by spatial gate.
struct Cbam {
    Cbam(const std::string& name, std::size_t channels, std::size_t reduction);
    Tensor4 forward(const Tensor4& x, bool training);
    Tensor4 backward(const Tensor4& gy);
    void collect(std::vector<Param*>& out);
    void init(std::uint64_t key, std::size_t& counter);

    ChannelAttention channel;
    SpatialAttention spatial;
};

} // namespace nn

struct CnnConfig {
    int stages = 2;            // downsampling stages
    int base_channels = 8;     // channels after the stem, doubling per stage
    int channel_cap = 128;
    int attention_reduction = 8;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::size_t in_h = 0, in_w = 0;   // raw input dims
    std::size_t out_h = 0, out_w = 0; // cropped output dims
    // Crop offsets into the full-resolution decoder output; -1 centers.
    long crop_top = -1, crop_left = -1;
};

// When the target grid nests inside the input grid at the same resolution,
// the crop can follow the geometry instead of centering.
std::optional<std::pair<long, long>> aligned_crop_offsets(const Grid& in_grid,
                                                          const Grid& out_grid);

// Encoder/decoder regression network with depthwise-separable convolutions,
// attention gates, max-pool downsampling and bilinear upsampling. Maps one
// input map to one output map; batched along N.
class CnnModel {
public:
    CnnModel(const CnnConfig& cfg, std::uint64_t init_seed);

    // x is (N, 1, in_h, in_w); returns (N, 1, out_h, out_w).
    Tensor4 forward(const Tensor4& x, bool training);
    // Gradient with respect to the raw (unpadded) input.
    Tensor4 backward(const Tensor4& grad_out);

    void visit_params(const ParamVisitor& fn);
    const CnnConfig& config() const { return cfg_; }
    std::size_t padded_h() const { return ph_; }
    std::size_t padded_w() const { return pw_; }
    long pad_top() const { return pad_top_; }
    long pad_left() const { return pad_left_; }
    long crop_top() const { return crop_top_; }
    long crop_left() const { return crop_left_; }

private:
    CnnConfig cfg_;
    std::size_t ph_, pw_;
    long pad_top_, pad_left_;
    long crop_top_, crop_left_;
    std::vector<std::size_t> ch_; // channels per stage, ch_[0] after stem

    nn::DoubleDsc stem_;
    nn::Cbam stem_att_;
    struct Down {
        nn::MaxPool2 pool;
        nn::DoubleDsc conv;
        nn::Cbam att;
    };
    std::vector<std::unique_ptr<Down>> down_;
    struct Up {
        nn::BilinearUp2 upsample;
        nn::DoubleDsc conv;
    };
    std::vector<std::unique_ptr<Up>> up_;
    nn::Conv1x1 out_conv_;

    std::vector<Tensor4> enc_cache_; // encoder outputs (post-attention)
    std::vector<std::size_t> skip_channels_;

    Tensor4 reflect_pad(const Tensor4& x) const;
    Tensor4 fold_pad_gradient(const Tensor4& gpad) const;
};

} // namespace dsv
