#include "dsv/cnn.hpp"
#include "dsv/errors.hpp"
#include "dsv/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace dsv;

namespace {

Tensor4 random_tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                      std::uint64_t seed, double offset = 0.0) {
    Tensor4 t(n, c, h, w);
    for (std::size_t i = 0; i < t.size(); ++i)
        t.v[i] = offset + normal_draw(seed, Substream(StreamTag::synth_field, i, 13));
    return t;
}

double weighted_sum(const Tensor4& out, const Tensor4& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.v[i] * r.v[i];
    return s;
}

// Central finite differences against the analytic backward pass, on up to
// `samples` elements per parameter tensor plus the input.
struct GradHarness {
    std::function<Tensor4(const Tensor4&)> forward; // training-mode forward
    std::function<Tensor4(const Tensor4&)> backward;
    std::vector<Param*> params;

    void check(Tensor4 x, std::uint64_t seed, std::size_t samples = 50,
               bool check_input = true) {
        Tensor4 out = forward(x);
        Tensor4 r = random_tensor(out.n, out.c, out.h, out.w, seed + 1);

        for (Param* p : params)
            std::fill(p->grad.begin(), p->grad.end(), 0.0);
        out = forward(x);
        const Tensor4 gx = backward(r);

        auto fd_at = [&](double* slot, double h) {
            const double keep = *slot;
            *slot = keep + h;
            const double up = weighted_sum(forward(x), r);
            *slot = keep - h;
            const double dn = weighted_sum(forward(x), r);
            *slot = keep;
            return (up - dn) / (2.0 * h);
        };
        auto rel_err = [](double a, double b) {
            return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
        };
        // Central differences are meaningless across ReLU / max kinks; a
        // halved step that disagrees with the full step flags one.
        std::size_t checked = 0, skipped = 0;
        auto check_slot = [&](double* slot, double analytic) {
            const double fd1 = fd_at(slot, 1e-5);
            const double fd2 = fd_at(slot, 5e-6);
            if (rel_err(fd1, fd2) > 5e-5) {
                ++skipped;
                return;
            }
            ++checked;
            CHECK(rel_err(analytic, fd1) < 1e-4);
        };

        for (Param* p : params) {
            if (!p->learnable) continue;
            const std::size_t n = std::min(samples, p->size());
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t idx =
                    p->size() <= samples
                        ? k
                        : uniform_index(seed, Substream(StreamTag::synth_field, k, 14), p->size());
                INFO("param ", p->name, " element ", idx);
                check_slot(&p->value[idx], p->grad[idx]);
            }
        }
        if (check_input) {
            const std::size_t n = std::min(samples, x.size());
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t idx =
                    x.size() <= samples
                        ? k
                        : uniform_index(seed, Substream(StreamTag::synth_field, k, 15), x.size());
                INFO("input element ", idx);
                check_slot(&x.v[idx], gx.v[idx]);
            }
        }
        CHECK(checked >= 4 * skipped); // kinks must stay the rare exception
    }
};

template <typename Layer>
GradHarness harness_for(Layer& layer) {
    GradHarness h;
    h.forward = [&layer](const Tensor4& x) { return layer.forward(x, true); };
    h.backward = [&layer](const Tensor4& g) { return layer.backward(g); };
    std::vector<Param*> ps;
    layer.collect(ps);
    h.params = ps;
    return h;
}

} // namespace

TEST_CASE("dsc layer gradients match finite differences") {
    nn::DscConv layer("t.dsc", 3, 4);
    std::size_t counter = 0;
    layer.init(21, counter);
    harness_for(layer).check(random_tensor(2, 3, 6, 8, 31), 77);
}

TEST_CASE("batch norm gradients match finite differences in train mode") {
    nn::BatchNorm layer("t.bn", 3);
    GradHarness h;
    h.forward = [&](const Tensor4& x) { return layer.forward(x, true); };
    h.backward = [&](const Tensor4& g) { return layer.backward(g); };
    std::vector<Param*> ps;
    layer.collect(ps);
    h.params = ps;
    h.check(random_tensor(2, 3, 4, 5, 32, 0.3), 78);
}

TEST_CASE("channel attention gradients match finite differences") {
    nn::ChannelAttention layer("t.catt", 8, 8);
    std::size_t counter = 0;
    layer.init(22, counter);
    harness_for(layer).check(random_tensor(2, 8, 4, 4, 33), 79);
}

TEST_CASE("spatial attention gradients match finite differences") {
    nn::SpatialAttention layer("t.satt");
    std::size_t counter = 0;
    layer.init(23, counter);
    harness_for(layer).check(random_tensor(2, 3, 6, 6, 34), 80);
}

TEST_CASE("pointwise conv gradients match finite differences") {
    nn::Conv1x1 layer("t.head", 3, 2);
    std::size_t counter = 0;
    layer.init(24, counter);
    harness_for(layer).check(random_tensor(2, 3, 5, 5, 35), 81);
}

TEST_CASE("bilinear upsample input gradient matches finite differences") {
    nn::BilinearUp2 layer;
    GradHarness h;
    h.forward = [&](const Tensor4& x) { return layer.forward(x, true); };
    h.backward = [&](const Tensor4& g) { return layer.backward(g); };
    h.check(random_tensor(2, 3, 4, 5, 36), 82);
}

TEST_CASE("max pool input gradient matches finite differences") {
    nn::MaxPool2 layer("t.pool");
    GradHarness h;
    h.forward = [&](const Tensor4& x) { return layer.forward(x, true); };
    h.backward = [&](const Tensor4& g) { return layer.backward(g); };
    h.check(random_tensor(2, 3, 6, 6, 37), 83);
}

TEST_CASE("full model gradients match finite differences end to end") {
    CnnConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.in_h = 12;
    cfg.in_w = 16;
    cfg.out_h = 6;
    cfg.out_w = 8;
    CnnModel model(cfg, 91);
    GradHarness h;
    h.forward = [&](const Tensor4& x) { return model.forward(x, true); };
    h.backward = [&](const Tensor4& g) { return model.backward(g); };
    model.visit_params([&](Param& p) { h.params.push_back(&p); });
    h.check(random_tensor(2, 1, 12, 16, 38), 84, 4); // a few elements per tensor
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
    CnnConfig cfg;
    cfg.stages = 1;
    cfg.base_channels = 4;
    cfg.in_h = 8;
    cfg.in_w = 8;
    cfg.out_h = 4;
    cfg.out_w = 4;
    CnnModel model(cfg, 92);
    model.visit_params([](Param& p) { std::fill(p.grad.begin(), p.grad.end(), 0.0); });
    (void)model.forward(random_tensor(2, 1, 8, 8, 39), true);
    (void)model.backward(Tensor4(2, 1, 4, 4)); // zeros
    model.visit_params([](Param& p) {
        for (double g : p.grad) CHECK(g == 0.0);
    });
}

TEST_CASE("doubling the upstream gradient doubles every parameter gradient") {
    nn::DscConv layer("t.scale", 2, 3);
    std::size_t counter = 0;
    layer.init(25, counter);
    const Tensor4 x = random_tensor(1, 2, 5, 5, 40);
    Tensor4 g = random_tensor(1, 3, 5, 5, 41);

    std::vector<Param*> ps;
    layer.collect(ps);
    for (Param* p : ps) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    (void)layer.forward(x, true);
    (void)layer.backward(g);
    std::vector<std::vector<double>> once;
    for (Param* p : ps) once.push_back(p->grad);

    for (Param* p : ps) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    for (double& v : g.v) v *= 2.0;
    (void)layer.forward(x, true);
    (void)layer.backward(g);
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t k = 0; k < ps[i]->size(); ++k)
            CHECK(ps[i]->grad[k] == doctest::Approx(2.0 * once[i][k]).epsilon(1e-12));
}

TEST_CASE("all-zero parameters yield an all-zero output") {
    CnnConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.in_h = 12;
    cfg.in_w = 16;
    cfg.out_h = 6;
    cfg.out_w = 8;
    CnnModel model(cfg, 93);
    model.visit_params([](Param& p) { std::fill(p.value.begin(), p.value.end(), 0.0); });
    const Tensor4 out = model.forward(random_tensor(3, 1, 12, 16, 42), true);
    for (double v : out.v) CHECK(v == 0.0);
}

TEST_CASE("identity-configured dsc with batch-norm bypass reproduces the crop") {
    // Depthwise delta kernel + pointwise identity = identity map.
    nn::DscConv dsc("t.id", 2, 2);
    std::vector<Param*> ps;
    dsc.collect(ps);
    for (Param* p : ps) std::fill(p->value.begin(), p->value.end(), 0.0);
    // dw is (C, 3, 3): center tap 1. pw is (Cout, Cin): identity.
    ps[0]->value[4] = 1.0;
    ps[0]->value[9 + 4] = 1.0;
    ps[1]->value[0] = 1.0;
    ps[1]->value[3] = 1.0;

    // Batch-norm bypass via identity running statistics in inference mode.
    nn::BatchNorm bn("t.idbn", 2, 0.1, 1e-5);
    std::vector<Param*> bps;
    bn.collect(bps);
    bps[0]->value.assign(2, std::sqrt(1.0 + 1e-5)); // gamma
    bps[1]->value.assign(2, 0.0);                   // beta
    bps[2]->value.assign(2, 0.0);                   // running mean
    bps[3]->value.assign(2, 1.0);                   // running var

    nn::Relu relu;
    const Tensor4 x = random_tensor(1, 2, 8, 10, 43, 5.0); // strictly positive
    const Tensor4 out =
        relu.forward(bn.forward(dsc.forward(x, false), false), false);

    // Center-crop of the identity path equals the cropped input.
    const std::size_t ch = 4, cw = 6, top = 2, left = 2;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < ch; ++i)
            for (std::size_t j = 0; j < cw; ++j)
                CHECK(out.at(0, c, top + i, left + j) ==
                      doctest::Approx(x.at(0, c, top + i, left + j)).epsilon(1e-12));
}

TEST_CASE("fixed seed and input give bitwise-identical outputs") {
    CnnConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.in_h = 12;
    cfg.in_w = 16;
    cfg.out_h = 6;
    cfg.out_w = 8;
    CnnModel a(cfg, 1234), b(cfg, 1234);
    // identical initialization
    std::vector<double> va, vb;
    a.visit_params([&](Param& p) { va.insert(va.end(), p.value.begin(), p.value.end()); });
    b.visit_params([&](Param& p) { vb.insert(vb.end(), p.value.begin(), p.value.end()); });
    CHECK(va == vb);

    const Tensor4 x = random_tensor(2, 1, 12, 16, 44);
    const Tensor4 o1 = a.forward(x, false);
    const Tensor4 o2 = a.forward(x, false);
    CHECK(o1.v == o2.v);
}

TEST_CASE("shape errors name the failing stage") {
    CnnConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.in_h = 12;
    cfg.in_w = 16;
    cfg.out_h = 6;
    cfg.out_w = 8;
    CnnModel model(cfg, 95);
    try {
        (void)model.forward(Tensor4(1, 1, 10, 16), true);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("input") != std::string::npos);
    }
    CHECK_THROWS_AS(CnnModel(CnnConfig{.stages = 9}, 1), ValidationError);
}

TEST_CASE("aligned crop offsets follow the grid geometry") {
    const Grid in(30, 3, 12, -24, 3, 16);
    const Grid out(39, 3, 6, -12, 3, 8);
    const auto off = aligned_crop_offsets(in, out);
    REQUIRE(off.has_value());
    CHECK(off->first == 3);
    CHECK(off->second == 4);
    CHECK(!aligned_crop_offsets(in, Grid(39.5, 3, 6, -12, 3, 8)).has_value());
    CHECK(!aligned_crop_offsets(in, Grid(39, 2.5, 6, -12, 3, 8)).has_value());
}
