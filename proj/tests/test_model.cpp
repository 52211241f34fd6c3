#include "htlmine/errors.hpp"
#include "htlmine/model.hpp"
#include "htlmine/ops.hpp"
#include "htlmine/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace htl;

namespace {

tensor_ptr random_image(int n, int c, int s, uint64_t seed) {
    auto t = make_tensor({n, c, s, s});
    rng r(seed);
    for (auto & v : t->data) {
        v = r.uniform();
    }
    return t;
}

} // namespace

TEST_CASE("build_unet: depth 2 base 8 maps 1x32x32 to 2x32x32") {
    arch_config cfg;
    auto m = build_unet(cfg, 1);
    auto y = m.forward(random_image(3, 1, 32, 2)).logits;
    CHECK(y->shape == std::vector<int64_t>{3, 2, 32, 32});
}

TEST_CASE("build_unet: depth 1 base 1 parameter count matches the hand count") {
    // enc0: 1->1 (9+1) + 1->1 (9+1); bottleneck: 1->2 (18+2) + 2->2 (36+2);
    // dec0: 3->1 (27+1) + 1->1 (9+1); head 1x1: 1->2 (2+2)  => 120
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 1;
    auto m = build_unet(cfg, 1);
    CHECK(m.param_count() == 120);
}

TEST_CASE("forward: divisibility by 2^depth enforced") {
    arch_config cfg;
    cfg.depth = 3;
    auto m = build_unet(cfg, 1);
    CHECK_NOTHROW(m.forward(random_image(1, 1, 32, 3)));
    auto bad = make_tensor({1, 1, 36, 36});
    CHECK_THROWS_AS(m.forward(bad), dimension_error);
}

TEST_CASE("build_classifier: logits shape batch x classes") {
    arch_config cfg;
    cfg.num_cls_classes = 8;
    auto m = build_classifier(cfg, 1);
    auto y = m.forward(random_image(4, 1, 32, 5)).logits;
    CHECK(y->shape == std::vector<int64_t>{4, 8});
}

TEST_CASE("build_classifier: zeroed linear head gives all-zero logits") {
    arch_config cfg;
    cfg.num_cls_classes = 5;
    auto m = build_classifier(cfg, 1);
    for (auto & slot : m.params()) {
        if (slot.name == "fc_w" || slot.name == "fc_b") {
            for (auto & v : slot.value->data) {
                v = 0.0;
            }
        }
    }
    auto x = make_tensor({2, 1, 32, 32}, std::vector<double>(2 * 32 * 32, 0.4));
    auto y = m.forward(x).logits;
    for (double v : y->data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("build_classifier: layer L carries base*2^depth channels") {
    arch_config cfg;
    cfg.depth = 2;
    cfg.base_channels = 8;
    auto m = build_classifier(cfg, 1);
    auto res = m.forward(random_image(1, 1, 32, 7));
    REQUIRE(res.layer_l != nullptr);
    CHECK(res.layer_l->dim(1) == 8 * 4);
    CHECK(res.layer_l->dim(2) == 32 / 4);
}

TEST_CASE("segmentation init: near-uniform softmax on random input") {
    arch_config cfg;
    for (uint64_t seed : {10u, 20u, 30u}) {
        auto m = build_unet(cfg, seed);
        auto y = m.forward(random_image(2, 1, 32, seed + 100)).logits;
        auto probs = softmax_pixelwise(*y);
        const int64_t plane = 32 * 32;
        for (int64_t n = 0; n < 2; ++n) {
            for (int64_t p = 0; p < plane; ++p) {
                CHECK(std::abs(probs[size_t((n * 2) * plane + p)] - 0.5) < 0.2);
            }
        }
    }
}

TEST_CASE("variants share encoder parameter shapes for equal config") {
    arch_config cfg;
    cfg.depth = 2;
    cfg.base_channels = 4;
    auto seg = build_unet(cfg, 1);
    auto cls = build_classifier(cfg, 1);
    for (const auto & slot : cls.params()) {
        if (slot.name.rfind("enc", 0) == 0 || slot.name.rfind("bottleneck", 0) == 0) {
            CHECK(seg.slot(slot.name).value->shape == slot.value->shape);
        }
    }
}

TEST_CASE("output shape contract over a (depth, size) grid") {
    for (int depth : {1, 2, 3}) {
        for (int size : {16, 32}) {
            if (size % (1 << depth) != 0) {
                continue;
            }
            arch_config cfg;
            cfg.depth = depth;
            cfg.base_channels = 2;
            auto m = build_unet(cfg, 9);
            auto y = m.forward(random_image(1, 1, size, 11)).logits;
            CHECK(y->shape == std::vector<int64_t>{1, 2, size, size});
        }
    }
}

TEST_CASE("forward equals the hand-composed layer sequence") {
    arch_config cfg;
    cfg.depth = 1;
    cfg.base_channels = 2;
    auto m = build_unet(cfg, 33);
    auto x = random_image(1, 1, 8, 35);

    auto conv_block = [&](const tensor_ptr & in, const std::string & name) {
        auto h = relu(conv2d(in, m.slot(name + "_conv1_w").value, m.slot(name + "_conv1_b").value,
                             1, 1, nullptr), nullptr);
        return relu(conv2d(h, m.slot(name + "_conv2_w").value, m.slot(name + "_conv2_b").value,
                           1, 1, nullptr), nullptr);
    };
    auto e0 = conv_block(x, "enc0");
    auto bott = conv_block(maxpool2d(e0, 2, 2, nullptr), "bottleneck");
    auto d0 = conv_block(concat_channels(upsample_nearest(bott, 2, nullptr), e0, nullptr), "dec0");
    auto expect = conv2d(d0, m.slot("out_conv_w").value, m.slot("out_conv_b").value, 1, 0, nullptr);

    auto got = m.forward(x).logits;
    REQUIRE(got->data.size() == expect->data.size());
    for (size_t i = 0; i < got->data.size(); ++i) {
        CHECK(got->data[i] == expect->data[i]);
    }
}

TEST_CASE("arch_config validation lists violations") {
    arch_config cfg;
    cfg.depth = 0;
    cfg.base_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}
