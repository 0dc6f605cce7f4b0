#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "uidsc/errors.hpp"
#include "uidsc/mga.hpp"

using namespace uidsc;
using namespace uidsc::mga;

namespace {

struct Block {
    nn::ParamStore store;
    MaskGuidedAttention mga;
    Block(int channels, MgaConfig cfg = {}, std::uint64_t seed = 1) {
        nn::InitRng rng(seed);
        mga = MaskGuidedAttention::create(store, "mga", channels, cfg, rng);
    }
    std::vector<Var> params_with(const std::string& prefix) {
        std::vector<Var> out;
        for (auto& [name, v] : store.params())
            if (name.rfind(prefix, 0) == 0) out.push_back(v);
        return out;
    }
};

Tensor half_plane(int n, int size, int edge) {
    Tensor m(Shape{n, 1, size, size});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < edge; ++x) m.at(b, 0, y, x) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("downsample_mask") {
    const Tensor ones(Shape{1, 1, 256, 256}, 1.0);
    const Tensor small = downsample_mask(ones, 16, 16);
    CHECK(small.shape() == Shape{1, 1, 16, 16});
    for (double v : small.storage()) CHECK(v == 1.0);
    const Tensor none = downsample_mask(Tensor(Shape{1, 1, 64, 64}), 8, 8);
    for (double v : none.storage()) CHECK(v == 0.0);

    // Edge at column 136 of 256: output column 8 covers source 128..143, half of it set.
    const Tensor hp = half_plane(1, 256, 136);
    const Tensor soft = downsample_mask(hp, 16, 16, true);
    const Tensor hard = downsample_mask(hp, 16, 16, false);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            double acc = 0.0;
            for (int y = 16 * i; y < 16 * i + 16; ++y)
                for (int x = 16 * j; x < 16 * j + 16; ++x) acc += hp.at(0, 0, y, x);
            acc /= 256.0;
            CHECK(soft.at(0, 0, i, j) == doctest::Approx(acc).epsilon(1e-12));
            CHECK(hard.at(0, 0, i, j) == (acc >= 0.5 ? 1.0 : 0.0));
        }
    CHECK(soft.at(0, 0, 3, 8) == doctest::Approx(0.5));
    CHECK_THROWS_AS(downsample_mask(ones, 512, 16), ShapeError);
}

TEST_CASE("query encoder") {
    Block b(32);
    const Var q = b.mga.encode_query(Var(Tensor(Shape{1, 1, 16, 16}, 1.0)));
    CHECK(q.shape() == Shape{1, 32, 16, 16});
    const Var z = b.mga.encode_query(Var(Tensor(Shape{1, 1, 16, 16}, 0.0)));
    for (double v : z.value().storage()) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(b.mga.encode_query(Var(Tensor(Shape{1, 2, 16, 16}, 0.0))), ShapeError);

    Block small(2);
    Var mask(half_plane(1, 4, 2));
    const auto r = testing::gradcheck([&] { return small.mga.encode_query(mask); }, small.params_with("mga.query"));
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("kernel generator") {
    Block b(32);
    const Tensor q = testing::random_tensor({1, 32, 16, 16}, 2);
    const Tensor k = testing::random_tensor({1, 32, 16, 16}, 3);
    const Var d = b.mga.dkwg(Var(q), Var(k));
    CHECK(d.shape() == Shape{1, 288, 16, 16});
    for (int c = 0; c < 32; ++c)
        for (int p = 0; p < 256; ++p) {
            double s = 0.0;
            for (int t = 0; t < 9; ++t) {
                const double v = d.value().plane(0, c * 9 + t)[p];
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    CHECK_THROWS_AS(b.mga.dkwg(Var(q), Var(testing::random_tensor({1, 32, 8, 8}, 4))), ShapeError);

    Block small(2);
    Var qs(testing::random_tensor({1, 2, 4, 4}, 5), true);
    Var ks(testing::random_tensor({1, 2, 4, 4}, 6), true);
    auto leaves = small.params_with("mga.dkwg");
    leaves.push_back(qs);
    leaves.push_back(ks);
    CHECK(testing::gradcheck([&] { return small.mga.dkwg(qs, ks); }, leaves).max_rel_error < 1e-3);
}

TEST_CASE("dynamic convolution") {
    const Tensor k = testing::random_tensor({2, 32, 16, 16}, 7);
    const Var uniform(Tensor(Shape{2, 32 * 9, 16, 16}, 1.0 / 9.0));
    const Var d = ops::dynamic_depthwise_conv(Var(k), uniform, 3);
    CHECK(d.shape() == k.shape());
    CHECK(testing::max_abs_diff(d.value(), oracle::box_blur(k, 3)) < 1e-6);

    Tensor centre(Shape{2, 32 * 9, 16, 16}, 0.0);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 32; ++c)
            for (int p = 0; p < 256; ++p) centre.plane(n, c * 9 + 4)[p] = 1.0;
    CHECK(ops::dynamic_depthwise_conv(Var(k), Var(centre), 3).value().storage() == k.storage());
}

TEST_CASE("identity at initialization") {
    Block b(8);
    const Tensor k = testing::random_tensor({2, 8, 16, 16}, 8);
    const Tensor mask = half_plane(2, 64, 20);
    const Var out = b.mga.forward(Var(k), mask);
    CHECK(out.shape() == k.shape());
    CHECK(out.value().storage() == k.storage());
}

TEST_CASE("gate bias of -10 keeps the block near the identity") {
    MgaConfig cfg;
    cfg.gate_bias = -10.0;
    cfg.gate_scale_init = 1.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Block b(8, cfg, s);
        const Tensor k = testing::random_tensor({1, 8, 16, 16}, 100 + s);
        const Var out = b.mga.forward(Var(k), half_plane(1, 16, 5));
        CHECK(testing::max_abs_diff(out.value(), k) < 1e-3);
        CHECK(testing::max_abs_diff(out.value(), k) > 0.0);
    }
}

TEST_CASE("a forced zero gate is exactly the static path") {
    MgaConfig cfg;
    cfg.gate_scale_init = 1.0;
    Block b(4, cfg);
    const Tensor k = testing::random_tensor({1, 4, 8, 8}, 9);
    CHECK(b.mga.forward(Var(k), half_plane(1, 8, 3)).value().storage() != k.storage());
    b.mga.gate_scale().mutable_value().fill(0.0);
    CHECK(b.mga.forward(Var(k), half_plane(1, 8, 3)).value().storage() == k.storage());
}

TEST_CASE("end-to-end gradient at 4x4x2") {
    MgaConfig cfg;
    cfg.gate_scale_init = 1.0;
    cfg.hidden_channels = 3;
    Block b(2, cfg, 10);
    Var k(testing::random_tensor({1, 2, 4, 4}, 11), true);
    const Tensor mask = half_plane(1, 4, 2);
    auto leaves = b.params_with("mga");
    leaves.push_back(k);
    const auto r = testing::gradcheck([&] { return b.mga.forward(k, mask); }, leaves);
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("no NaN or Inf for inputs in [-10, 10]") {
    Block b(8);
    MgaConfig open;
    open.gate_scale_init = 1.0;
    Block g(8, open, 3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor k = testing::random_tensor({1, 8, 8, 8}, 200 + s, -10.0, 10.0);
        const Tensor m = testing::random_tensor({1, 1, 8, 8}, 300 + s, 0.0, 1.0);
        for (const Block* blk : {&b, &g}) {
            const Var out = blk->mga.forward(Var(k), m);
            for (double v : out.value().storage()) REQUIRE(std::isfinite(v));
        }
    }
}

TEST_CASE("shape errors") {
    Block b(4);
    CHECK_THROWS_AS(b.mga.forward(Var(Tensor(Shape{1, 3, 8, 8})), Tensor(Shape{1, 1, 8, 8})), ShapeError);
    CHECK_THROWS_AS(b.mga.forward(Var(Tensor(Shape{1, 4, 8, 8})), Tensor(Shape{2, 1, 8, 8})), ShapeError);
    MgaConfig even;
    even.kernel_size = 4;
    CHECK_THROWS_AS(Block(4, even), ConfigError);
}
