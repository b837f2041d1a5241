#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "roct/srnet.hpp"
#include "test_support.hpp"

using namespace roct;

TEST_CASE("uniform kernel reproduces global average pooling") {
    Rng rng(101);
    Tensor x = testsup::rand_tensor({2, 3, 4, 5}, rng);
    SrCompressor sr = SrCompressor::create(3, 4, 5);
    Tensor a = sr.compress(x);
    Tensor b = gap(x);
    REQUIRE(a.shape() == b.shape());
    for (int i = 0; i < a.numel(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
}

TEST_CASE("corner-selection kernel keeps spatial information") {
    Tensor x = Tensor::from({1, 2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
    SrCompressor sr = SrCompressor::create(2, 2, 1);
    sr.spatial_kernel = Tensor::from({2, 2, 1}, {1.0, 0.0, 0.0, 0.0});
    CHECK(sr.compress(x).item() == doctest::Approx(1.0));
    // averaging would have erased which corner held the 1
    CHECK(gap(x).item() == doctest::Approx(2.5));
}

TEST_CASE("full-width feature map compresses to 1x1") {
    SrCompressor sr = SrCompressor::create(16, 16, 3328);
    Tensor x = Tensor::zeros({1, 16, 16, 3328});
    CHECK(sr.compress(x).shape() == std::vector<int>{1, 1, 1, 3328});
    // parameter cost is exactly H*W*C, nothing quadratic in channels
    CHECK(sr.spatial_kernel.numel() == 16 * 16 * 3328);
}

TEST_CASE("channel isolation") {
    Rng rng(7);
    Tensor x = testsup::rand_tensor({1, 3, 3, 4}, rng);
    SrCompressor sr = SrCompressor::create(3, 3, 4);
    sr.spatial_kernel = testsup::rand_tensor({3, 3, 4}, rng);
    Tensor base = sr.compress(x);
    std::vector<double> bumped = x.data();
    bumped[5 * 4 + 2] += 1.0;  // some pixel, channel 2
    Tensor moved = sr.compress(Tensor::from({1, 3, 3, 4}, bumped));
    for (int c = 0; c < 4; ++c) {
        if (c == 2)
            CHECK(moved.at(c) != base.at(c));
        else
            CHECK(moved.at(c) == base.at(c));
    }
}

TEST_CASE("distinguishes inputs that share per-channel means") {
    // same mean, different layout: [4,0,0,0] vs [0,0,0,4]
    Tensor a = Tensor::from({1, 2, 2, 1}, {4.0, 0.0, 0.0, 0.0});
    Tensor b = Tensor::from({1, 2, 2, 1}, {0.0, 0.0, 0.0, 4.0});
    CHECK(gap(a).item() == doctest::Approx(gap(b).item()));

    SrCompressor sr = SrCompressor::create(2, 2, 1);
    sr.spatial_kernel = Tensor::from({2, 2, 1}, {1.0, 0.0, 0.0, 0.0});
    CHECK(sr.compress(a).item() == doctest::Approx(4.0));
    CHECK(sr.compress(b).item() == doctest::Approx(0.0));
}

TEST_CASE("compression gradient matches finite differences") {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(mix_seed(404, seed));
        std::vector<Tensor> inputs{testsup::rand_tensor({2, 3, 3, 2}, rng), testsup::rand_tensor({3, 3, 2}, rng)};
        auto fn = [seed](std::vector<Tensor>& in) {
            SrCompressor sr = SrCompressor::create(3, 3, 2);
            sr.spatial_kernel = in[1];
            Rng proj(mix_seed(405, seed));
            return testsup::project(sr.compress(in[0]), proj);
        };
        CHECK(testsup::max_rel_grad_err(fn, inputs) < 1e-4);
    }
}

TEST_CASE("extent mismatch is rejected") {
    SrCompressor sr = SrCompressor::create(4, 4, 2);
    CHECK_THROWS_AS(sr.compress(Tensor::zeros({1, 5, 4, 2})), std::invalid_argument);
    CHECK_THROWS_AS(sr.compress(Tensor::zeros({1, 4, 4, 3})), std::invalid_argument);
    CHECK_THROWS_AS(SrCompressor::create(0, 4, 2), std::invalid_argument);
}
