#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "roct/ops.hpp"
#include "roct/tensor.hpp"
#include "test_support.hpp"

using namespace roct;

TEST_CASE("tensor construction and invariants") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.shape() == std::vector<int>{2, 3});
    for (int i = 0; i < 6; ++i) CHECK(z.at(i) == 0.0);

    Tensor f = Tensor::full({2, 2}, 1.5);
    CHECK(f.at(3) == 1.5);

    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from({1, 2}, {1.0, std::nan("")}), std::runtime_error);

    Tensor s = Tensor::scalar(4.0);
    CHECK(s.item() == 4.0);
}

TEST_CASE("non-finite forward results are rejected") {
    Tensor a = Tensor::from({2}, {1.0, 1.0});
    Tensor b = Tensor::from({2}, {1.0, 0.0});
    CHECK_THROWS_AS(div(a, b), std::runtime_error);
    Tensor big = Tensor::full({1}, 1e308);
    CHECK_THROWS_AS(mul(big, big), std::runtime_error);
}

TEST_CASE("conv2d hand examples") {
    // all-ones 3x3 input, all-ones 2x2 kernel, valid: every window sums to 4
    Tensor in = Tensor::full({1, 3, 3, 1}, 1.0);
    Tensor k = Tensor::full({2, 2, 1, 1}, 1.0);
    Tensor out = conv2d(in, k, 1, Padding::Valid);
    CHECK(out.shape() == std::vector<int>{1, 2, 2, 1});
    for (int i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(4.0).epsilon(1e-15));

    // 1x1 identity kernel passes the value through
    Tensor v = Tensor::from({1, 1, 1, 1}, {5.0});
    Tensor ik = Tensor::from({1, 1, 1, 1}, {1.0});
    CHECK(conv2d(v, ik, 1, Padding::Valid).item() == 5.0);

    CHECK_THROWS_AS(conv2d(in, Tensor::full({2, 2, 3, 1}, 1.0), 1, Padding::Valid), std::invalid_argument);
}

TEST_CASE("conv2d matches the padded-buffer oracle") {
    for (int seed = 0; seed < 3; ++seed) {
        Rng rng(mix_seed(77, seed));
        Tensor in = testsup::rand_tensor({1, 5, 5, 2}, rng);
        Tensor k = testsup::rand_tensor({3, 3, 2, 4}, rng);
        for (int stride : {1, 2}) {
            for (bool same : {true, false}) {
                std::vector<int> oshape;
                auto expect = testsup::naive_conv2d(in.data(), 1, 5, 5, 2, k.data(), 3, 3, 4, stride, same, oshape);
                Tensor got = conv2d(in, k, stride, same ? Padding::Same : Padding::Valid);
                REQUIRE(got.shape() == oshape);
                for (std::size_t i = 0; i < expect.size(); ++i)
                    CHECK(got.at(static_cast<std::int64_t>(i)) == doctest::Approx(expect[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("same padding output size and asymmetric split") {
    // even kernel on even input forces uneven padding; the smaller half goes
    // before. An off-by-one here shifts every value, so compare to the oracle.
    Rng rng(99);
    Tensor in = testsup::rand_tensor({1, 4, 6, 1}, rng);
    Tensor k = testsup::rand_tensor({2, 2, 1, 1}, rng);
    std::vector<int> oshape;
    auto expect = testsup::naive_conv2d(in.data(), 1, 4, 6, 1, k.data(), 2, 2, 1, 2, true, oshape);
    Tensor got = conv2d(in, k, 2, Padding::Same);
    REQUIRE(got.shape() == std::vector<int>{1, 2, 3, 1});
    REQUIRE(got.shape() == oshape);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(got.at(static_cast<std::int64_t>(i)) == doctest::Approx(expect[i]).epsilon(1e-12));

    // ceil rule: 5 -> 3 at stride 2, 6 -> 3, 7 -> 4
    CHECK(conv2d(Tensor::zeros({1, 5, 7, 1}), Tensor::zeros({3, 3, 1, 2}), 2, Padding::Same).shape() ==
          std::vector<int>{1, 3, 4, 2});
}

TEST_CASE("depthwise conv examples and channel isolation") {
    // channel 0 all ones, channel 1 all twos; summing 2x2 kernel
    std::vector<double> vals(8);
    for (int i = 0; i < 4; ++i) {
        vals[i * 2 + 0] = 1.0;
        vals[i * 2 + 1] = 2.0;
    }
    Tensor in = Tensor::from({1, 2, 2, 2}, vals);
    Tensor k = Tensor::full({2, 2, 2}, 1.0);
    Tensor out = depthwise_conv2d(in, k, 1, Padding::Valid);
    REQUIRE(out.shape() == std::vector<int>{1, 1, 1, 2});
    CHECK(out.at(0) == doctest::Approx(4.0));
    CHECK(out.at(1) == doctest::Approx(8.0));

    Tensor zk = Tensor::zeros({2, 2, 2});
    Tensor zout = depthwise_conv2d(in, zk, 1, Padding::Valid);
    for (int i = 0; i < zout.numel(); ++i) CHECK(zout.at(i) == 0.0);

    // equivalence with a block-diagonal full convolution
    Rng rng(5);
    Tensor x = testsup::rand_tensor({2, 4, 4, 3}, rng);
    Tensor dk = testsup::rand_tensor({3, 3, 3}, rng);
    std::vector<double> block(3 * 3 * 3 * 3, 0.0);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int ch = 0; ch < 3; ++ch)
                block[((r * 3 + c) * 3 + ch) * 3 + ch] = dk.at((r * 3 + c) * 3 + ch);
    Tensor full = conv2d(x, Tensor::from({3, 3, 3, 3}, block), 1, Padding::Same);
    Tensor dw = depthwise_conv2d(x, dk, 1, Padding::Same);
    REQUIRE(full.shape() == dw.shape());
    for (int i = 0; i < dw.numel(); ++i) CHECK(dw.at(i) == doctest::Approx(full.at(i)).epsilon(1e-12));

    // perturbing input channel c must only move output channel c
    auto base = depthwise_conv2d(x, dk, 1, Padding::Same);
    std::vector<double> bumped = x.data();
    bumped[2 * 3 + 1] += 0.5;  // batch 0, pixel 2, channel 1
    auto moved = depthwise_conv2d(Tensor::from({2, 4, 4, 3}, bumped), dk, 1, Padding::Same);
    for (int i = 0; i < moved.numel(); ++i) {
        if (i % 3 != 1) CHECK(moved.at(i) == base.at(i));
    }
}

TEST_CASE("pointwise conv examples") {
    // identity kernel
    Rng rng(7);
    Tensor x = testsup::rand_tensor({1, 2, 2, 3}, rng);
    std::vector<double> id(9, 0.0);
    id[0 * 3 + 0] = id[1 * 3 + 1] = id[2 * 3 + 2] = 1.0;
    Tensor out = pointwise_conv2d(x, Tensor::from({1, 1, 3, 3}, id));
    for (int i = 0; i < x.numel(); ++i) CHECK(out.at(i) == doctest::Approx(x.at(i)));

    // channel-summing kernel
    Tensor three = Tensor::from({1, 1, 1, 3}, {1.0, 2.0, 3.0});
    Tensor sum_k = Tensor::full({1, 1, 3, 1}, 1.0);
    CHECK(pointwise_conv2d(three, sum_k).item() == doctest::Approx(6.0));

    // agrees with conv2d on a random case
    Tensor k = testsup::rand_tensor({1, 1, 3, 2}, rng);
    Tensor a = pointwise_conv2d(x, k);
    Tensor b = conv2d(x, k, 1, Padding::Valid);
    for (int i = 0; i < a.numel(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));

    CHECK_THROWS_AS(pointwise_conv2d(x, testsup::rand_tensor({2, 2, 3, 1}, rng)), std::invalid_argument);
}

TEST_CASE("concat and slice round trips") {
    Rng rng(11);
    Tensor a = testsup::rand_tensor({2, 2, 2, 3}, rng);
    Tensor b = testsup::rand_tensor({2, 2, 2, 2}, rng);
    Tensor cat = concat_channels(a, b);
    REQUIRE(cat.shape() == std::vector<int>{2, 2, 2, 5});

    Tensor ra = slice_channels(cat, 0, 3);
    Tensor rb = slice_channels(cat, 3, 5);
    for (int i = 0; i < a.numel(); ++i) CHECK(ra.at(i) == a.at(i));
    for (int i = 0; i < b.numel(); ++i) CHECK(rb.at(i) == b.at(i));

    // ensemble channel widths: 2048 + 1280 = 3328
    Tensor wa = Tensor::zeros({1, 1, 1, 2048});
    Tensor wb = Tensor::zeros({1, 1, 1, 1280});
    CHECK(concat_channels(wa, wb).dim(3) == 3328);

    // concatenating an empty-channel tensor is the identity
    Tensor empty = Tensor::zeros({2, 2, 2, 0});
    Tensor same = concat_channels(a, empty);
    REQUIRE(same.shape() == a.shape());
    for (int i = 0; i < a.numel(); ++i) CHECK(same.at(i) == a.at(i));

    CHECK_THROWS_AS(concat_channels(a, Tensor::zeros({2, 2, 3, 2})), std::invalid_argument);
    CHECK_THROWS_AS(slice_channels(cat, 3, 6), std::invalid_argument);
}

TEST_CASE("dense, softmax, cross entropy") {
    // dense against hand arithmetic
    Tensor x = Tensor::from({1, 2}, {1.0, 2.0});
    Tensor w = Tensor::from({2, 3}, {1, 0, 2, 0, 1, 1});
    Tensor b = Tensor::from({3}, {0.5, -0.5, 0.0});
    Tensor y = dense(x, w, b);
    CHECK(y.at(0) == doctest::Approx(1.5));
    CHECK(y.at(1) == doctest::Approx(1.5));
    CHECK(y.at(2) == doctest::Approx(4.0));

    Tensor sm0 = softmax(Tensor::from({1, 3}, {0.0, 0.0, 0.0}));
    for (int i = 0; i < 3; ++i) CHECK(sm0.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Tensor sm = softmax(Tensor::from({1, 3}, {1.0, 2.0, 3.0}));
    CHECK(sm.at(0) == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(sm.at(1) == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(sm.at(2) == doctest::Approx(0.66524096).epsilon(1e-7));

    // rows sum to one and stay strictly positive
    Rng rng(13);
    Tensor logits = testsup::rand_tensor({6, 5}, rng, -30.0, 30.0);
    Tensor p = softmax(logits);
    for (int r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) {
            CHECK(p.at(r * 5 + c) > 0.0);
            s += p.at(r * 5 + c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    // perfect prediction gives (clamped) zero loss
    Tensor perfect = Tensor::from({1, 2}, {1.0, 0.0});
    Tensor lab = Tensor::from({1, 2}, {1.0, 0.0});
    CHECK(cross_entropy(perfect, lab).item() == doctest::Approx(0.0).epsilon(1e-12));

    // hand-computed loss: mean of -log p_true
    Tensor probs = Tensor::from({2, 2}, {0.8, 0.2, 0.4, 0.6});
    Tensor labs = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double want = -(std::log(0.8) + std::log(0.6)) / 2.0;
    CHECK(cross_entropy(probs, labs).item() == doctest::Approx(want).epsilon(1e-14));

    CHECK_THROWS_AS(cross_entropy(probs, Tensor::from({2, 2}, {1.0, 1.0, 0.0, 1.0})), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(probs, Tensor::from({2, 2}, {0.5, 0.5, 0.0, 1.0})), std::invalid_argument);
}

TEST_CASE("backward closed-form cases") {
    // d/dw sum(w) = 1
    Tensor w = Tensor::from({3}, {1.0, 2.0, 3.0});
    w.set_requires_grad(true);
    sum_all(w).backward();
    for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(1.0));

    // d/dw sum(w^2) = 2w
    Tensor w2 = Tensor::from({3}, {1.0, 2.0, 3.0});
    w2.set_requires_grad(true);
    sum_all(square(w2)).backward();
    CHECK(w2.grad()[0] == doctest::Approx(2.0));
    CHECK(w2.grad()[1] == doctest::Approx(4.0));
    CHECK(w2.grad()[2] == doctest::Approx(6.0));

    // d/dx sum(x*x + 2x) = 2x + 2, with x reused twice in the graph
    Tensor x = Tensor::from({2}, {3.0, -1.0});
    x.set_requires_grad(true);
    sum_all(add(mul(x, x), mul_scalar(x, 2.0))).backward();
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    CHECK(x.grad()[1] == doctest::Approx(0.0));

    // error cases
    Tensor plain = Tensor::from({1}, {2.0});
    CHECK_THROWS_AS(plain.backward(), std::runtime_error);
    Tensor vec = Tensor::from({2}, {1.0, 2.0});
    vec.set_requires_grad(true);
    Tensor out = mul_scalar(vec, 2.0);
    CHECK_THROWS_AS(out.backward(), std::invalid_argument);
}

TEST_CASE("gradients accumulate across uses and zero_grad clears") {
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    sum_all(x).backward();
    sum_all(x).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("dropout identity at eval, unbiased at train time") {
    Rng rng(21);
    Tensor x = testsup::rand_tensor({4, 4}, rng);
    Rng unused(0);
    Tensor e = dropout(x, 0.5, false, unused);
    for (int i = 0; i < x.numel(); ++i) CHECK(e.at(i) == x.at(i));

    CHECK_THROWS_AS(dropout(x, 1.0, true, unused), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, unused), std::invalid_argument);

    // inverted scaling keeps the expected value: average 1e5 draws of a
    // single unit element and demand agreement within 1%
    Rng mask_rng(42);
    const int draws = 100000;
    Tensor unit = Tensor::from({1}, {1.0});
    double acc = 0.0;
    for (int i = 0; i < draws; ++i) acc += dropout(unit, 0.3, true, mask_rng).item();
    CHECK(acc / draws == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("batch normalization statistics") {
    Rng rng(31);
    Tensor x = testsup::rand_tensor({4, 3, 3, 2}, rng, -2.0, 5.0);
    Tensor gamma = Tensor::from({2}, {1.0, 1.0});
    Tensor beta = Tensor::from({2}, {0.0, 0.0});
    std::vector<double> m, v;
    Tensor y = batch_norm_train(x, gamma, beta, 1e-5, m, v);

    // normalized output has per-channel mean 0 and variance ~1
    const int ch = 2;
    const std::int64_t per = y.numel() / ch;
    for (int c = 0; c < ch; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t i = 0; i < per; ++i) mean += y.at(i * ch + c);
        mean /= static_cast<double>(per);
        for (std::int64_t i = 0; i < per; ++i) {
            const double d = y.at(i * ch + c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(per);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
    }

    // eval mode with the captured batch stats reproduces the train output
    Tensor ye = batch_norm_eval(x, gamma, beta, Tensor::from({2}, m), Tensor::from({2}, v), 1e-5);
    for (int i = 0; i < y.numel(); ++i) CHECK(ye.at(i) == doctest::Approx(y.at(i)).epsilon(1e-12));
}

TEST_CASE("gap averages each channel plane") {
    Tensor x = Tensor::from({1, 2, 2, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
    Tensor y = gap(x);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 2});
    CHECK(y.at(0) == doctest::Approx(2.5));
    CHECK(y.at(1) == doctest::Approx(25.0));
}

TEST_CASE("capsule primitive shapes and arithmetic") {
    // one input capsule, one output capsule: plain matrix-vector product
    Tensor u = Tensor::from({1, 1, 2}, {1.0, 2.0});
    Tensor W = Tensor::from({1, 1, 3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor uhat = capsule_predict(u, W);
    REQUIRE(uhat.shape() == std::vector<int>{1, 1, 1, 3});
    CHECK(uhat.at(0) == doctest::Approx(1.0));
    CHECK(uhat.at(1) == doctest::Approx(2.0));
    CHECK(uhat.at(2) == doctest::Approx(3.0));

    // couplings of one reduce the weighted sum to a plain sum over inputs
    Tensor uh2 = Tensor::from({1, 2, 1, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::full({1, 2, 1}, 1.0);
    Tensor s = coupling_weighted_sum(ones, uh2);
    REQUIRE(s.shape() == std::vector<int>{1, 1, 2});
    CHECK(s.at(0) == doctest::Approx(4.0));
    CHECK(s.at(1) == doctest::Approx(6.0));

    // agreement is the dot product per (input, output) pair
    Tensor vv = Tensor::from({1, 1, 2}, {1.0, -1.0});
    Tensor agr = capsule_agreement(uh2, vv);
    REQUIRE(agr.shape() == std::vector<int>{1, 2, 1});
    CHECK(agr.at(0) == doctest::Approx(-1.0));
    CHECK(agr.at(1) == doctest::Approx(-1.0));
}

TEST_CASE("gradient corpus: analytic vs central differences") {
    auto results = testsup::gradient_corpus(5);
    CHECK(results.size() >= 20);
    for (const auto& r : results) {
        INFO(r.name);
        CHECK(r.err < 1e-4);
    }
}
