#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "roct/checkpoint.hpp"
#include "roct/model.hpp"
#include "test_support.hpp"

using namespace roct;

namespace {

// Small spec that builds and runs in microseconds.
BackboneSpec tiny_spec(Family fam, int final_ch) {
    BackboneSpec s;
    s.family = fam;
    s.stem_channels = 4;
    s.block_count = 2;
    s.final_channels = final_ch;
    s.downsample_factor = 4;
    return s;
}

ModelGraph tiny_ensemble(int class_count, std::uint64_t seed,
                         HeadConfig::Compressor comp = HeadConfig::Compressor::Srnet) {
    HeadConfig head;
    head.out_capsules = 3;
    head.out_dim = 4;
    head.routing_iters = 3;
    head.dropout_rate = 0.5;
    head.compressor = comp;
    return build_ensemble(tiny_spec(Family::XceptionMini, 8), tiny_spec(Family::Effv2Mini, 6), head, class_count,
                          8, seed);
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/roct_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("shape arithmetic at preset scale") {
    // nothing here allocates a full-size model
    BackboneSpec x = BackboneSpec::preset("paper-xception");
    BackboneSpec e = BackboneSpec::preset("paper-effv2b0");
    CHECK(backbone_out_channels(x) == 2048);
    CHECK(backbone_out_channels(e) == 1280);

    HeadConfig head;
    ShapeSummary s = infer_shapes(x, e, head, 4, 512);
    CHECK(s.feat_extent == 16);
    CHECK(s.concat_channels == 3328);
    CHECK(s.in_capsules == 3328);
    CHECK(s.capsule_params == 532480);
    CHECK(s.flatten_width == 160);

    // toy channel addition
    BackboneSpec ta = tiny_spec(Family::XceptionMini, 24);
    BackboneSpec tb = tiny_spec(Family::Effv2Mini, 16);
    CHECK(infer_shapes(ta, tb, head, 4, 16).concat_channels == 40);
}

TEST_CASE("backbone output extent and channels") {
    // 64 input, downsample 32, final 64 -> 2x2x64
    BackboneSpec s;
    s.family = Family::XceptionMini;
    s.stem_channels = 4;
    s.block_count = 5;
    s.final_channels = 64;
    s.downsample_factor = 32;
    ParamRegistry reg;
    Rng rng(1);
    BackboneBuild b = build_backbone(s, 64, "bb", reg, rng);
    CHECK(b.out_extent == 2);
    CHECK(b.out_channels == 64);
    Tensor x = Tensor::zeros({1, 64, 64, 1});
    Context ctx;
    for (auto& l : b.layers) x = l->forward(x, ctx);
    CHECK(x.shape() == std::vector<int>{1, 2, 2, 64});
}

TEST_CASE("zero blocks degenerate to the stem") {
    BackboneSpec s;
    s.family = Family::Effv2Mini;
    s.stem_channels = 7;
    s.block_count = 0;
    s.final_channels = 99;  // ignored without blocks
    s.downsample_factor = 2;
    CHECK(backbone_out_channels(s) == 7);

    ParamRegistry reg;
    Rng rng(2);
    BackboneBuild b = build_backbone(s, 6, "bb", reg, rng);
    Tensor x = Tensor::zeros({2, 6, 6, 1});
    Context ctx;
    for (auto& l : b.layers) x = l->forward(x, ctx);
    CHECK(x.shape() == std::vector<int>{2, 3, 3, 7});

    // a deeper downsample cannot be reached with zero blocks
    s.downsample_factor = 8;
    CHECK_THROWS_AS(backbone_out_channels(s), std::invalid_argument);
}

TEST_CASE("stride-1 blocks preserve spatial extent") {
    BackboneSpec s = tiny_spec(Family::XceptionMini, 8);
    s.downsample_factor = 2;  // stem only downsamples; both blocks run at stride 1
    ParamRegistry reg;
    Rng rng(3);
    BackboneBuild b = build_backbone(s, 8, "bb", reg, rng);
    Tensor x = Tensor::zeros({1, 8, 8, 1});
    Context ctx;
    Tensor after_stem;
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
        x = b.layers[i]->forward(x, ctx);
        if (i == 2) after_stem = x;  // conv + bn + act
    }
    CHECK(after_stem.dim(1) == 4);
    CHECK(x.dim(1) == 4);
    CHECK(x.dim(2) == 4);
}

TEST_CASE("invalid specs are rejected") {
    BackboneSpec s = tiny_spec(Family::XceptionMini, 8);
    s.downsample_factor = 3;
    ParamRegistry reg;
    Rng rng(4);
    CHECK_THROWS_AS(build_backbone(s, 12, "bb", reg, rng), std::invalid_argument);

    s.downsample_factor = 4;
    CHECK_THROWS_AS(build_backbone(s, 10, "bb", reg, rng), std::invalid_argument);  // 10 % 4 != 0

    BackboneSpec a = tiny_spec(Family::XceptionMini, 8);
    BackboneSpec b = tiny_spec(Family::Effv2Mini, 6);
    b.downsample_factor = 8;
    HeadConfig head;
    CHECK_THROWS_AS(infer_shapes(a, b, head, 4, 16), std::invalid_argument);
}

TEST_CASE("ensemble forward produces [batch, class_count] logits") {
    ModelGraph m = tiny_ensemble(4, 11);
    Rng rng(12);
    Tensor imgs = testsup::rand_tensor({3, 8, 8, 1}, rng, 0.0, 1.0);
    Context ctx;
    Tensor logits = m.forward(imgs, ctx);
    CHECK(logits.shape() == std::vector<int>{3, 4});

    // training mode needs an rng for dropout
    Context train_ctx;
    train_ctx.training = true;
    CHECK_THROWS_AS(m.forward(imgs, train_ctx), std::invalid_argument);
    train_ctx.rng = &rng;
    CHECK(m.forward(imgs, train_ctx).shape() == std::vector<int>{3, 4});

    CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 8, 8, 3}), ctx), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 4, 8, 1}), ctx), std::invalid_argument);
}

TEST_CASE("forward shape contract holds across random valid configurations") {
    Rng gen(9090);
    for (int trial = 0; trial < 8; ++trial) {
        BackboneSpec a;
        a.family = gen.bernoulli(0.5) ? Family::XceptionMini : Family::Effv2Mini;
        a.stem_channels = 2 + static_cast<int>(gen.bounded(3));
        a.downsample_factor = gen.bernoulli(0.5) ? 2 : 4;
        const int min_blocks = a.downsample_factor == 4 ? 1 : 0;
        a.block_count = min_blocks + static_cast<int>(gen.bounded(2));
        a.final_channels = 3 + static_cast<int>(gen.bounded(5));

        std::optional<BackboneSpec> b;
        if (gen.bernoulli(0.5)) {
            b = a;
            b->family = a.family == Family::XceptionMini ? Family::Effv2Mini : Family::XceptionMini;
            b->final_channels = 3 + static_cast<int>(gen.bounded(5));
        }

        HeadConfig head;
        head.out_capsules = 2 + static_cast<int>(gen.bounded(3));
        head.out_dim = 2 + static_cast<int>(gen.bounded(3));
        head.compressor = gen.bernoulli(0.5) ? HeadConfig::Compressor::Srnet : HeadConfig::Compressor::Gap;
        const int classes = 2 + static_cast<int>(gen.bounded(4));
        const int input = a.downsample_factor * (1 + static_cast<int>(gen.bounded(2)));

        ModelGraph m = build_ensemble(a, b, head, classes, input, gen.bounded(1u << 30));
        Rng rng(trial);
        Tensor imgs = testsup::rand_tensor({2, input, input, 1}, rng, 0.0, 1.0);
        Context ctx;
        Tensor logits = m.forward(imgs, ctx);
        CHECK(logits.shape() == std::vector<int>{2, classes});

        const int expect_channels = backbone_out_channels(a) + (b ? backbone_out_channels(*b) : 0);
        CHECK(m.capsule_config().in_capsules == expect_channels);
    }
}

TEST_CASE("gradients reach every trainable parameter") {
    ModelGraph m = tiny_ensemble(3, 21);
    Rng rng(22);
    Tensor imgs = testsup::rand_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
    std::vector<double> labels = {1, 0, 0, 0, 1, 0};
    Context ctx;
    ctx.training = true;
    ctx.rng = &rng;
    Tensor loss = cross_entropy(softmax(m.forward(imgs, ctx)), Tensor::from({2, 3}, labels));
    loss.backward();
    for (const auto& p : m.params.all()) {
        if (!p->trainable) continue;
        double sum_abs = 0.0;
        for (double g : p->value.grad()) sum_abs += std::fabs(g);
        INFO(p->name);
        CHECK(sum_abs > 0.0);
    }
}

TEST_CASE("training forward updates running statistics") {
    ModelGraph m = tiny_ensemble(3, 31);
    Rng rng(32);
    Tensor imgs = testsup::rand_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
    Context ctx;
    ctx.training = true;
    ctx.rng = &rng;
    m.forward(imgs, ctx);
    const auto& rm = m.params.get("backbone_a/stem/bn/running_mean").value;
    double sum_abs = 0.0;
    for (double v : rm.data()) sum_abs += std::fabs(v);
    CHECK(sum_abs > 0.0);
}

TEST_CASE("parameter names are stable across builds") {
    ModelGraph m1 = tiny_ensemble(4, 1);
    ModelGraph m2 = tiny_ensemble(4, 2);
    REQUIRE(m1.params.all().size() == m2.params.all().size());
    for (std::size_t i = 0; i < m1.params.all().size(); ++i) {
        CHECK(m1.params.all()[i]->name == m2.params.all()[i]->name);
    }
    CHECK(m1.params.has("srnet/spatial_kernel"));
    CHECK(m1.params.has("capsule/W"));
    CHECK(m1.params.has("tail/dense_w"));
    CHECK(m1.params.has("tail/dense_b"));

    ParamRegistry reg;
    reg.add("x", Tensor::zeros({1}));
    CHECK_THROWS_AS(reg.add("x", Tensor::zeros({1})), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    TempFile f("roundtrip.ckpt");
    ModelGraph m1 = tiny_ensemble(4, 41);
    Rng rng(42);
    Tensor imgs = testsup::rand_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
    Context ctx;
    // push the running stats away from their defaults first
    Context train_ctx;
    train_ctx.training = true;
    train_ctx.rng = &rng;
    m1.forward(imgs, train_ctx);
    Tensor before = m1.forward(imgs, ctx);
    save_checkpoint(m1, f.path);

    ModelGraph m2 = tiny_ensemble(4, 999);  // different seed, different weights
    LoadReport rep = load_checkpoint(f.path, m2, true);
    CHECK(rep.clean());
    CHECK(rep.copied.size() == m1.params.all().size());
    Tensor after = m2.forward(imgs, ctx);
    REQUIRE(after.numel() == before.numel());
    for (int i = 0; i < after.numel(); ++i) CHECK(after.at(i) == before.at(i));  // exact, not approximate

    // every stored parameter matches bitwise
    for (const auto& p : m1.params.all()) {
        const auto& a = p->value.data();
        const auto& b = m2.params.get(p->name).value.data();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("four-to-five class transfer skips only the tail") {
    TempFile f("transfer.ckpt");
    ModelGraph four = tiny_ensemble(4, 51);
    save_checkpoint(four, f.path);

    ModelGraph five = tiny_ensemble(5, 52);
    LoadReport rep = load_checkpoint(f.path, five, false);
    CHECK(rep.skipped_shape == std::vector<std::string>{"tail/dense_w", "tail/dense_b"});
    CHECK(rep.only_in_file.empty());
    CHECK(rep.only_in_model.empty());
    CHECK(rep.copied.size() == four.params.all().size() - 2);

    // shared weights now agree; the tail keeps its own initialization
    const auto& wa = four.params.get("capsule/W").value.data();
    const auto& wb = five.params.get("capsule/W").value.data();
    for (std::size_t i = 0; i < wa.size(); ++i) CHECK(wa[i] == wb[i]);

    ModelGraph strict_five = tiny_ensemble(5, 53);
    CHECK_THROWS_AS(load_checkpoint(f.path, strict_five, true), std::runtime_error);
}

TEST_CASE("corrupt and mismatched files are rejected") {
    TempFile f("corrupt.ckpt");
    {
        std::ofstream os(f.path, std::ios::binary);
        os << "NOTACKPTxxxxxxxxxxxx";
    }
    ModelGraph m = tiny_ensemble(4, 61);
    CHECK_THROWS_AS(load_checkpoint(f.path, m, false), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path.ckpt", m, false), std::runtime_error);

    // flip the version field of a valid file
    TempFile g("badversion.ckpt");
    save_checkpoint(m, g.path);
    {
        std::fstream fs(g.path, std::ios::binary | std::ios::in | std::ios::out);
        fs.seekp(8);
        const char bad[4] = {(char)0xFF, 0, 0, 0};
        fs.write(bad, 4);
    }
    CHECK_THROWS_AS(load_checkpoint(g.path, m, false), std::runtime_error);
}

TEST_CASE("metadata reconstructs the architecture") {
    TempFile f("meta.ckpt");
    ModelGraph m = tiny_ensemble(5, 71, HeadConfig::Compressor::Gap);
    save_checkpoint(m, f.path, {{"trained_epochs", "7"}});

    auto meta = read_checkpoint_metadata(f.path);
    CHECK(meta.at("trained_epochs") == "7");
    CHECK(meta.at("class_count") == "5");
    CHECK(meta.at("head.compressor") == "gap");

    ModelGraph rebuilt = model_from_metadata(meta, 123);
    LoadReport rep = load_checkpoint(f.path, rebuilt, true);
    CHECK(rep.clean());
    CHECK(rebuilt.class_count == 5);
    CHECK(rebuilt.head.compressor == HeadConfig::Compressor::Gap);
    CHECK(rebuilt.spec_b.has_value());
}

TEST_CASE("single-backbone configuration") {
    HeadConfig head;
    head.out_capsules = 3;
    head.out_dim = 4;
    ModelGraph m = build_ensemble(tiny_spec(Family::XceptionMini, 8), std::nullopt, head, 4, 8, 81);
    CHECK(m.capsule_config().in_capsules == 8);
    Rng rng(82);
    Tensor imgs = testsup::rand_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
    Context ctx;
    CHECK(m.forward(imgs, ctx).shape() == std::vector<int>{2, 4});
    CHECK_FALSE(m.params.has("backbone_b/stem/kernel"));
}
