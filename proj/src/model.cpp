#include "roct/model.hpp"

#include <algorithm>
#include <cmath>

namespace roct {

namespace {

bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

int log2i(int v) {
    int s = 0;
    while ((1 << s) < v) ++s;
    return s;
}

void validate_spec(const BackboneSpec& spec) {
    if (spec.stem_channels < 1) throw std::invalid_argument("backbone: stem_channels must be >= 1");
    if (spec.final_channels < 1) throw std::invalid_argument("backbone: final_channels must be >= 1");
    if (spec.block_count < 0) throw std::invalid_argument("backbone: block_count must be >= 0");
    if (spec.downsample_factor < 2 || !is_pow2(spec.downsample_factor)) {
        throw std::invalid_argument("backbone: downsample_factor must be a power of two >= 2, got " +
                                    std::to_string(spec.downsample_factor));
    }
    const int strided_blocks = log2i(spec.downsample_factor) - 1;  // stem takes one factor of 2
    if (spec.block_count < strided_blocks) {
        throw std::invalid_argument("backbone: downsample_factor " + std::to_string(spec.downsample_factor) +
                                    " needs at least " + std::to_string(strided_blocks) + " blocks, got " +
                                    std::to_string(spec.block_count));
    }
}

// Channel width entering block index i (0-based), given the halving/stride
// plan. Used both when building and for allocation-free shape checks.
std::vector<int> plan_channels(const BackboneSpec& spec) {
    const int strided_blocks = log2i(spec.downsample_factor) - 1;
    std::vector<int> widths;  // widths[i] = output channels of block i
    int cur = spec.stem_channels;
    for (int i = 0; i < spec.block_count; ++i) {
        const bool last = i == spec.block_count - 1;
        const bool strided = i < strided_blocks;
        int out = cur;
        if (last)
            out = spec.final_channels;
        else if (strided)
            out = std::min(spec.final_channels, cur * 2);
        widths.push_back(out);
        cur = out;
    }
    return widths;
}

std::unique_ptr<BatchNormLayer> make_bn(const std::string& prefix, int ch, ParamRegistry& reg) {
    Tensor gamma = reg.add(prefix + "/gamma", Tensor::full({ch}, 1.0));
    Tensor beta = reg.add(prefix + "/beta", Tensor::zeros({ch}));
    Tensor rm = reg.add(prefix + "/running_mean", Tensor::zeros({ch}), false);
    Tensor rv = reg.add(prefix + "/running_var", Tensor::full({ch}, 1.0), false);
    return std::make_unique<BatchNormLayer>(gamma, beta, rm, rv);
}

}  // namespace

Family parse_family(const std::string& s) {
    if (s == "xception-mini") return Family::XceptionMini;
    if (s == "effv2-mini") return Family::Effv2Mini;
    throw std::invalid_argument("unknown backbone family '" + s + "'");
}

std::string family_name(Family f) { return f == Family::XceptionMini ? "xception-mini" : "effv2-mini"; }

BackboneSpec BackboneSpec::preset(const std::string& name) {
    BackboneSpec s;
    if (name == "paper-xception") {
        s.family = Family::XceptionMini;
        s.stem_channels = 32;
        s.block_count = 5;
        s.final_channels = 2048;
        s.downsample_factor = 32;
    } else if (name == "paper-effv2b0") {
        s.family = Family::Effv2Mini;
        s.stem_channels = 24;
        s.block_count = 5;
        s.final_channels = 1280;
        s.downsample_factor = 32;
    } else if (name == "toy-xception") {
        s.family = Family::XceptionMini;
        s.stem_channels = 16;
        s.block_count = 5;
        s.final_channels = 64;
        s.downsample_factor = 32;
    } else if (name == "toy-effv2") {
        s.family = Family::Effv2Mini;
        s.stem_channels = 16;
        s.block_count = 5;
        s.final_channels = 40;
        s.downsample_factor = 32;
    } else {
        throw std::invalid_argument("unknown backbone preset '" + name + "'");
    }
    return s;
}

int backbone_out_channels(const BackboneSpec& spec) {
    validate_spec(spec);
    return spec.block_count == 0 ? spec.stem_channels : spec.final_channels;
}

ShapeSummary infer_shapes(const BackboneSpec& a, const std::optional<BackboneSpec>& b, const HeadConfig& head,
                          int class_count, int input_size) {
    validate_spec(a);
    if (b) {
        validate_spec(*b);
        if (b->downsample_factor != a.downsample_factor) {
            throw std::invalid_argument("ensemble: backbones disagree on downsample factor (" +
                                        std::to_string(a.downsample_factor) + " vs " +
                                        std::to_string(b->downsample_factor) + ")");
        }
    }
    if (input_size % a.downsample_factor != 0) {
        throw std::invalid_argument("input size " + std::to_string(input_size) + " not divisible by downsample " +
                                    std::to_string(a.downsample_factor));
    }
    if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");

    ShapeSummary s;
    s.feat_extent = input_size / a.downsample_factor;
    s.concat_channels = backbone_out_channels(a) + (b ? backbone_out_channels(*b) : 0);
    s.in_capsules = s.concat_channels;
    s.capsule_params = static_cast<std::int64_t>(s.in_capsules) * head.out_capsules * head.out_dim;
    s.flatten_width = head.out_capsules * head.out_dim;
    s.class_count = class_count;
    return s;
}

BackboneBuild build_backbone(const BackboneSpec& spec, int input_size, const std::string& prefix,
                             ParamRegistry& reg, Rng& rng) {
    validate_spec(spec);
    if (input_size % spec.downsample_factor != 0) {
        throw std::invalid_argument("input size " + std::to_string(input_size) + " not divisible by downsample " +
                                    std::to_string(spec.downsample_factor));
    }
    const Act act = spec.family == Family::XceptionMini ? Act::Relu : Act::Swish;
    const int strided_blocks = log2i(spec.downsample_factor) - 1;

    BackboneBuild out;
    Tensor stem_k = reg.add(prefix + "/stem/kernel", init_conv_kernel(3, 3, 1, spec.stem_channels, rng));
    out.layers.push_back(std::make_unique<ConvLayer>(stem_k, 2, Padding::Same));
    out.layers.push_back(make_bn(prefix + "/stem/bn", spec.stem_channels, reg));
    out.layers.push_back(std::make_unique<ActLayer>(act));

    const std::vector<int> widths = plan_channels(spec);
    int cur = spec.stem_channels;
    for (int i = 0; i < spec.block_count; ++i) {
        const std::string bp = prefix + "/block" + std::to_string(i);
        const int stride = i < strided_blocks ? 2 : 1;
        const int next = widths[static_cast<std::size_t>(i)];
        if (spec.family == Family::XceptionMini) {
            SepConvBlock::Parts parts;
            parts.stride = stride;
            parts.dw_kernel = reg.add(bp + "/dw/kernel", init_depthwise_kernel(3, 3, cur, rng));
            parts.pw_kernel = reg.add(bp + "/pw/kernel", init_conv_kernel(1, 1, cur, next, rng));
            parts.bn = make_bn(bp + "/bn", next, reg);
            if (stride != 1 || cur != next) {
                parts.shortcut_kernel = reg.add(bp + "/shortcut/kernel", init_conv_kernel(1, 1, cur, next, rng));
                parts.shortcut_bn = make_bn(bp + "/shortcut/bn", next, reg);
            }
            out.layers.push_back(std::make_unique<SepConvBlock>(std::move(parts)));
        } else {
            const int wide = cur * 2;
            FusedExpandBlock::Parts parts;
            parts.stride = stride;
            parts.residual = stride == 1 && cur == next;
            parts.expand_kernel = reg.add(bp + "/expand/kernel", init_conv_kernel(3, 3, cur, wide, rng));
            parts.expand_bn = make_bn(bp + "/expand/bn", wide, reg);
            parts.project_kernel = reg.add(bp + "/project/kernel", init_conv_kernel(1, 1, wide, next, rng));
            parts.project_bn = make_bn(bp + "/project/bn", next, reg);
            out.layers.push_back(std::make_unique<FusedExpandBlock>(std::move(parts)));
        }
        cur = next;
    }
    out.out_channels = cur;
    out.out_extent = input_size / spec.downsample_factor;
    return out;
}

ModelGraph build_ensemble(const BackboneSpec& a, const std::optional<BackboneSpec>& b, const HeadConfig& head,
                          int class_count, int input_size, std::uint64_t seed) {
    const ShapeSummary shapes = infer_shapes(a, b, head, class_count, input_size);
    if (head.out_capsules < 1 || head.out_dim < 1) throw std::invalid_argument("head: capsule sizes must be >= 1");
    if (head.routing_iters < 1) throw std::invalid_argument("head: routing_iters must be >= 1");
    if (head.dropout_rate < 0.0 || head.dropout_rate >= 1.0)
        throw std::invalid_argument("head: dropout rate must be in [0,1)");

    ModelGraph m;
    m.class_count = class_count;
    m.input_size = input_size;
    m.spec_a = a;
    m.spec_b = b;
    m.head = head;

    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    BackboneBuild ba = build_backbone(a, input_size, "backbone_a", m.params, rng);
    m.backbone_a_ = std::move(ba.layers);
    if (b) {
        BackboneBuild bb = build_backbone(*b, input_size, "backbone_b", m.params, rng);
        m.backbone_b_ = std::move(bb.layers);
    }

    const int ext = shapes.feat_extent;
    m.srnet_ = SrCompressor::create(ext, ext, shapes.concat_channels);
    if (head.compressor == HeadConfig::Compressor::Srnet) {
        m.srnet_.spatial_kernel = m.params.add("srnet/spatial_kernel", m.srnet_.spatial_kernel);
    }

    m.caps_cfg_.in_capsules = shapes.in_capsules;
    m.caps_cfg_.in_dim = 1;
    m.caps_cfg_.out_capsules = head.out_capsules;
    m.caps_cfg_.out_dim = head.out_dim;
    m.caps_cfg_.routing_iters = head.routing_iters;
    {
        const double sd = 1.0 / std::sqrt(static_cast<double>(shapes.in_capsules));
        std::vector<double> w(static_cast<std::size_t>(shapes.capsule_params));
        for (auto& x : w) x = rng.normal(0.0, sd);
        m.caps_w_ = m.params.add("capsule/W", Tensor::from({shapes.in_capsules, head.out_capsules, head.out_dim, 1},
                                                           std::move(w)));
    }
    m.dense_w_ = m.params.add("tail/dense_w", init_dense_weight(shapes.flatten_width, class_count, rng));
    m.dense_b_ = m.params.add("tail/dense_b", Tensor::zeros({class_count}));
    return m;
}

Tensor ModelGraph::forward(const Tensor& images, const Context& ctx) {
    if (images.rank() != 4 || images.dim(1) != input_size || images.dim(2) != input_size || images.dim(3) != 1) {
        throw std::invalid_argument("model: expected input [N," + std::to_string(input_size) + "," +
                                    std::to_string(input_size) + ",1], got " + shape_str(images.shape()));
    }
    if (ctx.training && ctx.rng == nullptr) {
        throw std::invalid_argument("model: training forward needs an rng");
    }

    Tensor xa = images;
    for (auto& l : backbone_a_) xa = l->forward(xa, ctx);
    Tensor feat = xa;
    if (!backbone_b_.empty()) {
        Tensor xb = images;
        for (auto& l : backbone_b_) xb = l->forward(xb, ctx);
        feat = concat_channels(xa, xb);
    }

    Tensor compressed =
        head.compressor == HeadConfig::Compressor::Srnet ? srnet_.compress(feat) : gap(feat);
    const int n = compressed.dim(0);
    Tensor caps_in = reshape(compressed, {n, caps_cfg_.in_capsules, 1});
    Tensor v = route(caps_in, caps_cfg_, caps_w_);

    Rng eval_rng(0);  // never consulted: dropout is the identity at eval time
    Rng& rng = ctx.training ? *ctx.rng : eval_rng;
    return classify_tail(v, dense_w_, dense_b_, head.dropout_rate, ctx.training, rng);
}

}  // namespace roct
