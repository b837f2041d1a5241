// Backbone construction, the two-backbone ensemble, and the full model graph
// from input image to class logits.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "roct/capsule.hpp"
#include "roct/layers.hpp"
#include "roct/srnet.hpp"

namespace roct {

enum class Family { XceptionMini, Effv2Mini };

Family parse_family(const std::string& s);           // "xception-mini" | "effv2-mini"
std::string family_name(Family f);

struct BackboneSpec {
    Family family = Family::XceptionMini;
    int stem_channels = 16;
    int block_count = 5;
    int final_channels = 64;
    int downsample_factor = 32;  // power of two >= 2

    // Named presets: paper-xception, paper-effv2b0, toy-xception, toy-effv2.
    static BackboneSpec preset(const std::string& name);
};

struct HeadConfig {
    int out_capsules = 10;
    int out_dim = 16;
    int routing_iters = 3;
    double dropout_rate = 0.5;
    enum class Compressor { Srnet, Gap } compressor = Compressor::Srnet;
};

// Shape arithmetic without building anything; usable at full preset scale.
struct ShapeSummary {
    int feat_extent = 0;            // spatial size after the backbones
    int concat_channels = 0;        // sum of backbone final channels
    int in_capsules = 0;            // == concat_channels
    std::int64_t capsule_params = 0;
    int flatten_width = 0;          // out_capsules * out_dim
    int class_count = 0;
};
ShapeSummary infer_shapes(const BackboneSpec& a, const std::optional<BackboneSpec>& b, const HeadConfig& head,
                          int class_count, int input_size);

// Output channel count of a backbone (block_count 0 degenerates to the stem).
int backbone_out_channels(const BackboneSpec& spec);

struct BackboneBuild {
    std::vector<std::unique_ptr<Layer>> layers;
    int out_channels = 0;
    int out_extent = 0;
};

// Stem (3x3 stride-2 conv + norm + activation) followed by block_count
// blocks; the first log2(downsample)-1 blocks use stride 2.
BackboneBuild build_backbone(const BackboneSpec& spec, int input_size, const std::string& prefix,
                             ParamRegistry& reg, Rng& rng);

class ModelGraph {
public:
    ParamRegistry params;
    int class_count = 0;
    int input_size = 0;
    BackboneSpec spec_a;
    std::optional<BackboneSpec> spec_b;
    HeadConfig head;

    // [N,input,input,1] grayscale in, [N,class_count] logits out.
    Tensor forward(const Tensor& images, const Context& ctx);

    const CapsuleConfig& capsule_config() const { return caps_cfg_; }

private:
    friend ModelGraph build_ensemble(const BackboneSpec&, const std::optional<BackboneSpec>&, const HeadConfig&,
                                     int, int, std::uint64_t);
    std::vector<std::unique_ptr<Layer>> backbone_a_, backbone_b_;
    SrCompressor srnet_;
    CapsuleConfig caps_cfg_;
    Tensor caps_w_, dense_w_, dense_b_;
};

// Builds the full graph: backbones -> channel concat -> compression ->
// routing -> classifier tail. Pass no second spec for a single-backbone
// configuration. The seed fixes every initial weight.
ModelGraph build_ensemble(const BackboneSpec& a, const std::optional<BackboneSpec>& b, const HeadConfig& head,
                          int class_count, int input_size, std::uint64_t seed);

}  // namespace roct
