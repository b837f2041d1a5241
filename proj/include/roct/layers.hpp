// Parameter registry and the small set of layers the backbones are built
// from. Tensors are shared handles, so a layer and the registry see the same
// storage.
#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "roct/ops.hpp"
#include "roct/tensor.hpp"

namespace roct {

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

class ParamRegistry {
public:
    // Registers a tensor under a unique name. Trainable parameters get their
    // gradient buffer switched on; non-trainable ones (running statistics)
    // are still saved and loaded.
    Tensor add(const std::string& name, Tensor init, bool trainable = true);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    const std::vector<std::shared_ptr<Parameter>>& all() const { return params_; }

private:
    std::vector<std::shared_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Context {
    bool training = false;
    Rng* rng = nullptr;  // required when training (dropout masks)
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, const Context& ctx) = 0;
};

class ConvLayer : public Layer {
public:
    ConvLayer(Tensor kernel, int stride, Padding pad) : kernel_(std::move(kernel)), stride_(stride), pad_(pad) {}
    Tensor forward(const Tensor& x, const Context&) override { return conv2d(x, kernel_, stride_, pad_); }

private:
    Tensor kernel_;
    int stride_;
    Padding pad_;
};

// Per-channel normalization with learned scale/shift. Training mode uses the
// batch statistics and folds them into the running estimates; eval mode uses
// the running estimates only.
class BatchNormLayer : public Layer {
public:
    BatchNormLayer(Tensor gamma, Tensor beta, Tensor run_mean, Tensor run_var)
        : gamma_(std::move(gamma)), beta_(std::move(beta)), run_mean_(std::move(run_mean)),
          run_var_(std::move(run_var)) {}
    Tensor forward(const Tensor& x, const Context& ctx) override;

    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.9;

private:
    Tensor gamma_, beta_, run_mean_, run_var_;
};

enum class Act { Relu, Swish };

class ActLayer : public Layer {
public:
    explicit ActLayer(Act act) : act_(act) {}
    Tensor forward(const Tensor& x, const Context&) override { return act_ == Act::Relu ? relu(x) : swish(x); }

private:
    Act act_;
};

// Depthwise 3x3 + pointwise projection with a residual add. The shortcut is
// the identity when the shape is unchanged, otherwise a strided 1x1 conv.
class SepConvBlock : public Layer {
public:
    struct Parts {
        Tensor dw_kernel;                      // [3,3,cin]
        Tensor pw_kernel;                      // [1,1,cin,cout]
        std::unique_ptr<BatchNormLayer> bn;
        Tensor shortcut_kernel;                // undefined handle when identity
        std::unique_ptr<BatchNormLayer> shortcut_bn;
        int stride = 1;
    };
    explicit SepConvBlock(Parts parts) : p_(std::move(parts)) {}
    Tensor forward(const Tensor& x, const Context& ctx) override;

private:
    Parts p_;
};

// Fused expansion block: full 3x3 conv widening the channels, swish, then a
// 1x1 projection. Residual add only when the shape is unchanged.
class FusedExpandBlock : public Layer {
public:
    struct Parts {
        Tensor expand_kernel;   // [3,3,cin,cin*expand]
        std::unique_ptr<BatchNormLayer> expand_bn;
        Tensor project_kernel;  // [1,1,cin*expand,cout]
        std::unique_ptr<BatchNormLayer> project_bn;
        int stride = 1;
        bool residual = false;
    };
    explicit FusedExpandBlock(Parts parts) : p_(std::move(parts)) {}
    Tensor forward(const Tensor& x, const Context& ctx) override;

private:
    Parts p_;
};

// Initializers: fan-in-scaled normal draws from the given rng.
Tensor init_conv_kernel(int kh, int kw, int cin, int cout, Rng& rng);
Tensor init_depthwise_kernel(int kh, int kw, int c, Rng& rng);
Tensor init_dense_weight(int fan_in, int fan_out, Rng& rng);

}  // namespace roct
