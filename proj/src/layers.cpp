#include "roct/layers.hpp"

#include <cmath>

namespace roct {

Tensor ParamRegistry::add(const std::string& name, Tensor init, bool trainable) {
    if (index_.count(name)) throw std::invalid_argument("registry: duplicate parameter name '" + name + "'");
    init.set_requires_grad(trainable);
    auto p = std::make_shared<Parameter>(Parameter{name, init, trainable});
    index_[name] = params_.size();
    params_.push_back(p);
    return p->value;
}

Parameter& ParamRegistry::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("registry: no parameter named '" + name + "'");
    return *params_[it->second];
}

const Parameter& ParamRegistry::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("registry: no parameter named '" + name + "'");
    return *params_[it->second];
}

Tensor BatchNormLayer::forward(const Tensor& x, const Context& ctx) {
    if (!ctx.training) return batch_norm_eval(x, gamma_, beta_, run_mean_, run_var_, kEps);

    std::vector<double> bm, bv;
    Tensor y = batch_norm_train(x, gamma_, beta_, kEps, bm, bv);
    auto& rm = run_mean_.data_mut();
    auto& rv = run_var_.data_mut();
    for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = kMomentum * rm[c] + (1.0 - kMomentum) * bm[c];
        rv[c] = kMomentum * rv[c] + (1.0 - kMomentum) * bv[c];
    }
    return y;
}

Tensor SepConvBlock::forward(const Tensor& x, const Context& ctx) {
    Tensor main = depthwise_conv2d(x, p_.dw_kernel, p_.stride, Padding::Same);
    main = pointwise_conv2d(main, p_.pw_kernel);
    main = p_.bn->forward(main, ctx);
    Tensor shortcut = x;
    if (p_.shortcut_bn) {
        shortcut = conv2d(x, p_.shortcut_kernel, p_.stride, Padding::Same);
        shortcut = p_.shortcut_bn->forward(shortcut, ctx);
    }
    return relu(add(main, shortcut));
}

Tensor FusedExpandBlock::forward(const Tensor& x, const Context& ctx) {
    Tensor y = conv2d(x, p_.expand_kernel, p_.stride, Padding::Same);
    y = p_.expand_bn->forward(y, ctx);
    y = swish(y);
    y = pointwise_conv2d(y, p_.project_kernel);
    y = p_.project_bn->forward(y, ctx);
    if (p_.residual) y = add(y, x);
    return y;
}

Tensor init_conv_kernel(int kh, int kw, int cin, int cout, Rng& rng) {
    const double sd = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
    std::vector<double> v(static_cast<std::size_t>(shape_numel({kh, kw, cin, cout})));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from({kh, kw, cin, cout}, v);
}

Tensor init_depthwise_kernel(int kh, int kw, int c, Rng& rng) {
    const double sd = std::sqrt(2.0 / (static_cast<double>(kh) * kw));
    std::vector<double> v(static_cast<std::size_t>(shape_numel({kh, kw, c})));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from({kh, kw, c}, v);
}

Tensor init_dense_weight(int fan_in, int fan_out, Rng& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(shape_numel({fan_in, fan_out})));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from({fan_in, fan_out}, v);
}

}  // namespace roct
