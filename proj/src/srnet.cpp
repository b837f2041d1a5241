#include "roct/srnet.hpp"

#include <stdexcept>

namespace roct {

SrCompressor SrCompressor::create(int h, int w, int c) {
    if (h < 1 || w < 1 || c < 1) {
        throw std::invalid_argument("sr_compressor: extents must be positive");
    }
    SrCompressor sr;
    sr.h = h;
    sr.w = w;
    sr.c = c;
    sr.spatial_kernel = Tensor::full({h, w, c}, 1.0 / (static_cast<double>(h) * w));
    return sr;
}

Tensor SrCompressor::compress(const Tensor& features) const {
    if (features.rank() != 4 || features.dim(1) != h || features.dim(2) != w || features.dim(3) != c) {
        throw std::invalid_argument("sr_compressor: expected input [N," + std::to_string(h) + "," +
                                    std::to_string(w) + "," + std::to_string(c) + "], got " +
                                    shape_str(features.shape()));
    }
    // Full-extent valid depthwise convolution collapses H and W in one step.
    return depthwise_conv2d(features, spatial_kernel, 1, Padding::Valid);
}

}  // namespace roct
