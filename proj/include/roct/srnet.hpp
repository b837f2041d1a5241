// Learned spatial compression to 1x1xC. A depthwise convolution whose kernel
// covers the whole feature map, so each channel keeps its own spatial
// weighting instead of being averaged away.
#pragma once

#include "roct/ops.hpp"
#include "roct/tensor.hpp"

namespace roct {

struct SrCompressor {
    int h = 0, w = 0, c = 0;
    Tensor spatial_kernel;  // [H,W,C], one slice per channel

    // Kernel starts uniform at 1/(H*W): identical to global average pooling
    // until training moves it.
    static SrCompressor create(int h, int w, int c);

    // [N,H,W,C] -> [N,1,1,C]; extents must match the build-time size.
    Tensor compress(const Tensor& features) const;
};

}  // namespace roct
