// Image loading (PNG/JPEG/PGM/PPM), bilinear resizing, and the training-time
// augmentation transforms. Images are grayscale doubles in [0,1].
#pragma once

#include <string>
#include <vector>

#include "roct/tensor.hpp"

namespace roct {

struct Image {
    int h = 0, w = 0;
    std::vector<double> pix;  // row-major grayscale, values in [0,1]
};

// Sniffs the format from magic bytes. Color inputs are reduced to luminance.
Image decode_image(const std::string& path);

Image resize_bilinear(const Image& src, int out_h, int out_w);

Tensor image_to_tensor(const Image& img);  // [h,w,1]

// decode + bilinear resize + [0,1] scaling in one call -> [size,size,1]
Tensor load_and_resize(const std::string& path, int size);

// Writers used by tooling and fixtures.
void write_pgm(const std::string& path, const Image& img);
void write_png(const std::string& path, const Image& img);
void write_jpeg(const std::string& path, const Image& img, int quality = 95);

struct AugmentConfig {
    bool hflip = false;
    bool vflip = false;
    double zoom_range = 0.0;       // zoom drawn from [1-z, 1+z]
    double shift_range = 0.0;      // shifts drawn from +-fraction of extent
    double rotation_degrees = 0.0; // rotation drawn from [0, deg)

    // flips on, 10% zoom, 10% shift, full rotation
    static AugmentConfig standard();
    static AugmentConfig none() { return AugmentConfig{}; }
};

// One concrete draw from an AugmentConfig. Shifts are stored as fractions of
// the image extent.
struct AugmentSample {
    bool hflip = false;
    bool vflip = false;
    double zoom = 1.0;
    double shift_x = 0.0;
    double shift_y = 0.0;
    double rotation_rad = 0.0;
};

// Draw order is fixed (hflip, vflip, zoom, shift x, shift y, rotation) so a
// given rng state always produces the same transform.
AugmentSample draw_augment(const AugmentConfig& cfg, Rng& rng);

// Applies flips, then rotation about the center, then zoom, then shift, as a
// single inverse-mapped bilinear resample with nearest-edge fill. Input must
// be square [S,S,1].
Tensor apply_augment(const Tensor& img, const AugmentSample& s);

Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng);

}  // namespace roct
