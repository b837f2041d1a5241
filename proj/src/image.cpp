#include "roct/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace roct {

namespace {

constexpr double kPi = 3.14159265358979323846;

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

struct FileCloser {
    FILE* fp;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

Image decode_png_file(const std::string& path, FILE* fp) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("image: png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("image: png reader allocation failed");
    }
    std::vector<unsigned char> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("image: failed to decode PNG '" + path + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = png_get_channels(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("image: unsupported PNG channel count in '" + path + "'");
    }
    const std::size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * static_cast<std::size_t>(h));
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + stride * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img;
    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        const unsigned char* row = buf.data() + stride * static_cast<std::size_t>(y);
        for (int x = 0; x < w; ++x) {
            double v;
            if (ch == 1) {
                v = row[x] / 255.0;
            } else {
                v = luminance(row[x * 3] / 255.0, row[x * 3 + 1] / 255.0, row[x * 3 + 2] / 255.0);
            }
            img.pix[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    return img;
}

struct JpegErr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_throwing_error_exit(j_common_ptr cinfo) {
    JpegErr* err = reinterpret_cast<JpegErr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

Image decode_jpeg_file(const std::string& path, FILE* fp) {
    jpeg_decompress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_throwing_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("image: failed to decode JPEG '" + path + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_GRAYSCALE;  // the library handles RGB reduction
    jpeg_start_decompress(&cinfo);

    Image img;
    img.h = static_cast<int>(cinfo.output_height);
    img.w = static_cast<int>(cinfo.output_width);
    img.pix.resize(static_cast<std::size_t>(img.h) * img.w);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * cinfo.output_components);
    unsigned char* rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < img.w; ++x) img.pix[static_cast<std::size_t>(y) * img.w + x] = row[x] / 255.0;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

// P5/P6 binary and P2 ASCII netpbm variants.
Image decode_netpbm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open '" + path + "'");
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6" && magic != "P2") {
        throw std::runtime_error("image: unsupported netpbm variant in '" + path + "'");
    }
    auto next_int = [&]() {
        // skip whitespace and '#' comments between header fields
        for (;;) {
            const int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v = -1;
        is >> v;
        if (!is || v < 0) throw std::runtime_error("image: malformed netpbm header in '" + path + "'");
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
        throw std::runtime_error("image: malformed netpbm header in '" + path + "'");
    }

    Image img;
    img.h = static_cast<int>(h);
    img.w = static_cast<int>(w);
    img.pix.resize(static_cast<std::size_t>(h) * w);
    const int ch = magic == "P6" ? 3 : 1;

    if (magic == "P2") {
        for (auto& p : img.pix) {
            long v;
            is >> v;
            if (!is) throw std::runtime_error("image: truncated netpbm data in '" + path + "'");
            p = static_cast<double>(v) / maxval;
        }
        return img;
    }

    is.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * ch * bytes);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw std::runtime_error("image: truncated netpbm data in '" + path + "'");
    auto sample = [&](std::size_t idx) {
        if (bytes == 1) return raw[idx] / static_cast<double>(maxval);
        return (raw[idx * 2] * 256.0 + raw[idx * 2 + 1]) / maxval;  // big-endian per format
    };
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        if (ch == 1) {
            img.pix[i] = sample(i);
        } else {
            img.pix[i] = luminance(sample(i * 3), sample(i * 3 + 1), sample(i * 3 + 2));
        }
    }
    return img;
}

double sample_clamped(const Image& img, double y, double x) {
    // bilinear with indices clamped to the edge
    const double cx = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, img.w - 1);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double fx = cx - x0, fy = cy - y0;
    const double top = img.pix[static_cast<std::size_t>(y0) * img.w + x0] * (1.0 - fx) +
                       img.pix[static_cast<std::size_t>(y0) * img.w + x1] * fx;
    const double bot = img.pix[static_cast<std::size_t>(y1) * img.w + x0] * (1.0 - fx) +
                       img.pix[static_cast<std::size_t>(y1) * img.w + x1] * fx;
    return top * (1.0 - fy) + bot * fy;
}

}  // namespace

Image decode_image(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("image: cannot open '" + path + "'");
    FileCloser closer{fp};
    unsigned char magic[8] = {0};
    const std::size_t got = std::fread(magic, 1, sizeof magic, fp);
    std::rewind(fp);
    if (got >= 8 && std::memcmp(magic, "\x89PNG\r\n\x1a\n", 8) == 0) return decode_png_file(path, fp);
    if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg_file(path, fp);
    if (got >= 2 && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6' || magic[1] == '2')) {
        return decode_netpbm(path);
    }
    throw std::runtime_error("image: unrecognized format in '" + path + "'");
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output extents must be positive");
    if (src.h == out_h && src.w == out_w) return src;
    Image dst;
    dst.h = out_h;
    dst.w = out_w;
    dst.pix.resize(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;  // align pixel centers
        for (int x = 0; x < out_w; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            dst.pix[static_cast<std::size_t>(y) * out_w + x] = sample_clamped(src, src_y, src_x);
        }
    }
    return dst;
}

Tensor image_to_tensor(const Image& img) { return Tensor::from({img.h, img.w, 1}, img.pix); }

Tensor load_and_resize(const std::string& path, int size) {
    return image_to_tensor(resize_bilinear(decode_image(path), size, size));
}

void write_pgm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot write '" + path + "'");
    os << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.pix) {
        const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        os.put(static_cast<char>(q));
    }
    if (!os) throw std::runtime_error("image: write to '" + path + "' failed");
}

void write_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("image: cannot write '" + path + "'");
    FileCloser closer{fp};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("image: png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("image: png writer allocation failed");
    }
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("image: failed to encode PNG '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double v = img.pix[static_cast<std::size_t>(y) * img.w + x];
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_jpeg(const std::string& path, const Image& img, int quality) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("image: cannot write '" + path + "'");
    FileCloser closer{fp};
    jpeg_compress_struct cinfo;
    JpegErr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_throwing_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw std::runtime_error("image: failed to encode JPEG '" + path + "'");
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, fp);
    cinfo.image_width = static_cast<JDIMENSION>(img.w);
    cinfo.image_height = static_cast<JDIMENSION>(img.h);
    cinfo.input_components = 1;
    cinfo.in_color_space = JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w));
    while (cinfo.next_scanline < cinfo.image_height) {
        const int y = static_cast<int>(cinfo.next_scanline);
        for (int x = 0; x < img.w; ++x) {
            const double v = img.pix[static_cast<std::size_t>(y) * img.w + x];
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        unsigned char* rowp = row.data();
        jpeg_write_scanlines(&cinfo, &rowp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

AugmentConfig AugmentConfig::standard() {
    AugmentConfig c;
    c.hflip = true;
    c.vflip = true;
    c.zoom_range = 0.10;
    c.shift_range = 0.10;
    c.rotation_degrees = 360.0;
    return c;
}

AugmentSample draw_augment(const AugmentConfig& cfg, Rng& rng) {
    AugmentSample s;
    s.hflip = cfg.hflip && rng.bernoulli(0.5);
    s.vflip = cfg.vflip && rng.bernoulli(0.5);
    s.zoom = cfg.zoom_range > 0.0 ? rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range) : 1.0;
    s.shift_x = cfg.shift_range > 0.0 ? rng.uniform(-cfg.shift_range, cfg.shift_range) : 0.0;
    s.shift_y = cfg.shift_range > 0.0 ? rng.uniform(-cfg.shift_range, cfg.shift_range) : 0.0;
    s.rotation_rad = cfg.rotation_degrees > 0.0
                         ? rng.uniform(0.0, cfg.rotation_degrees) * kPi / 180.0
                         : 0.0;
    return s;
}

Tensor apply_augment(const Tensor& img, const AugmentSample& s) {
    if (img.rank() != 3 || img.dim(0) != img.dim(1) || img.dim(2) != 1) {
        throw std::invalid_argument("augment: expected square [S,S,1] image, got " + shape_str(img.shape()));
    }
    const int size = img.dim(0);
    Image src;
    src.h = size;
    src.w = size;
    src.pix = img.data();

    const double c = (size - 1) / 2.0;
    const double ca = std::cos(s.rotation_rad), sa = std::sin(s.rotation_rad);
    const double px_shift_x = s.shift_x * size, px_shift_y = s.shift_y * size;

    std::vector<double> out(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // invert the forward chain (flips, rotation, zoom, shift)
            double px = x - c - px_shift_x;
            double py = y - c - px_shift_y;
            px /= s.zoom;
            py /= s.zoom;
            const double qx = ca * px + sa * py;
            const double qy = -sa * px + ca * py;
            double sx = s.hflip ? -qx : qx;
            double sy = s.vflip ? -qy : qy;
            out[static_cast<std::size_t>(y) * size + x] = sample_clamped(src, sy + c, sx + c);
        }
    }
    return Tensor::from({size, size, 1}, std::move(out));
}

Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(img, draw_augment(cfg, rng));
}

}  // namespace roct
