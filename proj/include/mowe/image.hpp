// Image helpers. Images are [3 x H x W] tensors with values in [0,1];
// storage on disk is 8-bit binary PPM (P6).
#pragma once

#include <filesystem>
#include <fstream>

#include "mowe/tensor.hpp"

namespace mowe {

inline void check_image(const Tensor& img, const char* who) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ShapeError(std::string(who) + ": expected [3 x H x W], got " + shape_str(img.shape()));
}

inline int image_height(const Tensor& img) { return img.dim(1); }
inline int image_width(const Tensor& img) { return img.dim(2); }

inline double pixel(const Tensor& img, int c, int y, int x) {
    return img[(static_cast<int64_t>(c) * img.dim(1) + y) * img.dim(2) + x];
}

inline double& pixel_ref(Tensor& img, int c, int y, int x) {
    return img[(static_cast<int64_t>(c) * img.dim(1) + y) * img.dim(2) + x];
}

// channel-mean grayscale [H x W]
inline Tensor to_gray(const Tensor& img) {
    check_image(img, "to_gray");
    int h = img.dim(1), w = img.dim(2);
    Tensor g(Shape{h, w});
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i) g[i] = (img[i] + img[plane + i] + img[2 * plane + i]) / 3.0;
    return g;
}

inline uint8_t quantize8(double v) {
    double q = std::nearbyint(clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(q);
}

// Snaps pixel values onto the 8-bit grid used on disk, so in-memory samples
// and reloaded samples are bit-identical.
inline Tensor quantize_image(const Tensor& img) {
    check_image(img, "quantize_image");
    Tensor out = img.detach();
    for (double& v : out.vec()) v = static_cast<double>(quantize8(v)) / 255.0;
    return out;
}

inline void write_ppm(const std::string& path, const Tensor& img) {
    check_image(img, "write_ppm");
    int h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParamError("write_ppm: cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = quantize8(pixel(img, c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw ParamError("write_ppm: write failed for " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParamError("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ParamError("read_ppm: not a P6 file: " + path);
    auto next_token = [&in, &path]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string line;
                std::getline(in, line);
                continue;
            }
            return tok;
        }
        throw ParamError("read_ppm: truncated header in " + path);
    };
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (maxval != 255) throw ParamError("read_ppm: expected maxval 255 in " + path);
    in.get();  // single whitespace after header
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw ParamError("read_ppm: truncated pixel data in " + path);
    Tensor img(Shape{3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                pixel_ref(img, c, y, x) =
                    static_cast<double>(raw[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0;
    return img;
}

}  // namespace mowe
