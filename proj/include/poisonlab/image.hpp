#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "poisonlab/common.hpp"

namespace poisonlab {

// H x W x C image with values in [0, 1], row-major, channel-interleaved.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    void clamp01() {
        for (auto& v : data) v = std::clamp(v, 0.0, 1.0);
    }

    // Snap to the 8-bit grid used by the on-disk format, so a written and
    // re-ingested image compares equal to the in-memory one.
    void quantize8() {
        for (auto& v : data) {
            int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            v = static_cast<double>(q) / 255.0;
        }
    }

    Vec flatten() const {
        Vec v(static_cast<Eigen::Index>(data.size()));
        for (size_t i = 0; i < data.size(); ++i) v[static_cast<Eigen::Index>(i)] = data[i];
        return v;
    }

    static Image from_vec(const Vec& v, int h, int w, int c) {
        Image img(h, w, c);
        if (v.size() != static_cast<Eigen::Index>(img.size()))
            throw PreconditionError("Image::from_vec: size mismatch");
        for (Eigen::Index i = 0; i < v.size(); ++i) img.data[static_cast<size_t>(i)] = v[i];
        return img;
    }
};

inline double mean_abs_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw PreconditionError("mean_abs_diff: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255) is the one raster format the corpus tooling reads and
// writes. Grayscale inputs are expanded to 3 channels on load.
// ---------------------------------------------------------------------------

inline void write_ppm(const Image& img, const std::string& path) {
    if (img.channels != 3) throw IoError("write_ppm: expected 3-channel image: " + path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_ppm: cannot open " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.size());
    for (size_t i = 0; i < img.size(); ++i)
        raw[i] = static_cast<unsigned char>(
            std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("write_ppm: write failed: " + path);
}

namespace detail {
inline int ppm_next_int(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comments per the netpbm grammar.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw ParseError("ppm: truncated header: " + path);
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw ParseError("ppm: malformed header: " + path);
    return value;
}
} // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_ppm: cannot open " + path);
    char magic[2];
    f.read(magic, 2);
    if (!f || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5'))
        throw ParseError("ppm: unsupported magic in " + path);
    const bool gray = magic[1] == '5';
    const int w = detail::ppm_next_int(f, path);
    const int h = detail::ppm_next_int(f, path);
    const int maxval = detail::ppm_next_int(f, path);
    if (maxval != 255) throw ParseError("ppm: only maxval 255 supported: " + path);
    const int in_ch = gray ? 1 : 3;
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * in_ch);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw ParseError("ppm: truncated pixel data: " + path);
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const size_t src = (static_cast<size_t>(y) * w + x) * in_ch + (gray ? 0 : c);
                img.at(y, x, c) = static_cast<double>(raw[src]) / 255.0;
            }
    return img;
}

// Bilinear resize with pixel-center alignment.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw PreconditionError("resize_bilinear: bad target size");
    if (src.height == out_h && src.width == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
                const double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
                dst.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

// 2x average-pool downsample, used by the multi-scale perceptual metric.
inline Image downsample2(const Image& src) {
    const int h = std::max(1, src.height / 2);
    const int w = std::max(1, src.width / 2);
    Image dst(h, w, src.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double s = 0.0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int yy = 2 * y + dy, xx = 2 * x + dx;
                        if (yy < src.height && xx < src.width) {
                            s += src.at(yy, xx, c);
                            ++n;
                        }
                    }
                dst.at(y, x, c) = s / n;
            }
    return dst;
}

inline uint64_t image_digest(const Image& img) {
    uint64_t h = fnv1a64_bytes(&img.height, sizeof img.height);
    h = fnv1a64_bytes(&img.width, sizeof img.width, h);
    h = fnv1a64_bytes(&img.channels, sizeof img.channels, h);
    return fnv1a64_bytes(img.data.data(), img.data.size() * sizeof(double), h);
}

} // namespace poisonlab
