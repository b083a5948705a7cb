#pragma once

#include <array>
#include <cmath>

#include "poisonlab/common.hpp"
#include "poisonlab/image.hpp"

namespace poisonlab {

// Procedural glyphs: each concept owns a (shape, color) pair. Shapes are
// signed-distance coverage functions, colors are saturated RGB primaries, so
// any two glyph ids are easy for a small classifier to separate.

constexpr int kGlyphShapes = 12;
constexpr int kGlyphColors = 8;
constexpr int kGlyphCapacity = kGlyphShapes * kGlyphColors;

namespace detail {

inline const std::array<std::array<double, 3>, kGlyphColors>& glyph_palette() {
    static const std::array<std::array<double, 3>, kGlyphColors> palette = {{
        {0.90, 0.15, 0.15}, // red
        {0.15, 0.55, 0.95}, // blue
        {0.15, 0.75, 0.25}, // green
        {0.95, 0.80, 0.10}, // yellow
        {0.70, 0.20, 0.85}, // purple
        {0.95, 0.50, 0.10}, // orange
        {0.10, 0.80, 0.80}, // cyan
        {0.55, 0.35, 0.15}, // brown
    }};
    return palette;
}

// Coverage in [0,1] of shape `id` at normalized offset (u, v) from glyph
// center, where the glyph nominally spans |u|,|v| <= 1.
inline double shape_coverage(int id, double u, double v) {
    auto soft = [](double signed_dist) {
        // ~1 inside, ~0 outside, smooth over a band of width 0.25.
        return std::clamp(0.5 - signed_dist / 0.25, 0.0, 1.0);
    };
    const double r = std::sqrt(u * u + v * v);
    switch (id) {
        case 0: return soft(r - 0.85);                                    // disk
        case 1: return soft(std::max(std::abs(u), std::abs(v)) - 0.78);   // square
        case 2: {                                                         // triangle (up)
            const double d = std::max({-v - 0.75, v * 0.5 + std::abs(u) * 0.9 - 0.62});
            return soft(d);
        }
        case 3: return soft(std::max(r - 0.88, 0.45 - r));                // ring
        case 4: {                                                         // plus
            const double d = std::min(std::max(std::abs(u) - 0.30, std::abs(v) - 0.85),
                                      std::max(std::abs(v) - 0.30, std::abs(u) - 0.85));
            return soft(d);
        }
        case 5: return soft(std::abs(u) + std::abs(v) - 0.92);            // diamond
        case 6: {                                                         // horizontal bars
            const double band = std::abs(std::fmod(std::abs(v * 2.2), 1.0) - 0.5);
            return soft(std::max(band - 0.28, std::max(std::abs(u), std::abs(v)) - 0.82));
        }
        case 7: {                                                         // vertical bars
            const double band = std::abs(std::fmod(std::abs(u * 2.2), 1.0) - 0.5);
            return soft(std::max(band - 0.28, std::max(std::abs(u), std::abs(v)) - 0.82));
        }
        case 8: {                                                         // checker
            const int cx = static_cast<int>(std::floor((u + 1.0) * 1.8));
            const int cy = static_cast<int>(std::floor((v + 1.0) * 1.8));
            const double inside = std::max(std::abs(u), std::abs(v)) - 0.82;
            return ((cx + cy) % 2 == 0) ? soft(inside) : 0.0;
        }
        case 9: {                                                         // X
            const double d1 = std::abs(u - v) / std::sqrt(2.0);
            const double d2 = std::abs(u + v) / std::sqrt(2.0);
            const double d = std::min(d1, d2) - 0.22;
            return soft(std::max(d, std::max(std::abs(u), std::abs(v)) - 0.85));
        }
        case 10: {                                                        // hollow square
            const double box = std::max(std::abs(u), std::abs(v));
            return soft(std::max(box - 0.82, 0.48 - box));
        }
        case 11: {                                                        // small dot grid
            const double gu = std::abs(std::fmod(std::abs(u * 1.5) + 0.5, 1.0) - 0.5);
            const double gv = std::abs(std::fmod(std::abs(v * 1.5) + 0.5, 1.0) - 0.5);
            const double d = std::sqrt(gu * gu + gv * gv) - 0.30;
            return soft(std::max(d, std::max(std::abs(u), std::abs(v)) - 0.85));
        }
        default: throw CapacityError("glyph shape id out of range");
    }
}

} // namespace detail

struct GlyphJitter {
    double center_x = 0.5; // in image fraction
    double center_y = 0.5;
    double scale = 0.34;   // glyph half-extent as image fraction
    double bg_tint[3] = {0.93, 0.93, 0.93};
};

inline GlyphJitter sample_glyph_jitter(Rng& rng) {
    GlyphJitter j;
    j.center_x = 0.5 + rng.uniform(-0.10, 0.10);
    j.center_y = 0.5 + rng.uniform(-0.10, 0.10);
    j.scale = 0.34 * (1.0 + rng.uniform(-0.18, 0.18));
    for (double& t : j.bg_tint) t = 0.88 + rng.uniform(0.0, 0.10);
    return j;
}

// Renders glyph `glyph_id` into a size x size RGB image. If `mask` is given
// it receives the glyph-region coverage (> 0.5 means "inside the glyph").
inline Image render_glyph(int glyph_id, int size, const GlyphJitter& jitter,
                          Image* mask = nullptr) {
    if (glyph_id < 0 || glyph_id >= kGlyphCapacity)
        throw CapacityError("glyph id " + std::to_string(glyph_id) + " exceeds capacity " +
                            std::to_string(kGlyphCapacity));
    if (size < 8) throw PreconditionError("render_glyph: size must be >= 8");
    const int shape = glyph_id % kGlyphShapes;
    const auto& color = detail::glyph_palette()[glyph_id / kGlyphShapes];

    Image img(size, size, 3);
    if (mask) *mask = Image(size, size, 1);
    const double cx = jitter.center_x * size;
    const double cy = jitter.center_y * size;
    const double half = jitter.scale * size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5 - cx) / half;
            const double v = (y + 0.5 - cy) / half;
            const double a = detail::shape_coverage(shape, u, v);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = jitter.bg_tint[c] * (1.0 - a) + color[c] * a;
            if (mask) mask->at(y, x, 0) = a;
        }
    return img;
}

inline Image render_glyph(int glyph_id, int size, Rng& rng, Image* mask = nullptr) {
    return render_glyph(glyph_id, size, sample_glyph_jitter(rng), mask);
}

} // namespace poisonlab
