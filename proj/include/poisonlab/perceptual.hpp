#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "poisonlab/common.hpp"
#include "poisonlab/image.hpp"

namespace poisonlab {

// Multi-scale structural-similarity distance. Stands in for a learned
// perceptual metric: 0 for identical images, growing smoothly with visible
// distortion. distance_scale maps the raw dissimilarity onto the scale the
// perturbation budgets are quoted in (see docs/metric notes in README).
struct PerceptualMetric {
    int scales = 3;
    int window = 7;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
    double distance_scale = 1.0;

    std::string name() const {
        return "msssim-box" + std::to_string(window) + "x" + std::to_string(scales) + "s";
    }

    double distance(const Image& a, const Image& b) const {
        return distance_scale * (1.0 - msssim(a, b, nullptr));
    }

    // Gradient of distance(a, b) with respect to image a.
    double distance_with_grad(const Image& a, const Image& b, Image& grad_a) const {
        grad_a = Image(a.height, a.width, a.channels, 0.0);
        const double sim = msssim(a, b, &grad_a);
        // d/da [scale * (1 - sim)] = -scale * dsim/da
        for (auto& g : grad_a.data) g *= -distance_scale;
        return distance_scale * (1.0 - sim);
    }

private:
    // Mean SSIM over box windows (stride 1) and channels, averaged over
    // `scales` dyadic scales. If grad is non-null it accumulates dsim/da.
    double msssim(const Image& a, const Image& b, Image* grad) const {
        if (!a.same_shape(b)) throw PreconditionError("perceptual: shape mismatch");
        std::vector<Image> pyr_a = {a}, pyr_b = {b};
        for (int s = 1; s < scales; ++s) {
            if (pyr_a.back().height < 2 * window && pyr_a.back().width < 2 * window) break;
            pyr_a.push_back(downsample2(pyr_a.back()));
            pyr_b.push_back(downsample2(pyr_b.back()));
        }
        const double scale_w = 1.0 / static_cast<double>(pyr_a.size());
        double total = 0.0;
        std::vector<Image> scale_grads;
        for (size_t s = 0; s < pyr_a.size(); ++s) {
            Image g;
            total += scale_w * ssim_scale(pyr_a[s], pyr_b[s], grad ? &g : nullptr, scale_w);
            if (grad) scale_grads.push_back(std::move(g));
        }
        if (grad) {
            // push each scale's gradient back through the average-pool chain
            for (size_t s = scale_grads.size(); s-- > 0;) {
                Image g = scale_grads[s];
                for (size_t lvl = s; lvl-- > 0;) g = upsample_pool_grad(g, pyr_a[lvl]);
                for (size_t i = 0; i < grad->data.size(); ++i) grad->data[i] += g.data[i];
            }
        }
        return total;
    }

    double ssim_scale(const Image& x, const Image& y, Image* grad, double weight) const {
        const int win = std::min({window, x.height, x.width});
        const int wy_count = x.height - win + 1;
        const int wx_count = x.width - win + 1;
        const double inv_n = 1.0 / (win * win);
        const long n_windows = static_cast<long>(wy_count) * wx_count * x.channels;
        if (grad) *grad = Image(x.height, x.width, x.channels, 0.0);
        double total = 0.0;
        for (int c = 0; c < x.channels; ++c)
            for (int wy = 0; wy < wy_count; ++wy)
                for (int wx = 0; wx < wx_count; ++wx) {
                    double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                    for (int v = 0; v < win; ++v)
                        for (int u = 0; u < win; ++u) {
                            const double px = x.at(wy + v, wx + u, c);
                            const double py = y.at(wy + v, wx + u, c);
                            mx += px;
                            my += py;
                            sxx += px * px;
                            syy += py * py;
                            sxy += px * py;
                        }
                    mx *= inv_n;
                    my *= inv_n;
                    const double vx = sxx * inv_n - mx * mx;
                    const double vy = syy * inv_n - my * my;
                    const double cov = sxy * inv_n - mx * my;
                    const double a1 = 2 * mx * my + c1;
                    const double a2 = 2 * cov + c2;
                    const double b1 = mx * mx + my * my + c1;
                    const double b2 = vx + vy + c2;
                    const double ssim = (a1 * a2) / (b1 * b2);
                    total += ssim;
                    if (grad) {
                        // quotient rule; per-pixel pieces:
                        //   dmx = 1/N, dvx = 2(px-mx)/N, dcov = (py-my)/N
                        const double denom = b1 * b2;
                        const double common = weight / (static_cast<double>(n_windows) * denom);
                        for (int v = 0; v < win; ++v)
                            for (int u = 0; u < win; ++u) {
                                const double px = x.at(wy + v, wx + u, c);
                                const double py = y.at(wy + v, wx + u, c);
                                const double da1 = 2 * my * inv_n;
                                const double da2 = 2 * (py - my) * inv_n;
                                const double db1 = 2 * mx * inv_n;
                                const double db2 = 2 * (px - mx) * inv_n;
                                const double dnum = da1 * a2 + a1 * da2;
                                const double dden = db1 * b2 + b1 * db2;
                                grad->at(wy + v, wx + u, c) +=
                                    common * (dnum - ssim * dden);
                            }
                    }
                }
        return total / static_cast<double>(n_windows);
    }

    // Distribute a coarse-scale gradient back across the pixels each pooled
    // value averaged over.
    static Image upsample_pool_grad(const Image& g, const Image& fine_ref) {
        Image out(fine_ref.height, fine_ref.width, fine_ref.channels, 0.0);
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x)
                for (int c = 0; c < g.channels; ++c) {
                    int n = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            if (2 * y + dy < fine_ref.height && 2 * x + dx < fine_ref.width) ++n;
                    const double share = g.at(y, x, c) / n;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            if (2 * y + dy < fine_ref.height && 2 * x + dx < fine_ref.width)
                                out.at(2 * y + dy, 2 * x + dx, c) += share;
                }
        return out;
    }
};

} // namespace poisonlab
