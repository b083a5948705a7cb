#include <gtest/gtest.h>

#include "poisonlab/glyphs.hpp"
#include "poisonlab/perceptual.hpp"

using namespace poisonlab;

namespace {

Image random_image(int size, uint64_t seed) {
    Image img(size, size, 3);
    Rng rng(seed);
    // smooth-ish content: base gradient plus noise
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::clamp(
                    0.3 + 0.4 * (x + y) / (2.0 * size) + 0.15 * rng.normal(), 0.0, 1.0);
    return img;
}

} // namespace

TEST(Perceptual, IdenticalImagesHaveZeroDistance) {
    const PerceptualMetric metric;
    const Image img = random_image(24, 1);
    EXPECT_NEAR(metric.distance(img, img), 0.0, 1e-12);
}

TEST(Perceptual, SymmetricAndNonnegative) {
    const PerceptualMetric metric;
    const Image a = random_image(24, 2);
    const Image b = random_image(24, 3);
    const double dab = metric.distance(a, b);
    EXPECT_GT(dab, 0.0);
    EXPECT_NEAR(dab, metric.distance(b, a), 1e-12);
}

TEST(Perceptual, GrowsWithPerturbationMagnitude) {
    const PerceptualMetric metric;
    const Image base = random_image(24, 4);
    double prev = 0.0;
    for (double eps : {0.01, 0.03, 0.08, 0.2}) {
        Image noisy = base;
        Rng rng(5);
        for (auto& v : noisy.data) v = std::clamp(v + eps * rng.normal(), 0.0, 1.0);
        const double d = metric.distance(noisy, base);
        EXPECT_GT(d, prev);
        prev = d;
    }
}

TEST(Perceptual, GradientMatchesFiniteDifferences) {
    const PerceptualMetric metric;
    Image a = random_image(16, 6);
    const Image b = random_image(16, 7);
    Image grad;
    metric.distance_with_grad(a, b, grad);
    Rng pick(8);
    int checked = 0;
    while (checked < 25) {
        const size_t idx = pick.uniform_int(a.data.size());
        const double orig = a.data[idx];
        if (orig < 0.05 || orig > 0.95) continue; // keep clamping out of the stencil
        const double h = 1e-6;
        a.data[idx] = orig + h;
        const double up = metric.distance(a, b);
        a.data[idx] = orig - h;
        const double down = metric.distance(a, b);
        a.data[idx] = orig;
        const double fd = (up - down) / (2 * h);
        const double an = grad.data[idx];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        ASSERT_LT(rel, 1e-3) << "pixel " << idx << " analytic " << an << " fd " << fd;
        ++checked;
    }
}

TEST(Perceptual, GradientDescentOnDistanceConverges) {
    // sanity: following the gradient reduces distance to a target image
    const PerceptualMetric metric;
    const Image target = random_image(16, 9);
    Image x = random_image(16, 10);
    double d0 = metric.distance(x, target);
    for (int i = 0; i < 50; ++i) {
        Image g;
        metric.distance_with_grad(x, target, g);
        for (size_t k = 0; k < x.data.size(); ++k)
            x.data[k] = std::clamp(x.data[k] - 5.0 * g.data[k], 0.0, 1.0);
    }
    EXPECT_LT(metric.distance(x, target), d0);
}

TEST(Perceptual, GlyphPerturbationScaleIsReasonable) {
    // a quantization-level perturbation must cost far less than the budget
    Rng rng(11);
    const Image a = render_glyph(3, 24, rng);
    Image b = a;
    Rng noise(12);
    for (auto& v : b.data) v = std::clamp(v + noise.normal() / 255.0, 0.0, 1.0);
    const PerceptualMetric metric;
    EXPECT_LT(metric.distance(a, b), 0.01);
}
