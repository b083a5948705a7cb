#include <gtest/gtest.h>

#include "poisonlab/common.hpp"
#include "poisonlab/image.hpp"
#include "poisonlab/text.hpp"

#include <filesystem>

using namespace poisonlab;

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    Rng c(43);
    EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, UniformBounds) {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    for (int i = 0; i < 10000; ++i) ASSERT_LT(rng.uniform_int(13), 13u);
}

TEST(Rng, NormalMoments) {
    Rng rng(11);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.02);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
    Rng rng(3);
    auto s = rng.sample_without_replacement(50, 20);
    std::set<size_t> uniq(s.begin(), s.end());
    EXPECT_EQ(uniq.size(), 20u);
    EXPECT_THROW(rng.sample_without_replacement(5, 6), PreconditionError);
}

TEST(Seeds, DerivationSeparatesStages) {
    const uint64_t root = 1234;
    EXPECT_NE(derive_seed(root, "stage-a"), derive_seed(root, "stage-b"));
    EXPECT_NE(derive_seed(root, "stage-a", 0), derive_seed(root, "stage-a", 1));
    EXPECT_EQ(derive_seed(root, "stage-a"), derive_seed(root, "stage-a"));
}

TEST(Digest, StableAndSensitive) {
    EXPECT_EQ(digest_hex("hello"), digest_hex("hello"));
    EXPECT_NE(digest_hex("hello"), digest_hex("hellp"));
    EXPECT_EQ(digest_hex("hello").size(), 16u);
}

TEST(Text, TokenizeAndWholeWordMatch) {
    const auto words = tokenize("A large dog, driving a CAR!");
    ASSERT_EQ(words.size(), 6u);
    EXPECT_EQ(words[2], "dog");
    EXPECT_TRUE(contains_concept("a large dog driving a car", "dog"));
    EXPECT_TRUE(contains_concept("a large dog driving a car", "car"));
    EXPECT_FALSE(contains_concept("dogma is strange", "dog"));
    EXPECT_TRUE(contains_concept("a red fire hydrant here", "fire hydrant"));
    EXPECT_FALSE(contains_concept("fire near the hydrant", "fire hydrant"));
}

TEST(Text, Templates) {
    EXPECT_TRUE(template_valid("a photo of a {}"));
    EXPECT_FALSE(template_valid("no slot here"));
    EXPECT_FALSE(template_valid("{} and {}"));
    EXPECT_EQ(fill_template("a photo of a {}", "dog"), "a photo of a dog");
    EXPECT_THROW(fill_template("broken", "dog"), PreconditionError);
}

TEST(Image, PpmRoundTrip) {
    Image img(9, 7, 3);
    Rng rng(5);
    for (auto& v : img.data) v = rng.uniform();
    img.quantize8();
    const auto dir = std::filesystem::temp_directory_path() / "poisonlab-ppm-test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "img.ppm").string();
    write_ppm(img, path);
    const Image back = read_ppm(path);
    ASSERT_TRUE(back.same_shape(img));
    for (size_t i = 0; i < img.data.size(); ++i) ASSERT_DOUBLE_EQ(back.data[i], img.data[i]);
}

TEST(Image, ResizeIdentityAndBounds) {
    Image img(8, 8, 3);
    Rng rng(6);
    for (auto& v : img.data) v = rng.uniform();
    const Image same = resize_bilinear(img, 8, 8);
    EXPECT_EQ(same.data, img.data);
    const Image up = resize_bilinear(img, 16, 16);
    for (double v : up.data) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
}
