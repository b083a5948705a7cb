#include <gtest/gtest.h>

#include "poisonlab/corpus.hpp"
#include "poisonlab/sparsity.hpp"

#include <filesystem>
#include <fstream>

using namespace poisonlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("poisonlab-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

} // namespace

TEST(Synthesize, TwoConceptsFiveEach) {
    auto spec = uniform_corpus_spec(2, 5, 16, 1);
    const Corpus corpus = synthesize_corpus(spec);
    ASSERT_EQ(corpus.records.size(), 10u);
    for (const auto& c : corpus.vocabulary.concepts)
        EXPECT_DOUBLE_EQ(word_frequency(corpus, c), 0.5);
}

TEST(Synthesize, ByteIdenticalManifestsForSameSeed) {
    auto spec = uniform_corpus_spec(4, 6, 16, 77);
    const auto dir_a = temp_dir("manifest-a");
    const auto dir_b = temp_dir("manifest-b");
    export_corpus(synthesize_corpus(spec), (dir_a / "c.manifest").string());
    export_corpus(synthesize_corpus(spec), (dir_b / "c.manifest").string());
    EXPECT_EQ(slurp(dir_a / "c.manifest"), slurp(dir_b / "c.manifest"));
    EXPECT_EQ(slurp(dir_a / "c.manifest.vocab.json"), slurp(dir_b / "c.manifest.vocab.json"));
    // and one image file, byte for byte
    const Corpus c = synthesize_corpus(spec);
    const auto id = c.records.front().record_id;
    EXPECT_EQ(slurp(dir_a / "images" / (id + ".ppm")), slurp(dir_b / "images" / (id + ".ppm")));
}

TEST(Synthesize, ZipfHistogramMatchesRequestedCounts) {
    SyntheticCorpusSpec spec;
    spec.concept_count = 50;
    spec.image_size = 16;
    spec.seed = 9;
    spec.caption_templates = default_caption_templates();
    const ConceptVocabulary names = make_toy_vocabulary(50, 16, 9);
    std::map<std::string, int> expected;
    for (size_t i = 0; i < names.concepts.size(); ++i) {
        const int n = std::max(1, 60 / static_cast<int>(i + 1)); // Zipf-ish counts
        spec.records_per_concept[names.concepts[i]] = n;
        expected[names.concepts[i]] = n;
    }
    const Corpus corpus = synthesize_corpus(spec);
    // brute-force histogram over record ids (id prefix is the concept)
    std::map<std::string, int> got;
    for (const auto& rec : corpus.records)
        got[rec.record_id.substr(0, rec.record_id.rfind('-'))]++;
    EXPECT_EQ(got, expected);
}

TEST(Synthesize, CapacityError) {
    auto spec = uniform_corpus_spec(2, 1, 16, 1);
    spec.concept_count = kGlyphCapacity + 1;
    EXPECT_THROW(synthesize_corpus(spec), CapacityError);
}

TEST(Synthesize, RecordsAreValid) {
    const Corpus corpus = synthesize_corpus(uniform_corpus_spec(6, 8, 16, 3));
    std::set<std::string> ids;
    int holdout = 0;
    for (const auto& rec : corpus.records) {
        EXPECT_TRUE(ids.insert(rec.record_id).second);
        EXPECT_FALSE(rec.caption.empty());
        for (double v : rec.image.data) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
        if (rec.split == Split::holdout) ++holdout;
    }
    EXPECT_GT(holdout, 0);
}

TEST(Manifest, IngestThreeLines) {
    const auto dir = temp_dir("ingest3");
    Image img(8, 8, 3, 0.5);
    write_ppm(img, (dir / "a.ppm").string());
    write_ppm(img, (dir / "b.ppm").string());
    write_ppm(img, (dir / "c.ppm").string());
    std::ofstream mf(dir / "m.manifest");
    mf << "# comment line\n\n";
    mf << "a.ppm\ta dog outside\n";
    mf << "b.ppm\ta cat inside\n";
    mf << "c.ppm\ta bird above\n";
    mf.close();
    const Corpus corpus = ingest_manifest((dir / "m.manifest").string());
    ASSERT_EQ(corpus.records.size(), 3u);
    EXPECT_EQ(corpus.records[0].record_id, "a");
    EXPECT_EQ(corpus.records[1].caption, "a cat inside");
}

TEST(Manifest, MalformedLineNamesLineNumber) {
    const auto dir = temp_dir("ingest-bad");
    std::ofstream mf(dir / "m.manifest");
    mf << "a.ppm\tok caption\tbut extra field\n";
    mf.close();
    try {
        ingest_manifest((dir / "m.manifest").string());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
}

TEST(Manifest, MissingImageNamesPath) {
    const auto dir = temp_dir("ingest-missing");
    std::ofstream mf(dir / "m.manifest");
    mf << "nowhere.ppm\ta caption\n";
    mf.close();
    try {
        ingest_manifest((dir / "m.manifest").string());
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("nowhere.ppm"), std::string::npos);
    }
}

TEST(Manifest, RoundTripEqualsOriginal) {
    const Corpus original = synthesize_corpus(uniform_corpus_spec(4, 5, 16, 21));
    const auto dir = temp_dir("roundtrip");
    export_corpus(original, (dir / "c.manifest").string());
    const Corpus back = ingest_manifest((dir / "c.manifest").string());
    ASSERT_EQ(back.records.size(), original.records.size());
    for (size_t i = 0; i < back.records.size(); ++i) {
        EXPECT_EQ(back.records[i].record_id, original.records[i].record_id);
        EXPECT_EQ(back.records[i].caption, original.records[i].caption);
        EXPECT_EQ(back.records[i].split, original.records[i].split);
        EXPECT_EQ(back.records[i].image.data, original.records[i].image.data);
    }
    EXPECT_EQ(back.vocabulary.concepts, original.vocabulary.concepts);
}

TEST(Inject, CountsAndConservation) {
    const Corpus base = synthesize_corpus(uniform_corpus_spec(8, 125, 16, 5));
    ASSERT_EQ(base.records.size(), 1000u);
    std::vector<CaptionedRecord> poison;
    for (int i = 0; i < 100; ++i) {
        CaptionedRecord r;
        r.record_id = "poison-" + std::to_string(i);
        r.caption = "a photo of a dog";
        r.image = Image(16, 16, 3, 0.25);
        poison.push_back(r);
    }
    const PoisonedCorpus mixed = inject_poison_records(base, poison, 99);
    EXPECT_EQ(mixed.corpus.records.size(), 1100u);
    // conservation: multiset of ids preserved
    std::multiset<std::string> want, got;
    for (const auto& r : base.records) want.insert(r.record_id);
    for (const auto& r : poison) want.insert(r.record_id);
    for (const auto& r : mixed.corpus.records) got.insert(r.record_id);
    EXPECT_EQ(want, got);
}

TEST(Inject, EmptyPoisonIsIdentityModuloOrder) {
    const Corpus base = synthesize_corpus(uniform_corpus_spec(3, 4, 16, 6));
    const PoisonedCorpus mixed = inject_poison_records(base, {}, 1);
    std::multiset<std::string> want, got;
    for (const auto& r : base.records) want.insert(r.record_id);
    for (const auto& r : mixed.corpus.records) got.insert(r.record_id);
    EXPECT_EQ(want, got);
    EXPECT_TRUE(mixed.poison_ids.empty());
}

TEST(Inject, GroundTruthPartitionRecoversPoisonSet) {
    const Corpus base = synthesize_corpus(uniform_corpus_spec(4, 10, 16, 7));
    std::vector<CaptionedRecord> poison;
    for (int i = 0; i < 7; ++i) {
        CaptionedRecord r;
        r.record_id = "p-" + std::to_string(i);
        r.caption = "a photo of a cat";
        r.image = Image(16, 16, 3, 0.75);
        poison.push_back(r);
    }
    const PoisonedCorpus mixed = inject_poison_records(base, poison, 123);
    std::set<std::string> recovered;
    for (const auto& r : mixed.corpus.records)
        if (mixed.poison_ids.count(r.record_id)) recovered.insert(r.record_id);
    std::set<std::string> want;
    for (const auto& r : poison) want.insert(r.record_id);
    EXPECT_EQ(recovered, want);
}

TEST(Inject, DuplicateIdCollision) {
    const Corpus base = synthesize_corpus(uniform_corpus_spec(2, 3, 16, 8));
    CaptionedRecord dup;
    dup.record_id = base.records.front().record_id;
    dup.caption = "x";
    dup.image = Image(16, 16, 3, 0.0);
    EXPECT_THROW(inject_poison_records(base, {dup}, 4), PreconditionError);
}

TEST(Inject, ShuffleDeterministicPerSeed) {
    const Corpus base = synthesize_corpus(uniform_corpus_spec(4, 10, 16, 9));
    const auto a = inject_poison_records(base, {}, 11);
    const auto b = inject_poison_records(base, {}, 11);
    const auto c = inject_poison_records(base, {}, 12);
    EXPECT_EQ(corpus_digest(a.corpus), corpus_digest(b.corpus));
    EXPECT_NE(corpus_digest(a.corpus), corpus_digest(c.corpus));
}

TEST(ConceptIndex, WholeWordRule) {
    Corpus corpus;
    corpus.vocabulary = make_toy_vocabulary(3, 16, 1); // dog, puppy, hound
    CaptionedRecord a{"r1", Image(8, 8, 3, 0.1), "a large dog driving a car", Split::train};
    CaptionedRecord b{"r2", Image(8, 8, 3, 0.2), "dogma is strange", Split::train};
    corpus.records = {a, b};
    const auto index = concept_index(corpus);
    EXPECT_EQ(index.at("dog"), std::set<std::string>{"r1"});
    EXPECT_TRUE(index.at("puppy").empty());
}

TEST(ConceptIndex, MatchesLinearScanOracleOn200Records) {
    const Corpus corpus = synthesize_corpus(uniform_corpus_spec(20, 10, 16, 33));
    ASSERT_EQ(corpus.records.size(), 200u);
    const auto index = concept_index(corpus);
    for (const auto& c : corpus.vocabulary.concepts) {
        // oracle: regex-free scan with explicit word boundaries
        std::set<std::string> oracle;
        for (const auto& rec : corpus.records) {
            const std::string padded = " " + rec.caption + " ";
            const std::string needle = " " + c + " ";
            if (padded.find(needle) != std::string::npos) oracle.insert(rec.record_id);
        }
        EXPECT_EQ(index.at(c), oracle) << "concept " << c;
    }
    // soundness: indexed records really contain the concept as a whole word
    for (const auto& [c, ids] : index)
        for (const auto& id : ids)
            EXPECT_TRUE(contains_concept(corpus.find(id).caption, c));
}
