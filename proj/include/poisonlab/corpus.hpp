#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/glyphs.hpp"
#include "poisonlab/image.hpp"
#include "poisonlab/text.hpp"

namespace poisonlab {

enum class Split { train, holdout };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "holdout"; }

struct CaptionedRecord {
    std::string record_id;
    Image image;
    std::string caption;
    Split split = Split::train;
};

struct ConceptVocabulary {
    std::vector<std::string> concepts; // deterministic order; index doubles as glyph id
    std::map<std::string, Vec> embedding;

    bool has(const std::string& c) const { return embedding.count(c) > 0; }

    const Vec& embed(const std::string& c) const {
        auto it = embedding.find(c);
        if (it == embedding.end())
            throw PreconditionError("vocabulary: unknown concept '" + c + "'");
        return it->second;
    }

    int dim() const { return embedding.empty() ? 0 : static_cast<int>(embedding.begin()->second.size()); }

    int glyph_id(const std::string& c) const {
        for (size_t i = 0; i < concepts.size(); ++i)
            if (concepts[i] == c) return static_cast<int>(i);
        throw PreconditionError("vocabulary: unknown concept '" + c + "'");
    }
};

struct Corpus {
    std::vector<CaptionedRecord> records;
    ConceptVocabulary vocabulary;
    std::string provenance;

    const CaptionedRecord& find(const std::string& record_id) const {
        for (const auto& r : records)
            if (r.record_id == record_id) return r;
        throw PreconditionError("corpus: unknown record '" + record_id + "'");
    }
};

// Poison ground truth lives beside the corpus, not inside it: defenses accept
// a Corpus and can never see the tags, only the scoring harness holds them.
struct PoisonedCorpus {
    Corpus corpus;
    std::set<std::string> poison_ids;
};

struct SyntheticCorpusSpec {
    int concept_count = 0;
    std::map<std::string, int> records_per_concept;
    int image_size = 24;
    std::vector<std::string> caption_templates;
    uint64_t seed = 0;
    double holdout_fraction = 0.2;
};

inline std::vector<std::string> default_caption_templates() {
    return {
        "a photo of a {}",
        "a {}",
        "an image of a {}",
        "a blurry {} at night",
        "one {} on a plain background",
        "the {} in the middle of the frame",
        "a {} seen from above",
        "a bright {} outdoors",
    };
}

// ---------------------------------------------------------------------------
// Toy vocabulary. Concepts come in clusters of three (a head word and two
// synonyms). Cluster centers are spread far apart; members sit at graded
// offsets, and every second cluster is placed at a moderate distance from the
// previous one, so embedding distances cover near / related / unrelated tiers.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::array<const char*, 3>>& builtin_concept_clusters() {
    static const std::vector<std::array<const char*, 3>> clusters = {
        {"dog", "puppy", "hound"},       {"cat", "kitten", "tabby"},
        {"car", "sedan", "coupe"},       {"boat", "canoe", "kayak"},
        {"bird", "sparrow", "finch"},    {"fish", "trout", "salmon"},
        {"tree", "oak", "maple"},        {"house", "cottage", "cabin"},
        {"hat", "cap", "beret"},         {"cup", "mug", "goblet"},
        {"chair", "stool", "rocker"},    {"clock", "watch", "sundial"},
        {"flower", "tulip", "daisy"},    {"horse", "pony", "stallion"},
        {"shoe", "boot", "sandal"},      {"lamp", "lantern", "torch"},
    };
    return clusters;
}

inline std::string cluster_member_name(size_t cluster, size_t member) {
    const auto& table = builtin_concept_clusters();
    if (cluster < table.size()) return table[cluster][member];
    char buf[32];
    std::snprintf(buf, sizeof buf, "tok%02u%c", static_cast<unsigned>(cluster % 100),
                  static_cast<char>('a' + member));
    return buf;
}

inline Vec random_unit(Rng& rng, int dim) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.normal();
    double n = v.norm();
    if (n < 1e-12) return random_unit(rng, dim);
    return v / n;
}

} // namespace detail

// Embedding geometry constants. Synonym offsets are sized so the median
// synonym-pair distance lands near the CLIP-scale value used for the
// semantic-frequency threshold; the calibration helpers in sparsity measure
// the actual value rather than assuming it.
struct VocabGeometry {
    double cluster_norm = 12.0;    // distance of cluster centers from origin
    double related_offset = 7.5;   // odd clusters sit this far from the previous one
    double synonym_offsets[3] = {0.0, 1.8, 3.4};
};

inline ConceptVocabulary make_toy_vocabulary(int concept_count, int embed_dim, uint64_t seed,
                                             const VocabGeometry& geom = {}) {
    if (concept_count <= 0) throw PreconditionError("make_toy_vocabulary: concept_count must be > 0");
    if (embed_dim <= 0) throw PreconditionError("make_toy_vocabulary: embed_dim must be > 0");
    Rng rng(derive_seed(seed, "toy-vocabulary"));
    ConceptVocabulary vocab;
    Vec prev_center;
    for (int i = 0; i < concept_count;) {
        const size_t cluster = vocab.concepts.size() / 3;
        Vec center;
        if (cluster % 2 == 1 && prev_center.size() > 0)
            center = prev_center + geom.related_offset * detail::random_unit(rng, embed_dim);
        else
            center = geom.cluster_norm * detail::random_unit(rng, embed_dim);
        prev_center = center;
        for (int m = 0; m < 3 && i < concept_count; ++m, ++i) {
            const std::string name = detail::cluster_member_name(cluster, m);
            Vec e = center;
            if (geom.synonym_offsets[m] > 0.0)
                e += geom.synonym_offsets[m] * detail::random_unit(rng, embed_dim);
            vocab.concepts.push_back(name);
            vocab.embedding[name] = e;
        }
    }
    return vocab;
}

// Same-cluster concept pairs present in the vocabulary; the sparsity module
// calibrates its distance threshold from these.
inline std::vector<std::pair<std::string, std::string>> toy_synonym_pairs(
    const ConceptVocabulary& vocab) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (size_t i = 0; i + 1 < vocab.concepts.size(); ++i)
        for (size_t j = i + 1; j < vocab.concepts.size(); ++j)
            if (i / 3 == j / 3) pairs.emplace_back(vocab.concepts[i], vocab.concepts[j]);
    return pairs;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

inline void validate(const SyntheticCorpusSpec& spec) {
    if (spec.concept_count <= 0)
        throw ConfigError("synthetic corpus: concept_count must be positive");
    if (spec.concept_count > kGlyphCapacity)
        throw CapacityError("synthetic corpus: " + std::to_string(spec.concept_count) +
                            " concepts exceed the " + std::to_string(kGlyphCapacity) +
                            " available procedural glyphs");
    if (spec.image_size < 8) throw ConfigError("synthetic corpus: image_size must be >= 8");
    if (spec.caption_templates.empty())
        throw ConfigError("synthetic corpus: caption_templates must be non-empty");
    for (const auto& t : spec.caption_templates)
        if (!template_valid(t))
            throw ConfigError("synthetic corpus: template must contain exactly one {} slot: " + t);
    for (const auto& [c, n] : spec.records_per_concept)
        if (n < 0) throw ConfigError("synthetic corpus: negative record count for '" + c + "'");
    if (spec.holdout_fraction < 0.0 || spec.holdout_fraction >= 1.0)
        throw ConfigError("synthetic corpus: holdout_fraction must be in [0, 1)");
}

inline Corpus synthesize_corpus(const SyntheticCorpusSpec& spec) {
    validate(spec);
    Corpus corpus;
    corpus.vocabulary = make_toy_vocabulary(spec.concept_count, 16, spec.seed);
    for (const auto& [c, n] : spec.records_per_concept) {
        (void)n;
        if (!corpus.vocabulary.has(c))
            throw ConfigError("synthetic corpus: records requested for unknown concept '" + c + "'");
    }
    Rng rng(derive_seed(spec.seed, "corpus-synthesis"));
    for (const auto& concept_name : corpus.vocabulary.concepts) {
        auto it = spec.records_per_concept.find(concept_name);
        const int count = it == spec.records_per_concept.end() ? 0 : it->second;
        const int glyph = corpus.vocabulary.glyph_id(concept_name);
        const int holdout_from =
            count - static_cast<int>(std::floor(count * spec.holdout_fraction));
        for (int i = 0; i < count; ++i) {
            CaptionedRecord rec;
            char buf[16];
            std::snprintf(buf, sizeof buf, "-%04d", i);
            rec.record_id = concept_name + buf;
            const auto& tmpl = spec.caption_templates[rng.uniform_int(spec.caption_templates.size())];
            rec.caption = fill_template(tmpl, concept_name);
            rec.image = render_glyph(glyph, spec.image_size, rng);
            rec.image.quantize8();
            rec.split = i >= holdout_from ? Split::holdout : Split::train;
            corpus.records.push_back(std::move(rec));
        }
    }
    rng.shuffle(corpus.records);
    corpus.provenance = "synthetic(seed=" + std::to_string(spec.seed) +
                        ",concepts=" + std::to_string(spec.concept_count) + ")";
    return corpus;
}

// Convenience: same record count for every concept.
inline SyntheticCorpusSpec uniform_corpus_spec(int concept_count, int records_per_concept,
                                               int image_size, uint64_t seed) {
    SyntheticCorpusSpec spec;
    spec.concept_count = concept_count;
    spec.image_size = image_size;
    spec.seed = seed;
    spec.caption_templates = default_caption_templates();
    ConceptVocabulary names = make_toy_vocabulary(concept_count, 16, seed);
    for (const auto& c : names.concepts) spec.records_per_concept[c] = records_per_concept;
    return spec;
}

// ---------------------------------------------------------------------------
// Manifest I/O. Grammar: UTF-8 text, one record per line,
// `image_path<TAB>caption`; image_path relative to the manifest directory;
// blank lines and lines starting with '#' skipped; captions must not contain
// tabs. Images are PPM. Vocabulary and splits ride in a JSON sidecar
// (`<manifest>.vocab.json`) written by export and read back when present.
// ---------------------------------------------------------------------------

inline void export_corpus(const Corpus& corpus, const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const fs::path mpath(manifest_path);
    const fs::path dir = mpath.parent_path().empty() ? fs::path(".") : mpath.parent_path();
    fs::create_directories(dir / "images");
    std::ofstream mf(mpath);
    if (!mf) throw IoError("export_corpus: cannot open " + manifest_path);
    mf << "# poisonlab corpus manifest: image_path<TAB>caption\n";
    nlohmann::json sidecar;
    sidecar["embed_dim"] = corpus.vocabulary.dim();
    sidecar["provenance"] = corpus.provenance;
    for (const auto& c : corpus.vocabulary.concepts) {
        nlohmann::json e = nlohmann::json::array();
        const Vec& v = corpus.vocabulary.embed(c);
        for (Eigen::Index i = 0; i < v.size(); ++i) e.push_back(v[i]);
        sidecar["concepts"].push_back({{"name", c}, {"embedding", e}});
    }
    for (const auto& rec : corpus.records) {
        if (rec.caption.find('\t') != std::string::npos)
            throw IoError("export_corpus: caption contains tab in record " + rec.record_id);
        const std::string rel = "images/" + rec.record_id + ".ppm";
        write_ppm(rec.image, (dir / rel).string());
        mf << rel << '\t' << rec.caption << '\n';
        sidecar["splits"][rec.record_id] = split_name(rec.split);
    }
    std::ofstream sf(manifest_path + ".vocab.json");
    sf << sidecar.dump(2) << '\n';
}

inline Corpus ingest_manifest(const std::string& manifest_path, int image_size = 0) {
    namespace fs = std::filesystem;
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("ingest_manifest: cannot open " + manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(manifest_path).parent_path();
    Corpus corpus;
    std::string line;
    int lineno = 0;
    std::set<std::string> seen_ids;
    while (std::getline(mf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
            throw ParseError("manifest line " + std::to_string(lineno) +
                             ": expected exactly two tab-separated fields");
        const std::string rel = line.substr(0, tab);
        const std::string caption = line.substr(tab + 1);
        if (rel.empty() || caption.empty())
            throw ParseError("manifest line " + std::to_string(lineno) + ": empty field");
        const fs::path img_path = dir / rel;
        if (!fs::exists(img_path))
            throw IoError("manifest line " + std::to_string(lineno) + ": missing image file " +
                          img_path.string());
        CaptionedRecord rec;
        rec.record_id = fs::path(rel).stem().string();
        if (!seen_ids.insert(rec.record_id).second)
            throw ParseError("manifest line " + std::to_string(lineno) + ": duplicate record id " +
                             rec.record_id);
        rec.caption = caption;
        rec.image = read_ppm(img_path.string());
        if (image_size > 0 && (rec.image.height != image_size || rec.image.width != image_size))
            rec.image = resize_bilinear(rec.image, image_size, image_size);
        corpus.records.push_back(std::move(rec));
    }
    // Optional sidecar with vocabulary and splits.
    const std::string sidecar_path = manifest_path + ".vocab.json";
    if (fs::exists(sidecar_path)) {
        std::ifstream sf(sidecar_path);
        nlohmann::json sidecar = nlohmann::json::parse(sf, nullptr, true, true);
        for (const auto& c : sidecar.value("concepts", nlohmann::json::array())) {
            const std::string name = c.at("name");
            Vec v(c.at("embedding").size());
            for (size_t i = 0; i < c.at("embedding").size(); ++i)
                v[static_cast<Eigen::Index>(i)] = c.at("embedding")[i].get<double>();
            corpus.vocabulary.concepts.push_back(name);
            corpus.vocabulary.embedding[name] = v;
        }
        if (sidecar.contains("splits"))
            for (auto& rec : corpus.records) {
                auto it = sidecar["splits"].find(rec.record_id);
                if (it != sidecar["splits"].end() && it->get<std::string>() == "holdout")
                    rec.split = Split::holdout;
            }
    }
    corpus.provenance = "ingested(" + manifest_path + ")";
    return corpus;
}

// ---------------------------------------------------------------------------
// Poison injection and indexing
// ---------------------------------------------------------------------------

inline PoisonedCorpus inject_poison_records(const Corpus& base,
                                            const std::vector<CaptionedRecord>& poison,
                                            uint64_t seed) {
    PoisonedCorpus out;
    out.corpus.vocabulary = base.vocabulary;
    out.corpus.records = base.records;
    std::set<std::string> ids;
    for (const auto& r : base.records) ids.insert(r.record_id);
    for (const auto& r : poison) {
        if (r.caption.empty()) throw PreconditionError("inject_poison: empty caption");
        if (!ids.insert(r.record_id).second)
            throw PreconditionError("inject_poison: duplicate record_id " + r.record_id);
        out.poison_ids.insert(r.record_id);
        out.corpus.records.push_back(r);
    }
    Rng rng(derive_seed(seed, "poison-shuffle"));
    rng.shuffle(out.corpus.records);
    out.corpus.provenance = base.provenance + " + " + std::to_string(poison.size()) +
                            " injected records (seed=" + std::to_string(seed) + ")";
    return out;
}

inline std::map<std::string, std::set<std::string>> concept_index(const Corpus& corpus) {
    if (corpus.vocabulary.concepts.empty())
        throw PreconditionError("concept_index: vocabulary is empty");
    std::map<std::string, std::set<std::string>> index;
    std::vector<std::vector<std::string>> concept_words;
    for (const auto& c : corpus.vocabulary.concepts) {
        index[c]; // concepts with no records still get an entry
        concept_words.push_back(tokenize(c));
    }
    for (const auto& rec : corpus.records) {
        const auto words = tokenize(rec.caption);
        for (size_t i = 0; i < corpus.vocabulary.concepts.size(); ++i)
            if (contains_concept(words, concept_words[i]))
                index[corpus.vocabulary.concepts[i]].insert(rec.record_id);
    }
    return index;
}

inline uint64_t corpus_digest(const Corpus& corpus) {
    uint64_t h = fnv1a64(corpus.provenance);
    for (const auto& rec : corpus.records) {
        h = fnv1a64(rec.record_id, h);
        h = fnv1a64(rec.caption, h);
        h = fnv1a64(split_name(rec.split), h);
        uint64_t ih = image_digest(rec.image);
        h = fnv1a64_bytes(&ih, sizeof ih, h);
    }
    for (const auto& c : corpus.vocabulary.concepts) h = fnv1a64(c, h);
    return h;
}

// Records whose caption mentions the concept, in corpus order.
inline std::vector<const CaptionedRecord*> records_mentioning(const Corpus& corpus,
                                                              const std::string& concept_name) {
    std::vector<const CaptionedRecord*> out;
    const auto cw = tokenize(concept_name);
    for (const auto& rec : corpus.records)
        if (contains_concept(tokenize(rec.caption), cw)) out.push_back(&rec);
    return out;
}

} // namespace poisonlab
