#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"

namespace poisonlab {

// Synonym L2 distance in CLIP text-embedding space; the toy encoder has its
// own scale, so thresholds and bin edges are calibrated against the measured
// toy synonym distance rather than assumed.
constexpr double kClipScaleSynonymDistance = 4.8;

struct SparsityConfig {
    double semantic_threshold = kClipScaleSynonymDistance;
    std::vector<double> quantile_grid = {0.1, 0.25, 0.5, 0.75, 0.9};
    bool normalize_embeddings = false; // measure distances on L2-normalized vectors
    std::optional<double> tail_cutoff; // default: mean word frequency

    void validate() const {
        if (semantic_threshold < 0) throw ConfigError("sparsity: semantic_threshold must be >= 0");
        for (size_t i = 0; i + 1 < quantile_grid.size(); ++i)
            if (quantile_grid[i] >= quantile_grid[i + 1])
                throw ConfigError("sparsity: quantile_grid must be strictly increasing");
        for (double q : quantile_grid)
            if (q <= 0.0 || q >= 1.0) throw ConfigError("sparsity: quantiles must lie in (0,1)");
    }
};

struct ConceptSparsity {
    double word_freq = 0.0;
    double semantic_freq = 0.0;
    int neighbor_count = 0;
};

struct SparsityReport {
    std::map<std::string, ConceptSparsity> per_concept;
    std::map<double, double> distribution_quantiles; // over word frequency
    double tail_cutoff = 0.0;
    double tail_share = 0.0;
};

// Encoder interface used here: anything with `Vec encode_concept(name)`.
// This adapter exposes the vocabulary's own embedding table.
struct VocabularyEncoder {
    const ConceptVocabulary& vocab;
    Vec encode_concept(const std::string& c) const { return vocab.embed(c); }
};

namespace detail {
inline Vec maybe_normalize(Vec v, bool normalize) {
    if (!normalize) return v;
    const double n = v.norm();
    return n > 0 ? Vec(v / n) : v;
}
} // namespace detail

inline double word_frequency(const Corpus& corpus, const std::string& concept_name) {
    if (corpus.records.empty())
        throw PreconditionError("word_frequency: empty corpus (undefined denominator)");
    const auto cw = tokenize(concept_name);
    size_t count = 0;
    for (const auto& rec : corpus.records)
        if (contains_concept(tokenize(rec.caption), cw)) ++count;
    return static_cast<double>(count) / static_cast<double>(corpus.records.size());
}

// Concepts within the L2 threshold of `concept_name` parameter, itself included (distance 0).
template <typename Encoder>
std::vector<std::string> semantic_neighbors(const ConceptVocabulary& vocab,
                                            const std::string& concept_name,
                                            const SparsityConfig& config,
                                            const Encoder& encoder) {
    const Vec target = detail::maybe_normalize(encoder.encode_concept(concept_name),
                                               config.normalize_embeddings);
    std::vector<std::string> out;
    for (const auto& c : vocab.concepts) {
        const Vec e = detail::maybe_normalize(encoder.encode_concept(c),
                                              config.normalize_embeddings);
        if (e.size() != target.size())
            throw PreconditionError("semantic_neighbors: encoder dimension mismatch");
        if ((e - target).norm() <= config.semantic_threshold) out.push_back(c);
    }
    return out;
}

template <typename Encoder>
double semantic_frequency(const Corpus& corpus, const std::string& concept_name,
                          const SparsityConfig& config, const Encoder& encoder) {
    if (corpus.records.empty())
        throw PreconditionError("semantic_frequency: empty corpus (undefined denominator)");
    if (!corpus.vocabulary.has(concept_name))
        throw PreconditionError("semantic_frequency: concept not in vocabulary: " + concept_name);
    const auto neighbors = semantic_neighbors(corpus.vocabulary, concept_name, config, encoder);
    std::vector<std::vector<std::string>> neighbor_words;
    neighbor_words.reserve(neighbors.size());
    for (const auto& n : neighbors) neighbor_words.push_back(tokenize(n));
    size_t count = 0;
    for (const auto& rec : corpus.records) {
        const auto words = tokenize(rec.caption);
        for (const auto& nw : neighbor_words)
            if (contains_concept(words, nw)) {
                ++count; // union semantics: each record counted once
                break;
            }
    }
    return static_cast<double>(count) / static_cast<double>(corpus.records.size());
}

inline double semantic_frequency(const Corpus& corpus, const std::string& concept_name,
                                 const SparsityConfig& config) {
    return semantic_frequency(corpus, concept_name, config, VocabularyEncoder{corpus.vocabulary});
}

template <typename Encoder>
SparsityReport sparsity_report(const Corpus& corpus, const SparsityConfig& config,
                               const Encoder& encoder) {
    config.validate();
    if (corpus.vocabulary.concepts.empty())
        throw PreconditionError("sparsity_report: vocabulary is empty");
    SparsityReport report;
    std::vector<double> word_freqs;
    for (const auto& c : corpus.vocabulary.concepts) {
        ConceptSparsity s;
        s.word_freq = word_frequency(corpus, c);
        s.semantic_freq = semantic_frequency(corpus, c, config, encoder);
        s.neighbor_count =
            static_cast<int>(semantic_neighbors(corpus.vocabulary, c, config, encoder).size());
        report.per_concept[c] = s;
        word_freqs.push_back(s.word_freq);
    }
    std::sort(word_freqs.begin(), word_freqs.end());
    const size_t n = word_freqs.size();
    for (double q : config.quantile_grid) {
        // nearest-rank quantile on the sorted word frequencies
        size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
        rank = std::clamp<size_t>(rank, 1, n);
        report.distribution_quantiles[q] = word_freqs[rank - 1];
    }
    double mean = 0.0;
    for (double f : word_freqs) mean += f;
    mean /= static_cast<double>(n);
    report.tail_cutoff = config.tail_cutoff.value_or(mean);
    size_t below = 0;
    for (double f : word_freqs)
        if (f < report.tail_cutoff) ++below;
    report.tail_share = static_cast<double>(below) / static_cast<double>(n);
    return report;
}

inline SparsityReport sparsity_report(const Corpus& corpus, const SparsityConfig& config) {
    return sparsity_report(corpus, config, VocabularyEncoder{corpus.vocabulary});
}

// ---------------------------------------------------------------------------
// Calibration: the toy text-embedding scale differs from CLIP's, so defaults
// derive from the measured synonym distance of the built-in synonym list.
// ---------------------------------------------------------------------------

inline double median_synonym_distance(const ConceptVocabulary& vocab) {
    const auto pairs = toy_synonym_pairs(vocab);
    if (pairs.empty())
        throw PreconditionError("median_synonym_distance: vocabulary has no synonym pairs");
    std::vector<double> d;
    d.reserve(pairs.size());
    for (const auto& [a, b] : pairs) d.push_back((vocab.embed(a) - vocab.embed(b)).norm());
    std::sort(d.begin(), d.end());
    return d[d.size() / 2];
}

inline SparsityConfig calibrated_sparsity_config(const ConceptVocabulary& vocab) {
    SparsityConfig config;
    config.semantic_threshold = median_synonym_distance(vocab);
    return config;
}

// Distance-bin edges for bleed-through evaluation: the CLIP-scale edges
// {3, 6, 9} rescaled by the toy synonym-distance calibration factor.
inline std::vector<double> calibrated_bin_edges(const ConceptVocabulary& vocab) {
    const double factor = median_synonym_distance(vocab) / kClipScaleSynonymDistance;
    return {3.0 * factor, 6.0 * factor, 9.0 * factor};
}

// ---------------------------------------------------------------------------
// PCA projection of the vocabulary embedding space.
// ---------------------------------------------------------------------------

inline std::map<std::string, Vec> pca_projection(const ConceptVocabulary& vocab, int k = 2) {
    const int n = static_cast<int>(vocab.concepts.size());
    const int d = vocab.dim();
    if (n < k + 1) throw PreconditionError("pca_projection: need at least k+1 concepts");
    Mat X(n, d);
    for (int i = 0; i < n; ++i) X.row(i) = vocab.embed(vocab.concepts[i]).transpose();
    if (!X.allFinite()) throw PreconditionError("pca_projection: embeddings must be finite");
    const Vec mean = X.colwise().mean();
    X.rowwise() -= mean.transpose();
    const Mat cov = (X.transpose() * X) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_projection: eigensolver failed");
    // eigenvalues ascend; take the top k and check rank
    const Vec evals = eig.eigenvalues();
    const double tol = std::max(1e-12, 1e-9 * evals[d - 1]);
    int rank = 0;
    for (int i = 0; i < d; ++i)
        if (evals[i] > tol) ++rank;
    if (rank < k)
        throw PreconditionError("pca_projection: embedding matrix has rank " +
                                std::to_string(rank) + " < k=" + std::to_string(k));
    Mat components(d, k);
    for (int j = 0; j < k; ++j) {
        Vec comp = eig.eigenvectors().col(d - 1 - j);
        // sign convention: the largest-magnitude coordinate is positive
        int arg = 0;
        for (int i = 1; i < d; ++i)
            if (std::abs(comp[i]) > std::abs(comp[arg])) arg = i;
        if (comp[arg] < 0) comp = -comp;
        components.col(j) = comp;
    }
    std::map<std::string, Vec> out;
    for (int i = 0; i < n; ++i) out[vocab.concepts[i]] = components.transpose() * X.row(i).transpose();
    return out;
}

} // namespace poisonlab
