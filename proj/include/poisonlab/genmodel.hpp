#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poisonlab/common.hpp"
#include "poisonlab/corpus.hpp"
#include "poisonlab/nn.hpp"

namespace poisonlab {

// ---------------------------------------------------------------------------
// Architectures. Two presets so attacks can be built against one feature
// extractor and trained into another.
// ---------------------------------------------------------------------------

struct Architecture {
    std::string id;
    int image_size = 24;
    int patch = 6;
    int latent_channels = 8;
    int codec_hidden = 64;
    int text_dim = 16; // vocabulary embedding dimension
    int embed_dim = 24;
    int token_hidden = 48;
    int key_dim = 16;
    int value_dim = 16;
    int mlp_hidden = 64;
    int time_dim = 8;
    int pos_dim = 8;

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    int patch_dim() const { return patch * patch * 3; }
    int feature_dim() const { return tokens() * latent_channels; }

    void validate() const {
        if (image_size % patch != 0)
            throw ConfigError("architecture: image_size must be a multiple of patch");
    }

    static Architecture preset(const std::string& id) {
        Architecture a;
        a.id = id;
        if (id == "arch-a") {
            // defaults above
        } else if (id == "arch-b") {
            a.patch = 4;
            a.latent_channels = 6;
            a.codec_hidden = 48;
            a.embed_dim = 20;
            a.token_hidden = 40;
            a.key_dim = 12;
            a.value_dim = 12;
            a.mlp_hidden = 48;
        } else {
            throw ConfigError("unknown architecture_id: " + id);
        }
        a.validate();
        return a;
    }
};

// ---------------------------------------------------------------------------
// Noise schedule (variance-preserving). alpha_bar must be strictly
// decreasing, i.e. noise level grows monotonically with t.
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    std::string name = "cosine";
    int timesteps = 64;
    double cosine_s = 0.008;
    double linear_beta_min = 1e-4, linear_beta_max = 0.05;

    std::vector<double> beta, alpha, alpha_bar;

    void build() {
        if (timesteps <= 0) throw ConfigError("noise schedule: timesteps must be positive");
        beta.assign(timesteps + 1, 0.0);
        alpha.assign(timesteps + 1, 1.0);
        alpha_bar.assign(timesteps + 1, 1.0);
        if (name == "cosine") {
            auto f = [&](double t) {
                const double x = (t / timesteps + cosine_s) / (1.0 + cosine_s) * M_PI / 2.0;
                return std::cos(x) * std::cos(x);
            };
            for (int t = 1; t <= timesteps; ++t) {
                double b = 1.0 - f(t) / f(t - 1.0);
                beta[t] = std::clamp(b, 1e-8, 0.999);
            }
        } else if (name == "linear") {
            for (int t = 1; t <= timesteps; ++t)
                beta[t] = linear_beta_min +
                          (linear_beta_max - linear_beta_min) * (t - 1.0) / std::max(1, timesteps - 1);
        } else {
            throw ConfigError("unknown noise schedule: " + name);
        }
        for (int t = 1; t <= timesteps; ++t) {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            if (alpha_bar[t] >= alpha_bar[t - 1])
                throw ConfigError("noise schedule: noise level must increase monotonically");
        }
    }
};

struct TrainConfig {
    enum class Mode { scratch, continuous };
    Mode mode = Mode::scratch;
    int steps = 4000;
    int batch_size = 24;
    double learning_rate = 2e-3;
    int codec_steps = 1500;
    int codec_batch = 48;
    double codec_learning_rate = 2e-3;
    NoiseSchedule schedule;
    uint64_t seed = 0;

    void validate() const {
        if (steps <= 0) throw PreconditionError("train config: steps must be > 0");
        if (batch_size <= 0) throw ConfigError("train config: batch_size must be > 0");
        if (learning_rate <= 0) throw ConfigError("train config: learning_rate must be > 0");
    }
};

// ---------------------------------------------------------------------------
// Text encoder: per-word vectors (vocabulary embeddings for known concepts,
// seeded hash vectors otherwise) behind a per-architecture linear projection.
// Caption embedding is the mean of the projected word vectors.
// ---------------------------------------------------------------------------

// Norm^2-weighted pooling: concept words carry much larger vectors than
// filler words, so the pooled caption embedding stays close to the concept
// direction regardless of caption length.
inline Vec pooled_embedding(const Mat& ctx) {
    Vec pooled = Vec::Zero(ctx.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < ctx.rows(); ++i) {
        const double w = ctx.row(i).squaredNorm();
        pooled += w * ctx.row(i).transpose();
        total += w;
    }
    return total > 0 ? Vec(pooled / total) : pooled;
}

struct ToyTextEncoder {
    int text_dim = 16;
    int embed_dim = 24;
    double filler_norm = 2.0; // scale of hashed vectors for non-vocabulary words
    std::map<std::string, Vec> word_table;
    Linear proj;

    ToyTextEncoder() = default;
    ToyTextEncoder(const ConceptVocabulary& vocab, const Architecture& arch, uint64_t seed)
        : text_dim(arch.text_dim), embed_dim(arch.embed_dim) {
        if (vocab.dim() != 0 && vocab.dim() != text_dim)
            throw ConfigError("text encoder: vocabulary dimension mismatch");
        for (const auto& c : vocab.concepts)
            for (const auto& w : tokenize(c)) word_table[w] = vocab.embed(c);
        Rng rng(derive_seed(seed, "text-encoder-proj"));
        proj = Linear(text_dim, embed_dim, rng);
    }

    Vec word_vector(const std::string& word) const {
        auto it = word_table.find(word);
        if (it != word_table.end()) return it->second;
        Rng rng(derive_seed(fnv1a64(word), "hashed-word-vector"));
        Vec v(text_dim);
        for (int i = 0; i < text_dim; ++i) v[i] = rng.normal();
        return v * (filler_norm / std::max(v.norm(), 1e-12));
    }

    // One row per word, projected to embed_dim.
    Mat encode_words(const std::vector<std::string>& words) const {
        if (words.empty()) throw PreconditionError("text encoder: empty caption");
        Mat raw(static_cast<Eigen::Index>(words.size()), text_dim);
        for (size_t i = 0; i < words.size(); ++i)
            raw.row(static_cast<Eigen::Index>(i)) = word_vector(words[i]).transpose();
        return proj.forward(raw);
    }

    Mat encode_caption_tokens(const std::string& caption) const {
        return encode_words(tokenize(caption));
    }

    Vec encode(const std::string& caption) const {
        return pooled_embedding(encode_caption_tokens(caption));
    }

    Vec encode_concept(const std::string& concept_name) const { return encode(concept_name); }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        proj.collect(out);
        return out;
    }
};

inline double cosine_similarity(const Vec& a, const Vec& b) {
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return a.dot(b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Image codec: a shared per-patch autoencoder. The encoder doubles as the
// feature extractor targeted by guided perturbations, so it exposes gradients
// with respect to its input.
// ---------------------------------------------------------------------------

struct ImageCodec {
    Architecture arch;
    Mlp encoder; // patch_dim -> hidden -> latent_channels
    Mlp decoder; // latent_channels -> hidden -> patch_dim
    double latent_scale = 1.0;

    ImageCodec() = default;
    ImageCodec(const Architecture& a, uint64_t seed) : arch(a) {
        Rng rng(derive_seed(seed, "codec-init"));
        encoder = Mlp({a.patch_dim(), a.codec_hidden, a.latent_channels}, rng);
        decoder = Mlp({a.latent_channels, a.codec_hidden, a.patch_dim()}, rng);
    }

    Mat image_patches(const Image& img) const {
        if (img.height != arch.image_size || img.width != arch.image_size || img.channels != 3)
            throw PreconditionError("codec: image shape mismatch");
        const int g = arch.grid(), p = arch.patch;
        Mat out(arch.tokens(), arch.patch_dim());
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                int col = 0;
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        for (int c = 0; c < 3; ++c)
                            out(gy * g + gx, col++) = img.at(gy * p + y, gx * p + x, c);
            }
        return out;
    }

    Image patches_to_image(const Mat& patches) const {
        const int g = arch.grid(), p = arch.patch;
        Image img(arch.image_size, arch.image_size, 3);
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                int col = 0;
                for (int y = 0; y < p; ++y)
                    for (int x = 0; x < p; ++x)
                        for (int c = 0; c < 3; ++c)
                            img.at(gy * p + y, gx * p + x, c) = patches(gy * g + gx, col++);
            }
        return img;
    }

    // Latent grid, one row per patch.
    Mat encode(const Image& img) const { return encoder.forward(image_patches(img)); }

    Image decode(const Mat& latents) const {
        Image img = patches_to_image(decoder.forward(latents));
        img.clamp01();
        return img;
    }

    // Features for guided perturbation: flattened latent grid.
    Vec features(const Image& img) const {
        const Mat z = encode(img);
        return Eigen::Map<const Vec>(z.data(), z.size());
    }

    // Backpropagates a gradient on features() to image pixels.
    Image feature_grad(const Image& img, const Vec& dfeat) const {
        Mlp::Cache cache;
        Mlp& enc = const_cast<Mlp&>(encoder); // backward only accumulates param grads
        const Mat z = enc.forward(image_patches(img), &cache);
        Mat dz = Eigen::Map<const Mat>(dfeat.data(), z.rows(), z.cols());
        std::vector<Param*> ps;
        enc.collect(ps);
        const Mat dpatches = enc.backward(cache, dz);
        zero_grads(ps); // param grads are a side effect we do not want here
        return patches_to_image(dpatches);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        encoder.collect(out);
        decoder.collect(out);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Conditional denoiser over the latent patch grid: per-token input network,
// one cross-attention block over caption tokens with a residual connection,
// then a per-token MLP head predicting the noise.
// ---------------------------------------------------------------------------

// Predicts the clean latent grid from a noisy one. Per-token input network,
// cross-attention over caption tokens, a global token-mixing step so patches
// can coordinate spatially, then a per-token MLP head.
struct Denoiser {
    Architecture arch;
    Linear token_in;      // latent + time + pos + pooled caption -> hidden
    CrossAttention xattn; // hidden x caption tokens -> hidden
    Linear global_mix;    // pooled hidden -> hidden, broadcast to all tokens
    Mlp head;             // hidden -> mlp_hidden -> latent

    Denoiser() = default;
    Denoiser(const Architecture& a, uint64_t seed) : arch(a) {
        Rng rng(derive_seed(seed, "denoiser-init"));
        token_in = Linear(a.latent_channels + a.time_dim + a.pos_dim + a.embed_dim,
                          a.token_hidden, rng);
        xattn = CrossAttention(a.token_hidden, a.embed_dim, a.key_dim, a.value_dim,
                               a.token_hidden, rng);
        global_mix = Linear(a.token_hidden, a.token_hidden, rng);
        head = Mlp({a.token_hidden, a.mlp_hidden, a.latent_channels}, rng);
    }

    Vec time_embedding(int t, int timesteps) const {
        Vec e(arch.time_dim);
        const double pos = static_cast<double>(t) / timesteps;
        for (int i = 0; i < arch.time_dim / 2; ++i) {
            const double freq = std::pow(10.0, i) * M_PI;
            e[2 * i] = std::sin(pos * freq);
            e[2 * i + 1] = std::cos(pos * freq);
        }
        return e;
    }

    Mat position_embedding() const {
        const int g = arch.grid();
        Mat e(arch.tokens(), arch.pos_dim);
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                Vec v(arch.pos_dim);
                for (int i = 0; i < arch.pos_dim / 4; ++i) {
                    const double f = std::pow(2.0, i) * M_PI;
                    v[4 * i] = std::sin(f * gy / g);
                    v[4 * i + 1] = std::cos(f * gy / g);
                    v[4 * i + 2] = std::sin(f * gx / g);
                    v[4 * i + 3] = std::cos(f * gx / g);
                }
                e.row(gy * g + gx) = v.transpose();
            }
        return e;
    }

    struct Cache {
        Mat tokens_in;
        Mat hidden;
        CrossAttention::Cache attn;
        Mat mixed;
        Mat pooled;
        Mlp::Cache head_cache;
    };

    Mat assemble_input(const Mat& z, int t, int timesteps, const Mat& ctx) const {
        const Vec te = time_embedding(t, timesteps);
        const Mat pe = position_embedding();
        const Vec pooled = pooled_embedding(ctx);
        Mat in(z.rows(), arch.latent_channels + arch.time_dim + arch.pos_dim + arch.embed_dim);
        in << z, Mat(te.transpose().replicate(z.rows(), 1)), pe,
            Mat(pooled.transpose().replicate(z.rows(), 1));
        return in;
    }

    // z: tokens x latent_channels (noisy latents), ctx: caption tokens x embed_dim.
    // Returns the predicted clean latents.
    Mat forward(const Mat& z, int t, int timesteps, const Mat& ctx, Cache* cache = nullptr) const {
        const Mat in = assemble_input(z, t, timesteps, ctx);
        const Mat hidden = token_in.forward(in);
        CrossAttention::Cache attn_cache;
        const Mat attended = xattn.forward(hidden, ctx, &attn_cache);
        Mat mixed = hidden + attended; // residual
        const Mat pooled = mixed.colwise().mean();
        const Mat global = global_mix.forward(pooled);
        mixed.rowwise() += global.row(0);
        Mlp::Cache head_cache;
        const Mat out = head.forward(mixed, cache ? &head_cache : nullptr);
        if (cache) *cache = {in, hidden, attn_cache, mixed, pooled, head_cache};
        return out;
    }

    // Backward for dL/d(prediction); accumulates parameter grads.
    void backward(const Cache& cache, const Mat& dout) {
        Mat dmixed = head.backward(cache.head_cache, dout);
        const Mat dglobal = dmixed.colwise().sum();
        const Mat dpooled = global_mix.backward(cache.pooled, dglobal);
        dmixed.rowwise() += dpooled.row(0) / static_cast<double>(dmixed.rows());
        auto [dhidden_attn, dctx] = xattn.backward(cache.attn, dmixed);
        (void)dctx; // caption embeddings are frozen
        const Mat dhidden = dmixed + dhidden_attn;
        token_in.backward(cache.tokens_in, dhidden);
    }

    // Attention over caption tokens for every latent token (tokens x words).
    Mat attention(const Mat& z, int t, int timesteps, const Mat& ctx) const {
        CrossAttention::Cache c;
        xattn.forward(token_in.forward(assemble_input(z, t, timesteps, ctx)), ctx, &c);
        return c.attn;
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        token_in.collect(out);
        xattn.collect(out);
        global_mix.collect(out);
        head.collect(out);
        return out;
    }
};

// ---------------------------------------------------------------------------
// ModelBundle: text encoder + codec + denoiser + provenance metadata.
// ---------------------------------------------------------------------------

struct BundleMetadata {
    std::string architecture_id;
    long train_steps = 0;
    std::string corpus_digest;
    std::string poison_manifest_digest = "none";
    uint64_t seed = 0;
    std::string lineage = "scratch";
    double codec_holdout_mse = 0.0;
    double codec_holdout_threshold = 0.02;

    nlohmann::json to_json() const {
        return {{"architecture_id", architecture_id},
                {"train_steps", train_steps},
                {"corpus_digest", corpus_digest},
                {"poison_manifest_digest", poison_manifest_digest},
                {"seed", seed},
                {"lineage", lineage},
                {"codec_holdout_mse", codec_holdout_mse},
                {"codec_holdout_threshold", codec_holdout_threshold}};
    }

    static BundleMetadata from_json(const nlohmann::json& j) {
        BundleMetadata m;
        m.architecture_id = j.at("architecture_id");
        m.train_steps = j.at("train_steps");
        m.corpus_digest = j.at("corpus_digest");
        m.poison_manifest_digest = j.at("poison_manifest_digest");
        m.seed = j.at("seed");
        m.lineage = j.at("lineage");
        m.codec_holdout_mse = j.at("codec_holdout_mse");
        m.codec_holdout_threshold = j.at("codec_holdout_threshold");
        return m;
    }
};

struct ModelBundle {
    Architecture arch;
    NoiseSchedule schedule;
    ToyTextEncoder text_encoder;
    ImageCodec codec;
    Denoiser denoiser;
    BundleMetadata metadata;

    std::vector<Param*> all_params() {
        std::vector<Param*> out = text_encoder.params();
        auto c = codec.params();
        auto d = denoiser.params();
        out.insert(out.end(), c.begin(), c.end());
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }

    uint64_t digest() const {
        auto& self = const_cast<ModelBundle&>(*this);
        uint64_t h = fnv1a64(arch.id);
        h = fnv1a64(metadata.to_json().dump(), h);
        for (Param* p : self.all_params())
            h = fnv1a64_bytes(p->w.data(), static_cast<size_t>(p->w.size()) * sizeof(double), h);
        double ls = codec.latent_scale;
        return fnv1a64_bytes(&ls, sizeof ls, h);
    }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline Mat gaussian_like(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

inline std::vector<const CaptionedRecord*> train_split(const Corpus& corpus) {
    std::vector<const CaptionedRecord*> recs;
    for (const auto& r : corpus.records)
        if (r.split == Split::train) recs.push_back(&r);
    return recs;
}

inline void train_codec(ImageCodec& codec, const Corpus& corpus, const TrainConfig& config,
                        BundleMetadata& meta) {
    auto recs = train_split(corpus);
    if (recs.empty()) throw PreconditionError("train: corpus train split is empty");
    Rng rng(derive_seed(config.seed, "codec-train"));
    std::vector<Param*> ps = codec.params();
    Adam opt;
    opt.lr = config.codec_learning_rate;
    const int tokens = codec.arch.tokens();
    for (int step = 0; step < config.codec_steps; ++step) {
        zero_grads(ps);
        double loss = 0.0;
        for (int b = 0; b < config.codec_batch; ++b) {
            const auto& rec = *recs[rng.uniform_int(recs.size())];
            const Mat patches = codec.image_patches(rec.image);
            const Mat patch = patches.row(static_cast<Eigen::Index>(rng.uniform_int(tokens)));
            Mlp::Cache ec, dc;
            const Mat z = codec.encoder.forward(patch, &ec);
            const Mat out = codec.decoder.forward(z, &dc);
            const Mat diff = out - patch;
            loss += diff.squaredNorm() / diff.size();
            const Mat dout = 2.0 * diff / (diff.size() * config.codec_batch);
            const Mat dz = codec.decoder.backward(dc, dout);
            codec.encoder.backward(ec, dz);
        }
        loss /= config.codec_batch;
        if (!std::isfinite(loss))
            throw TrainingError("codec training diverged at step " + std::to_string(step));
        clip_grad_norm(ps, 10.0);
        opt.step(ps);
    }
    // latent scale from the training split, so diffusion sees ~unit variance
    double sq = 0.0;
    long n = 0;
    for (const auto* rec : recs) {
        const Mat z = codec.encode(rec->image);
        sq += z.squaredNorm();
        n += z.size();
    }
    codec.latent_scale = std::sqrt(std::max(sq / std::max(n, 1L), 1e-12));
    // held-out reconstruction quality, recorded in metadata
    double err = 0.0;
    long hn = 0;
    for (const auto& rec : corpus.records)
        if (rec.split == Split::holdout) {
            const Image out = codec.decode(codec.encode(rec.image));
            for (size_t i = 0; i < out.data.size(); ++i) {
                const double d = out.data[i] - rec.image.data[i];
                err += d * d;
            }
            hn += static_cast<long>(out.data.size());
        }
    meta.codec_holdout_mse = hn > 0 ? err / hn : 0.0;
}

struct EncodedRecord {
    Mat z0;  // scaled latents
    Mat ctx; // caption token embeddings
};

inline void train_denoiser(ModelBundle& bundle, const Corpus& corpus, const TrainConfig& config,
                           const std::string& rng_label) {
    auto recs = train_split(corpus);
    if (recs.empty()) throw PreconditionError("train: corpus train split is empty");
    std::vector<EncodedRecord> enc(recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        enc[i].z0 = bundle.codec.encode(recs[i]->image) / bundle.codec.latent_scale;
        enc[i].ctx = bundle.text_encoder.encode_caption_tokens(recs[i]->caption);
    }
    const auto& sched = bundle.schedule;
    Rng rng(derive_seed(config.seed, rng_label));
    std::vector<Param*> ps = bundle.denoiser.params();
    Adam opt;
    opt.lr = config.learning_rate;
    for (int step = 0; step < config.steps; ++step) {
        zero_grads(ps);
        double loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const size_t idx = rng.uniform_int(enc.size());
            const int t = 1 + static_cast<int>(rng.uniform_int(sched.timesteps));
            const Mat noise = gaussian_like(rng, enc[idx].z0.rows(), enc[idx].z0.cols());
            const Mat zt = std::sqrt(sched.alpha_bar[t]) * enc[idx].z0 +
                           std::sqrt(1.0 - sched.alpha_bar[t]) * noise;
            Denoiser::Cache cache;
            const Mat pred =
                bundle.denoiser.forward(zt, t, sched.timesteps, enc[idx].ctx, &cache);
            const Mat diff = pred - enc[idx].z0;
            loss += diff.squaredNorm() / diff.size();
            bundle.denoiser.backward(cache, 2.0 * diff / (diff.size() * config.batch_size));
        }
        loss /= config.batch_size;
        if (!std::isfinite(loss))
            throw TrainingError("denoiser training diverged at step " + std::to_string(step));
        clip_grad_norm(ps, 10.0);
        opt.step(ps);
        bundle.metadata.train_steps += 1;
    }
}

} // namespace detail

inline ModelBundle train_from_scratch(const Corpus& corpus, const TrainConfig& config,
                                      const std::string& architecture_id = "arch-a") {
    config.validate();
    if (config.mode != TrainConfig::Mode::scratch)
        throw PreconditionError("train_from_scratch: config mode must be scratch");
    ModelBundle bundle;
    bundle.arch = Architecture::preset(architecture_id);
    bundle.schedule = config.schedule;
    bundle.schedule.build();
    bundle.text_encoder = ToyTextEncoder(corpus.vocabulary, bundle.arch, config.seed);
    bundle.codec = ImageCodec(bundle.arch, config.seed);
    bundle.denoiser = Denoiser(bundle.arch, config.seed);
    bundle.metadata.architecture_id = architecture_id;
    bundle.metadata.seed = config.seed;
    bundle.metadata.corpus_digest = digest_hex(corpus_digest(corpus));
    detail::train_codec(bundle.codec, corpus, config, bundle.metadata);
    detail::train_denoiser(bundle, corpus, config, "denoiser-train");
    return bundle;
}

inline ModelBundle continuous_train(const ModelBundle& base, const Corpus& corpus,
                                    const TrainConfig& config,
                                    const std::string& expected_architecture = "") {
    if (config.mode != TrainConfig::Mode::continuous)
        throw PreconditionError("continuous_train: config mode must be continuous");
    if (config.batch_size <= 0 || config.learning_rate <= 0)
        throw ConfigError("continuous_train: bad optimizer settings");
    if (!expected_architecture.empty() && expected_architecture != base.metadata.architecture_id)
        throw PreconditionError("continuous_train: architecture mismatch (" +
                                expected_architecture + " vs " + base.metadata.architecture_id +
                                ")");
    ModelBundle next = base; // deep copy; base stays untouched
    next.metadata.lineage = "continuous(base=" + digest_hex(base.digest()) +
                            ",corpus=" + digest_hex(corpus_digest(corpus)) + ")";
    next.metadata.corpus_digest = digest_hex(corpus_digest(corpus));
    next.metadata.seed = config.seed;
    // the codec (and with it the feature extractor) stays frozen; continuous
    // updates touch the denoiser only
    if (config.steps > 0) detail::train_denoiser(next, corpus, config, "denoiser-continue");
    return next;
}

// ---------------------------------------------------------------------------
// Sampling and inspection
// ---------------------------------------------------------------------------

inline Image sample_image(const ModelBundle& bundle, const Mat& ctx, uint64_t seed) {
    const auto& sched = bundle.schedule;
    Rng rng(seed);
    Mat z = detail::gaussian_like(rng, bundle.arch.tokens(), bundle.arch.latent_channels);
    for (int t = sched.timesteps; t >= 1; --t) {
        Mat x0 = bundle.denoiser.forward(z, t, sched.timesteps, ctx);
        x0 = x0.cwiseMax(-3.0).cwiseMin(3.0); // clip denoised estimate
        if (t == 1) {
            z = x0;
            break;
        }
        const double ab = sched.alpha_bar[t], ab_prev = sched.alpha_bar[t - 1];
        // DDPM posterior q(z_{t-1} | z_t, x0)
        const double c0 = std::sqrt(ab_prev) * sched.beta[t] / (1.0 - ab);
        const double c1 = std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
        const double var = sched.beta[t] * (1.0 - ab_prev) / (1.0 - ab);
        z = c0 * x0 + c1 * z +
            std::sqrt(var) * detail::gaussian_like(rng, z.rows(), z.cols());
    }
    return bundle.codec.decode(z * bundle.codec.latent_scale);
}

inline std::vector<Image> generate(const ModelBundle& bundle, const std::string& prompt, int n,
                                   uint64_t seed) {
    if (n < 1) throw PreconditionError("generate: n must be >= 1");
    const Mat ctx = bundle.text_encoder.encode_caption_tokens(prompt);
    std::vector<Image> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(
            sample_image(bundle, ctx, derive_seed(seed ^ fnv1a64(prompt), "generate", i)));
    return out;
}

// Expected denoising loss of one record, Monte-Carlo averaged over a seeded
// set of (timestep, noise) draws.
inline double training_loss(const ModelBundle& bundle, const CaptionedRecord& record,
                            uint64_t seed, int draws = 8) {
    if (record.image.height != bundle.arch.image_size)
        throw PreconditionError("training_loss: record image size mismatch");
    const Mat z0 = bundle.codec.encode(record.image) / bundle.codec.latent_scale;
    const Mat ctx = bundle.text_encoder.encode_caption_tokens(record.caption);
    const auto& sched = bundle.schedule;
    Rng rng(derive_seed(seed, "training-loss"));
    double total = 0.0;
    for (int k = 0; k < draws; ++k) {
        // spread timesteps evenly; randomness only in the noise draws
        const int t = 1 + (k * sched.timesteps + sched.timesteps / 2) / draws;
        const Mat noise = detail::gaussian_like(rng, z0.rows(), z0.cols());
        const Mat zt =
            std::sqrt(sched.alpha_bar[t]) * z0 + std::sqrt(1.0 - sched.alpha_bar[t]) * noise;
        const Mat pred = bundle.denoiser.forward(zt, t, sched.timesteps, ctx);
        total += (pred - z0).squaredNorm() / pred.size();
    }
    return total / draws;
}

// Cross-attention heatmap for one prompt token: attention mass the latent
// tokens place on that word, averaged over three mid-range noise levels with
// seeded noise, then broadcast to pixel resolution and max-normalized.
inline Image cross_attention_map(const ModelBundle& bundle, const std::string& prompt,
                                 const Image& image, const std::string& token,
                                 uint64_t seed = 17) {
    const auto words = tokenize(prompt);
    const auto target = tokenize(token);
    if (target.size() != 1)
        throw PreconditionError("cross_attention_map: token must be a single word");
    std::vector<size_t> positions;
    for (size_t i = 0; i < words.size(); ++i)
        if (words[i] == target[0]) positions.push_back(i);
    if (positions.empty())
        throw PreconditionError("cross_attention_map: token '" + token + "' not in prompt");
    const Mat ctx = bundle.text_encoder.encode_words(words);
    const Mat z0 = bundle.codec.encode(image) / bundle.codec.latent_scale;
    const auto& sched = bundle.schedule;
    Rng rng(derive_seed(seed, "attention-map"));
    Vec mass = Vec::Zero(bundle.arch.tokens());
    const int levels[3] = {sched.timesteps / 4, sched.timesteps / 2, 3 * sched.timesteps / 4};
    for (int t : levels) {
        const int tt = std::max(1, t);
        const Mat noise = detail::gaussian_like(rng, z0.rows(), z0.cols());
        const Mat zt =
            std::sqrt(sched.alpha_bar[tt]) * z0 + std::sqrt(1.0 - sched.alpha_bar[tt]) * noise;
        const Mat attn = bundle.denoiser.attention(zt, tt, sched.timesteps, ctx);
        for (size_t p : positions) mass += attn.col(static_cast<Eigen::Index>(p));
    }
    const double mx = mass.maxCoeff();
    if (mx > 0) mass /= mx;
    // broadcast each latent token's mass over its patch
    Image heat(bundle.arch.image_size, bundle.arch.image_size, 1);
    const int g = bundle.arch.grid(), p = bundle.arch.patch;
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    heat.at(gy * p + y, gx * p + x, 0) = mass[gy * g + gx];
    return heat;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, JSON header (metadata + shape info), raw
// little-endian doubles. Metadata is readable without touching the weights.
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[8] = {'P', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};

inline void save_bundle(const ModelBundle& bundle, const std::string& path) {
    auto& self = const_cast<ModelBundle&>(bundle);
    nlohmann::json header;
    header["schema_version"] = 1;
    header["architecture_id"] = bundle.arch.id;
    header["metadata"] = bundle.metadata.to_json();
    header["latent_scale"] = bundle.codec.latent_scale;
    header["schedule"] = {{"name", bundle.schedule.name},
                          {"timesteps", bundle.schedule.timesteps},
                          {"cosine_s", bundle.schedule.cosine_s},
                          {"linear_beta_min", bundle.schedule.linear_beta_min},
                          {"linear_beta_max", bundle.schedule.linear_beta_max}};
    nlohmann::json words = nlohmann::json::object();
    for (const auto& [w, v] : bundle.text_encoder.word_table) {
        nlohmann::json arr = nlohmann::json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
        words[w] = arr;
    }
    header["word_table"] = words;
    const std::vector<double> flat = dump_params(self.all_params());
    header["param_count"] = flat.size();
    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_bundle: cannot open " + path);
    f.write(kCheckpointMagic, 8);
    const uint32_t version = 1;
    const uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!f) throw IoError("save_bundle: write failed: " + path);
}

inline nlohmann::json read_checkpoint_header(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    uint32_t version = 0;
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&hlen), 8);
    if (!f || version != 1) throw ParseError("checkpoint: unsupported version in " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw ParseError("checkpoint: truncated header in " + path);
    return nlohmann::json::parse(hs);
}

inline BundleMetadata read_bundle_metadata(const std::string& path) {
    return BundleMetadata::from_json(read_checkpoint_header(path).at("metadata"));
}

inline ModelBundle load_bundle(const std::string& path) {
    const nlohmann::json header = read_checkpoint_header(path);
    ModelBundle bundle;
    bundle.arch = Architecture::preset(header.at("architecture_id"));
    bundle.metadata = BundleMetadata::from_json(header.at("metadata"));
    bundle.schedule.name = header.at("schedule").at("name");
    bundle.schedule.timesteps = header.at("schedule").at("timesteps");
    bundle.schedule.cosine_s = header.at("schedule").at("cosine_s");
    bundle.schedule.linear_beta_min = header.at("schedule").at("linear_beta_min");
    bundle.schedule.linear_beta_max = header.at("schedule").at("linear_beta_max");
    bundle.schedule.build();
    // rebuild modules with zero seeds, then overwrite with stored parameters
    ConceptVocabulary empty_vocab;
    bundle.text_encoder = ToyTextEncoder(empty_vocab, bundle.arch, 0);
    for (auto it = header.at("word_table").begin(); it != header.at("word_table").end(); ++it) {
        Vec v(it.value().size());
        for (size_t i = 0; i < it.value().size(); ++i)
            v[static_cast<Eigen::Index>(i)] = it.value()[i].get<double>();
        bundle.text_encoder.word_table[it.key()] = v;
    }
    bundle.codec = ImageCodec(bundle.arch, 0);
    bundle.codec.latent_scale = header.at("latent_scale");
    bundle.denoiser = Denoiser(bundle.arch, 0);
    std::ifstream f(path, std::ios::binary);
    f.seekg(12);
    uint64_t header_len = 0;
    f.read(reinterpret_cast<char*>(&header_len), 8);
    f.seekg(static_cast<std::streamoff>(8 + 4 + 8 + header_len));
    std::vector<double> flat(header.at("param_count").get<size_t>());
    f.read(reinterpret_cast<char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!f) throw ParseError("checkpoint: truncated weights in " + path);
    load_params(bundle.all_params(), flat);
    return bundle;
}

} // namespace poisonlab
