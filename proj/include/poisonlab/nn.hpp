#pragma once

#include <cmath>
#include <vector>

#include "poisonlab/common.hpp"

namespace poisonlab {

// Minimal dense-network toolkit with explicit backprop. Convention: matrices
// carry one row per token/sample. Gradients accumulate until zero_grad.

struct Param {
    Mat w, g, m, v;
    Param() = default;
    Param(Eigen::Index rows, Eigen::Index cols)
        : w(Mat::Zero(rows, cols)), g(Mat::Zero(rows, cols)),
          m(Mat::Zero(rows, cols)), v(Mat::Zero(rows, cols)) {}
    void zero_grad() { g.setZero(); }
    Eigen::Index count() const { return w.size(); }
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;

    void step(const std::vector<Param*>& params) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (Param* p : params) {
            p->m = beta1 * p->m + (1.0 - beta1) * p->g;
            p->v = beta2 * p->v + (1.0 - beta2) * p->g.cwiseProduct(p->g);
            const Mat mhat = p->m / bc1;
            const Mat vhat = p->v / bc2;
            p->w -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        }
    }
};

inline void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
}

inline double grad_norm(const std::vector<Param*>& params) {
    double s = 0.0;
    for (Param* p : params) s += p->g.squaredNorm();
    return std::sqrt(s);
}

inline void clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
    const double n = grad_norm(params);
    if (n > max_norm && n > 0)
        for (Param* p : params) p->g *= max_norm / n;
}

struct Linear {
    Param weight; // out x in
    Param bias;   // out x 1

    Linear() = default;
    Linear(int in, int out, Rng& rng) : weight(out, in), bias(out, 1) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (Eigen::Index i = 0; i < weight.w.rows(); ++i)
            for (Eigen::Index j = 0; j < weight.w.cols(); ++j)
                weight.w(i, j) = scale * rng.normal();
    }

    Mat forward(const Mat& x) const {
        return (x * weight.w.transpose()).rowwise() + bias.w.col(0).transpose();
    }

    // Accumulates parameter grads; returns dL/dx.
    Mat backward(const Mat& x, const Mat& dy) {
        weight.g += dy.transpose() * x;
        bias.g.col(0) += dy.colwise().sum().transpose();
        return dy * weight.w;
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

inline Mat tanh_forward(const Mat& x) { return x.array().tanh().matrix(); }
inline Mat tanh_backward(const Mat& y, const Mat& dy) {
    return (dy.array() * (1.0 - y.array().square())).matrix();
}

// Fully connected stack with tanh between layers and a linear output.
struct Mlp {
    std::vector<Linear> layers;

    struct Cache {
        std::vector<Mat> inputs;      // input to each layer
        std::vector<Mat> activations; // tanh outputs (one per hidden layer)
    };

    Mlp() = default;
    Mlp(const std::vector<int>& dims, Rng& rng) {
        for (size_t i = 0; i + 1 < dims.size(); ++i)
            layers.emplace_back(dims[i], dims[i + 1], rng);
    }

    Mat forward(const Mat& x, Cache* cache = nullptr) const {
        Mat h = x;
        if (cache) {
            cache->inputs.clear();
            cache->activations.clear();
        }
        for (size_t i = 0; i < layers.size(); ++i) {
            if (cache) cache->inputs.push_back(h);
            h = layers[i].forward(h);
            if (i + 1 < layers.size()) {
                h = tanh_forward(h);
                if (cache) cache->activations.push_back(h);
            }
        }
        return h;
    }

    Mat backward(const Cache& cache, Mat dy) {
        for (size_t i = layers.size(); i-- > 0;) {
            if (i + 1 < layers.size()) dy = tanh_backward(cache.activations[i], dy);
            dy = layers[i].backward(cache.inputs[i], dy);
        }
        return dy;
    }

    void collect(std::vector<Param*>& out) {
        for (auto& l : layers) l.collect(out);
    }
};

inline Mat softmax_rows(const Mat& s) {
    Mat out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double mx = s.row(i).maxCoeff();
        Eigen::ArrayXd e = (s.row(i).array() - mx).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return out;
}

// Single-head cross-attention: queries attend over a token context.
struct CrossAttention {
    Linear to_q, to_k, to_v, to_out;
    int key_dim = 0;

    struct Cache {
        Mat xq, xc, q, k, v, attn, mixed;
    };

    CrossAttention() = default;
    CrossAttention(int query_dim, int context_dim, int dk, int dv, int out_dim, Rng& rng)
        : to_q(query_dim, dk, rng), to_k(context_dim, dk, rng), to_v(context_dim, dv, rng),
          to_out(dv, out_dim, rng), key_dim(dk) {}

    Mat forward(const Mat& xq, const Mat& xc, Cache* cache = nullptr) const {
        const Mat q = to_q.forward(xq);
        const Mat k = to_k.forward(xc);
        const Mat v = to_v.forward(xc);
        const Mat scores = q * k.transpose() / std::sqrt(static_cast<double>(key_dim));
        const Mat attn = softmax_rows(scores);
        const Mat mixed = attn * v;
        if (cache) *cache = {xq, xc, q, k, v, attn, mixed};
        return to_out.forward(mixed);
    }

    // Returns (dL/dxq, dL/dxc).
    std::pair<Mat, Mat> backward(const Cache& c, const Mat& dy) {
        const Mat dmixed = to_out.backward(c.mixed, dy);
        Mat dattn = dmixed * c.v.transpose();
        const Mat dv = c.attn.transpose() * dmixed;
        // softmax jacobian per row
        Mat dscores(dattn.rows(), dattn.cols());
        for (Eigen::Index i = 0; i < dattn.rows(); ++i) {
            const double dot = c.attn.row(i).dot(dattn.row(i));
            dscores.row(i) =
                (c.attn.row(i).array() * (dattn.row(i).array() - dot)).matrix();
        }
        dscores /= std::sqrt(static_cast<double>(key_dim));
        const Mat dq = dscores * c.k;
        const Mat dk = dscores.transpose() * c.q;
        const Mat dxq = to_q.backward(c.xq, dq);
        Mat dxc = to_k.backward(c.xc, dk);
        dxc += to_v.backward(c.xc, dv);
        return {dxq, dxc};
    }

    void collect(std::vector<Param*>& out) {
        to_q.collect(out);
        to_k.collect(out);
        to_v.collect(out);
        to_out.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Flat (de)serialization of parameter sets, used by checkpoints.
// ---------------------------------------------------------------------------

inline size_t param_count(const std::vector<Param*>& params) {
    size_t n = 0;
    for (const Param* p : params) n += static_cast<size_t>(p->count());
    return n;
}

inline std::vector<double> dump_params(const std::vector<Param*>& params) {
    std::vector<double> out;
    out.reserve(param_count(params));
    for (const Param* p : params)
        out.insert(out.end(), p->w.data(), p->w.data() + p->w.size());
    return out;
}

inline void load_params(const std::vector<Param*>& params, const std::vector<double>& flat) {
    if (flat.size() != param_count(params))
        throw IoError("load_params: parameter count mismatch");
    size_t off = 0;
    for (Param* p : params) {
        std::copy(flat.begin() + static_cast<long>(off),
                  flat.begin() + static_cast<long>(off + p->w.size()), p->w.data());
        off += static_cast<size_t>(p->w.size());
    }
}

} // namespace poisonlab
