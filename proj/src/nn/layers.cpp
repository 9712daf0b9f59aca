#include "darslp/nn/layers.hpp"

#include <cmath>

namespace darslp::nn {

Mat sinusoidal_pe(int positions, int d_model) {
    Mat pe(positions, d_model);
    for (int t = 0; t < positions; ++t) {
        for (int i = 0; i < d_model; i += 2) {
            const double rate = std::pow(10000.0, static_cast<double>(i) / d_model);
            pe(t, i) = std::sin(t / rate);
            if (i + 1 < d_model) pe(t, i + 1) = std::cos(t / rate);
        }
    }
    return pe;
}

void Linear::init(ParamStore& ps, Rng& rng) const {
    Mat& w = ps.create(prefix + ".w", in, out);
    Mat& b = ps.create(prefix + ".b", 1, out);
    init_uniform_fan_in(w, in, rng);
    init_uniform_fan_in(b, in, rng);
}

int Linear::forward(Graph& g, Binder& bind, int x) const {
    return g.add_rowvec(g.matmul(x, bind(prefix + ".w")), bind(prefix + ".b"));
}

void PReLU::init(ParamStore& ps) const {
    ps.create(prefix + ".alpha", 1, 1).setConstant(0.25);
}

int PReLU::forward(Graph& g, Binder& bind, int x) const {
    return g.prelu(x, bind(prefix + ".alpha"));
}

void LayerNorm::init(ParamStore& ps) const {
    ps.create(prefix + ".gamma", 1, dim).setOnes();
    ps.create(prefix + ".beta", 1, dim).setZero();
}

int LayerNorm::forward(Graph& g, Binder& bind, int x) const {
    int n = g.layer_norm_rows(x);
    return g.add_rowvec(g.colwise_scale(n, bind(prefix + ".gamma")), bind(prefix + ".beta"));
}

void MultiHeadAttention::init(ParamStore& ps, Rng& rng) const {
    for (const char* part : {".wq", ".wk", ".wv", ".wo"}) {
        Mat& w = ps.create(prefix + part, d_model, d_model);
        init_uniform_fan_in(w, d_model, rng);
    }
    for (const char* part : {".bq", ".bk", ".bv", ".bo"}) {
        Mat& b = ps.create(prefix + part, 1, d_model);
        init_uniform_fan_in(b, d_model, rng);
    }
}

int MultiHeadAttention::forward(Graph& g, Binder& bind, int q_in, int kv_in,
                                const std::vector<bool>* key_mask) const {
    if (d_model % heads != 0) throw ShapeMismatch("attention: heads must divide d_model");
    const int dh = d_model / heads;
    int q = g.add_rowvec(g.matmul(q_in, bind(prefix + ".wq")), bind(prefix + ".bq"));
    int k = g.add_rowvec(g.matmul(kv_in, bind(prefix + ".wk")), bind(prefix + ".bk"));
    int v = g.add_rowvec(g.matmul(kv_in, bind(prefix + ".wv")), bind(prefix + ".bv"));

    const Eigen::Index tq = g.value(q).rows();
    const Eigen::Index tk = g.value(k).rows();
    int mask_id = -1;
    if (key_mask) {
        if (static_cast<Eigen::Index>(key_mask->size()) != tk)
            throw ShapeMismatch("attention: key mask length");
        Mat m = Mat::Zero(tq, tk);
        for (Eigen::Index j = 0; j < tk; ++j)
            if (!(*key_mask)[static_cast<std::size_t>(j)]) m.col(j).setConstant(-1e30);
        mask_id = g.constant(std::move(m));
    }

    std::vector<int> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        int qh = g.slice_cols(q, h * dh, dh);
        int kh = g.slice_cols(k, h * dh, dh);
        int vh = g.slice_cols(v, h * dh, dh);
        int scores = g.cmul(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (mask_id >= 0) scores = g.add(scores, mask_id);
        int attn = g.softmax_rows(scores);
        head_outs.push_back(g.matmul(attn, vh));
    }
    int cat = g.concat_cols(head_outs);
    return g.add_rowvec(g.matmul(cat, bind(prefix + ".wo")), bind(prefix + ".bo"));
}

void FeedForward::init(ParamStore& ps, Rng& rng) const {
    Linear{prefix + ".l1", d_model, hidden}.init(ps, rng);
    Linear{prefix + ".l2", hidden, d_model}.init(ps, rng);
}

int FeedForward::forward(Graph& g, Binder& bind, int x, double dropout_p, Rng* drop_rng) const {
    int h = g.relu(Linear{prefix + ".l1", d_model, hidden}.forward(g, bind, x));
    if (drop_rng) h = g.dropout(h, dropout_p, *drop_rng);
    return Linear{prefix + ".l2", hidden, d_model}.forward(g, bind, h);
}

void EncoderLayer::init(ParamStore& ps, Rng& rng) const {
    MultiHeadAttention{prefix + ".self", d_model, heads}.init(ps, rng);
    FeedForward{prefix + ".ff", d_model, ffn}.init(ps, rng);
    LayerNorm{prefix + ".ln1", d_model}.init(ps);
    LayerNorm{prefix + ".ln2", d_model}.init(ps);
}

int EncoderLayer::forward(Graph& g, Binder& bind, int x, const std::vector<bool>* key_mask,
                          double dropout_p, Rng* drop_rng) const {
    int a = MultiHeadAttention{prefix + ".self", d_model, heads}.forward(g, bind, x, x, key_mask);
    if (drop_rng) a = g.dropout(a, dropout_p, *drop_rng);
    x = LayerNorm{prefix + ".ln1", d_model}.forward(g, bind, g.add(x, a));
    int f = FeedForward{prefix + ".ff", d_model, ffn}.forward(g, bind, x, dropout_p, drop_rng);
    if (drop_rng) f = g.dropout(f, dropout_p, *drop_rng);
    return LayerNorm{prefix + ".ln2", d_model}.forward(g, bind, g.add(x, f));
}

void DecoderLayer::init(ParamStore& ps, Rng& rng) const {
    MultiHeadAttention{prefix + ".self", d_model, heads}.init(ps, rng);
    MultiHeadAttention{prefix + ".cross", d_model, heads}.init(ps, rng);
    FeedForward{prefix + ".ff", d_model, ffn}.init(ps, rng);
    LayerNorm{prefix + ".ln1", d_model}.init(ps);
    LayerNorm{prefix + ".ln2", d_model}.init(ps);
    LayerNorm{prefix + ".ln3", d_model}.init(ps);
}

int DecoderLayer::forward(Graph& g, Binder& bind, int x, int memory,
                          const std::vector<bool>* mem_mask, double dropout_p,
                          Rng* drop_rng) const {
    int a = MultiHeadAttention{prefix + ".self", d_model, heads}.forward(g, bind, x, x, nullptr);
    if (drop_rng) a = g.dropout(a, dropout_p, *drop_rng);
    x = LayerNorm{prefix + ".ln1", d_model}.forward(g, bind, g.add(x, a));
    int c = MultiHeadAttention{prefix + ".cross", d_model, heads}.forward(g, bind, x, memory,
                                                                          mem_mask);
    if (drop_rng) c = g.dropout(c, dropout_p, *drop_rng);
    x = LayerNorm{prefix + ".ln2", d_model}.forward(g, bind, g.add(x, c));
    int f = FeedForward{prefix + ".ff", d_model, ffn}.forward(g, bind, x, dropout_p, drop_rng);
    if (drop_rng) f = g.dropout(f, dropout_p, *drop_rng);
    return LayerNorm{prefix + ".ln3", d_model}.forward(g, bind, g.add(x, f));
}

}  // namespace darslp::nn
