#pragma once

#include <optional>
#include <string>
#include <vector>

#include "darslp/nn/optim.hpp"

namespace darslp::nn {

// Standard sinusoidal positional encoding table, rows = positions.
Mat sinusoidal_pe(int positions, int d_model);

// y = x * W + b, with W stored (in x out) so rows are samples.
struct Linear {
    std::string prefix;
    int in = 0, out = 0;

    void init(ParamStore& ps, Rng& rng) const;
    int forward(Graph& g, Binder& bind, int x) const;
};

struct PReLU {
    std::string prefix;

    void init(ParamStore& ps) const;  // alpha = 0.25
    int forward(Graph& g, Binder& bind, int x) const;
};

// LayerNorm over features with learned affine.
struct LayerNorm {
    std::string prefix;
    int dim = 0;

    void init(ParamStore& ps) const;
    int forward(Graph& g, Binder& bind, int x) const;
};

// Multi-head attention over one sample: q_in is Tq x d, kv_in is Tk x d.
// key_mask (optional) marks valid key positions; masked keys get -1e30
// added to their scores before the softmax, which zeroes their weight
// exactly in double precision.
struct MultiHeadAttention {
    std::string prefix;
    int d_model = 0;
    int heads = 0;

    void init(ParamStore& ps, Rng& rng) const;
    int forward(Graph& g, Binder& bind, int q_in, int kv_in,
                const std::vector<bool>* key_mask) const;
};

struct FeedForward {
    std::string prefix;
    int d_model = 0;
    int hidden = 0;

    void init(ParamStore& ps, Rng& rng) const;
    int forward(Graph& g, Binder& bind, int x, double dropout_p, Rng* drop_rng) const;
};

// Post-norm transformer encoder layer: x = LN(x + attn(x)); x = LN(x + ff(x)).
struct EncoderLayer {
    std::string prefix;
    int d_model = 0, heads = 0, ffn = 0;

    void init(ParamStore& ps, Rng& rng) const;
    int forward(Graph& g, Binder& bind, int x, const std::vector<bool>* key_mask,
                double dropout_p, Rng* drop_rng) const;
};

// Decoder layer: bidirectional self-attention (non-autoregressive, no
// causal mask), cross-attention to the text memory, then feed-forward.
struct DecoderLayer {
    std::string prefix;
    int d_model = 0, heads = 0, ffn = 0;

    void init(ParamStore& ps, Rng& rng) const;
    int forward(Graph& g, Binder& bind, int x, int memory, const std::vector<bool>* mem_mask,
                double dropout_p, Rng* drop_rng) const;
};

}  // namespace darslp::nn
