#pragma once

// Building blocks shared by the encoder, heads and decoders.

#include "cmae/common.hpp"
#include "cmae/tensor.hpp"

#include <vector>

namespace cmae::nn {

using ag::Parameter;
using ag::ParameterList;
using ag::Var;

Matrix xavier_uniform(Index in, Index out, Rng& rng);
Matrix normal(Index rows, Index cols, double stddev, Rng& rng);

/// y = x W + b with W stored in x out.
struct Linear {
    Linear() = default;
    Linear(Index in, Index out, Rng& rng);

    Var operator()(const Var& x) const { return ag::linear(x, weight.var(), bias.var()); }
    ParameterList parameters();
    Index in_features() const { return weight.value().rows(); }
    Index out_features() const { return weight.value().cols(); }

    Parameter weight;
    Parameter bias;
};

struct LayerNorm {
    LayerNorm() = default;
    explicit LayerNorm(Index dim);

    Var operator()(const Var& x) const { return ag::layer_norm(x, gamma.var(), beta.var()); }
    ParameterList parameters();

    Parameter gamma;
    Parameter beta;
};

/// fc1 -> GELU -> fc2
struct Mlp {
    Mlp() = default;
    Mlp(Index in, Index hidden, Index out, Rng& rng);

    Var operator()(const Var& x) const { return fc2(ag::gelu(fc1(x))); }
    ParameterList parameters();

    Linear fc1;
    Linear fc2;
};

struct SelfAttention {
    SelfAttention() = default;
    SelfAttention(Index dim, Index heads, Rng& rng);

    Var forward(const Var& x, Index batch, Index seq, std::vector<Matrix>* probs = nullptr) const;
    ParameterList parameters();

    Linear qkv;
    Linear proj;
    Index heads = 1;
};

/// Pre-norm block: x + attn(norm1(x)), then x + mlp(norm2(x)).
struct TransformerBlock {
    TransformerBlock() = default;
    TransformerBlock(Index dim, Index heads, double mlp_ratio, Rng& rng);

    Var forward(const Var& x, Index batch, Index seq, std::vector<Matrix>* probs = nullptr) const;
    ParameterList parameters();

    LayerNorm norm1;
    SelfAttention attn;
    LayerNorm norm2;
    Mlp mlp;
};

/// Fixed 2-D sine-cosine table, (grid_h*grid_w) x dim. dim must be a multiple of 4.
Matrix sincos_pos_embed_2d(Index dim, Index grid_h, Index grid_w);

}  // namespace cmae::nn
