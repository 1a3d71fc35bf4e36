#include "cmae/nn.hpp"

#include <cmath>

namespace cmae::nn {

Matrix xavier_uniform(Index in, Index out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(in, out);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix normal(Index rows, Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Linear::Linear(Index in, Index out, Rng& rng)
    : weight("weight", xavier_uniform(in, out, rng)), bias("bias", Matrix::Zero(1, out), false) {}

ParameterList Linear::parameters() {
    ParameterList out;
    ag::append(out, "", weight);
    ag::append(out, "", bias);
    return out;
}

LayerNorm::LayerNorm(Index dim)
    : gamma("weight", Matrix::Ones(1, dim), false), beta("bias", Matrix::Zero(1, dim), false) {}

ParameterList LayerNorm::parameters() {
    ParameterList out;
    ag::append(out, "", gamma);
    ag::append(out, "", beta);
    return out;
}

Mlp::Mlp(Index in, Index hidden, Index out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

ParameterList Mlp::parameters() {
    ParameterList out;
    ag::append(out, "fc1", fc1.parameters());
    ag::append(out, "fc2", fc2.parameters());
    return out;
}

SelfAttention::SelfAttention(Index dim, Index heads_, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), heads(heads_) {
    if (heads_ <= 0 || dim % heads_ != 0) throw ConfigError("attention dim must be divisible by heads");
}

Var SelfAttention::forward(const Var& x, Index batch, Index seq, std::vector<Matrix>* probs) const {
    return proj(ag::attention(qkv(x), batch, seq, heads, probs));
}

ParameterList SelfAttention::parameters() {
    ParameterList out;
    ag::append(out, "qkv", qkv.parameters());
    ag::append(out, "proj", proj.parameters());
    return out;
}

TransformerBlock::TransformerBlock(Index dim, Index heads, double mlp_ratio, Rng& rng)
    : norm1(dim),
      attn(dim, heads, rng),
      norm2(dim),
      mlp(dim, static_cast<Index>(std::lround(static_cast<double>(dim) * mlp_ratio)), dim, rng) {}

Var TransformerBlock::forward(const Var& x, Index batch, Index seq, std::vector<Matrix>* probs) const {
    Var h = ag::add(x, attn.forward(norm1(x), batch, seq, probs));
    return ag::add(h, mlp(norm2(h)));
}

ParameterList TransformerBlock::parameters() {
    ParameterList out;
    ag::append(out, "norm1", norm1.parameters());
    ag::append(out, "attn", attn.parameters());
    ag::append(out, "norm2", norm2.parameters());
    ag::append(out, "mlp", mlp.parameters());
    return out;
}

Matrix sincos_pos_embed_2d(Index dim, Index grid_h, Index grid_w) {
    if (dim % 4 != 0) throw ConfigError("sine-cosine position embedding needs dim divisible by 4");
    const Index quarter = dim / 4;
    Matrix table(grid_h * grid_w, dim);
    for (Index r = 0; r < grid_h; ++r) {
        for (Index c = 0; c < grid_w; ++c) {
            auto row = table.row(r * grid_w + c);
            for (Index i = 0; i < quarter; ++i) {
                const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
                row(i) = std::sin(static_cast<double>(r) * omega);
                row(quarter + i) = std::cos(static_cast<double>(r) * omega);
                row(2 * quarter + i) = std::sin(static_cast<double>(c) * omega);
                row(3 * quarter + i) = std::cos(static_cast<double>(c) * omega);
            }
        }
    }
    return table;
}

}  // namespace cmae::nn
