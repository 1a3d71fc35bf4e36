#include "cmae/tensor.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cmae;
using cmae::testing::check_op;
using cmae::testing::max_relative_error;
using cmae::testing::random_matrix;

namespace {

void expect_grad_close(const std::function<ag::Var(const ag::Var&)>& build, const Matrix& x, double tol = 1e-6) {
    const auto [analytic, numeric] = check_op(build, x);
    EXPECT_LT(max_relative_error(analytic, numeric, 1e-4), tol);
}

}  // namespace

TEST(Tensor, ElementwiseOpsMatchFiniteDifferences) {
    const Matrix x = random_matrix(3, 4, 1);
    const Matrix c = random_matrix(3, 4, 2);
    const Matrix row = random_matrix(1, 4, 3);
    expect_grad_close([&](const ag::Var& v) { return ag::add(v, ag::Var::constant(c)); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::sub(ag::Var::constant(c), v); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::scale(v, -2.5); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::hadamard(v, v); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::add_row_broadcast(ag::Var::constant(c), v); }, row);
    expect_grad_close([&](const ag::Var& v) { return ag::gelu(v); }, x);
}

TEST(Tensor, MatrixProductsMatchFiniteDifferences) {
    const Matrix a = random_matrix(3, 5, 4);
    const Matrix b = random_matrix(5, 2, 5);
    const Matrix bt = random_matrix(4, 5, 6);
    expect_grad_close([&](const ag::Var& v) { return ag::matmul(v, ag::Var::constant(b)); }, a);
    expect_grad_close([&](const ag::Var& v) { return ag::matmul(ag::Var::constant(a), v); }, b);
    expect_grad_close([&](const ag::Var& v) { return ag::matmul_nt(v, ag::Var::constant(bt)); }, a);
    expect_grad_close([&](const ag::Var& v) { return ag::matmul_nt(ag::Var::constant(a), v); }, bt);
    const Matrix bias = random_matrix(1, 2, 7);
    expect_grad_close([&](const ag::Var& v) { return ag::linear(v, ag::Var::constant(b), ag::Var::constant(bias)); },
                      a);
}

TEST(Tensor, NormalisationOpsMatchFiniteDifferences) {
    const Matrix x = random_matrix(4, 6, 8);
    const Matrix gamma = random_matrix(1, 6, 9);
    const Matrix beta = random_matrix(1, 6, 10);
    expect_grad_close(
        [&](const ag::Var& v) { return ag::layer_norm(v, ag::Var::constant(gamma), ag::Var::constant(beta)); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::layer_norm(ag::Var::constant(x), v, ag::Var::constant(beta)); },
                      gamma);
    expect_grad_close([&](const ag::Var& v) { return ag::l2_normalize_rows(v); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::row_norms(v, 1e-12); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::row_squared_norms(v); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::segment_mean(v, 2); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::mean_all(v); }, x);
}

TEST(Tensor, RowShufflingOpsMatchFiniteDifferences) {
    const Matrix x = random_matrix(5, 3, 11);
    const std::vector<Index> rows{4, 0, 0, 2};
    expect_grad_close([&](const ag::Var& v) { return ag::gather_rows(v, rows); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::concat_rows(v, ag::Var::constant(x)); }, x);
    expect_grad_close([&](const ag::Var& v) { return ag::repeat_rows(v, 3); }, Matrix(x.topRows(1)));
}

TEST(Tensor, CrossEntropyMatchesFiniteDifferences) {
    const Matrix logits = random_matrix(4, 5, 12);
    const std::vector<Index> labels{0, 4, 2, 2};
    expect_grad_close([&](const ag::Var& v) { return ag::softmax_cross_entropy(v, labels); }, logits);
}

TEST(Tensor, AttentionMatchesFiniteDifferences) {
    const Index batch = 2, seq = 3, dim = 4, heads = 2;
    const Matrix qkv = random_matrix(batch * seq, 3 * dim, 13);
    expect_grad_close([&](const ag::Var& v) { return ag::attention(v, batch, seq, heads); }, qkv);
}

TEST(Tensor, ConvolutionsMatchFiniteDifferences) {
    const Index batch = 2, gh = 3, gw = 4, c = 3;
    const Matrix x = random_matrix(batch * gh * gw, c, 14);
    const Matrix dw = random_matrix(c, 9, 15);
    const Matrix bias = random_matrix(1, c, 16);
    expect_grad_close(
        [&](const ag::Var& v) {
            return ag::depthwise_conv3x3(v, ag::Var::constant(dw), ag::Var::constant(bias), batch, gh, gw);
        },
        x);
    expect_grad_close(
        [&](const ag::Var& v) {
            return ag::depthwise_conv3x3(ag::Var::constant(x), v, ag::Var::constant(bias), batch, gh, gw);
        },
        dw);
    const Matrix dense = random_matrix(9 * c, 2, 17);
    const Matrix dense_bias = random_matrix(1, 2, 18);
    expect_grad_close(
        [&](const ag::Var& v) {
            return ag::conv3x3(v, ag::Var::constant(dense), ag::Var::constant(dense_bias), batch, gh, gw);
        },
        x);
    expect_grad_close(
        [&](const ag::Var& v) {
            return ag::conv3x3(ag::Var::constant(x), v, ag::Var::constant(dense_bias), batch, gh, gw);
        },
        dense);
}

TEST(Tensor, DepthwiseConvolutionMatchesDirectSum) {
    const Index batch = 1, gh = 3, gw = 3, c = 2;
    const Matrix x = random_matrix(batch * gh * gw, c, 19);
    const Matrix w = random_matrix(c, 9, 20);
    const Matrix b = random_matrix(1, c, 21);
    const Matrix out =
        ag::depthwise_conv3x3(ag::Var::constant(x), ag::Var::constant(w), ag::Var::constant(b), batch, gh, gw).value();
    for (Index r = 0; r < gh; ++r)
        for (Index col = 0; col < gw; ++col)
            for (Index ch = 0; ch < c; ++ch) {
                double acc = b(0, ch);
                for (Index dr = -1; dr <= 1; ++dr)
                    for (Index dc = -1; dc <= 1; ++dc) {
                        const Index rr = r + dr, cc = col + dc;
                        if (rr < 0 || rr >= gh || cc < 0 || cc >= gw) continue;
                        acc += w(ch, (dr + 1) * 3 + (dc + 1)) * x(rr * gw + cc, ch);
                    }
                EXPECT_NEAR(out(r * gw + col, ch), acc, 1e-12);
            }
}

TEST(Tensor, NoGradGuardDropsTheGraph) {
    ag::Parameter p("p", random_matrix(2, 2, 22));
    {
        ag::NoGradGuard guard;
        const ag::Var y = ag::scale(p.var(), 2.0);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(ag::grad_enabled());
    EXPECT_TRUE(ag::scale(p.var(), 2.0).requires_grad());
}

TEST(Tensor, DetachBlocksGradient) {
    ag::Parameter p("p", random_matrix(2, 3, 23));
    const ag::Var y = ag::add(ag::detach(p.var()), p.var());
    ag::backward(ag::sum_all(y));
    EXPECT_TRUE(p.grad().isApprox(Matrix::Ones(2, 3)));
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
    ag::Parameter p("p", random_matrix(1, 3, 24));
    ag::backward(ag::sum_all(p.var()));
    ag::backward(ag::sum_all(p.var()));
    EXPECT_TRUE(p.grad().isApprox(Matrix::Constant(1, 3, 2.0)));
    p.zero_grad();
    EXPECT_EQ(p.grad().squaredNorm(), 0.0);
}

TEST(Tensor, RowNormValueIsExactAtZero) {
    const Matrix z = Matrix::Zero(2, 3);
    EXPECT_EQ(ag::row_norms(ag::Var::constant(z), 1e-8).value().sum(), 0.0);
    ag::Parameter p("p", z);
    ag::backward(ag::sum_all(ag::row_norms(p.var(), 1e-8)));
    EXPECT_TRUE(p.grad().allFinite());
}

TEST(Tensor, CrossEntropyOfUniformLogitsIsLogClasses) {
    const Matrix logits = Matrix::Constant(3, 7, 0.4);
    const std::vector<Index> labels{0, 3, 6};
    EXPECT_NEAR(ag::softmax_cross_entropy(ag::Var::constant(logits), labels).item(), std::log(7.0), 1e-12);
}
