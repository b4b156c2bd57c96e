#include "fewseg/common.hpp"
#include "fewseg/nn.hpp"

#include <doctest.h>

#include <functional>

using namespace fewseg;
using nn::Mat;
using nn::Tensor;

namespace {

Mat random_mat(Rng& rng, long r, long c, double scale = 1.0) {
    Mat m(r, c);
    for (long j = 0; j < c; ++j)
        for (long i = 0; i < r; ++i) m(i, j) = rng.next_normal() * scale;
    return m;
}

// central-difference gradient check of a scalar-valued graph builder
void check_gradients(std::function<Tensor(const std::vector<Tensor>&)> build,
                     std::vector<Mat> inputs, double h = 1e-6, double tol = 1e-5) {
    std::vector<Tensor> leaves;
    for (auto& m : inputs) leaves.push_back(nn::leaf(m));
    auto out = build(leaves);
    nn::backward(out);

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        leaves[li]->ensure_grad();
        const Mat analytic = leaves[li]->grad;
        for (long i = 0; i < inputs[li].rows(); ++i)
            for (long j = 0; j < inputs[li].cols(); ++j) {
                auto eval = [&](double delta) {
                    std::vector<Tensor> ls;
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                        Mat m = inputs[k];
                        if (k == li) m(i, j) += delta;
                        ls.push_back(nn::constant(m));
                    }
                    return build(ls)->value(0, 0);
                };
                const double fd = (eval(h) - eval(-h)) / (2.0 * h);
                const double an = analytic(i, j);
                const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
                CHECK(std::abs(fd - an) / denom < tol);
            }
    }
}

} // namespace

TEST_CASE("autodiff: matmul/add/scale chain matches finite differences") {
    Rng rng(7);
    const Mat a = random_mat(rng, 3, 4);
    const Mat b = random_mat(rng, 4, 2);
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto y = nn::matmul(in[0], in[1]);
            return nn::mean_all(nn::scale(nn::add(y, y), 0.7));
        },
        {a, b});
}

TEST_CASE("autodiff: nonlinearities match finite differences") {
    Rng rng(11);
    const Mat x = random_mat(rng, 4, 5);
    check_gradients(
        [](const std::vector<Tensor>& in) { return nn::sum_all(nn::gelu(in[0])); }, {x});
    check_gradients(
        [](const std::vector<Tensor>& in) { return nn::sum_all(nn::sigmoid(in[0])); },
        {x});
    check_gradients(
        [](const std::vector<Tensor>& in) {
            return nn::sum_all(nn::cmul(nn::relu(in[0]), in[0]));
        },
        {x});
}

TEST_CASE("autodiff: softmax and layernorm match finite differences") {
    Rng rng(13);
    const Mat x = random_mat(rng, 3, 6);
    const Mat g = random_mat(rng, 1, 6, 0.3);
    const Mat b = random_mat(rng, 1, 6, 0.3);
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto s = nn::softmax_rows(in[0]);
            return nn::sum_all(nn::cmul(s, in[0]));
        },
        {x});
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto y = nn::layernorm_rows(in[0], in[1], in[2]);
            return nn::mean_all(nn::cmul(y, y));
        },
        {x, g, b}, 1e-6, 5e-5);
}

TEST_CASE("autodiff: structural ops match finite differences") {
    Rng rng(17);
    const Mat a = random_mat(rng, 4, 4);
    const Mat b = random_mat(rng, 2, 4);
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto cat = nn::vconcat({in[0], in[1]});
            auto blk = nn::block(cat, 1, 1, 3, 2);
            return nn::sum_all(nn::cmul(blk, blk));
        },
        {a, b});
    const Mat row = random_mat(rng, 1, 4);
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto y = nn::row_broadcast_add(in[0], in[1]);
            return nn::mean_all(nn::cmul(y, nn::transpose(nn::transpose(y))));
        },
        {a, row});
}

TEST_CASE("autodiff: losses match finite differences") {
    Rng rng(19);
    const Mat logits = random_mat(rng, 5, 1, 2.0);
    Mat target(5, 1);
    for (long i = 0; i < 5; ++i) target(i, 0) = (i % 2 == 0) ? 1.0 : 0.0;
    check_gradients(
        [&](const std::vector<Tensor>& in) {
            return nn::bce_with_logits_mean(in[0], target);
        },
        {logits});
    check_gradients(
        [&](const std::vector<Tensor>& in) {
            auto probs = nn::sigmoid(in[0]);
            auto tgt = nn::constant(target);
            auto inter = nn::sum_all(nn::cmul(probs, tgt));
            auto denom = nn::add_scalar(nn::add(nn::sum_all(probs), nn::sum_all(tgt)), 1.0);
            auto num = nn::add_scalar(nn::scale(inter, 2.0), 1.0);
            return nn::add_scalar(nn::scale(nn::cdiv(num, denom), -1.0), 1.0);
        },
        {logits});
}

TEST_CASE("autodiff: bilinear upsample is linear and matches finite differences") {
    Rng rng(23);
    const Mat tokens = random_mat(rng, 4, 3); // 2x2 grid, 3 channels
    check_gradients(
        [](const std::vector<Tensor>& in) {
            auto up = nn::upsample_bilinear(in[0], 2, 2, 2);
            return nn::mean_all(nn::cmul(up, up));
        },
        {tokens});

    // factor-1 upsample is the identity
    auto t = nn::constant(tokens);
    auto same = nn::upsample_bilinear(t, 2, 2, 1);
    CHECK((same->value - tokens).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("autodiff: gradient accumulates across shared subexpressions") {
    Mat x(1, 1);
    x(0, 0) = 3.0;
    auto lx = nn::leaf(x);
    auto y = nn::add(nn::cmul(lx, lx), lx); // x^2 + x, d/dx = 2x + 1 = 7
    nn::backward(nn::sum_all(y));
    CHECK(lx->grad(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("autodiff: constants never receive gradients") {
    Mat x = Mat::Ones(2, 2);
    auto c = nn::constant(x);
    auto l = nn::leaf(x);
    auto out = nn::sum_all(nn::cmul(c, l));
    nn::backward(out);
    CHECK(c->requires_grad == false);
    CHECK(c->grad.size() == 0);
    CHECK(l->grad.sum() == doctest::Approx(4.0));
}

TEST_CASE("rng: deterministic streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    bool within = true;
    for (int i = 0; i < 1000; ++i) within &= std::abs(c.next_trunc_normal(0.02)) <= 0.04;
    CHECK(within);
}
