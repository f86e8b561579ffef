#include <doctest.h>

#include <cmath>

#include "omnifuse/errors.hpp"
#include "omnifuse/tensor.hpp"
#include "oracles.hpp"

using namespace omnifuse;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor y = matmul(eye, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {0, 1, 1, 0});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul gradient of sum equals ones*b^T and matches finite differences") {
    Rng rng(11);
    Tensor a = Tensor::randn({5, 7}, rng, 0.0, 1.0, true);
    Tensor b = Tensor::randn({7, 2}, rng, 0.0, 1.0, true);
    auto loss_fn = [&]() { return sum(matmul(a, b)).item(); };
    Tensor loss = sum(matmul(a, b));
    backward(loss);

    // grad_a[i][p] = sum_j b[p][j]
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t p = 0; p < 7; ++p) {
            double expect = b.data()[p * 2] + b.data()[p * 2 + 1];
            CHECK(a.grad()[i * 7 + p] == doctest::Approx(expect).epsilon(1e-12));
        }
    CHECK(oracles::max_grad_err(loss_fn, a, a.grad()) < 1e-4);
    CHECK(oracles::max_grad_err(loss_fn, b, b.grad()) < 1e-4);
}

TEST_CASE("gelu values against normal-CDF oracle") {
    Tensor x = Tensor::from_data({3}, {0.0, 1.0, -10.0});
    Tensor y = gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(1.0 * oracles::normal_cdf(1.0)).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(0.8413447).epsilon(1e-6));
    CHECK(std::abs(y.data()[2]) < 1e-9); // tail probability
}

TEST_CASE("gelu gradient vs finite differences") {
    Rng rng(3);
    Tensor x = Tensor::randn({6}, rng, 0.0, 1.0, true);
    auto f = [&]() { return sum(gelu(x)).item(); };
    Tensor loss = sum(gelu(x));
    backward(loss);
    CHECK(oracles::max_grad_err(f, x, x.grad()) < 1e-4);
}

TEST_CASE("layer_norm constant vector maps to bias") {
    Tensor x = Tensor::full({1, 5}, 3.25);
    Tensor gain = Tensor::full({5}, 1.0);
    Tensor bias = Tensor::zeros({5});
    Tensor y = layer_norm(x, gain, bias);
    for (double v : y.data()) CHECK(std::abs(v) < 1e-10);
}

TEST_CASE("layer_norm output statistics") {
    Rng rng(5);
    Tensor x = Tensor::randn({4, 16}, rng);
    Tensor gain = Tensor::full({16}, 1.7);
    Tensor bias = Tensor::full({16}, -0.4);
    Tensor y = layer_norm(x, gain, bias);
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mean += y.data()[r * 16 + j];
        mean /= 16.0;
        CHECK(std::abs(mean - (-0.4)) < 1e-10);
        double var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
            double c = y.data()[r * 16 + j] - mean;
            var += c * c;
        }
        var /= 16.0;
        CHECK(std::sqrt(var) == doctest::Approx(1.7).epsilon(1e-4)); // eps shifts it slightly
    }
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(9);
    Tensor x = Tensor::randn({3, 8}, rng, 0.0, 1.0, true);
    Tensor gain = Tensor::randn({8}, rng, 1.0, 0.2, true);
    Tensor bias = Tensor::randn({8}, rng, 0.0, 0.2, true);
    Rng proj_rng(100);
    Tensor proj = Tensor::randn({3, 8}, proj_rng); // non-uniform weighting of outputs
    auto f = [&]() { return sum(mul(layer_norm(x, gain, bias), proj)).item(); };
    Tensor loss = sum(mul(layer_norm(x, gain, bias), proj));
    backward(loss);
    CHECK(oracles::max_grad_err(f, x, x.grad()) < 1e-4);
    CHECK(oracles::max_grad_err(f, gain, gain.grad()) < 1e-4);
    CHECK(oracles::max_grad_err(f, bias, bias.grad()) < 1e-4);
}

TEST_CASE("layer_norm shape error on mismatched affine params") {
    Tensor x = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("softmax uniform input gives uniform output") {
    Tensor x = Tensor::full({2, 5}, 0.77);
    Tensor y = softmax(x, -1);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("softmax shift invariance is bit exact") {
    Rng rng(13);
    Tensor x = Tensor::randn({3, 7}, rng);
    // quantize to multiples of 1/1024 so x + 5.0 is exact and the
    // max-subtraction sees bit-identical differences
    for (auto& v : x.mutable_data()) v = std::round(v * 1024.0) / 1024.0;
    std::vector<double> shifted = x.data();
    for (auto& v : shifted) v += 5.0;
    Tensor y1 = softmax(x, 1);
    Tensor y2 = softmax(Tensor::from_data({3, 7}, shifted), 1);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("softmax rows sum to one within 1e-12 and entries are positive") {
    Rng rng(17);
    Tensor x = Tensor::randn({6, 9}, rng, 0.0, 3.0);
    Tensor y = softmax(x, 1);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            CHECK(y.data()[r * 9 + j] > 0.0);
            s += y.data()[r * 9 + j];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax over a middle axis") {
    Rng rng(19);
    Tensor x = Tensor::randn({2, 4, 3}, rng);
    Tensor y = softmax(x, 1);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t in = 0; in < 3; ++in) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += y.data()[o * 12 + j * 3 + in];
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(23);
    Tensor x = Tensor::randn({4, 5}, rng, 0.0, 1.0, true);
    Rng proj_rng(42);
    Tensor proj = Tensor::randn({4, 5}, proj_rng);
    auto f = [&]() { return sum(mul(softmax(x, 1), proj)).item(); };
    Tensor loss = sum(mul(softmax(x, 1), proj));
    backward(loss);
    CHECK(oracles::max_grad_err(f, x, x.grad()) < 1e-4);
}

TEST_CASE("causal softmax zeroes future positions") {
    Rng rng(29);
    Tensor x = Tensor::randn({4, 4}, rng);
    Tensor y = softmax_rows(x, true);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            if (j > i)
                CHECK(y.data()[i * 4 + j] == 0.0);
            else
                CHECK(y.data()[i * 4 + j] > 0.0);
        }
}

TEST_CASE("multi_head_attention output length follows the query") {
    Rng rng(31);
    const std::size_t d = 16;
    auto w = AttentionWeights::init(d, rng, false);
    Tensor q = Tensor::randn({576, d}, rng);
    Tensor k = Tensor::randn({832, d}, rng);
    Tensor v = Tensor::randn({832, d}, rng);
    Tensor out = multi_head_attention(q, k, v, w, 4);
    CHECK(out.dim(0) == 576);
    CHECK(out.dim(1) == d);
}

TEST_CASE("multi_head_attention with one key returns the projected value row") {
    Rng rng(37);
    const std::size_t d = 8;
    auto w = AttentionWeights::init(d, rng, false);
    Tensor q = Tensor::randn({1, d}, rng);
    Tensor v = Tensor::randn({1, d}, rng);
    Tensor k = Tensor::randn({1, d}, rng);
    Tensor out = multi_head_attention(q, k, v, w, 2);
    // softmax over a single key puts all weight on v's projection
    Tensor expect = add_row_bias(matmul(add_row_bias(matmul(v, w.wv), w.bv), w.wo), w.bo);
    for (std::size_t i = 0; i < d; ++i)
        CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("multi_head_attention rejects width not divisible by heads") {
    Rng rng(41);
    auto w = AttentionWeights::init(6, rng, false);
    Tensor q = Tensor::randn({2, 6}, rng);
    CHECK_THROWS_AS(multi_head_attention(q, q, q, w, 4), ConfigError);
}

TEST_CASE("multi_head_attention gradient check on a 4x8 toy") {
    Rng rng(43);
    const std::size_t d = 8;
    auto w = AttentionWeights::init(d, rng, true);
    Tensor q = Tensor::randn({4, d}, rng, 0.0, 1.0, true);
    Tensor k = Tensor::randn({4, d}, rng, 0.0, 1.0, true);
    Tensor v = Tensor::randn({4, d}, rng, 0.0, 1.0, true);
    Rng proj_rng(77);
    Tensor proj = Tensor::randn({4, d}, proj_rng);
    auto f = [&]() { return sum(mul(multi_head_attention(q, k, v, w, 2), proj)).item(); };
    Tensor loss = sum(mul(multi_head_attention(q, k, v, w, 2), proj));
    backward(loss);
    for (const Tensor& t : {q, k, v, w.wq, w.wk, w.wv, w.wo, w.bq, w.bo}) {
        CHECK(oracles::max_grad_err(f, t, t.grad()) < 1e-4);
    }
}

TEST_CASE("backward on x squared") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of sum(A*B) gives ones*B^T") {
    Rng rng(47);
    Tensor a = Tensor::randn({3, 4}, rng, 0.0, 1.0, true);
    Tensor b = Tensor::randn({4, 2}, rng);
    backward(sum(matmul(a, b)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) {
            double expect = b.data()[p * 2] + b.data()[p * 2 + 1];
            CHECK(a.grad()[i * 4 + p] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(gelu(x)), ContractError);
}

TEST_CASE("backward visits shared subexpressions once (correct accumulation)") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = mul(x, x);        // 4
    Tensor loss = add(y, y);     // 2x^2 -> d/dx = 4x = 8
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("embedding lookup scatter-adds repeated ids") {
    Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor out = embedding_lookup(table, {1, 1, 2});
    CHECK(out.data() == std::vector<double>{3, 4, 3, 4, 5, 6});
    backward(sum(out));
    CHECK(table.grad() == std::vector<double>{0, 0, 2, 2, 1, 1});
}

TEST_CASE("cross entropy of uniform logits is ln(vocab)") {
    Tensor logits = Tensor::zeros({3, 8});
    Tensor loss = cross_entropy(logits, {0, 3, 7}, {true, true, true});
    CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy ignores masked positions") {
    Rng rng(53);
    Tensor logits = Tensor::randn({4, 5}, rng);
    std::vector<std::size_t> targets{1, 2, 3, 4};
    std::vector<bool> mask{true, false, true, false};
    double base = cross_entropy(logits, targets, mask).item();

    std::vector<double> perturbed = logits.data();
    perturbed[1 * 5 + 2] += 100.0; // masked row
    perturbed[3 * 5 + 0] -= 50.0;  // masked row
    double same = cross_entropy(Tensor::from_data({4, 5}, perturbed), targets, mask).item();
    CHECK(base == same);

    CHECK_THROWS_AS(cross_entropy(logits, targets, {false, false, false, false}), ContractError);
}

TEST_CASE("cross entropy gradient vs finite differences") {
    Rng rng(59);
    Tensor logits = Tensor::randn({4, 6}, rng, 0.0, 1.0, true);
    std::vector<std::size_t> targets{5, 0, 2, 1};
    std::vector<bool> mask{true, true, false, true};
    auto f = [&]() { return cross_entropy(logits, targets, mask).item(); };
    backward(cross_entropy(logits, targets, mask));
    CHECK(oracles::max_grad_err(f, logits, logits.grad()) < 1e-4);
}

TEST_CASE("slice and concat round trips") {
    Rng rng(61);
    Tensor x = Tensor::randn({5, 6}, rng, 0.0, 1.0, true);
    Tensor back = concat_rows({slice_rows(x, 0, 2), slice_rows(x, 2, 5)});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
    Tensor back2 = concat_cols({slice_cols(x, 0, 4), slice_cols(x, 4, 6)});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back2.data()[i] == x.data()[i]);

    backward(sum(mul(back, back)));
    CHECK(x.grad().size() == x.size());
}

TEST_CASE("pad_rows appends zeros and routes gradient to the original rows") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    Tensor y = pad_rows(x, 2);
    CHECK(y.dim(0) == 4);
    CHECK(y.data()[4 + 0] == 0.0);
    CHECK(y.data()[7] == 0.0);
    backward(sum(y));
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("deterministic randn given the same seed") {
    Rng r1(123), r2(123);
    Tensor a = Tensor::randn({17}, r1);
    Tensor b = Tensor::randn({17}, r2);
    for (std::size_t i = 0; i < 17; ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("finite outputs on documented input ranges") {
    Rng rng(67);
    Tensor x = Tensor::randn({20}, rng, 0.0, 2.0);
    for (double v : gelu(x).data()) CHECK(std::isfinite(v));
    Tensor mat = Tensor::randn({8, 8}, rng, 0.0, 2.0);
    for (double v : softmax(mat, 1).data()) CHECK(std::isfinite(v));
    Tensor g = Tensor::full({8}, 1.0), bz = Tensor::zeros({8});
    for (double v : layer_norm(mat, g, bz).data()) CHECK(std::isfinite(v));
}

TEST_SUITE_END();
