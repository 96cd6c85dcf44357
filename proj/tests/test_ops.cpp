#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ptlm/grad_check.hpp"
#include "ptlm/ops.hpp"
#include "ptlm/tensor.hpp"

using namespace ptlm;

namespace {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

// Runs `build` once with a tape to collect analytic gradients of every
// parameter, then re-runs it tapelessly inside a finite-difference closure.
// Returns the worst relative error across all parameter coordinates.
double max_fd_error(const std::function<DTensor(DTape*, const std::vector<DTensor>&)>& build,
                    std::vector<DTensor> params, double h = 1e-5) {
    for (auto& p : params) p.set_requires_grad(true);
    DTape tape;
    DTensor loss = build(&tape, params);
    backward(tape, loss);

    std::vector<double> flat, analytic;
    std::vector<std::vector<int>> shapes;
    for (auto& p : params) {
        shapes.push_back(p.shape());
        flat.insert(flat.end(), p.values().begin(), p.values().end());
        const std::vector<double>& g = p.grad();
        analytic.insert(analytic.end(), g.begin(), g.end());
    }
    auto f = [&](const std::vector<double>& v) {
        std::vector<DTensor> ps;
        std::size_t off = 0;
        for (const auto& s : shapes) {
            DTensor t = DTensor::zeros(s);
            std::copy(v.begin() + off, v.begin() + off + t.numel(), t.values().begin());
            off += t.numel();
            ps.push_back(t);
        }
        return build(nullptr, ps).values()[0];
    };
    return finite_diff_check(f, flat, analytic, h).max_rel_error;
}

DTensor randd(std::vector<int> shape, RngState& rng, double sd = 1.0) {
    return DTensor::randn(std::move(shape), rng, sd);
}

}  // namespace

TEST_CASE("matmul matches an independent triple loop") {
    RngState rng(11);
    Tensor a = Tensor::randn({3, 5}, rng, 1.0f);
    Tensor b = Tensor::randn({5, 4}, rng, 1.0f);
    Tensor c = matmul<float>(nullptr, a, b);
    REQUIRE(c.rows() == 3);
    REQUIRE(c.cols() == 4);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int l = 0; l < 5; ++l) acc += static_cast<double>(a.at(i, l)) * b.at(l, j);
            CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("matmul rejects incompatible shapes and names both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul<float>(nullptr, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("matmul backward has the closed-form gradients") {
    // With loss = sum(A*B): dA[i,l] = sum_j B[l,j], dB[l,j] = sum_i A[i,l].
    DTape tape;
    DTensor a = DTensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    DTensor b = DTensor::from({3, 2}, {7, 8, 9, 10, 11, 12}, true);
    DTensor c = matmul(&tape, a, b);
    DTensor loss = sum_all(&tape, c);
    backward(tape, loss);
    CHECK(a.grad()[0] == doctest::Approx(15));  // 7+8
    CHECK(a.grad()[1] == doctest::Approx(19));  // 9+10
    CHECK(a.grad()[2] == doctest::Approx(23));  // 11+12
    CHECK(b.grad()[0] == doctest::Approx(5));   // 1+4
    CHECK(b.grad()[2] == doctest::Approx(7));   // 2+5
    CHECK(b.grad()[4] == doctest::Approx(9));   // 3+6
}

TEST_CASE("transpose, slice_cols and concat_cols round-trip") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = transpose<float>(nullptr, x);
    CHECK(t.rows() == 3);
    CHECK(t.at(0, 1) == 4.0f);
    CHECK(t.at(2, 0) == 3.0f);

    Tensor left = slice_cols<float>(nullptr, x, 0, 2);
    Tensor right = slice_cols<float>(nullptr, x, 2, 1);
    Tensor back = concat_cols<float>(nullptr, {left, right});
    REQUIRE(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.values()[i] == x.values()[i]);

    CHECK_THROWS_AS(slice_cols<float>(nullptr, x, 2, 2), ShapeError);
    CHECK_THROWS_AS(slice_cols<float>(nullptr, x, -1, 1), ShapeError);
}

TEST_CASE("concat_rows stacks and accepts an empty top block") {
    Tensor a = Tensor::from({1, 2}, {1, 2});
    Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor y = concat_rows<float>(nullptr, a, b);
    REQUIRE(y.rows() == 3);
    CHECK(y.at(0, 1) == 2.0f);
    CHECK(y.at(2, 0) == 5.0f);

    Tensor none = Tensor::zeros({0, 2});
    Tensor z = concat_rows<float>(nullptr, none, b);
    REQUIRE(z.rows() == 2);
    CHECK(z.at(0, 0) == 3.0f);

    CHECK_THROWS_AS(concat_rows<float>(nullptr, a, Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("softmax rows sum to one and match direct exponentials") {
    Tensor x = Tensor::from({2, 3}, {0.1f, 0.7f, -0.4f, 2.0f, 2.0f, 2.0f});
    Tensor y = softmax_rows<float>(nullptr, x);
    for (int i = 0; i < 2; ++i) {
        double row = 0;
        for (int j = 0; j < 3; ++j) row += y.at(i, j);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
    double denom = std::exp(0.1) + std::exp(0.7) + std::exp(-0.4);
    CHECK(y.at(0, 0) == doctest::Approx(std::exp(0.1) / denom).epsilon(1e-5));
    CHECK(y.at(0, 1) == doctest::Approx(std::exp(0.7) / denom).epsilon(1e-5));
    CHECK(y.at(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("softmax treats -inf as a hard mask and rejects NaN") {
    const float ninf = -std::numeric_limits<float>::infinity();
    Tensor x = Tensor::from({1, 3}, {1.0f, ninf, 2.0f});
    Tensor y = softmax_rows<float>(nullptr, x);
    CHECK(y.at(0, 1) == 0.0f);
    CHECK(y.at(0, 0) + y.at(0, 2) == doctest::Approx(1.0));

    Tensor all_masked = Tensor::from({1, 2}, {ninf, ninf});
    CHECK_THROWS_AS(softmax_rows<float>(nullptr, all_masked), Error);

    Tensor with_nan = Tensor::from({1, 2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(softmax_rows<float>(nullptr, with_nan), Error);
}

TEST_CASE("additive -1e9 masking gives numerically zero attention weight") {
    Tensor x = Tensor::from({1, 3}, {1.0f, 1.0f - 1e9f, 2.0f});
    Tensor y = softmax_rows<float>(nullptr, x);
    CHECK(y.at(0, 1) == 0.0f);
}

TEST_CASE("layer_norm matches the direct formula") {
    RngState rng(5);
    Tensor x = Tensor::randn({3, 4}, rng, 1.0f);
    Tensor gamma = Tensor::from({4}, {1.5f, 0.5f, 2.0f, 1.0f});
    Tensor beta = Tensor::from({4}, {0.1f, -0.2f, 0.0f, 0.3f});
    const float eps = 1e-5f;
    Tensor y = layer_norm<float>(nullptr, x, gamma, beta, eps);
    for (int i = 0; i < 3; ++i) {
        double mean = 0;
        for (int j = 0; j < 4; ++j) mean += x.at(i, j);
        mean /= 4;
        double var = 0;
        for (int j = 0; j < 4; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= 4;  // population variance, no Bessel correction
        for (int j = 0; j < 4; ++j) {
            double expect = (x.at(i, j) - mean) / std::sqrt(var + eps) * gamma.values()[j] + beta.values()[j];
            CHECK(y.at(i, j) == doctest::Approx(expect).epsilon(1e-4));
        }
    }
    CHECK_THROWS_AS(layer_norm<float>(nullptr, x, gamma, beta, 0.0f), ContractError);
}

TEST_CASE("gelu reproduces frozen reference points") {
    Tensor x = Tensor::from({4}, {0.0f, 1.0f, -1.0f, 3.0f});
    Tensor y = gelu<float>(nullptr, x);
    CHECK(y.values()[0] == 0.0f);
    CHECK(y.values()[1] == doctest::Approx(0.8411920).epsilon(1e-5));
    CHECK(y.values()[2] == doctest::Approx(-0.1588080).epsilon(1e-4));
    CHECK(y.values()[3] == doctest::Approx(2.9963627).epsilon(1e-5));
}

TEST_CASE("embedding_lookup gathers rows and validates ids") {
    Tensor table = Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor y = embedding_lookup<float>(nullptr, table, {2, 0, 2});
    REQUIRE(y.rows() == 3);
    CHECK(y.at(0, 0) == 20.0f);
    CHECK(y.at(1, 1) == 1.0f);
    CHECK(y.at(2, 1) == 21.0f);

    try {
        embedding_lookup<float>(nullptr, table, {3});
        FAIL("expected IndexError");
    } catch (const IndexError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}

TEST_CASE("embedding_lookup accumulates gradient for repeated ids") {
    DTape tape;
    DTensor table = DTensor::from({2, 2}, {1, 2, 3, 4}, true);
    DTensor y = embedding_lookup(&tape, table, {1, 1});
    DTensor loss = sum_all(&tape, y);
    backward(tape, loss);
    CHECK(table.grad()[0] == 0.0);
    CHECK(table.grad()[2] == 2.0);
    CHECK(table.grad()[3] == 2.0);
}

TEST_CASE("cross entropy of a dominant correct logit is nearly zero") {
    DTensor logits = DTensor::from({1, 2}, {10.0, -10.0});
    DTensor loss = cross_entropy_mean<double>(nullptr, logits, {0}, {1});
    // exact value is log(1 + e^-20)
    CHECK(loss.values()[0] == doctest::Approx(2.0611536e-9).epsilon(1e-3));
}

TEST_CASE("cross entropy of uniform logits is log vocab size") {
    DTensor logits = DTensor::full({3, 5}, 0.25);
    DTensor loss = cross_entropy_mean<double>(nullptr, logits, {0, 4, 2}, {1, 1, 1});
    CHECK(loss.values()[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy averages over unmasked rows only") {
    DTensor logits = DTensor::from({2, 2}, {0.0, 100.0, 0.0, 100.0});
    // row 0 target 0 (huge loss), row 1 masked out
    DTensor loss = cross_entropy_mean<double>(nullptr, logits, {0, 0}, {1, 0});
    CHECK(loss.values()[0] == doctest::Approx(100.0).epsilon(1e-6));

    CHECK_THROWS_AS(cross_entropy_mean<double>(nullptr, logits, {0, 0}, {0, 0}), InputError);
    CHECK_THROWS_AS(cross_entropy_mean<double>(nullptr, logits, {0, 5}, {1, 1}), IndexError);
    CHECK_THROWS_AS(cross_entropy_mean<double>(nullptr, logits, {0}, {1, 1}), ShapeError);
}

TEST_CASE("finite differences confirm elementwise op gradients") {
    RngState rng(21);
    DTensor x = randd({2, 3}, rng);
    DTensor w = randd({2, 3}, rng);

    auto build = [](DTape* tape, const std::vector<DTensor>& p) {
        DTensor s = scale(tape, p[0], 1.7);
        DTensor m = mul(tape, s, p[1]);
        DTensor a = add(tape, m, p[0]);
        return sum_all(tape, a);
    };
    CHECK(max_fd_error(build, {x, w}) < 1e-8);
}

TEST_CASE("finite differences confirm matmul and bias gradients") {
    RngState rng(22);
    DTensor a = randd({3, 4}, rng);
    DTensor b = randd({4, 2}, rng);
    DTensor bias = randd({2}, rng);
    DTensor w = randd({3, 2}, rng);

    auto build = [&w](DTape* tape, const std::vector<DTensor>& p) {
        DTensor c = add_bias(tape, matmul(tape, p[0], p[1]), p[2]);
        return sum_all(tape, mul(tape, c, w));
    };
    CHECK(max_fd_error(build, {a, b, bias}) < 1e-7);
}

TEST_CASE("finite differences confirm softmax gradients") {
    RngState rng(23);
    DTensor x = randd({3, 5}, rng);
    DTensor w = randd({3, 5}, rng);

    auto build = [&w](DTape* tape, const std::vector<DTensor>& p) {
        return sum_all(tape, mul(tape, softmax_rows(tape, p[0]), w));
    };
    CHECK(max_fd_error(build, {x}) < 1e-7);
}

TEST_CASE("finite differences confirm layer_norm gradients") {
    RngState rng(24);
    DTensor x = randd({3, 6}, rng);
    DTensor gamma = randd({6}, rng, 0.5);
    DTensor beta = randd({6}, rng, 0.5);
    DTensor w = randd({3, 6}, rng);

    auto build = [&w](DTape* tape, const std::vector<DTensor>& p) {
        DTensor y = layer_norm(tape, p[0], p[1], p[2], 1e-5);
        return sum_all(tape, mul(tape, y, w));
    };
    CHECK(max_fd_error(build, {x, gamma, beta}) < 1e-6);
}

TEST_CASE("finite differences confirm gelu gradients") {
    DTensor x = DTensor::from({5}, {-2.0, -0.5, 0.0, 0.7, 1.9});
    DTensor w = DTensor::from({5}, {1.0, -2.0, 0.5, 1.5, -1.0});

    auto build = [&w](DTape* tape, const std::vector<DTensor>& p) {
        return sum_all(tape, mul(tape, gelu(tape, p[0]), w));
    };
    CHECK(max_fd_error(build, {x}) < 1e-8);
}

TEST_CASE("finite differences confirm embedding and cross entropy gradients") {
    RngState rng(25);
    DTensor table = randd({4, 3}, rng);
    std::vector<int> ids{1, 3, 1};
    std::vector<int> targets{2, 0, 1};
    std::vector<std::uint8_t> mask{1, 1, 0};

    auto build = [&](DTape* tape, const std::vector<DTensor>& p) {
        DTensor e = embedding_lookup(tape, p[0], ids);
        return cross_entropy_mean(tape, e, targets, mask);
    };
    CHECK(max_fd_error(build, {table}) < 1e-7);
}

TEST_CASE("finite differences confirm a causal attention block end to end") {
    RngState rng(26);
    const int s = 4, d = 6;
    DTensor x = randd({s, d}, rng, 0.7);
    DTensor wqkv = randd({d, 3 * d}, rng, 0.4);
    DTensor bqkv = randd({3 * d}, rng, 0.1);
    DTensor w = randd({s, d}, rng);

    // additive causal mask, -1e9 above the diagonal
    DTensor maskt = DTensor::zeros({s, s});
    for (int i = 0; i < s; ++i)
        for (int j = i + 1; j < s; ++j) maskt.at(i, j) = -1e9;

    // bqkv stays a constant: the key-projection bias shifts every score in a
    // row equally, softmax cancels the shift, and its exactly-zero gradient
    // would only measure finite-difference noise against the 1e-8 floor.
    auto build = [&](DTape* tape, const std::vector<DTensor>& p) {
        DTensor qkv = add_bias(tape, matmul(tape, p[0], p[1]), bqkv);
        DTensor q = slice_cols(tape, qkv, 0, d);
        DTensor k = slice_cols(tape, qkv, d, d);
        DTensor v = slice_cols(tape, qkv, 2 * d, d);
        DTensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), 1.0 / std::sqrt(double(d)));
        DTensor probs = softmax_rows(tape, add(tape, scores, maskt));
        DTensor ctx = gelu(tape, matmul(tape, probs, v));
        return sum_all(tape, mul(tape, ctx, w));
    };
    CHECK(max_fd_error(build, {x, wqkv}) < 1e-6);
}

TEST_CASE("gradient flow stops at tensors that do not require it") {
    DTape tape;
    DTensor a = DTensor::from({2}, {1.0, 2.0}, true);
    DTensor frozen = DTensor::from({2}, {3.0, 4.0}, false);
    DTensor y = mul(&tape, a, frozen);
    backward(tape, sum_all(&tape, y));
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == 4.0);
    CHECK(!frozen.has_grad());
}

TEST_CASE("order-4 finite differences agree with order-2 on a smooth function") {
    auto f = [](const std::vector<double>& v) { return std::sin(v[0]) * std::exp(v[1]); };
    std::vector<double> x{0.3, -0.7};
    std::vector<double> analytic{std::cos(0.3) * std::exp(-0.7), std::sin(0.3) * std::exp(-0.7)};
    auto r2 = finite_diff_check(f, x, analytic, 1e-5, 2);
    auto r4 = finite_diff_check(f, x, analytic, 1e-3, 4);
    CHECK(r2.max_rel_error < 1e-8);
    CHECK(r4.max_rel_error < 1e-10);

    CHECK_THROWS_AS(finite_diff_check(f, x, {1.0}, 1e-5), ContractError);
    CHECK_THROWS_AS(finite_diff_check(f, x, analytic, 0.0), ContractError);
    CHECK_THROWS_AS(finite_diff_check(f, x, analytic, 1e-5, 3), ContractError);
}
