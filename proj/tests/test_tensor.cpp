#include <doctest.h>

#include "ptlm/ops.hpp"
#include "ptlm/tensor.hpp"

using namespace ptlm;

TEST_CASE("tensor construction and accessors") {
    Tensor a = Tensor::zeros({2, 3});
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.numel() == 6);
    for (float v : a.values()) CHECK(v == 0.0f);

    Tensor b = Tensor::from({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(b.at(0, 0) == 1.0f);
    CHECK(b.at(0, 1) == 2.0f);
    CHECK(b.at(1, 0) == 3.0f);
    CHECK(b.at(1, 1) == 4.0f);

    Tensor s = Tensor::scalar(7.5f);
    CHECK(s.numel() == 1);
    CHECK(s.values()[0] == 7.5f);

    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, -1}), ShapeError);
}

TEST_CASE("grad buffers are lazily allocated and zeroable") {
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    CHECK(a.requires_grad());
    CHECK(!a.has_grad());
    a.grad()[0] = 3.0f;
    CHECK(a.has_grad());
    a.zero_grad();
    CHECK(a.grad()[0] == 0.0f);
}

TEST_CASE("randn is deterministic for a fixed seed") {
    RngState r1(42), r2(42);
    Tensor a = Tensor::randn({3, 4}, r1, 0.02f);
    Tensor b = Tensor::randn({3, 4}, r2, 0.02f);
    REQUIRE(a.numel() == b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);

    RngState r3(43);
    Tensor c = Tensor::randn({3, 4}, r3, 0.02f);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.numel(); ++i) any_diff = any_diff || a.values()[i] != c.values()[i];
    CHECK(any_diff);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor y = scale(&tape, a, 2.0f);
    CHECK_THROWS_AS(backward(tape, y), ContractError);
}

TEST_CASE("backward accumulates additively, a second call doubles grads") {
    Tape tape;
    Tensor a = Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true);
    Tensor y = mul(&tape, a, a);
    Tensor loss = sum_all(&tape, y);

    backward(tape, loss);
    std::vector<float> once = a.grad();
    CHECK(once[0] == doctest::Approx(2.0f));
    CHECK(once[1] == doctest::Approx(-4.0f));
    CHECK(once[2] == doctest::Approx(1.0f));

    backward(tape, loss);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad()[i] == 2.0f * once[i]);
}

TEST_CASE("ops without a tape record nothing and do not require grad") {
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor y = scale(nullptr, a, 3.0f);
    CHECK(!y.requires_grad());

    Tape tape;
    Tensor frozen = Tensor::from({2}, {1.0f, 2.0f}, false);
    Tensor z = scale(&tape, frozen, 3.0f);
    CHECK(!z.requires_grad());
    CHECK(tape.size() == 0);
}

TEST_CASE("entries with no gradient flow are skipped") {
    Tape tape;
    Tensor a = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor used = scale(&tape, a, 2.0f);
    Tensor unused = scale(&tape, a, 100.0f);
    (void)unused;
    Tensor loss = sum_all(&tape, used);
    backward(tape, loss);
    CHECK(a.grad()[0] == doctest::Approx(2.0f));
    CHECK(a.grad()[1] == doctest::Approx(2.0f));
}

TEST_CASE("cast converts between precisions") {
    Tensor a = Tensor::from({2}, {1.5f, -2.25f}, true);
    TensorT<double> d = a.cast<double>();
    CHECK(d.values()[0] == 1.5);
    CHECK(d.values()[1] == -2.25);
    CHECK(d.requires_grad());
}

TEST_CASE("rng utilities behave deterministically") {
    RngState r(7);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    r.shuffle(v);
    RngState r2(7);
    std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
    r2.shuffle(w);
    CHECK(v == w);

    bool moved = false;
    for (std::size_t i = 0; i < v.size(); ++i) moved = moved || v[i] != static_cast<int>(i);
    CHECK(moved);

    for (int i = 0; i < 1000; ++i) {
        uint64_t x = r.below(13);
        CHECK(x < 13);
    }

    CHECK(RngState::derive(1, "a") != RngState::derive(1, "b"));
    CHECK(RngState::derive(1, "a") != RngState::derive(2, "a"));
    CHECK(RngState::derive(5, "data") == RngState::derive(5, "data"));
}
