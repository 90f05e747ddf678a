#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "amf/rng.hpp"
#include "amf/tensor.hpp"

using namespace amf;

namespace {

Tensor randt(Rng& rng, Shape shape, double lo, double hi, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("forward op examples") {
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 3.0});
    Tensor y = abs(x);
    CHECK(y.data() == std::vector<double>{1.0, 2.0, 3.0});

    Tensor s = softmax_last(Tensor::from_data({2}, {0.0, 0.0}));
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor v = Tensor::from_data({3}, {0.3, -1.7, 2.2});
    Tensor mv = matmul(eye, v);
    REQUIRE(mv.shape() == Shape{3});
    for (int i = 0; i < 3; ++i) CHECK(mv.data()[i] == doctest::Approx(v.data()[i]));
}

TEST_CASE("backward examples") {
    Tensor x = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4}, true);
    sum_all(x).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

    Tensor y = Tensor::from_data({2}, {1.0, 2.0}, true);
    sum_all(mul(y, y)).backward();
    CHECK(y.grad()[0] == doctest::Approx(2.0));
    CHECK(y.grad()[1] == doctest::Approx(4.0));

    // abs at exactly 0 uses the subgradient midpoint
    Tensor z = Tensor::from_data({}, {0.0}, true);
    abs(z).backward();
    CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("backward accumulates across calls and across multiple uses") {
    Tensor x = Tensor::from_data({2}, {1.5, -0.5}, true);
    Tensor loss = sum_all(x);
    loss.backward();
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));

    // y = sum(x*x + 3x): both uses of x must contribute (2x + 3)
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    sum_all(add(mul(w, w), affine(w, 3.0, 0.0))).backward();
    CHECK(w.grad()[0] == doctest::Approx(5.0));
    CHECK(w.grad()[1] == doctest::Approx(7.0));

    double err = grad_check(
        [](const Tensor& t) { return sum_all(add(mul(t, t), affine(t, 3.0, 0.0))); },
        Tensor::from_data({3}, {0.7, -1.2, 2.1}));
    CHECK(err < 1e-6);
}

TEST_CASE("non-scalar backward and shape errors are structured") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(x.backward(), ShapeError);

    Tensor a = Tensor::from_data({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = Tensor::from_data({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2, 3)") != std::string::npos);
        CHECK(msg.find("(2, 2)") != std::string::npos);
    }
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("(2, 3)") != std::string::npos);
    }
}

TEST_CASE("domain errors") {
    CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::from_data({1}, {-3.0})), DomainError);
    CHECK_THROWS_AS(div(Tensor::from_data({2}, {1.0, 1.0}), Tensor::from_data({2}, {2.0, 0.0})),
                    DomainError);
    CHECK_THROWS_AS(div_scalar(Tensor::from_data({1}, {1.0}), 0.0), DomainError);
}

TEST_CASE("grad_check reference cases") {
    Rng rng(17);
    Tensor x = randt(rng, {4}, 0.5, 1.5);
    double e1 = grad_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x, 1e-5);
    CHECK(e1 < 1e-6);

    // softmax cross-entropy against class 0 on random 3-logit input
    Tensor logits = randt(rng, {3}, -1.0, 1.0);
    double e2 = grad_check(
        [](const Tensor& t) {
            Tensor p = softmax_last(t);
            Tensor onehot = Tensor::from_data({3}, {1.0, 0.0, 0.0});
            return neg(sum_all(mul(log(p), onehot)));
        },
        logits, 1e-5);
    CHECK(e2 < 1e-5);

    double e3 = grad_check([](const Tensor& t) { return sum_all(t); }, randt(rng, {5}, -2, 2), 1e-5);
    CHECK(e3 < 1e-10);
}

TEST_CASE("grad_check over the op catalogue at 10 random points") {
    Rng rng(99);
    auto check10 = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Shape shape,
                       double lo, double hi) {
        for (int rep = 0; rep < 10; ++rep) {
            double err = grad_check(f, randt(rng, shape, lo, hi), 1e-5);
            INFO(name << " rep " << rep);
            CHECK(err < 1e-4);
        }
    };

    Tensor w = randt(rng, {4, 3}, -1, 1);
    check10("matmul", [&](const Tensor& t) { return sum_all(matmul(reshape(t, {2, 4}), w)); },
            {8}, -1, 1);
    Tensor w_nt = randt(rng, {3, 4}, -1, 1);
    check10("matmul_nt", [&](const Tensor& t) {
        Tensor y = matmul_nt(reshape(t, {2, 4}), w_nt);
        return sum_all(mul(y, y));
    }, {8}, -1, 1);
    Tensor other = randt(rng, {6}, -1, 1);
    check10("add", [&](const Tensor& t) { return sum_all(mul(add(t, other), add(t, other))); }, {6}, -1, 1);
    check10("sub", [&](const Tensor& t) { return sum_all(mul(sub(t, other), sub(t, other))); }, {6}, -1, 1);
    check10("mul", [&](const Tensor& t) { return sum_all(mul(t, other)); }, {6}, -1, 1);
    Tensor denom = randt(rng, {6}, 0.5, 2.0);
    check10("div", [&](const Tensor& t) { return sum_all(div(t, denom)); }, {6}, -1, 1);
    check10("div_by", [&](const Tensor& t) { return sum_all(div(other, t)); }, {6}, 0.5, 2.0);
    check10("neg", [](const Tensor& t) { return sum_all(mul(neg(t), neg(t))); }, {6}, -1, 1);
    check10("abs", [](const Tensor& t) { return sum_all(abs(t)); }, {6}, 0.3, 1.5);
    check10("exp", [](const Tensor& t) { return sum_all(exp(t)); }, {6}, -1, 1);
    check10("log", [](const Tensor& t) { return sum_all(log(t)); }, {6}, 0.5, 2.0);
    check10("tanh", [](const Tensor& t) { return sum_all(tanh(t)); }, {6}, -2, 2);
    check10("sigmoid", [](const Tensor& t) { return sum_all(sigmoid(t)); }, {6}, -2, 2);
    check10("silu", [](const Tensor& t) { return sum_all(silu(t)); }, {6}, -2, 2);
    check10("softplus", [](const Tensor& t) { return sum_all(softplus(t)); }, {6}, -2, 2);
    check10("mean_all", [](const Tensor& t) { return mean_all(mul(t, t)); }, {6}, -1, 1);
    check10("sum_axis", [](const Tensor& t) {
        return sum_all(mul(sum_axis(reshape(t, {2, 3}), 0), sum_axis(reshape(t, {2, 3}), 0)));
    }, {6}, -1, 1);
    check10("mean_axis", [](const Tensor& t) {
        return sum_all(mul(mean_axis(reshape(t, {2, 3}), 1), mean_axis(reshape(t, {2, 3}), 1)));
    }, {6}, -1, 1);
    Tensor cat_rhs = randt(rng, {2, 2}, -1, 1);
    check10("concat_last", [&](const Tensor& t) {
        Tensor c = concat_last(reshape(t, {2, 3}), cat_rhs);
        return sum_all(mul(c, c));
    }, {6}, -1, 1);
    check10("slice_last", [](const Tensor& t) {
        Tensor s = slice_last(reshape(t, {2, 3}), 1, 3);
        return sum_all(mul(s, s));
    }, {6}, -1, 1);
    check10("softmax_last", [](const Tensor& t) {
        Tensor s = softmax_last(reshape(t, {2, 3}));
        return sum_all(mul(s, s));
    }, {6}, -1, 1);

    Tensor gamma = randt(rng, {3}, 0.5, 1.5);
    Tensor beta = randt(rng, {3}, -0.5, 0.5);
    check10("layer_norm_x", [&](const Tensor& t) {
        Tensor y = layer_norm_last(reshape(t, {2, 3}), gamma, beta);
        return sum_all(mul(y, y));
    }, {6}, -1, 1);
    Tensor ln_in = randt(rng, {2, 3}, -1, 1);
    check10("layer_norm_gamma", [&](const Tensor& t) {
        Tensor y = layer_norm_last(ln_in, t, beta);
        return sum_all(mul(y, y));
    }, {3}, 0.5, 1.5);

    Tensor conv_w = randt(rng, {3, 2}, -1, 1);
    Tensor conv_b = randt(rng, {2}, -0.3, 0.3);
    check10("conv1d_x", [&](const Tensor& t) {
        Tensor y = conv1d_depthwise(reshape(t, {5, 2}), conv_w, conv_b);
        return sum_all(mul(y, y));
    }, {10}, -1, 1);
    Tensor conv_x = randt(rng, {5, 2}, -1, 1);
    check10("conv1d_w", [&](const Tensor& t) {
        Tensor y = conv1d_depthwise(conv_x, reshape(t, {3, 2}), conv_b);
        return sum_all(mul(y, y));
    }, {6}, -1, 1);

    Tensor c2w = randt(rng, {3, 3, 2, 2}, -0.5, 0.5);
    Tensor c2b = randt(rng, {2}, -0.2, 0.2);
    check10("conv2d_x", [&](const Tensor& t) {
        Tensor y = conv2d(reshape(t, {1, 4, 4, 2}), c2w, c2b);
        return sum_all(mul(y, y));
    }, {32}, -1, 1);
    Tensor c2x = randt(rng, {1, 4, 4, 2}, -1, 1);
    check10("conv2d_w", [&](const Tensor& t) {
        Tensor y = conv2d(c2x, reshape(t, {3, 3, 2, 2}), c2b);
        return sum_all(mul(y, y));
    }, {36}, -0.5, 0.5);

    check10("mean_pool2x2", [](const Tensor& t) {
        Tensor y = mean_pool2x2(reshape(t, {1, 4, 4, 1}));
        return sum_all(mul(y, y));
    }, {16}, -1, 1);
    check10("max_pool2x2", [](const Tensor& t) {
        Tensor y = max_pool2x2(reshape(t, {1, 4, 4, 1}));
        return sum_all(mul(y, y));
    }, {16}, -1, 1);

    std::vector<int64_t> idx{2, 0, 1, 2};
    check10("embedding", [&](const Tensor& t) {
        Tensor y = embedding_rows(reshape(t, {3, 2}), idx);
        return sum_all(mul(y, y));
    }, {6}, -1, 1);

    Tensor m01 = Tensor::from_data({6}, {1, 0, 1, 1, 0, 1});
    check10("mask", [&](const Tensor& t) { return sum_all(mul(mask(t, m01), mask(t, m01))); },
            {6}, -1, 1);
    check10("l2_normalize", [](const Tensor& t) {
        Tensor y = l2_normalize_last(reshape(t, {2, 3}));
        return sum_all(mul(y, y));
    }, {6}, 0.2, 1.5);
    Tensor cos_rhs = randt(rng, {2, 3}, 0.2, 1.5);
    check10("cosine_similarity", [&](const Tensor& t) {
        return sum_all(cosine_similarity(reshape(t, {2, 3}), cos_rhs));
    }, {6}, 0.2, 1.5);
    check10("stack_seq", [](const Tensor& t) {
        Tensor a = slice_last(reshape(t, {2, 4}), 0, 2);
        Tensor b = slice_last(reshape(t, {2, 4}), 2, 4);
        Tensor y = stack_seq({a, b});
        return sum_all(mul(y, y));
    }, {8}, -1, 1);
    check10("seq_select", [](const Tensor& t) {
        Tensor y = seq_select(reshape(t, {1, 3, 2}), 1);
        return sum_all(mul(y, y));
    }, {6}, -1, 1);
}

TEST_CASE("broadcast over leading batch dimension only") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3}, {10, 20, 30});
    Tensor y = add(a, b);
    CHECK(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

    // gradient of the broadcast operand sums over the batch
    Tensor bg = Tensor::from_data({3}, {10, 20, 30}, true);
    sum_all(mul(a, bg)).backward();
    CHECK(bg.grad()[0] == doctest::Approx(5.0));
    CHECK(bg.grad()[1] == doctest::Approx(7.0));
    CHECK(bg.grad()[2] == doctest::Approx(9.0));

    // trailing mismatch is an error, not a silent broadcast
    CHECK_THROWS_AS(add(Tensor::from_data({3, 2}, std::vector<double>(6, 1.0)),
                        Tensor::from_data({3}, std::vector<double>(3, 1.0))),
                    ShapeError);
}

TEST_CASE("concat then slice along last axis is the identity") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        int64_t la = 1 + rng.randint(5), lb = 1 + rng.randint(5), rows = 1 + rng.randint(4);
        Tensor a = randt(rng, {rows, la}, -3, 3);
        Tensor b = randt(rng, {rows, lb}, -3, 3);
        Tensor c = concat_last(a, b);
        Tensor ra = slice_last(c, 0, la);
        Tensor rb = slice_last(c, la, la + lb);
        CHECK(ra.data() == a.data());
        CHECK(rb.data() == b.data());
    }
}

TEST_CASE("masking with m then 1-m yields zero") {
    Rng rng(11);
    Tensor x = randt(rng, {8}, -5, 5);
    std::vector<double> mv(8), cv(8);
    for (int i = 0; i < 8; ++i) {
        mv[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        cv[i] = 1.0 - mv[i];
    }
    Tensor m = Tensor::from_data({8}, mv);
    Tensor c = Tensor::from_data({8}, cv);
    Tensor y = mask(mask(x, m), c);
    for (double v : y.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(mask(x, Tensor::from_data({8}, {0.5, 0, 0, 0, 0, 0, 0, 0})), DomainError);
}

TEST_CASE("scalar tensors and rank-0 reductions") {
    Tensor s = Tensor::scalar(2.5);
    CHECK(s.rank() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == doctest::Approx(2.5));
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor m = mean_all(x);
    CHECK(m.item() == doctest::Approx(2.0));
    m.backward();
    CHECK(x.grad()[0] == doctest::Approx(1.0 / 3));
}
