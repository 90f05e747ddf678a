#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "amf/tokenizer.hpp"
#include "test_util.hpp"

using namespace amf;
using amf_test::param_grad_check;

namespace {

TabularSchema toy_schema(int n_num, int n_cat, int64_t card = 4) {
    TabularSchema s;
    for (int i = 0; i < n_num; ++i) {
        FeatureSpec f;
        f.name = "num" + std::to_string(i);
        f.kind = FeatureKind::Numerical;
        s.features.push_back(f);
    }
    for (int i = 0; i < n_cat; ++i) {
        FeatureSpec f;
        f.name = "cat" + std::to_string(i);
        f.kind = FeatureKind::Categorical;
        f.cardinality = card;
        s.features.push_back(f);
    }
    return s;
}

}  // namespace

TEST_CASE("single numerical feature at value 0 yields its bias, then CLS") {
    TabularSchema schema = toy_schema(1, 0);
    Rng rng(3);
    auto params = TokenizerParams::init(schema, 8, rng);
    Tensor out = tokenize(Tensor::from_data({1}, {0.0}), schema, params);
    REQUIRE(out.shape() == Shape{2, 8});
    for (int64_t j = 0; j < 8; ++j) {
        CHECK(out.data()[j] == doctest::Approx(params.features[0].bias.data()[j]));
        CHECK(out.data()[8 + j] == doctest::Approx(params.cls.data()[j]));
    }
}

TEST_CASE("categorical feature with zero embedding row yields its bias") {
    TabularSchema schema = toy_schema(0, 1, 3);
    Rng rng(4);
    auto params = TokenizerParams::init(schema, 6, rng);
    auto& table = params.features[0].weights.raw_data();
    for (int64_t j = 0; j < 6; ++j) table[1 * 6 + j] = 0.0;  // E[1] = 0
    Tensor out = tokenize(Tensor::from_data({1}, {1.0}), schema, params);
    for (int64_t j = 0; j < 6; ++j) {
        CHECK(out.data()[j] == doctest::Approx(params.features[0].bias.data()[j]));
    }
}

TEST_CASE("OL3I-scale shape: 423 features at d_tab=64 -> (424, 64)") {
    TabularSchema schema = toy_schema(420, 3, 5);
    Rng rng(5);
    auto params = TokenizerParams::init(schema, 64, rng);
    std::vector<double> row(423, 0.5);
    row[420] = 0;
    row[421] = 4;
    row[422] = 2;
    Tensor out = tokenize(Tensor::from_data({423}, row), schema, params);
    CHECK(out.shape() == Shape{424, 64});
}

TEST_CASE("tokenize is deterministic and batch agrees with single-row") {
    TabularSchema schema = toy_schema(3, 1, 4);
    Rng rng(6);
    auto params = TokenizerParams::init(schema, 8, rng);
    std::vector<double> row{0.3, -1.2, 0.8, 2.0};
    Tensor a = tokenize(Tensor::from_data({4}, row), schema, params);
    Tensor b = tokenize(Tensor::from_data({4}, row), schema, params);
    CHECK(a.data() == b.data());

    std::vector<double> row2{1.0, 0.0, -0.5, 1.0};
    Tensor batch = tokenize_batch({row, row2}, schema, params);
    REQUIRE(batch.shape() == Shape{2, 5, 8});
    Tensor single2 = tokenize(Tensor::from_data({4}, row2), schema, params);
    for (int64_t i = 0; i < 5 * 8; ++i) {
        CHECK(batch.data()[i] == doctest::Approx(a.data()[i]));
        CHECK(batch.data()[5 * 8 + i] == doctest::Approx(single2.data()[i]));
    }
}

TEST_CASE("permuting two schema features permutes the matching tokens only") {
    TabularSchema schema = toy_schema(3, 0);
    Rng rng(7);
    auto params = TokenizerParams::init(schema, 4, rng);
    std::vector<double> row{0.5, -0.7, 1.3};
    Tensor base = tokenize(Tensor::from_data({3}, row), schema, params);

    TabularSchema swapped = schema;
    std::swap(swapped.features[0], swapped.features[2]);
    TokenizerParams swapped_params = params;
    std::swap(swapped_params.features[0], swapped_params.features[2]);
    std::vector<double> swapped_row{row[2], row[1], row[0]};
    Tensor perm = tokenize(Tensor::from_data({3}, swapped_row), swapped, swapped_params);

    auto token = [&](const Tensor& t, int64_t i) {
        return std::vector<double>(t.data().begin() + i * 4, t.data().begin() + (i + 1) * 4);
    };
    CHECK(token(perm, 0) == token(base, 2));
    CHECK(token(perm, 1) == token(base, 1));
    CHECK(token(perm, 2) == token(base, 0));
    CHECK(token(perm, 3) == token(base, 3));  // CLS unmoved
}

TEST_CASE("gradients reach exactly the parameter groups used by the row") {
    TabularSchema schema = toy_schema(2, 1, 4);
    Rng rng(8);
    auto params = TokenizerParams::init(schema, 4, rng);
    std::vector<double> row{0.9, -0.4, 2.0};
    Tensor tokens = tokenize(Tensor::from_data({3}, row), schema, params);
    // loss touches only token 0 (feature 0)
    sum_all(slice_last(reshape(tokens, {4 * 4}), 0, 4)).backward();
    CHECK(params.features[0].weights.has_grad());
    CHECK(params.features[0].bias.has_grad());
    CHECK_FALSE(params.features[1].weights.has_grad());
    CHECK_FALSE(params.features[2].weights.has_grad());
    CHECK_FALSE(params.cls.has_grad());

    // categorical grad lands only in the looked-up row
    for (auto& [n, t] : params.params("").items) t.zero_grad();
    Tensor tokens2 = tokenize(Tensor::from_data({3}, row), schema, params);
    sum_all(tokens2).backward();
    const auto& tg = params.features[2].weights.grad();
    for (int64_t r = 0; r < 4; ++r) {
        for (int64_t j = 0; j < 4; ++j) {
            if (r == 2) CHECK(tg[r * 4 + j] != 0.0);
            else CHECK(tg[r * 4 + j] == 0.0);
        }
    }
}

TEST_CASE("tokenize gradient passes central differences") {
    TabularSchema schema = toy_schema(2, 1, 3);
    Rng rng(9);
    auto params = TokenizerParams::init(schema, 5, rng);
    std::vector<double> row{0.6, -1.1, 1.0};
    ParamList pl = params.params("tok.");
    double err = param_grad_check(
        [&]() {
            Tensor t = tokenize(Tensor::from_data({3}, row), schema, params);
            return sum_all(mul(t, t));
        },
        pl);
    CHECK(err < 1e-6);
}

TEST_CASE("tokenize input errors") {
    TabularSchema schema = toy_schema(1, 1, 3);
    Rng rng(10);
    auto params = TokenizerParams::init(schema, 4, rng);
    CHECK_THROWS_AS(tokenize(Tensor::from_data({2}, {std::nan(""), 0.0}), schema, params), DataError);
    try {
        tokenize(Tensor::from_data({2}, {0.1, 7.0}), schema, params);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("cat0") != std::string::npos);
    }
    CHECK_THROWS_AS(tokenize(Tensor::from_data({2}, {0.1, 1.5}), schema, params), DataError);
    CHECK_THROWS_AS(tokenize(Tensor::from_data({1}, {0.1}), schema, params), DataError);
}

TEST_CASE("corruption: rate 0 identity, rate 1 column-typed replacement") {
    TrainPool pool;
    pool.values = {{1, 2, 3}, {10, 20, 30}, {100, 200, 300}};
    std::vector<double> row{-5, -6, -7};
    Rng rng(11);
    CHECK(corrupt_tabular(row, 0.0, rng, pool) == row);

    auto full = corrupt_tabular(row, 1.0, rng, pool);
    for (size_t i = 0; i < 3; ++i) {
        bool found = false;
        for (double v : pool.values[i]) found = found || (v == full[i]);
        CHECK(found);
    }

    CHECK_THROWS_AS(corrupt_tabular(row, 1.5, rng, pool), ConfigError);
    TrainPool empty_pool;
    empty_pool.values = {{1}, {}, {3}};
    CHECK_THROWS_AS(corrupt_tabular(row, 0.5, rng, empty_pool), DataError);
}

TEST_CASE("corruption rate concentrates at 0.3 over 10000 rows of 423 features") {
    const int n = 423, rows = 10000;
    TrainPool pool;
    pool.values.assign(n, {});
    for (int i = 0; i < n; ++i) {
        for (int v = 0; v < 100; ++v) pool.values[static_cast<size_t>(i)].push_back(v);
    }
    std::vector<double> row(n, -1.0);  // never equal to any pool value
    Rng rng(12);
    int64_t changed = 0;
    for (int r = 0; r < rows; ++r) {
        auto out = corrupt_tabular(row, 0.3, rng, pool);
        for (int i = 0; i < n; ++i) {
            if (out[static_cast<size_t>(i)] != row[static_cast<size_t>(i)]) ++changed;
        }
    }
    double frac = static_cast<double>(changed) / (static_cast<double>(rows) * n);
    CHECK(frac > 0.29);
    CHECK(frac < 0.31);
}
