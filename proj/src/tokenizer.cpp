#include "amf/tokenizer.hpp"

#include <cmath>

namespace amf {

int64_t FeatureSpec::mode() const {
    if (frequency.empty()) throw DataError("mode: feature '" + name + "' has no frequency table");
    int64_t best = 0;
    for (size_t i = 1; i < frequency.size(); ++i) {
        if (frequency[i] > frequency[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
    }
    return best;
}

void TabularSchema::validate() const {
    if (features.empty()) throw ConfigError("TabularSchema: no features");
    for (const auto& f : features) {
        if (f.kind == FeatureKind::Categorical && f.cardinality < 1) {
            throw ConfigError("TabularSchema: feature '" + f.name + "' has cardinality < 1");
        }
        if (f.kind == FeatureKind::Numerical && !(f.stddev > 0.0)) {
            throw ConfigError("TabularSchema: feature '" + f.name + "' has non-positive std");
        }
    }
}

TokenizerParams TokenizerParams::init(const TabularSchema& schema, int64_t d_tab, Rng& rng,
                                      bool trainable) {
    schema.validate();
    if (d_tab < 1) throw ConfigError("TokenizerParams: d_tab must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_tab));
    auto uniform_tensor = [&](Shape shape) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (auto& x : v) x = rng.uniform(-bound, bound);
        return Tensor::from_data(std::move(shape), std::move(v), trainable);
    };
    TokenizerParams p;
    p.d_tab = d_tab;
    for (const auto& f : schema.features) {
        FeatureParams fp;
        if (f.kind == FeatureKind::Numerical) {
            fp.weights = uniform_tensor({d_tab});
        } else {
            fp.weights = uniform_tensor({f.cardinality, d_tab});
        }
        fp.bias = uniform_tensor({d_tab});
        p.features.push_back(std::move(fp));
    }
    p.cls = uniform_tensor({d_tab});
    return p;
}

ParamList TokenizerParams::params(const std::string& prefix) const {
    ParamList out;
    for (size_t i = 0; i < features.size(); ++i) {
        out.add(prefix + "f" + std::to_string(i) + ".weights", features[i].weights);
        out.add(prefix + "f" + std::to_string(i) + ".bias", features[i].bias);
    }
    out.add(prefix + "cls", cls);
    return out;
}

namespace {

int64_t categorical_code(double v, const FeatureSpec& f) {
    if (std::isnan(v)) throw DataError("tokenize: NaN value for categorical feature '" + f.name + "'");
    double r = std::round(v);
    if (r != v) {
        throw DataError("tokenize: non-integer code " + std::to_string(v) + " for categorical feature '" +
                        f.name + "'");
    }
    int64_t idx = static_cast<int64_t>(r);
    if (idx < 0 || idx >= f.cardinality) {
        throw DataError("tokenize: category " + std::to_string(idx) + " out of range [0, " +
                        std::to_string(f.cardinality) + ") for feature '" + f.name + "'");
    }
    return idx;
}

void check_row_width(size_t got, const TabularSchema& schema) {
    if (got != schema.features.size()) {
        throw DataError("tokenize: row has " + std::to_string(got) + " values, schema expects " +
                        std::to_string(schema.features.size()));
    }
}

}  // namespace

Tensor tokenize(const Tensor& row, const TabularSchema& schema, const TokenizerParams& params) {
    if (row.rank() != 1) throw ShapeError("tokenize: row must be 1-D, got " + shape_str(row.shape()));
    check_row_width(static_cast<size_t>(row.numel()), schema);
    if (params.features.size() != schema.features.size()) {
        throw ConfigError("tokenize: params do not match schema");
    }
    const int64_t n = schema.size();
    const int64_t d = params.d_tab;
    std::vector<Tensor> tokens;
    tokens.reserve(static_cast<size_t>(n + 1));
    for (int64_t i = 0; i < n; ++i) {
        const auto& f = schema.features[static_cast<size_t>(i)];
        const auto& fp = params.features[static_cast<size_t>(i)];
        Tensor tok;
        if (f.kind == FeatureKind::Numerical) {
            double v = row.data()[static_cast<size_t>(i)];
            if (std::isnan(v)) {
                throw DataError("tokenize: NaN value for numerical feature '" + f.name +
                                "' (imputation happens upstream)");
            }
            Tensor value = slice_last(row, i, i + 1);  // (1,), keeps the row differentiable
            tok = add(mul(fp.weights, value), fp.bias);
        } else {
            int64_t idx = categorical_code(row.data()[static_cast<size_t>(i)], f);
            tok = add(reshape(embedding_rows(fp.weights, {idx}), {d}), fp.bias);
        }
        tokens.push_back(reshape(tok, {1, d}));
    }
    tokens.push_back(reshape(params.cls, {1, d}));
    return reshape(stack_seq(tokens), {n + 1, d});
}

Tensor tokenize_batch(const std::vector<std::vector<double>>& rows, const TabularSchema& schema,
                      const TokenizerParams& params) {
    if (rows.empty()) throw DataError("tokenize_batch: empty batch");
    if (params.features.size() != schema.features.size()) {
        throw ConfigError("tokenize_batch: params do not match schema");
    }
    const int64_t b = static_cast<int64_t>(rows.size());
    const int64_t n = schema.size();
    const int64_t d = params.d_tab;
    for (const auto& r : rows) check_row_width(r.size(), schema);

    std::vector<Tensor> tokens;
    tokens.reserve(static_cast<size_t>(n + 1));
    Tensor zeros_bd = Tensor::zeros({b, d});
    for (int64_t i = 0; i < n; ++i) {
        const auto& f = schema.features[static_cast<size_t>(i)];
        const auto& fp = params.features[static_cast<size_t>(i)];
        if (f.kind == FeatureKind::Numerical) {
            std::vector<double> col(static_cast<size_t>(b));
            for (int64_t j = 0; j < b; ++j) {
                double v = rows[static_cast<size_t>(j)][static_cast<size_t>(i)];
                if (std::isnan(v)) {
                    throw DataError("tokenize_batch: NaN value for numerical feature '" + f.name + "'");
                }
                col[static_cast<size_t>(j)] = v;
            }
            Tensor col_t = Tensor::from_data({b, 1}, std::move(col));
            tokens.push_back(add(matmul(col_t, reshape(fp.weights, {1, d})), fp.bias));
        } else {
            std::vector<int64_t> idx(static_cast<size_t>(b));
            for (int64_t j = 0; j < b; ++j) {
                idx[static_cast<size_t>(j)] =
                    categorical_code(rows[static_cast<size_t>(j)][static_cast<size_t>(i)], f);
            }
            tokens.push_back(add(embedding_rows(fp.weights, idx), fp.bias));
        }
    }
    tokens.push_back(add(zeros_bd, params.cls));
    return stack_seq(tokens);
}

std::vector<double> corrupt_tabular(const std::vector<double>& row, double rate, Rng& rng,
                                    const TrainPool& pool) {
    if (rate < 0.0 || rate > 1.0) {
        throw ConfigError("corrupt_tabular: rate " + std::to_string(rate) + " outside [0, 1]");
    }
    if (pool.values.size() != row.size()) {
        throw DataError("corrupt_tabular: pool has " + std::to_string(pool.values.size()) +
                        " feature lists, row has " + std::to_string(row.size()));
    }
    std::vector<double> out = row;
    for (size_t i = 0; i < row.size(); ++i) {
        const auto& vals = pool.values[i];
        if (vals.empty()) throw DataError("corrupt_tabular: empty train pool for feature " + std::to_string(i));
        if (rng.bernoulli(rate)) {
            out[i] = vals[static_cast<size_t>(rng.randint(static_cast<int64_t>(vals.size())))];
        }
    }
    return out;
}

}  // namespace amf
