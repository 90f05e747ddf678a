#pragma once

#include <functional>
#include <vector>

#include "amf/optimizer.hpp"
#include "amf/rng.hpp"
#include "amf/tensor.hpp"

namespace amf_test {

inline amf::Tensor randt(amf::Rng& rng, amf::Shape shape, double lo, double hi,
                         bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(amf::shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return amf::Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Central-difference gradient check against every coordinate of every listed
// parameter; f() must rebuild the loss from the parameters' current values.
inline double param_grad_check(const std::function<amf::Tensor()>& f, const amf::ParamList& params,
                               double eps = 1e-5) {
    for (auto& [name, t] : params.items) const_cast<amf::Tensor&>(t).zero_grad();
    amf::Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
        analytic.push_back(t.has_grad() ? t.grad()
                                        : std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
    }
    double max_err = 0.0;
    for (size_t p = 0; p < params.items.size(); ++p) {
        auto& data = const_cast<amf::Tensor&>(params.items[p].second).raw_data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + eps;
            double fp = f().item();
            data[i] = orig - eps;
            double fm = f().item();
            data[i] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double err = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace amf_test
