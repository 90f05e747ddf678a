#include "amf/optimizer.hpp"

#include <cmath>

namespace amf {

Tensor ParamList::find(const std::string& name) const {
    for (const auto& [n, t] : items) {
        if (n == name) return t;
    }
    throw Error("ParamList: no parameter named '" + name + "'");
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& [name, t] : params_.items) {
        if (!t.requires_grad()) throw ConfigError("Adam: parameter '" + name + "' does not require grad");
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : params_.items) t.zero_grad();
}

void Adam::step() {
    ++t_;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.lr * lr_scale_;
    for (size_t p = 0; p < params_.items.size(); ++p) {
        Tensor& t = params_.items[p].second;
        if (!t.has_grad()) continue;  // parameter not touched by this loss
        const auto& g = t.grad();
        auto& w = t.raw_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (size_t i = 0; i < w.size(); ++i) {
            double gi = g[i] + cfg_.weight_decay * w[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            double mhat = m[i] / b1t;
            double vhat = v[i] / b2t;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double cosine_warmup_scale(int epoch, int warmup_epochs, int total_epochs) {
    if (warmup_epochs > 0 && epoch < warmup_epochs) {
        return static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
    }
    if (total_epochs <= warmup_epochs) return 1.0;
    double progress = static_cast<double>(epoch - warmup_epochs) /
                      static_cast<double>(total_epochs - warmup_epochs);
    progress = std::min(1.0, std::max(0.0, progress));
    return 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

}  // namespace amf
