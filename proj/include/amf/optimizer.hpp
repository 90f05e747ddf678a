#pragma once

#include <string>
#include <vector>

#include "amf/tensor.hpp"

namespace amf {

// Named parameter list shared by modules, the optimizer and checkpoints.
// Order is the registration order and is part of the checkpoint contract.
struct ParamList {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
    void extend(const ParamList& other) {
        items.insert(items.end(), other.items.begin(), other.items.end());
    }
    size_t size() const { return items.size(); }
    Tensor find(const std::string& name) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Adam with classic L2-style weight decay folded into the gradient.
class Adam {
public:
    Adam(ParamList params, AdamConfig cfg);

    void zero_grad();
    void step();

    // Scale applied on top of cfg.lr by the scheduler; 1 when unused.
    void set_lr_scale(double s) { lr_scale_ = s; }
    double lr_scale() const { return lr_scale_; }
    int64_t step_count() const { return t_; }

private:
    ParamList params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
    double lr_scale_ = 1.0;
};

// Cosine annealing over total_epochs with linear warmup; returns the lr scale
// in (0, 1] for a 0-based epoch index.
double cosine_warmup_scale(int epoch, int warmup_epochs, int total_epochs);

}  // namespace amf
