#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amf/error.hpp"

namespace amf {

enum class FeatureKind { Numerical, Categorical };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::Numerical;
    // categorical only; includes the reserved unseen-at-test index
    int64_t cardinality = 0;
    // numerical normalization / imputation statistics from the train split
    double mean = 0.0;
    double stddev = 1.0;
    double median = 0.0;
    // categorical train-split frequency table (index -> count); the argmax is
    // the mode used by simulated missingness
    std::vector<int64_t> frequency;

    int64_t mode() const;
};

// Ordered feature descriptors; the tokenizer, corruption and noise harness all
// key off this order.
struct TabularSchema {
    std::vector<FeatureSpec> features;

    int64_t size() const { return static_cast<int64_t>(features.size()); }
    void validate() const;
};

}  // namespace amf
