#pragma once

#include <vector>

#include "amf/optimizer.hpp"
#include "amf/rng.hpp"
#include "amf/schema.hpp"
#include "amf/tensor.hpp"

namespace amf {

// Feature tokenizer: one parameter group per schema feature plus a learned
// CLS vector appended at the sequence end.
struct TokenizerParams {
    struct FeatureParams {
        // numerical: weight (D); categorical: embedding table (cardinality, D)
        Tensor weights;
        Tensor bias;  // (D)
    };
    std::vector<FeatureParams> features;
    Tensor cls;  // (D)
    int64_t d_tab = 0;

    static TokenizerParams init(const TabularSchema& schema, int64_t d_tab, Rng& rng,
                                bool trainable = true);
    ParamList params(const std::string& prefix) const;
};

// Single row -> (N+1, D) token sequence. The row tensor may require grad for
// attribution; categorical entries must hold exact integer codes.
Tensor tokenize(const Tensor& row, const TabularSchema& schema, const TokenizerParams& params);

// Batch of rows -> (B, N+1, D).
Tensor tokenize_batch(const std::vector<std::vector<double>>& rows, const TabularSchema& schema,
                      const TokenizerParams& params);

// Per-feature empirical value lists from the training split; the corruption
// augmentation draws replacements from these marginals.
struct TrainPool {
    std::vector<std::vector<double>> values;  // one list per schema feature
};

std::vector<double> corrupt_tabular(const std::vector<double>& row, double rate, Rng& rng,
                                    const TrainPool& pool);

}  // namespace amf
