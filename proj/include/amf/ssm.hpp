#pragma once

#include <vector>

#include "amf/optimizer.hpp"
#include "amf/rng.hpp"
#include "amf/tensor.hpp"

namespace amf {

struct EncoderConfig {
    int n_blocks = 2;
    int64_t d_tab = 64;
    int64_t d_state = 16;
    int64_t expand = 2;
    int64_t conv_width = 4;
    int64_t dt_rank = 0;  // 0 -> ceil(d_tab / 16)

    int64_t d_inner() const { return expand * d_tab; }
    int64_t rank() const {
        return dt_rank > 0 ? dt_rank : (d_tab + 15) / 16;
    }
    void validate() const;
};

// Input-dependent selective state-space recurrence.
//   h_t[d,s] = exp(dt_t[d] * A[d,s]) * h_{t-1}[d,s] + dt_t[d] * B_t[s] * u_t[d]
//   y_t[d]   = sum_s C_t[s] * h_t[d,s] + D[d] * u_t[d]
// u, dt: (B,L,Di) or (L,Di); b_seq, c_seq: (B,L,Ds) or (L,Ds); a: (Di,Ds)
// strictly negative; skip_d: (Di). dt must be positive (softplus output).
Tensor selective_scan(const Tensor& u, const Tensor& dt, const Tensor& b_seq, const Tensor& c_seq,
                      const Tensor& a, const Tensor& skip_d);

struct SsmBlockParams {
    Tensor ln_gamma, ln_beta;   // pre-block layer norm (D_tab)
    Tensor w_in;                // (D_tab, 2*D_inner): main branch then gate
    Tensor conv_w;              // (K, D_inner) depthwise causal conv
    Tensor conv_b;              // (D_inner)
    Tensor w_dt_down;           // (D_inner, rank)
    Tensor w_dt_up;             // (rank, D_inner)
    Tensor dt_bias;             // (D_inner), softplus(bias) in [1e-3, 0.1] at init
    Tensor w_b;                 // (D_inner, D_state)
    Tensor w_c;                 // (D_inner, D_state)
    Tensor a_log;               // (D_inner, D_state); A = -exp(a_log) stays negative
    Tensor skip_d;              // (D_inner)
    Tensor w_out;               // (D_inner, D_tab)

    static SsmBlockParams init(const EncoderConfig& cfg, Rng& rng, bool trainable = true);
    ParamList params(const std::string& prefix) const;
};

// Pre-norm gated SSM block with residual:
//   x + OutProj( SiLU(gate) * scan( SiLU(conv1d(main)) ) )
Tensor mamba_block(const Tensor& x, const SsmBlockParams& p, const EncoderConfig& cfg);

struct SsmEncoder {
    EncoderConfig cfg;
    std::vector<SsmBlockParams> blocks;
    Tensor final_ln_gamma, final_ln_beta;

    static SsmEncoder init(const EncoderConfig& cfg, Rng& rng, bool trainable = true);
    ParamList params(const std::string& prefix) const;

    // (B,N+1,D) -> (B,D) or (N+1,D) -> (D): block stack, final layer norm,
    // CLS readout at the last sequence position.
    Tensor encode(const Tensor& tokens) const;
};

}  // namespace amf
