#include "amf/ssm.hpp"

#include <cmath>

namespace amf {

void EncoderConfig::validate() const {
    if (n_blocks < 0) throw ConfigError("EncoderConfig: n_blocks must be >= 0");
    if (d_tab < 1 || d_state < 1 || expand < 1 || conv_width < 1 || rank() < 1) {
        throw ConfigError("EncoderConfig: all dimensions must be positive");
    }
}

Tensor selective_scan(const Tensor& u, const Tensor& dt, const Tensor& b_seq, const Tensor& c_seq,
                      const Tensor& a, const Tensor& skip_d) {
    const bool batched = u.rank() == 3;
    if (!batched && u.rank() != 2) {
        throw ShapeError("selective_scan: u must be (L,Di) or (B,L,Di), got " + shape_str(u.shape()));
    }
    const int64_t Bn = batched ? u.shape()[0] : 1;
    const int64_t L = u.shape()[batched ? 1 : 0];
    const int64_t Di = u.shape().back();
    if (a.rank() != 2 || a.shape()[0] != Di) {
        throw ShapeError("selective_scan: A " + shape_str(a.shape()) + " does not match u " +
                         shape_str(u.shape()));
    }
    const int64_t Ds = a.shape()[1];
    if (dt.shape() != u.shape()) {
        throw ShapeError("selective_scan: dt " + shape_str(dt.shape()) + " must match u " +
                         shape_str(u.shape()));
    }
    Shape bc_expected = batched ? Shape{Bn, L, Ds} : Shape{L, Ds};
    if (b_seq.shape() != bc_expected || c_seq.shape() != bc_expected) {
        throw ShapeError("selective_scan: B/C shapes " + shape_str(b_seq.shape()) + "/" +
                         shape_str(c_seq.shape()) + " must be " + shape_str(bc_expected));
    }
    if (skip_d.rank() != 1 || skip_d.shape()[0] != Di) {
        throw ShapeError("selective_scan: skip D " + shape_str(skip_d.shape()) + " must be (" +
                         std::to_string(Di) + ")");
    }
    for (double v : dt.data()) {
        if (!(v > 0.0)) throw DomainError("selective_scan: dt must be positive (softplus output)");
    }
    for (double v : a.data()) {
        if (!(v < 0.0)) throw DomainError("selective_scan: A must be strictly negative");
    }

    const auto& U = u.data();
    const auto& DT = dt.data();
    const auto& Bq = b_seq.data();
    const auto& Cq = c_seq.data();
    const auto& A = a.data();
    const auto& Dk = skip_d.data();

    // Hidden-state trajectory kept for the backward recurrence.
    auto hist = std::make_shared<std::vector<double>>(static_cast<size_t>(Bn * L * Di * Ds));
    std::vector<double> out(U.size());

    for (int64_t b = 0; b < Bn; ++b) {
        for (int64_t t = 0; t < L; ++t) {
            const int64_t ut_off = (b * L + t) * Di;
            const int64_t bc_off = (b * L + t) * Ds;
            const int64_t h_off = (b * L + t) * Di * Ds;
            const int64_t hprev_off = h_off - Di * Ds;
            for (int64_t d = 0; d < Di; ++d) {
                const double dtv = DT[ut_off + d];
                const double uv = U[ut_off + d];
                const double* arow = A.data() + d * Ds;
                double* hrow = hist->data() + h_off + d * Ds;
                const double* hprev = t > 0 ? hist->data() + hprev_off + d * Ds : nullptr;
                double y = Dk[d] * uv;
                const double dbu = dtv * uv;
                for (int64_t s = 0; s < Ds; ++s) {
                    const double abar = std::exp(dtv * arow[s]);
                    const double h = (t > 0 ? abar * hprev[s] : 0.0) + dbu * Bq[bc_off + s];
                    hrow[s] = h;
                    y += Cq[bc_off + s] * h;
                }
                if (!std::isfinite(y)) {
                    throw DomainError("selective_scan: non-finite value at step t=" + std::to_string(t));
                }
                out[ut_off + d] = y;
            }
        }
    }

    return make_op(
        "selective_scan", u.shape(), std::move(out), {u, dt, b_seq, c_seq, a, skip_d},
        [Bn, L, Di, Ds, hist](const TensorNode& self, const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& gp) {
            const auto& U = self.parents[0]->data;
            const auto& DT = self.parents[1]->data;
            const auto& Bq = self.parents[2]->data;
            const auto& Cq = self.parents[3]->data;
            const auto& A = self.parents[4]->data;
            const auto& Dk = self.parents[5]->data;
            std::vector<double> gh(static_cast<size_t>(Di * Ds));
            for (int64_t b = 0; b < Bn; ++b) {
                std::fill(gh.begin(), gh.end(), 0.0);
                for (int64_t t = L - 1; t >= 0; --t) {
                    const int64_t ut_off = (b * L + t) * Di;
                    const int64_t bc_off = (b * L + t) * Ds;
                    const int64_t h_off = (b * L + t) * Di * Ds;
                    const int64_t hprev_off = h_off - Di * Ds;
                    for (int64_t d = 0; d < Di; ++d) {
                        const double gy = g[ut_off + d];
                        const double dtv = DT[ut_off + d];
                        const double uv = U[ut_off + d];
                        const double* arow = A.data() + d * Ds;
                        const double* hrow = hist->data() + h_off + d * Ds;
                        const double* hprev = t > 0 ? hist->data() + hprev_off + d * Ds : nullptr;
                        double* ghrow = gh.data() + d * Ds;
                        if (gp[5]) (*gp[5])[d] += gy * uv;
                        double gu_acc = gy * Dk[d];
                        double gdt_acc = 0.0;
                        for (int64_t s = 0; s < Ds; ++s) {
                            const double hv = hrow[s];
                            if (gp[3]) (*gp[3])[bc_off + s] += gy * hv;
                            const double ghds = ghrow[s] + gy * Cq[bc_off + s];
                            const double abar = std::exp(dtv * arow[s]);
                            const double hp = t > 0 ? hprev[s] : 0.0;
                            const double bv = Bq[bc_off + s];
                            gdt_acc += ghds * (hp * abar * arow[s] + bv * uv);
                            if (gp[4]) (*gp[4])[d * Ds + s] += ghds * hp * abar * dtv;
                            if (gp[2]) (*gp[2])[bc_off + s] += ghds * dtv * uv;
                            gu_acc += ghds * dtv * bv;
                            ghrow[s] = ghds * abar;
                        }
                        if (gp[0]) (*gp[0])[ut_off + d] += gu_acc;
                        if (gp[1]) (*gp[1])[ut_off + d] += gdt_acc;
                    }
                }
            }
        });
}

namespace {

// Inverse of softplus: bias such that softplus(bias) == target.
double inv_softplus(double target) { return std::log(std::expm1(target)); }

Tensor uniform_tensor(Rng& rng, Shape shape, double bound, bool trainable) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), trainable);
}

}  // namespace

SsmBlockParams SsmBlockParams::init(const EncoderConfig& cfg, Rng& rng, bool trainable) {
    cfg.validate();
    const int64_t d = cfg.d_tab;
    const int64_t di = cfg.d_inner();
    const int64_t ds = cfg.d_state;
    const int64_t r = cfg.rank();
    const int64_t k = cfg.conv_width;

    SsmBlockParams p;
    p.ln_gamma = Tensor::full({d}, 1.0, trainable);
    p.ln_beta = Tensor::zeros({d}, trainable);
    p.w_in = uniform_tensor(rng, {d, 2 * di}, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
    p.conv_w = uniform_tensor(rng, {k, di}, 1.0 / std::sqrt(static_cast<double>(k)), trainable);
    p.conv_b = Tensor::zeros({di}, trainable);
    p.w_dt_down = uniform_tensor(rng, {di, r}, 1.0 / std::sqrt(static_cast<double>(di)), trainable);
    p.w_dt_up = uniform_tensor(rng, {r, di}, 1.0 / std::sqrt(static_cast<double>(r)), trainable);

    // softplus(dt_bias) log-uniform in [1e-3, 0.1]
    std::vector<double> dtb(static_cast<size_t>(di));
    for (auto& v : dtb) {
        double dt = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
        v = inv_softplus(dt);
    }
    p.dt_bias = Tensor::from_data({di}, std::move(dtb), trainable);

    p.w_b = uniform_tensor(rng, {di, ds}, 1.0 / std::sqrt(static_cast<double>(di)), trainable);
    p.w_c = uniform_tensor(rng, {di, ds}, 1.0 / std::sqrt(static_cast<double>(di)), trainable);

    // S4D-real: A = -(1..D_state) per channel, stored in log space
    std::vector<double> alog(static_cast<size_t>(di * ds));
    for (int64_t dch = 0; dch < di; ++dch) {
        for (int64_t s = 0; s < ds; ++s) {
            alog[static_cast<size_t>(dch * ds + s)] = std::log(static_cast<double>(s + 1));
        }
    }
    p.a_log = Tensor::from_data({di, ds}, std::move(alog), trainable);
    p.skip_d = Tensor::full({di}, 1.0, trainable);
    p.w_out = uniform_tensor(rng, {di, d}, 1.0 / std::sqrt(static_cast<double>(di)), trainable);
    return p;
}

ParamList SsmBlockParams::params(const std::string& prefix) const {
    ParamList out;
    out.add(prefix + "ln_gamma", ln_gamma);
    out.add(prefix + "ln_beta", ln_beta);
    out.add(prefix + "w_in", w_in);
    out.add(prefix + "conv_w", conv_w);
    out.add(prefix + "conv_b", conv_b);
    out.add(prefix + "w_dt_down", w_dt_down);
    out.add(prefix + "w_dt_up", w_dt_up);
    out.add(prefix + "dt_bias", dt_bias);
    out.add(prefix + "w_b", w_b);
    out.add(prefix + "w_c", w_c);
    out.add(prefix + "a_log", a_log);
    out.add(prefix + "skip_d", skip_d);
    out.add(prefix + "w_out", w_out);
    return out;
}

Tensor mamba_block(const Tensor& x, const SsmBlockParams& p, const EncoderConfig& cfg) {
    const bool batched = x.rank() == 3;
    if (!batched && x.rank() != 2) {
        throw ShapeError("mamba_block: x must be (L,D) or (B,L,D), got " + shape_str(x.shape()));
    }
    const int64_t Bn = batched ? x.shape()[0] : 1;
    const int64_t L = x.shape()[batched ? 1 : 0];
    const int64_t d = x.shape().back();
    if (d != cfg.d_tab) {
        throw ShapeError("mamba_block: input " + shape_str(x.shape()) + " does not match d_tab=" +
                         std::to_string(cfg.d_tab));
    }
    const int64_t di = cfg.d_inner();
    const int64_t ds = cfg.d_state;

    Tensor x3 = batched ? x : reshape(x, {1, L, d});
    Tensor xn = layer_norm_last(x3, p.ln_gamma, p.ln_beta);
    Tensor xz = reshape(matmul(reshape(xn, {Bn * L, d}), p.w_in), {Bn, L, 2 * di});
    Tensor main = slice_last(xz, 0, di);
    Tensor gate = slice_last(xz, di, 2 * di);

    Tensor act = silu(conv1d_depthwise(main, p.conv_w, p.conv_b));
    Tensor act_flat = reshape(act, {Bn * L, di});

    Tensor dt = softplus(add(matmul(matmul(act_flat, p.w_dt_down), p.w_dt_up), p.dt_bias));
    Tensor b_seq = reshape(matmul(act_flat, p.w_b), {Bn, L, ds});
    Tensor c_seq = reshape(matmul(act_flat, p.w_c), {Bn, L, ds});
    Tensor a = neg(exp(p.a_log));

    Tensor y = selective_scan(act, reshape(dt, {Bn, L, di}), b_seq, c_seq, a, p.skip_d);
    Tensor gated = mul(y, silu(gate));
    Tensor out = reshape(matmul(reshape(gated, {Bn * L, di}), p.w_out), {Bn, L, d});
    Tensor res = add(x3, out);
    return batched ? res : reshape(res, {L, d});
}

SsmEncoder SsmEncoder::init(const EncoderConfig& cfg, Rng& rng, bool trainable) {
    cfg.validate();
    SsmEncoder enc;
    enc.cfg = cfg;
    for (int i = 0; i < cfg.n_blocks; ++i) {
        enc.blocks.push_back(SsmBlockParams::init(cfg, rng, trainable));
    }
    enc.final_ln_gamma = Tensor::full({cfg.d_tab}, 1.0, trainable);
    enc.final_ln_beta = Tensor::zeros({cfg.d_tab}, trainable);
    return enc;
}

ParamList SsmEncoder::params(const std::string& prefix) const {
    ParamList out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        out.extend(blocks[i].params(prefix + "block" + std::to_string(i) + "."));
    }
    out.add(prefix + "final_ln_gamma", final_ln_gamma);
    out.add(prefix + "final_ln_beta", final_ln_beta);
    return out;
}

Tensor SsmEncoder::encode(const Tensor& tokens) const {
    const bool batched = tokens.rank() == 3;
    if (!batched && tokens.rank() != 2) {
        throw ShapeError("SsmEncoder::encode: tokens must be (L,D) or (B,L,D), got " +
                         shape_str(tokens.shape()));
    }
    Tensor h = tokens;
    for (const auto& b : blocks) h = mamba_block(h, b, cfg);
    h = layer_norm_last(h, final_ln_gamma, final_ln_beta);
    if (batched) {
        return seq_select(h, h.shape()[1] - 1);
    }
    const int64_t L = h.shape()[0], d = h.shape()[1];
    return reshape(seq_select(reshape(h, {1, L, d}), L - 1), {d});
}

}  // namespace amf
