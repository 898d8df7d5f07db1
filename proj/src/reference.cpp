#include "vattn/reference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "vattn/rng.hpp"
#include "vattn/warp_mma.hpp"

namespace vattn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_bhnd(const Tensor<double>& t, const AttnConfig& cfg, const char* name) {
    if (t.rank() != 4 || t.dims()[0] != static_cast<std::size_t>(cfg.batch) ||
        t.dims()[1] != static_cast<std::size_t>(cfg.heads) ||
        t.dims()[2] != static_cast<std::size_t>(cfg.seq_len) ||
        t.dims()[3] != static_cast<std::size_t>(cfg.head_dim))
        throw std::invalid_argument(name);
}

}  // namespace

RefForward attention_ref(const Tensor<double>& q, const Tensor<double>& k,
                         const Tensor<double>& v, const AttnConfig& cfg) {
    cfg.validate();
    check_bhnd(q, cfg, "attention_ref: Q shape mismatch");
    check_bhnd(k, cfg, "attention_ref: K shape mismatch");
    check_bhnd(v, cfg, "attention_ref: V shape mismatch");

    const int n = cfg.seq_len, d = cfg.head_dim;
    const double scale = cfg.scale();
    const double inv_keep = 1.0 / (1.0 - static_cast<double>(cfg.dropout_p));

    RefForward r;
    r.out = Tensor<double>::bhnd(cfg.batch, cfg.heads, n, d);
    r.probs = Tensor<double>::bhnd(cfg.batch, cfg.heads, n, n);
    r.lse = Tensor<double>(std::vector<std::size_t>{static_cast<std::size_t>(cfg.batch),
                                                    static_cast<std::size_t>(cfg.heads),
                                                    static_cast<std::size_t>(n)});

    std::vector<double> s(n);
    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            for (int i = 0; i < n; ++i) {
                double m = kNegInf;
                for (int j = 0; j < n; ++j) {
                    if (cfg.causal && j > i) {
                        s[j] = kNegInf;
                    } else {
                        double dot = 0.0;
                        for (int e = 0; e < d; ++e) dot += q.at(b, h, i, e) * k.at(b, h, j, e);
                        s[j] = scale * dot;
                    }
                    m = std::max(m, s[j]);
                }
                double l = 0.0;
                for (int j = 0; j < n; ++j) l += s[j] == kNegInf ? 0.0 : std::exp(s[j] - m);
                if (!(l > 0.0)) throw std::domain_error("attention_ref: fully masked row");
                r.lse.at(b, h, i) = m + std::log(l);

                for (int j = 0; j < n; ++j) {
                    double p = s[j] == kNegInf ? 0.0 : std::exp(s[j] - m) / l;
                    if (cfg.dropout_p > 0.0f) {
                        p = dropout_keep(cfg.seed, b, h, i, j, cfg.dropout_p) ? p * inv_keep : 0.0;
                    }
                    r.probs.at(b, h, i, j) = p;
                }
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += r.probs.at(b, h, i, j) * v.at(b, h, j, e);
                    r.out.at(b, h, i, e) = acc;
                }
            }
        }
    }
    return r;
}

RefGrads attention_grad_ref(const Tensor<double>& q, const Tensor<double>& k,
                            const Tensor<double>& v, const Tensor<double>& d_out,
                            const AttnConfig& cfg) {
    cfg.validate();
    check_bhnd(q, cfg, "attention_grad_ref: Q shape mismatch");
    check_bhnd(k, cfg, "attention_grad_ref: K shape mismatch");
    check_bhnd(v, cfg, "attention_grad_ref: V shape mismatch");
    check_bhnd(d_out, cfg, "attention_grad_ref: dO shape mismatch");

    const int n = cfg.seq_len, d = cfg.head_dim;
    const double scale = cfg.scale();
    const double inv_keep = 1.0 / (1.0 - static_cast<double>(cfg.dropout_p));

    RefGrads g;
    g.dq = Tensor<double>::bhnd(cfg.batch, cfg.heads, n, d);
    g.dk = Tensor<double>::bhnd(cfg.batch, cfg.heads, n, d);
    g.dv = Tensor<double>::bhnd(cfg.batch, cfg.heads, n, d);

    Matrix<double> p(n, n), drop(n, n), dp(n, n), ds(n, n);
    for (int b = 0; b < cfg.batch; ++b) {
        for (int h = 0; h < cfg.heads; ++h) {
            // Pre-dropout softmax P and the dropout factor matrix D.
            for (int i = 0; i < n; ++i) {
                double m = kNegInf;
                std::vector<double> s(n);
                for (int j = 0; j < n; ++j) {
                    if (cfg.causal && j > i) {
                        s[j] = kNegInf;
                    } else {
                        double dot = 0.0;
                        for (int e = 0; e < d; ++e) dot += q.at(b, h, i, e) * k.at(b, h, j, e);
                        s[j] = scale * dot;
                    }
                    m = std::max(m, s[j]);
                }
                double l = 0.0;
                for (int j = 0; j < n; ++j) l += s[j] == kNegInf ? 0.0 : std::exp(s[j] - m);
                if (!(l > 0.0)) throw std::domain_error("attention_grad_ref: fully masked row");
                for (int j = 0; j < n; ++j) {
                    p.at(i, j) = s[j] == kNegInf ? 0.0 : std::exp(s[j] - m) / l;
                    drop.at(i, j) =
                        cfg.dropout_p > 0.0f
                            ? (dropout_keep(cfg.seed, b, h, i, j, cfg.dropout_p) ? inv_keep : 0.0)
                            : 1.0;
                }
            }

            // dV = (D o P)^T dO.
            for (int j = 0; j < n; ++j)
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i)
                        acc += drop.at(i, j) * p.at(i, j) * d_out.at(b, h, i, e);
                    g.dv.at(b, h, j, e) = acc;
                }

            // dP = D o (dO V^T); dS = P o (dP - rowsum(dP o P)) * scale.
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int e = 0; e < d; ++e) acc += d_out.at(b, h, i, e) * v.at(b, h, j, e);
                    dp.at(i, j) = drop.at(i, j) * acc;
                }
                double dpsum = 0.0;
                for (int j = 0; j < n; ++j) dpsum += dp.at(i, j) * p.at(i, j);
                for (int j = 0; j < n; ++j)
                    ds.at(i, j) = p.at(i, j) * (dp.at(i, j) - dpsum) * scale;
            }

            // dQ = dS K; dK = dS^T Q.
            for (int i = 0; i < n; ++i)
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += ds.at(i, j) * k.at(b, h, j, e);
                    g.dq.at(b, h, i, e) = acc;
                }
            for (int j = 0; j < n; ++j)
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += ds.at(i, j) * q.at(b, h, i, e);
                    g.dk.at(b, h, j, e) = acc;
                }
        }
    }
    return g;
}

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor<double> g(x.dims());
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = probe.data()[i];
        probe.data()[i] = saved + eps;
        const double fp = f(probe);
        probe.data()[i] = saved - eps;
        const double fm = f(probe);
        probe.data()[i] = saved;
        g.data()[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

ErrorMetrics error_metrics(const Tensor<double>& test, const Tensor<double>& ref) {
    if (test.dims() != ref.dims()) throw std::invalid_argument("error_metrics: shape mismatch");
    ErrorMetrics m;
    const std::size_t n = test.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double t = test.data()[i], r = ref.data()[i];
        const double abs = std::abs(t - r);
        const double rel = abs / std::max(std::abs(r), 1e-6);
        m.mean_abs += abs;
        m.mean_rel += rel;
        m.max_abs = std::max(m.max_abs, abs);
        m.max_rel = std::max(m.max_rel, rel);
    }
    m.mean_abs /= static_cast<double>(n);
    m.mean_rel /= static_cast<double>(n);
    return m;
}

ErrorMetrics error_metrics(const Tensor<Half>& test, const Tensor<double>& ref) {
    return error_metrics(widen(test), ref);
}

ErrorMetrics error_metrics(const Tensor<float>& test, const Tensor<float>& ref) {
    return error_metrics(widen(test), widen(ref));
}

double frobenius_rel_error(const Tensor<double>& test, const Tensor<double>& ref) {
    if (test.dims() != ref.dims())
        throw std::invalid_argument("frobenius_rel_error: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double dv = test.data()[i] - ref.data()[i];
        num += dv * dv;
        den += ref.data()[i] * ref.data()[i];
    }
    return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

}  // namespace vattn
