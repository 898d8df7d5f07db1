#pragma once

#include <functional>

#include "vattn/attention.hpp"
#include "vattn/tensor.hpp"

namespace vattn {

// Dense binary64 reference attention. Every fused path is judged against
// these; they share the scale, mask and dropout policy but none of the
// fragment machinery.

struct RefForward {
    Tensor<double> out;    // [b, h, N, d]
    Tensor<double> probs;  // [b, h, N, N], post-dropout weights
    Tensor<double> lse;    // [b, h, N]
};

RefForward attention_ref(const Tensor<double>& q, const Tensor<double>& k,
                         const Tensor<double>& v, const AttnConfig& cfg);

struct RefGrads {
    Tensor<double> dq, dk, dv;
};

// Analytic gradients: dV = P~^T dO, dP = D o (dO V^T),
// dS = P o (dP - rowsum(dP o P)) * scale, dQ = dS K, dK = dS^T Q.
RefGrads attention_grad_ref(const Tensor<double>& q, const Tensor<double>& k,
                            const Tensor<double>& v, const Tensor<double>& d_out,
                            const AttnConfig& cfg);

// Central differences (f(x + eps e) - f(x - eps e)) / 2 eps per element.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps);

struct ErrorMetrics {
    double mean_rel = 0.0;
    double max_rel = 0.0;
    double mean_abs = 0.0;
    double max_abs = 0.0;
};

// Per element: rel = |t - r| / max(|r|, 1e-6); means are over all elements.
ErrorMetrics error_metrics(const Tensor<double>& test, const Tensor<double>& ref);
ErrorMetrics error_metrics(const Tensor<Half>& test, const Tensor<double>& ref);
ErrorMetrics error_metrics(const Tensor<float>& test, const Tensor<float>& ref);

// ||t - r||_2 / ||r||_2, the norm-level agreement measure.
double frobenius_rel_error(const Tensor<double>& test, const Tensor<double>& ref);

}  // namespace vattn
