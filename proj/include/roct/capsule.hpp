// Capsule classifier head: squash nonlinearity, routing by agreement, and the
// flatten/dropout/dense tail that produces class logits.
#pragma once

#include <vector>

#include "roct/ops.hpp"
#include "roct/tensor.hpp"

namespace roct {

struct CapsuleConfig {
    int in_capsules = 0;  // one 1-D capsule per channel of the compressed map
    int in_dim = 1;
    int out_capsules = 10;
    int out_dim = 16;
    int routing_iters = 3;
};

// v = (|s|^2 / (1+|s|^2)) * s/|s| along the last axis. The norm is stabilized
// with sqrt(|s|^2 + 1e-9) so the zero vector squashes to zero with a finite
// gradient.
Tensor squash_last_dim(const Tensor& s);

// Coupling coefficients per routing iteration, recorded for inspection.
struct RoutingTrace {
    std::vector<std::vector<double>> couplings;  // each entry flattened [N, in, out]
};

// Dynamic routing: logits start at zero; each iteration takes a softmax over
// output capsules, forms the coupling-weighted prediction sum, squashes it,
// and adds the prediction/output agreement back onto the logits (skipped
// after the last iteration). The whole procedure stays on the tape.
Tensor route(const Tensor& u, const CapsuleConfig& cfg, const Tensor& W, RoutingTrace* trace = nullptr);

// flatten -> dropout -> dense. Softmax is applied by the caller with the loss.
Tensor classify_tail(const Tensor& v, const Tensor& dense_w, const Tensor& dense_b, double dropout_rate,
                     bool training, Rng& rng);

}  // namespace roct
