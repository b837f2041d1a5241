#include "roct/capsule.hpp"

#include <stdexcept>
#include <string>

namespace roct {

Tensor squash_last_dim(const Tensor& s) {
    // scale = |s|^2 / ((1+|s|^2) * sqrt(|s|^2 + eps)), applied per vector
    Tensor sq_norm = sum_last_dim(square(s));
    Tensor stable_norm = sqrt_op(add_scalar(sq_norm, 1e-9));
    Tensor scale = div(sq_norm, mul(add_scalar(sq_norm, 1.0), stable_norm));
    return mul_last_dim(s, scale);
}

Tensor route(const Tensor& u, const CapsuleConfig& cfg, const Tensor& W, RoutingTrace* trace) {
    if (cfg.routing_iters < 1) throw std::invalid_argument("route: routing_iters must be >= 1");
    if (u.rank() != 3 || u.dim(1) != cfg.in_capsules || u.dim(2) != cfg.in_dim) {
        throw std::invalid_argument("route: input " + shape_str(u.shape()) + " does not match config [N," +
                                    std::to_string(cfg.in_capsules) + "," + std::to_string(cfg.in_dim) + "]");
    }
    if (W.rank() != 4 || W.dim(0) != cfg.in_capsules || W.dim(1) != cfg.out_capsules ||
        W.dim(2) != cfg.out_dim || W.dim(3) != cfg.in_dim) {
        throw std::invalid_argument("route: transforms " + shape_str(W.shape()) + " do not match config");
    }

    const int n = u.dim(0);
    Tensor uhat = capsule_predict(u, W);  // [N, in, out, out_dim]
    Tensor b = Tensor::zeros({n, cfg.in_capsules, cfg.out_capsules});
    Tensor v;
    for (int iter = 0; iter < cfg.routing_iters; ++iter) {
        Tensor c = softmax(b);  // over output capsules
        if (trace) trace->couplings.push_back(c.data());
        Tensor s = coupling_weighted_sum(c, uhat);
        v = squash_last_dim(s);
        if (iter + 1 < cfg.routing_iters) b = add(b, capsule_agreement(uhat, v));
    }
    return v;
}

Tensor classify_tail(const Tensor& v, const Tensor& dense_w, const Tensor& dense_b, double dropout_rate,
                     bool training, Rng& rng) {
    Tensor flat = flatten(v);
    if (flat.dim(1) != dense_w.dim(0)) {
        throw std::invalid_argument("classify_tail: flattened width " + std::to_string(flat.dim(1)) +
                                    " does not match dense weight rows " + std::to_string(dense_w.dim(0)));
    }
    return dense(dropout(flat, dropout_rate, training, rng), dense_w, dense_b);
}

}  // namespace roct
