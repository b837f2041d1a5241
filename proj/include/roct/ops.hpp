#ifndef ROCT_OPS_HPP
#define ROCT_OPS_HPP

#include "roct/tensor.hpp"

namespace roct {

enum class Padding { Same, Valid };

// ---------------------------------------------------------------------------
// Convolutions. All image tensors are channels-last [N,H,W,C].
// ---------------------------------------------------------------------------

/// Cross-correlation of input [N,H,W,Cin] with kernel [kh,kw,Cin,Cout].
/// Same padding: H' = ceil(H/stride), zeros split with the smaller half on
/// the top/left. Valid: H' = floor((H-kh)/stride)+1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding);

/// One kernel slice per channel, kernel [kh,kw,C]; channels never mix.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding);

/// 1x1 convolution, kernel [1,1,Cin,Cout]; a per-pixel matrix multiply.
Tensor pointwise_conv2d(const Tensor& input, const Tensor& kernel);

// ---------------------------------------------------------------------------
// Shape and channel manipulation.
// ---------------------------------------------------------------------------

/// Concatenates along the channel axis; a and b must agree on N,H,W.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Channels [begin, end) of a [N,H,W,C] tensor.
Tensor slice_channels(const Tensor& x, int begin, int end);

/// Same data, new shape (element count must match). Gradient reshapes back.
Tensor reshape(const Tensor& x, const std::vector<int>& shape);

/// Collapses all axes after the first: [N, ...] -> [N, F].
Tensor flatten(const Tensor& x);

// ---------------------------------------------------------------------------
// Dense / classification ops.
// ---------------------------------------------------------------------------

/// input [N,F] x weight [F,K] + bias [K] -> [N,K].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Row-softmax over the last axis; numerically stabilized by max shift.
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log(prob of the true class). `labels` rows must
/// be one-hot. Probabilities are clamped at 1e-12 before the log.
Tensor cross_entropy(const Tensor& probs, const Tensor& labels);

Tensor relu(const Tensor& x);
Tensor swish(const Tensor& x);  // x * sigmoid(x)

/// Inverted dropout: at train time each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); at eval time the identity.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Batch normalization over (N,H,W) per channel, training form: normalizes
/// with batch statistics (biased variance) and returns them through
/// batch_mean/batch_var for the caller's running-statistics update.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>& batch_mean, std::vector<double>& batch_var);

/// Evaluation form: fixed mean/var (running statistics).
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps);

// ---------------------------------------------------------------------------
// Elementwise and reductions.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor sqrt_op(const Tensor& a);

Tensor sum_all(const Tensor& x);   // -> scalar [1]
Tensor mean_all(const Tensor& x);  // -> scalar [1]

/// Sum over the last axis: [..., D] -> [...].
Tensor sum_last_dim(const Tensor& x);

/// Broadcast multiply of each last-axis vector by a per-vector scalar:
/// x [..., D] * s [...] -> [..., D].
Tensor mul_last_dim(const Tensor& x, const Tensor& s);

/// Per-channel spatial mean: [N,H,W,C] -> [N,1,1,C] (global average pooling).
Tensor gap(const Tensor& x);

// ---------------------------------------------------------------------------
// Capsule building blocks (einsum-shaped products with product-rule grads).
// ---------------------------------------------------------------------------

/// Prediction vectors: u [N,I,di] with transforms W [I,J,dj,di] ->
/// uhat [N,I,J,dj], uhat[n,i,j,:] = W[i,j] * u[n,i,:].
Tensor capsule_predict(const Tensor& u, const Tensor& W);

/// s[n,j,k] = sum_i c[n,i,j] * uhat[n,i,j,k];  c [N,I,J], uhat [N,I,J,dj].
Tensor coupling_weighted_sum(const Tensor& c, const Tensor& uhat);

/// Agreement logit update term: a[n,i,j] = sum_k uhat[n,i,j,k] * v[n,j,k].
Tensor capsule_agreement(const Tensor& uhat, const Tensor& v);

}  // namespace roct

#endif
