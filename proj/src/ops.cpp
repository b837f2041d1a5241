#include "roct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace roct {

namespace {

using Node = Tensor::Node;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                                    ", got " + shape_str(t.shape()));
    }
}

// Returns the parent's grad buffer, or nullptr when that parent does not
// participate in differentiation.
double* grad_of(Node& self, std::size_t parent_idx) {
    Tensor& p = self.parents[parent_idx];
    Node& n = p.node();
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad.data();
}

struct ConvGeom {
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_left = 0;
};

ConvGeom conv_geometry(const char* op, int h, int w, int kh, int kw, int stride, Padding padding) {
    require(stride >= 1, std::string(op) + ": stride must be >= 1");
    ConvGeom g;
    if (padding == Padding::Valid) {
        require(kh <= h && kw <= w,
                std::string(op) + ": kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                    " larger than input " + std::to_string(h) + "x" + std::to_string(w) + " with valid padding");
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
    } else {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        int pad_h = std::max((g.out_h - 1) * stride + kh - h, 0);
        int pad_w = std::max((g.out_w - 1) * stride + kw - w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    }
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
    const int kh = kernel.dim(0), kw = kernel.dim(1), kcin = kernel.dim(2), cout = kernel.dim(3);
    require(cin == kcin, "conv2d: input channels (" + std::to_string(cin) + ") != kernel channels (" +
                             std::to_string(kcin) + ")");
    const ConvGeom g = conv_geometry("conv2d", h, w, kh, kw, stride, padding);

    const double* in = input.data().data();
    const double* k = kernel.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel({n, g.out_h, g.out_w, cout})), 0.0);

    for (int bi = 0; bi < n; ++bi) {
        for (int ho = 0; ho < g.out_h; ++ho) {
            for (int wo = 0; wo < g.out_w; ++wo) {
                double* op = &out[(((static_cast<std::int64_t>(bi) * g.out_h + ho) * g.out_w + wo) * cout)];
                for (int r = 0; r < kh; ++r) {
                    const int hi = ho * stride - g.pad_top + r;
                    if (hi < 0 || hi >= h) continue;
                    for (int c = 0; c < kw; ++c) {
                        const int wi = wo * stride - g.pad_left + c;
                        if (wi < 0 || wi >= w) continue;
                        const double* ip = &in[(((static_cast<std::int64_t>(bi) * h + hi) * w + wi) * cin)];
                        const double* kp = &k[((static_cast<std::int64_t>(r) * kw + c) * cin) * cout];
                        for (int ci = 0; ci < cin; ++ci) {
                            const double a = ip[ci];
                            if (a == 0.0) continue;
                            const double* kc = kp + static_cast<std::int64_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) op[co] += a * kc[co];
                        }
                    }
                }
            }
        }
    }

    auto geom = g;
    return Tensor::make_op(
        {n, g.out_h, g.out_w, cout}, std::move(out), {input, kernel},
        [n, h, w, cin, kh, kw, cout, stride, geom](Node& self) {
            const double* go = self.grad.data();
            const double* in = self.parents[0].data().data();
            const double* k = self.parents[1].data().data();
            double* gin = grad_of(self, 0);
            double* gk = grad_of(self, 1);
            for (int bi = 0; bi < n; ++bi) {
                for (int ho = 0; ho < geom.out_h; ++ho) {
                    for (int wo = 0; wo < geom.out_w; ++wo) {
                        const double* gp = &go[(((static_cast<std::int64_t>(bi) * geom.out_h + ho) * geom.out_w + wo) * cout)];
                        for (int r = 0; r < kh; ++r) {
                            const int hi = ho * stride - geom.pad_top + r;
                            if (hi < 0 || hi >= h) continue;
                            for (int c = 0; c < kw; ++c) {
                                const int wi = wo * stride - geom.pad_left + c;
                                if (wi < 0 || wi >= w) continue;
                                const std::int64_t ioff = ((static_cast<std::int64_t>(bi) * h + hi) * w + wi) * cin;
                                const std::int64_t koff = ((static_cast<std::int64_t>(r) * kw + c) * cin) * cout;
                                for (int ci = 0; ci < cin; ++ci) {
                                    const std::int64_t kc = koff + static_cast<std::int64_t>(ci) * cout;
                                    double acc = 0.0;
                                    for (int co = 0; co < cout; ++co) {
                                        const double gv = gp[co];
                                        acc += gv * k[kc + co];
                                        if (gk) gk[kc + co] += gv * in[ioff + ci];
                                    }
                                    if (gin) gin[ioff + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        },
        "conv2d");
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding) {
    require_rank(input, 4, "depthwise_conv2d", "input");
    require_rank(kernel, 3, "depthwise_conv2d", "kernel");
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), ch = input.dim(3);
    const int kh = kernel.dim(0), kw = kernel.dim(1), kc = kernel.dim(2);
    require(ch == kc, "depthwise_conv2d: input channels (" + std::to_string(ch) + ") != kernel channels (" +
                          std::to_string(kc) + ")");
    const ConvGeom g = conv_geometry("depthwise_conv2d", h, w, kh, kw, stride, padding);

    const double* in = input.data().data();
    const double* k = kernel.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel({n, g.out_h, g.out_w, ch})), 0.0);

    for (int bi = 0; bi < n; ++bi) {
        for (int ho = 0; ho < g.out_h; ++ho) {
            for (int wo = 0; wo < g.out_w; ++wo) {
                double* op = &out[(((static_cast<std::int64_t>(bi) * g.out_h + ho) * g.out_w + wo) * ch)];
                for (int r = 0; r < kh; ++r) {
                    const int hi = ho * stride - g.pad_top + r;
                    if (hi < 0 || hi >= h) continue;
                    for (int c = 0; c < kw; ++c) {
                        const int wi = wo * stride - g.pad_left + c;
                        if (wi < 0 || wi >= w) continue;
                        const double* ip = &in[(((static_cast<std::int64_t>(bi) * h + hi) * w + wi) * ch)];
                        const double* kp = &k[(static_cast<std::int64_t>(r) * kw + c) * ch];
                        for (int ci = 0; ci < ch; ++ci) op[ci] += ip[ci] * kp[ci];
                    }
                }
            }
        }
    }

    auto geom = g;
    return Tensor::make_op(
        {n, g.out_h, g.out_w, ch}, std::move(out), {input, kernel},
        [n, h, w, ch, kh, kw, stride, geom](Node& self) {
            const double* go = self.grad.data();
            const double* in = self.parents[0].data().data();
            const double* k = self.parents[1].data().data();
            double* gin = grad_of(self, 0);
            double* gk = grad_of(self, 1);
            for (int bi = 0; bi < n; ++bi) {
                for (int ho = 0; ho < geom.out_h; ++ho) {
                    for (int wo = 0; wo < geom.out_w; ++wo) {
                        const double* gp = &go[(((static_cast<std::int64_t>(bi) * geom.out_h + ho) * geom.out_w + wo) * ch)];
                        for (int r = 0; r < kh; ++r) {
                            const int hi = ho * stride - geom.pad_top + r;
                            if (hi < 0 || hi >= h) continue;
                            for (int c = 0; c < kw; ++c) {
                                const int wi = wo * stride - geom.pad_left + c;
                                if (wi < 0 || wi >= w) continue;
                                const std::int64_t ioff = ((static_cast<std::int64_t>(bi) * h + hi) * w + wi) * ch;
                                const std::int64_t koff = (static_cast<std::int64_t>(r) * kw + c) * ch;
                                for (int ci = 0; ci < ch; ++ci) {
                                    if (gin) gin[ioff + ci] += gp[ci] * k[koff + ci];
                                    if (gk) gk[koff + ci] += gp[ci] * in[ioff + ci];
                                }
                            }
                        }
                    }
                }
            }
        },
        "depthwise_conv2d");
}

Tensor pointwise_conv2d(const Tensor& input, const Tensor& kernel) {
    require_rank(kernel, 4, "pointwise_conv2d", "kernel");
    require(kernel.dim(0) == 1 && kernel.dim(1) == 1,
            "pointwise_conv2d: kernel must be 1x1, got " + shape_str(kernel.shape()));
    return conv2d(input, kernel, 1, Padding::Valid);
}

// ---------------------------------------------------------------------------
// Shape and channel manipulation
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels", "a");
    require_rank(b, 4, "concat_channels", "b");
    for (int d = 0; d < 3; ++d) {
        require(a.dim(d) == b.dim(d), "concat_channels: operands disagree on axis " + std::to_string(d) + ": " +
                                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int n = a.dim(0), h = a.dim(1), w = a.dim(2), ca = a.dim(3), cb = b.dim(3);
    const std::int64_t pixels = static_cast<std::int64_t>(n) * h * w;
    std::vector<double> out(static_cast<std::size_t>(pixels * (ca + cb)));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::int64_t p = 0; p < pixels; ++p) {
        std::copy(pa + p * ca, pa + (p + 1) * ca, out.begin() + p * (ca + cb));
        std::copy(pb + p * cb, pb + (p + 1) * cb, out.begin() + p * (ca + cb) + ca);
    }
    return Tensor::make_op(
        {n, h, w, ca + cb}, std::move(out), {a, b},
        [pixels, ca, cb](Node& self) {
            const double* go = self.grad.data();
            double* ga = grad_of(self, 0);
            double* gb = grad_of(self, 1);
            for (std::int64_t p = 0; p < pixels; ++p) {
                const double* gp = go + p * (ca + cb);
                if (ga)
                    for (int c = 0; c < ca; ++c) ga[p * ca + c] += gp[c];
                if (gb)
                    for (int c = 0; c < cb; ++c) gb[p * cb + c] += gp[ca + c];
            }
        },
        "concat_channels");
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
    require_rank(x, 4, "slice_channels", "x");
    const int n = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
    require(0 <= begin && begin <= end && end <= ch,
            "slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                std::to_string(ch) + " channels");
    const int cs = end - begin;
    const std::int64_t pixels = static_cast<std::int64_t>(n) * h * w;
    std::vector<double> out(static_cast<std::size_t>(pixels * cs));
    const double* px = x.data().data();
    for (std::int64_t p = 0; p < pixels; ++p) {
        std::copy(px + p * ch + begin, px + p * ch + end, out.begin() + p * cs);
    }
    return Tensor::make_op(
        {n, h, w, cs}, std::move(out), {x},
        [pixels, ch, begin, cs](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            const double* go = self.grad.data();
            for (std::int64_t p = 0; p < pixels; ++p)
                for (int c = 0; c < cs; ++c) gx[p * ch + begin + c] += go[p * cs + c];
        },
        "slice_channels");
}

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
    require(shape_numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out = x.data();
    return Tensor::make_op(
        shape, std::move(out), {x},
        [](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        },
        "reshape");
}

Tensor flatten(const Tensor& x) {
    require(x.rank() >= 1, "flatten: rank must be >= 1");
    const int n = x.dim(0);
    const int f = n > 0 ? static_cast<int>(x.numel() / n) : 0;
    return reshape(x, {n, f});
}

// ---------------------------------------------------------------------------
// Dense / classification
// ---------------------------------------------------------------------------

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    require_rank(bias, 1, "dense", "bias");
    const int n = input.dim(0), f = input.dim(1), k = weight.dim(1);
    require(weight.dim(0) == f, "dense: input features (" + std::to_string(f) + ") != weight rows (" +
                                    std::to_string(weight.dim(0)) + ")");
    require(bias.dim(0) == k, "dense: bias length != output width");

    const double* in = input.data().data();
    const double* wt = weight.data().data();
    const double* b = bias.data().data();
    std::vector<double> out(static_cast<std::size_t>(n) * k);
    for (int i = 0; i < n; ++i) {
        double* op = &out[static_cast<std::size_t>(i) * k];
        std::copy(b, b + k, op);
        for (int j = 0; j < f; ++j) {
            const double a = in[static_cast<std::size_t>(i) * f + j];
            if (a == 0.0) continue;
            const double* wr = &wt[static_cast<std::size_t>(j) * k];
            for (int c = 0; c < k; ++c) op[c] += a * wr[c];
        }
    }
    return Tensor::make_op(
        {n, k}, std::move(out), {input, weight, bias},
        [n, f, k](Node& self) {
            const double* go = self.grad.data();
            const double* in = self.parents[0].data().data();
            const double* wt = self.parents[1].data().data();
            double* gin = grad_of(self, 0);
            double* gw = grad_of(self, 1);
            double* gb = grad_of(self, 2);
            for (int i = 0; i < n; ++i) {
                const double* gp = &go[static_cast<std::size_t>(i) * k];
                if (gb)
                    for (int c = 0; c < k; ++c) gb[c] += gp[c];
                for (int j = 0; j < f; ++j) {
                    const double* wr = &wt[static_cast<std::size_t>(j) * k];
                    const double a = in[static_cast<std::size_t>(i) * f + j];
                    double acc = 0.0;
                    for (int c = 0; c < k; ++c) {
                        acc += gp[c] * wr[c];
                        if (gw) gw[static_cast<std::size_t>(j) * k + c] += a * gp[c];
                    }
                    if (gin) gin[static_cast<std::size_t>(i) * f + j] += acc;
                }
            }
        },
        "dense");
}

Tensor softmax(const Tensor& logits) {
    require(logits.rank() >= 1, "softmax: rank must be >= 1");
    const int k = logits.dim(logits.rank() - 1);
    require(k >= 1, "softmax: empty last axis");
    const std::int64_t rows = logits.numel() / k;
    const double* in = logits.data().data();
    std::vector<double> out(logits.data().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* ip = in + r * k;
        double* op = out.data() + r * k;
        double mx = ip[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, ip[i]);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            op[i] = std::exp(ip[i] - mx);
            sum += op[i];
        }
        for (int i = 0; i < k; ++i) op[i] /= sum;
    }
    return Tensor::make_op(
        logits.shape(), std::move(out), {logits},
        [rows, k](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            const double* y = self.value.data();
            const double* go = self.grad.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yp = y + r * k;
                const double* gp = go + r * k;
                double dot = 0.0;
                for (int i = 0; i < k; ++i) dot += gp[i] * yp[i];
                for (int i = 0; i < k; ++i) gx[r * k + i] += yp[i] * (gp[i] - dot);
            }
        },
        "softmax");
}

Tensor cross_entropy(const Tensor& probs, const Tensor& labels) {
    require_rank(probs, 2, "cross_entropy", "probs");
    require_rank(labels, 2, "cross_entropy", "labels");
    require(probs.shape() == labels.shape(), "cross_entropy: probs " + shape_str(probs.shape()) +
                                                 " and labels " + shape_str(labels.shape()) + " differ");
    const int n = probs.dim(0), k = probs.dim(1);
    require(n >= 1, "cross_entropy: empty batch");
    const double* l = labels.data().data();
    for (int i = 0; i < n; ++i) {
        int ones = 0;
        for (int c = 0; c < k; ++c) {
            const double v = l[static_cast<std::size_t>(i) * k + c];
            if (v == 1.0) ++ones;
            else if (v != 0.0)
                throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) + " is not one-hot");
        }
        if (ones != 1) throw std::invalid_argument("cross_entropy: label row " + std::to_string(i) + " is not one-hot");
    }

    constexpr double kClamp = 1e-12;
    const double* p = probs.data().data();
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) {
            if (l[static_cast<std::size_t>(i) * k + c] == 1.0) {
                loss -= std::log(std::max(p[static_cast<std::size_t>(i) * k + c], kClamp));
            }
        }
    }
    loss /= n;
    return Tensor::make_op(
        {1}, {loss}, {probs, labels},
        [n, k](Node& self) {
            double* gp = grad_of(self, 0);
            if (!gp) return;
            const double g = self.grad[0];
            const double* p = self.parents[0].data().data();
            const double* l = self.parents[1].data().data();
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * k; ++i) {
                if (l[i] == 1.0 && p[i] > kClamp) gp[i] -= g / (p[i] * n);
            }
        },
        "cross_entropy");
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    const double* in = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            const double* in = self.parents[0].data().data();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (in[i] > 0.0) gx[i] += self.grad[i];
        },
        "relu");
}

Tensor swish(const Tensor& x) {
    std::vector<double> out(x.data().size());
    const double* in = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-in[i]));
        out[i] = in[i] * s;
    }
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            const double* in = self.parents[0].data().data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-in[i]));
                gx[i] += self.grad[i] * s * (1.0 + in[i] * (1.0 - s));
            }
        },
        "swish");
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;  // identity at eval time
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.data().size());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    std::vector<double> out(x.data().size());
    const double* in = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
    return Tensor::make_op(
        x.shape(), std::move(out), {x},
        [mask = std::move(mask)](Node& self) {
            double* gx = grad_of(self, 0);
            if (!gx) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * mask[i];
        },
        "dropout");
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>& batch_mean, std::vector<double>& batch_var) {
    require_rank(x, 4, "batch_norm", "input");
    const int ch = x.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == ch, "batch_norm: gamma shape mismatch");
    require(beta.rank() == 1 && beta.dim(0) == ch, "batch_norm: beta shape mismatch");
    const std::int64_t m = x.numel() / ch;  // elements per channel
    require(m >= 1, "batch_norm: empty input");

    const double* in = x.data().data();
    batch_mean.assign(ch, 0.0);
    batch_var.assign(ch, 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (int c = 0; c < ch; ++c) batch_mean[c] += in[i * ch + c];
    for (int c = 0; c < ch; ++c) batch_mean[c] /= static_cast<double>(m);
    for (std::int64_t i = 0; i < m; ++i)
        for (int c = 0; c < ch; ++c) {
            const double d = in[i * ch + c] - batch_mean[c];
            batch_var[c] += d * d;
        }
    for (int c = 0; c < ch; ++c) batch_var[c] /= static_cast<double>(m);

    const double* g = gamma.data().data();
    const double* b = beta.data().data();
    std::vector<double> inv_std(ch);
    for (int c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(batch_var[c] + eps);
    std::vector<double> out(x.data().size());
    for (std::int64_t i = 0; i < m; ++i)
        for (int c = 0; c < ch; ++c)
            out[i * ch + c] = g[c] * (in[i * ch + c] - batch_mean[c]) * inv_std[c] + b[c];

    std::vector<double> mean = batch_mean, istd = inv_std;
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [m, ch, mean = std::move(mean), istd = std::move(istd)](Node& self) {
            const double* go = self.grad.data();
            const double* in = self.parents[0].data().data();
            const double* g = self.parents[1].data().data();
            double* gx = grad_of(self, 0);
            double* gg = grad_of(self, 1);
            double* gb = grad_of(self, 2);
            // Accumulated per-channel sums needed by the batch-statistics terms.
            std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
            for (std::int64_t i = 0; i < m; ++i)
                for (int c = 0; c < ch; ++c) {
                    const double xhat = (in[i * ch + c] - mean[c]) * istd[c];
                    sum_dy[c] += go[i * ch + c];
                    sum_dy_xhat[c] += go[i * ch + c] * xhat;
                }
            if (gg)
                for (int c = 0; c < ch; ++c) gg[c] += sum_dy_xhat[c];
            if (gb)
                for (int c = 0; c < ch; ++c) gb[c] += sum_dy[c];
            if (gx) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::int64_t i = 0; i < m; ++i)
                    for (int c = 0; c < ch; ++c) {
                        const double xhat = (in[i * ch + c] - mean[c]) * istd[c];
                        gx[i * ch + c] += g[c] * istd[c] *
                                          (go[i * ch + c] - inv_m * sum_dy[c] - inv_m * xhat * sum_dy_xhat[c]);
                    }
            }
        },
        "batch_norm");
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps) {
    require_rank(x, 4, "batch_norm", "input");
    const int ch = x.dim(3);
    require(gamma.rank() == 1 && gamma.dim(0) == ch, "batch_norm: gamma shape mismatch");
    require(beta.rank() == 1 && beta.dim(0) == ch, "batch_norm: beta shape mismatch");
    require(running_mean.dim(0) == ch && running_var.dim(0) == ch, "batch_norm: running stats shape mismatch");
    const std::int64_t m = x.numel() / ch;

    const double* in = x.data().data();
    const double* g = gamma.data().data();
    const double* b = beta.data().data();
    const double* rm = running_mean.data().data();
    const double* rv = running_var.data().data();
    std::vector<double> istd(ch);
    for (int c = 0; c < ch; ++c) istd[c] = 1.0 / std::sqrt(rv[c] + eps);
    std::vector<double> out(x.data().size());
    for (std::int64_t i = 0; i < m; ++i)
        for (int c = 0; c < ch; ++c) out[i * ch + c] = g[c] * (in[i * ch + c] - rm[c]) * istd[c] + b[c];

    std::vector<double> mean(rm, rm + ch);
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [m, ch, mean = std::move(mean), istd = std::move(istd)](Node& self) {
            const double* go = self.grad.data();
            const double* in = self.parents[0].data().data();
            const double* g = self.parents[1].data().data();
            double* gx = grad_of(self, 0);
            double* gg = grad_of(self, 1);
            double* gb = grad_of(self, 2);
            for (std::int64_t i = 0; i < m; ++i)
                for (int c = 0; c < ch; ++c) {
                    const double xhat = (in[i * ch + c] - mean[c]) * istd[c];
                    if (gx) gx[i * ch + c] += go[i * ch + c] * g[c] * istd[c];
                    if (gg) gg[c] += go[i * ch + c] * xhat;
                    if (gb) gb[c] += go[i * ch + c];
                }
        },
        "batch_norm");
}

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            for (std::size_t p = 0; p < 2; ++p) {
                double* g = grad_of(self, p);
                if (g)
                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            double* ga = grad_of(self, 0);
            double* gb = grad_of(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (ga) ga[i] += self.grad[i];
                if (gb) gb[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            const double* av = self.parents[0].data().data();
            const double* bv = self.parents[1].data().data();
            double* ga = grad_of(self, 0);
            double* gb = grad_of(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (ga) ga[i] += self.grad[i] * bv[i];
                if (gb) gb[i] += self.grad[i] * av[i];
            }
        },
        "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            const double* av = self.parents[0].data().data();
            const double* bv = self.parents[1].data().data();
            double* ga = grad_of(self, 0);
            double* gb = grad_of(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (ga) ga[i] += self.grad[i] / bv[i];
                if (gb) gb[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
            }
        },
        "div");
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
    return Tensor::make_op(
        a.shape(), std::move(out), {a},
        [](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        },
        "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return Tensor::make_op(
        a.shape(), std::move(out), {a},
        [s](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
        },
        "mul_scalar");
}

Tensor square(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
    return Tensor::make_op(
        a.shape(), std::move(out), {a},
        [](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            const double* av = self.parents[0].data().data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * 2.0 * av[i];
        },
        "square");
}

Tensor sqrt_op(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.data()[i]);
    return Tensor::make_op(
        a.shape(), std::move(out), {a},
        [](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            const double* y = self.value.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * 0.5 / y[i];
        },
        "sqrt");
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::make_op(
        {1}, {s}, {x},
        [](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            const double gv = self.grad[0];
            const std::size_t n = self.parents[0].data().size();
            for (std::size_t i = 0; i < n; ++i) g[i] += gv;
        },
        "sum_all");
}

Tensor mean_all(const Tensor& x) {
    require(x.numel() > 0, "mean_all: empty tensor");
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last_dim(const Tensor& x) {
    require(x.rank() >= 1, "sum_last_dim: rank must be >= 1");
    const int d = x.dim(x.rank() - 1);
    require(d >= 1, "sum_last_dim: empty last axis");
    const std::int64_t rows = x.numel() / d;
    std::vector<int> out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
    const double* in = x.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(r)] += in[r * d + i];
    return Tensor::make_op(
        out_shape, std::move(out), {x},
        [rows, d](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            for (std::int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < d; ++i) g[r * d + i] += self.grad[static_cast<std::size_t>(r)];
        },
        "sum_last_dim");
}

Tensor mul_last_dim(const Tensor& x, const Tensor& s) {
    require(x.rank() >= 1, "mul_last_dim: rank must be >= 1");
    const int d = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / d;
    require(s.numel() == rows, "mul_last_dim: scalar tensor " + shape_str(s.shape()) + " does not match rows of " +
                                   shape_str(x.shape()));
    std::vector<double> out(x.data().size());
    const double* in = x.data().data();
    const double* sv = s.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) out[r * d + i] = in[r * d + i] * sv[r];
    return Tensor::make_op(
        x.shape(), std::move(out), {x, s},
        [rows, d](Node& self) {
            const double* in = self.parents[0].data().data();
            const double* sv = self.parents[1].data().data();
            double* gx = grad_of(self, 0);
            double* gs = grad_of(self, 1);
            for (std::int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < d; ++i) {
                    if (gx) gx[r * d + i] += self.grad[r * d + i] * sv[r];
                    if (gs) gs[r] += self.grad[r * d + i] * in[r * d + i];
                }
        },
        "mul_last_dim");
}

Tensor gap(const Tensor& x) {
    require_rank(x, 4, "gap", "x");
    const int n = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
    require(h >= 1 && w >= 1, "gap: empty spatial extent");
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const double* in = x.data().data();
    std::vector<double> out(static_cast<std::size_t>(n) * ch, 0.0);
    for (int bi = 0; bi < n; ++bi)
        for (std::int64_t p = 0; p < hw; ++p)
            for (int c = 0; c < ch; ++c) out[static_cast<std::size_t>(bi) * ch + c] += in[(bi * hw + p) * ch + c];
    for (double& v : out) v /= static_cast<double>(hw);
    return Tensor::make_op(
        {n, 1, 1, ch}, std::move(out), {x},
        [n, hw, ch](Node& self) {
            double* g = grad_of(self, 0);
            if (!g) return;
            const double inv = 1.0 / static_cast<double>(hw);
            for (int bi = 0; bi < n; ++bi)
                for (std::int64_t p = 0; p < hw; ++p)
                    for (int c = 0; c < ch; ++c)
                        g[(bi * hw + p) * ch + c] += self.grad[static_cast<std::size_t>(bi) * ch + c] * inv;
        },
        "gap");
}

// ---------------------------------------------------------------------------
// Capsule building blocks
// ---------------------------------------------------------------------------

Tensor capsule_predict(const Tensor& u, const Tensor& W) {
    require_rank(u, 3, "capsule_predict", "u");
    require_rank(W, 4, "capsule_predict", "W");
    const int n = u.dim(0), ci = u.dim(1), di = u.dim(2);
    const int co = W.dim(1), dj = W.dim(2);
    require(W.dim(0) == ci && W.dim(3) == di, "capsule_predict: transforms " + shape_str(W.shape()) +
                                                  " do not match input capsules " + shape_str(u.shape()));
    const double* uv = u.data().data();
    const double* wv = W.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel({n, ci, co, dj})), 0.0);
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < ci; ++i)
            for (int j = 0; j < co; ++j)
                for (int k = 0; k < dj; ++k) {
                    double acc = 0.0;
                    const std::int64_t woff = ((static_cast<std::int64_t>(i) * co + j) * dj + k) * di;
                    const std::int64_t uoff = (static_cast<std::int64_t>(b) * ci + i) * di;
                    for (int d = 0; d < di; ++d) acc += wv[woff + d] * uv[uoff + d];
                    out[((static_cast<std::int64_t>(b) * ci + i) * co + j) * dj + k] = acc;
                }
    return Tensor::make_op(
        {n, ci, co, dj}, std::move(out), {u, W},
        [n, ci, co, dj, di](Node& self) {
            const double* go = self.grad.data();
            const double* uv = self.parents[0].data().data();
            const double* wv = self.parents[1].data().data();
            double* gu = grad_of(self, 0);
            double* gw = grad_of(self, 1);
            for (int b = 0; b < n; ++b)
                for (int i = 0; i < ci; ++i)
                    for (int j = 0; j < co; ++j)
                        for (int k = 0; k < dj; ++k) {
                            const double g = go[((static_cast<std::int64_t>(b) * ci + i) * co + j) * dj + k];
                            if (g == 0.0) continue;
                            const std::int64_t woff = ((static_cast<std::int64_t>(i) * co + j) * dj + k) * di;
                            const std::int64_t uoff = (static_cast<std::int64_t>(b) * ci + i) * di;
                            for (int d = 0; d < di; ++d) {
                                if (gu) gu[uoff + d] += g * wv[woff + d];
                                if (gw) gw[woff + d] += g * uv[uoff + d];
                            }
                        }
        },
        "capsule_predict");
}

Tensor coupling_weighted_sum(const Tensor& c, const Tensor& uhat) {
    require_rank(c, 3, "coupling_weighted_sum", "c");
    require_rank(uhat, 4, "coupling_weighted_sum", "uhat");
    const int n = uhat.dim(0), ci = uhat.dim(1), co = uhat.dim(2), dj = uhat.dim(3);
    require(c.dim(0) == n && c.dim(1) == ci && c.dim(2) == co,
            "coupling_weighted_sum: couplings " + shape_str(c.shape()) + " do not match predictions " +
                shape_str(uhat.shape()));
    const double* cv = c.data().data();
    const double* uv = uhat.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel({n, co, dj})), 0.0);
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < ci; ++i)
            for (int j = 0; j < co; ++j) {
                const double w = cv[(static_cast<std::int64_t>(b) * ci + i) * co + j];
                const std::int64_t uoff = ((static_cast<std::int64_t>(b) * ci + i) * co + j) * dj;
                const std::int64_t ooff = (static_cast<std::int64_t>(b) * co + j) * dj;
                for (int k = 0; k < dj; ++k) out[ooff + k] += w * uv[uoff + k];
            }
    return Tensor::make_op(
        {n, co, dj}, std::move(out), {c, uhat},
        [n, ci, co, dj](Node& self) {
            const double* go = self.grad.data();
            const double* cv = self.parents[0].data().data();
            const double* uv = self.parents[1].data().data();
            double* gc = grad_of(self, 0);
            double* gu = grad_of(self, 1);
            for (int b = 0; b < n; ++b)
                for (int i = 0; i < ci; ++i)
                    for (int j = 0; j < co; ++j) {
                        const std::int64_t coff = (static_cast<std::int64_t>(b) * ci + i) * co + j;
                        const std::int64_t uoff = coff * dj;
                        const std::int64_t ooff = (static_cast<std::int64_t>(b) * co + j) * dj;
                        double acc = 0.0;
                        for (int k = 0; k < dj; ++k) {
                            acc += go[ooff + k] * uv[uoff + k];
                            if (gu) gu[uoff + k] += go[ooff + k] * cv[coff];
                        }
                        if (gc) gc[coff] += acc;
                    }
        },
        "coupling_weighted_sum");
}

Tensor capsule_agreement(const Tensor& uhat, const Tensor& v) {
    require_rank(uhat, 4, "capsule_agreement", "uhat");
    require_rank(v, 3, "capsule_agreement", "v");
    const int n = uhat.dim(0), ci = uhat.dim(1), co = uhat.dim(2), dj = uhat.dim(3);
    require(v.dim(0) == n && v.dim(1) == co && v.dim(2) == dj,
            "capsule_agreement: outputs " + shape_str(v.shape()) + " do not match predictions " +
                shape_str(uhat.shape()));
    const double* uv = uhat.data().data();
    const double* vv = v.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel({n, ci, co})), 0.0);
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < ci; ++i)
            for (int j = 0; j < co; ++j) {
                const std::int64_t uoff = ((static_cast<std::int64_t>(b) * ci + i) * co + j) * dj;
                const std::int64_t voff = (static_cast<std::int64_t>(b) * co + j) * dj;
                double acc = 0.0;
                for (int k = 0; k < dj; ++k) acc += uv[uoff + k] * vv[voff + k];
                out[(static_cast<std::int64_t>(b) * ci + i) * co + j] = acc;
            }
    return Tensor::make_op(
        {n, ci, co}, std::move(out), {uhat, v},
        [n, ci, co, dj](Node& self) {
            const double* go = self.grad.data();
            const double* uv = self.parents[0].data().data();
            const double* vv = self.parents[1].data().data();
            double* gu = grad_of(self, 0);
            double* gv = grad_of(self, 1);
            for (int b = 0; b < n; ++b)
                for (int i = 0; i < ci; ++i)
                    for (int j = 0; j < co; ++j) {
                        const double g = go[(static_cast<std::int64_t>(b) * ci + i) * co + j];
                        if (g == 0.0) continue;
                        const std::int64_t uoff = ((static_cast<std::int64_t>(b) * ci + i) * co + j) * dj;
                        const std::int64_t voff = (static_cast<std::int64_t>(b) * co + j) * dj;
                        for (int k = 0; k < dj; ++k) {
                            if (gu) gu[uoff + k] += g * vv[voff + k];
                            if (gv) gv[voff + k] += g * uv[uoff + k];
                        }
                    }
        },
        "capsule_agreement");
}

}  // namespace roct
