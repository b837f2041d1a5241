#ifndef ROCT_TENSOR_HPP
#define ROCT_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace roct {

/// Dense N-dimensional array of 64-bit floats with optional participation in
/// a reverse-mode differentiation tape.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once produced by an operation; the only sanctioned mutation is
/// through data_mut(), used by the optimizer and running-statistics updates,
/// which happen strictly between recorded computations.
///
/// Every operation that produces a Tensor records its inputs when any of
/// them requires gradients, so that backward() on a scalar result can push
/// gradients back to all reachable leaves.
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<double> value;
        std::vector<double> grad;   // allocated iff requires_grad
        bool requires_grad = false;
        std::vector<Tensor> parents;
        std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents
    };

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, double v);
    static Tensor from(const std::vector<int>& shape, std::vector<double> data);
    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }

    const std::vector<int>& shape() const { return node().shape; }
    int dim(int i) const;
    int rank() const { return static_cast<int>(node().shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node().value.size()); }

    const std::vector<double>& data() const { return node().value; }
    /// Direct value access for deliberate out-of-tape mutation (optimizer
    /// steps, running statistics). Never call on an op result that is still
    /// part of a live graph.
    std::vector<double>& data_mut() { return node().value; }

    double item() const;
    double at(std::int64_t i) const { return node().value[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node().requires_grad; }
    /// Marks a leaf as differentiable and allocates its zero gradient.
    Tensor& set_requires_grad(bool b);

    const std::vector<double>& grad() const;
    void zero_grad();

    /// Reverse-mode sweep from a scalar result. Populates grad on every
    /// reachable tensor that requires gradients. Throws if this tensor is
    /// not a scalar or has no recorded provenance.
    void backward();

    /// Internal: builds an op result node. `parents` are recorded and
    /// `backward_fn` kept only when some parent requires gradients and
    /// gradient recording is enabled.
    static Tensor make_op(std::vector<int> shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn,
                          const char* op_name);

    Node& node() { check_defined(); return *node_; }
    const Node& node() const { check_defined(); return *node_; }
    Node* raw() const { return node_.get(); }

private:
    void check_defined() const {
        if (!node_) throw std::runtime_error("tensor: use of undefined tensor");
    }
    void ensure_grad();

    std::shared_ptr<Node> node_;
};

/// Number of elements implied by a shape.
std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Throws if any element of `v` is NaN or infinite. Ops call this on their
/// outputs: a non-finite forward value is always an error here.
void ensure_finite(const std::vector<double>& v, const char* op_name);

/// RAII guard that disables gradient recording on the current thread.
/// Used for evaluation passes where no backward sweep will follow.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
private:
    bool prev_;
};

bool grad_enabled();

/// Deterministic random source. Wraps std::mt19937_64 (fully specified by
/// the standard) with hand-rolled transforms so streams are reproducible
/// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n) by rejection; n must be positive.
    std::uint64_t bounded(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Unbiased in-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Mixes words into a well-spread 64-bit seed (splitmix64 finalizer).
/// Used to derive independent substreams, e.g. per (seed, epoch, sample).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace roct

#endif
