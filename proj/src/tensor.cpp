#include "roct/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace roct {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw std::invalid_argument("tensor: negative extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void ensure_finite(const std::vector<double>& v, const char* op_name) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op_name) + ": non-finite value in result");
        }
    }
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    return from(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(const std::vector<int>& shape, double v) {
    return from(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), v));
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = shape;
    t.node_->value = std::move(data);
    ensure_finite(t.node_->value, "tensor");
    return t;
}

int Tensor::dim(int i) const {
    const auto& s = node().shape;
    if (i < 0 || i >= static_cast<int>(s.size())) {
        throw std::invalid_argument("tensor: dim index " + std::to_string(i) + " out of range for " + shape_str(s));
    }
    return s[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape()));
    return node().value[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
    node().requires_grad = b;
    if (b) ensure_grad();
    return *this;
}

void Tensor::ensure_grad() {
    Node& n = node();
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

const std::vector<double>& Tensor::grad() const {
    const Node& n = node();
    if (!n.requires_grad) throw std::runtime_error("tensor: grad() on tensor that does not require gradients");
    if (n.grad.size() != n.value.size()) {
        const_cast<Node&>(n).grad.assign(n.value.size(), 0.0);
    }
    return n.grad;
}

void Tensor::zero_grad() {
    Node& n = node();
    n.grad.assign(n.value.size(), 0.0);
}

Tensor Tensor::make_op(std::vector<int> shape, std::vector<double> value, std::vector<Tensor> parents,
                       std::function<void(Node&)> backward_fn, const char* op_name) {
    ensure_finite(value, op_name);
    Tensor out = from(shape, std::move(value));
    bool needs = false;
    if (g_grad_enabled) {
        for (const Tensor& p : parents) {
            if (p.defined() && p.node().requires_grad) { needs = true; break; }
        }
    }
    if (needs) {
        Node& n = out.node();
        n.requires_grad = true;
        n.parents = std::move(parents);
        n.backward = std::move(backward_fn);
    }
    return out;
}

void Tensor::backward() {
    Node& root = node();
    if (numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(shape()));
    if (!root.requires_grad) {
        throw std::runtime_error("backward: tensor has no recorded provenance");
    }

    // Post-order DFS gives a topological order; gradients are then pushed in
    // reverse so every node's grad is complete before its backward runs.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame { Node* n; std::size_t next; };
    std::vector<Frame> stack;
    stack.push_back({&root, 0});
    visited.insert(&root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].raw();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    }
    root.grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::bounded(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("rng: bounded(0)");
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do { x = engine_(); } while (x >= limit);
    return x % n;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = splitmix(a);
    h = splitmix(h ^ (b + 0x9e3779b97f4a7c15ULL));
    h = splitmix(h ^ (c + 0x9e3779b97f4a7c15ULL));
    return h;
}

}  // namespace roct
