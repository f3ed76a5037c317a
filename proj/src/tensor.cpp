#include "nighthaze/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "nighthaze/error.hpp"

namespace nighthaze::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

std::vector<double>& TensorImpl::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->value.assign(nn::numel(shape), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != nn::numel(shape)) {
        throw ShapeError("tensor data size " + std::to_string(values.size()) + " does not match " + shape_string(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return impl_->value[0];
}

Tensor Tensor::detach() const { return Tensor::from(shape(), values(), false); }

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_string(shape()));
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    impl_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    if (impl->value.size() != nn::numel(impl->shape)) {
        throw ShapeError("op produced " + std::to_string(impl->value.size()) + " values for " + shape_string(impl->shape));
    }
    const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                           return t.defined() && t.requires_grad();
                       });
    if (track) {
        impl->requires_grad = true;
        for (auto& t : inputs) {
            if (t.defined()) impl->parents.push_back(t.shared());
        }
        impl->backward_fn = std::move(backward);
    }
    return Tensor(std::move(impl));
}

}  // namespace nighthaze::nn
