#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nighthaze::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    std::vector<double>& ensure_grad();
};

/// Shared handle to a dense double tensor that records the operations
/// producing it while gradient mode is on.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t numel() const { return impl_->value.size(); }

    std::span<double> data() { return impl_->value; }
    std::span<const double> data() const { return impl_->value; }
    std::vector<double>& values() { return impl_->value; }
    const std::vector<double>& values() const { return impl_->value; }
    /// Gradient buffer; empty if nothing has flowed into this tensor yet.
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad() { return impl_->ensure_grad(); }
    void zero_grad();

    bool requires_grad() const { return impl_->requires_grad; }
    double item() const;

    /// Reverse-mode sweep from this scalar (seeded with d/dself = 1).
    void backward() const;

    /// Same values, no history.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

/// Disables graph recording within its scope (inference, evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Creates the output node of an op. When any input requires a gradient
/// (and grad mode is on) the node keeps its inputs and `backward`.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward);

}  // namespace nighthaze::nn
