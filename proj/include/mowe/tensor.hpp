// Dense double-precision tensor with reverse-mode autodiff via a replay tape.
#pragma once

#include <functional>
#include <memory>

#include "mowe/common.hpp"

namespace mowe {

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};

// Value handle with shared storage. Copies alias; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        impl_->shape = std::move(shape);
        impl_->value.assign(static_cast<size_t>(numel(impl_->shape)), fill);
        impl_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t(std::move(shape), 0.0, requires_grad);
        for (double& v : t.impl_->value) v = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

    double* data() { return impl_->value.data(); }
    const double* data() const { return impl_->value.data(); }
    std::vector<double>& vec() { return impl_->value; }
    const std::vector<double>& vec() const { return impl_->value; }

    double item() const {
        if (size() != 1) throw UsageError("item(): tensor is not scalar");
        return impl_->value[0];
    }

    double& operator[](int64_t i) { return impl_->value[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return impl_->value[static_cast<size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }

    // Materializes a zero gradient on first access.
    std::vector<double>& grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
        return impl_->grad;
    }
    const std::vector<double>& grad() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
        return impl_->grad;
    }

    void zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

    // Value copy with no grad participation.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = impl_->shape;
        t.impl_->value = impl_->value;
        return t;
    }

    Tensor clone() const {
        Tensor t = detach();
        t.impl_->requires_grad = impl_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape: ordered op log. Execution order is a topological order of the graph,
// so replaying backward functions in reverse propagates gradients correctly.
// One tape per thread may be active; independent model instances on separate
// threads each get their own.

class Tape {
public:
    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    struct Scope {
        explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
        ~Scope() { active() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss)=1 and replays the log in reverse. Gradients
    // accumulate; call zero_grad on parameters between backward passes.
    void backward(const Tensor& loss) {
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
        if (!is_finite(loss.item())) throw NumericError("backward: loss is not finite");
        loss.impl()->grad.assign(1, 0.0);
        loss.impl()->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

inline void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw UsageError("backward: no active tape");
    t->backward(loss);
}

// True when the op must be recorded for gradient replay.
inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Gradient buffer of an impl, materialized on demand.
inline std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& impl) {
    if (impl->grad.empty()) impl->grad.assign(impl->value.size(), 0.0);
    return impl->grad;
}

inline bool has_grad(const std::shared_ptr<TensorImpl>& impl) { return !impl->grad.empty(); }

}  // namespace mowe
