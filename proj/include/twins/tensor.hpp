#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace twins {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;

    void accumulate(std::size_t i, double g) {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        grad[i] += g;
    }
    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

/// Handle to a dense row-major array of doubles. Copies share storage;
/// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl>()) {
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
        if (numel(shape) != values.size())
            throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(values.size()));
        impl_->shape = std::move(shape);
        impl_->value = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor full(Shape shape, double fill, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, fill), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->value.size(); }

    std::span<double> values() { return impl_->value; }
    std::span<const double> values() const { return impl_->value; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return impl_->value[0];
    }
    double& operator[](std::size_t i) { return impl_->value[i]; }
    double operator[](std::size_t i) const { return impl_->value[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    /// Accumulated gradient; zeros when nothing reached this tensor.
    std::vector<double> grad() const {
        if (impl_->grad.empty()) return std::vector<double>(impl_->value.size(), 0.0);
        return impl_->grad;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { impl_->grad.clear(); }

    Tensor clone() const {
        Tensor t(impl_->shape, impl_->value, impl_->requires_grad);
        return t;
    }

    /// Value copy detached from any graph.
    Tensor detach() const { return Tensor(impl_->shape, impl_->value, false); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

    bool all_finite() const {
        for (double v : impl_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Differentiation tape
// ---------------------------------------------------------------------------

struct TapeNode {
    std::string op;
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
};

/// Records op nodes in execution order. Backward replays them in exact
/// reverse order; clearing drops every saved activation.
class Tape {
public:
    void record(std::string op, const Tensor& out, std::function<void()> backward) {
        nodes_.push_back({std::move(op), out.impl(), std::move(backward)});
    }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<TapeNode>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->out->grad.empty()) continue;
            if (!fault_op_.empty() && it->op == fault_op_)
                for (auto& g : it->out->grad) g *= fault_factor_;
            it->backward();
        }
    }

    /// Test fixture: corrupt the upstream gradient of every node named `op`.
    void inject_fault(std::string op, double factor = 1.25) {
        fault_op_ = std::move(op);
        fault_factor_ = factor;
    }
    void clear_fault() { fault_op_.clear(); }
    const std::string& fault_op() const { return fault_op_; }

private:
    std::vector<TapeNode> nodes_;
    std::string fault_op_;
    double fault_factor_ = 1.0;
};

namespace detail {
inline thread_local Tape active_tape;
inline thread_local int no_grad_depth = 0;
}  // namespace detail

inline Tape& active_tape() { return detail::active_tape; }
inline bool grad_enabled() { return detail::no_grad_depth == 0; }

class NoGradGuard {
public:
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// True when an op over `inputs` must be recorded.
inline bool needs_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

/// Populates gradients on every requires_grad tensor reachable from `loss`
/// and consumes the active tape.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    auto& tape = active_tape();
    loss.impl()->grad_buffer()[0] += 1.0;
    tape.run_backward();
    tape.clear();
}

// ---------------------------------------------------------------------------
// Multiply-accumulate counters
// ---------------------------------------------------------------------------

/// Per-section MAC counts, filled by the math kernels while enabled.
class MacCounter {
public:
    void enable(bool on) { enabled_ = on; }
    bool enabled() const { return enabled_; }
    void reset() { counts_.clear(); }
    void add(std::uint64_t n) {
        if (enabled_) counts_[section_] += n;
    }
    std::uint64_t get(const std::string& section) const {
        auto it = counts_.find(section);
        return it == counts_.end() ? 0 : it->second;
    }
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto& [k, v] : counts_) t += v;
        return t;
    }
    const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

    std::string section_ = "other";

private:
    bool enabled_ = false;
    std::map<std::string, std::uint64_t> counts_;
};

namespace detail {
inline thread_local MacCounter mac_counter;
}
inline MacCounter& mac_counter() { return detail::mac_counter; }

class MacSection {
public:
    explicit MacSection(std::string name) : prev_(mac_counter().section_) {
        mac_counter().section_ = std::move(name);
    }
    ~MacSection() { mac_counter().section_ = prev_; }
    MacSection(const MacSection&) = delete;
    MacSection& operator=(const MacSection&) = delete;

private:
    std::string prev_;
};

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = true) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

inline Tensor normal(Shape shape, double mean, double stddev, Rng& rng, bool requires_grad = false) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace twins
