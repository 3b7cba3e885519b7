#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqarat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;                 // empty until touched by backward
    bool requires_grad = false;
    std::function<void()> backward;           // null for leaves
    std::vector<std::shared_ptr<TensorNode>> parents;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantic handle to a node in (or outside of) a computation graph.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (numel(shape) != data.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return leaf({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        if (node_->value.size() != 1)
            throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(node_->value.size()) +
                                        " elements, expected 1");
        return node_->value[0];
    }

    std::size_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Tape-style computation graph: ops recorded in creation order on the
// thread's active tape, replayed in exact reverse order by backward().
// With no active tape, ops run forward-only and produce constant tensors.
class Tape {
public:
    Tape() {
        prev_ = active_;
        active_ = this;
    }
    ~Tape() { active_ = prev_; }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    Tensor record(Shape shape, std::vector<double> value,
                  std::vector<Tensor> inputs, std::function<void()> backward_fn) {
        auto node = std::make_shared<TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        node->requires_grad = true;
        node->backward = std::move(backward_fn);
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        order_.push_back(node);
        return Tensor(node);
    }

    // Reverse-mode sweep from a scalar loss. Every recorded node after the
    // loss has zero upstream gradient and contributes nothing.
    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape()));
        if (order_.empty())
            throw std::logic_error("Tape::backward: no forward ops recorded");
        bool found = false;
        for (const auto& n : order_)
            if (n == loss.node()) { found = true; break; }
        if (!found)
            throw std::logic_error("Tape::backward: loss tensor was not recorded on this tape");

        for (auto& n : order_) n->ensure_grad();
        loss.node()->grad[0] = 1.0;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            auto& node = **it;
            for (auto& p : node.parents) p->ensure_grad();
            if (node.backward) node.backward();
        }
    }

    std::size_t num_nodes() const { return order_.size(); }

private:
    std::vector<std::shared_ptr<TensorNode>> order_;
    Tape* prev_ = nullptr;
    static thread_local Tape* active_;
};

inline thread_local Tape* Tape::active_ = nullptr;

}  // namespace vqarat
