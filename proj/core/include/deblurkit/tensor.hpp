#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dbk {

/// NCHW shape. Scalars are {1,1,1,1}; plain vectors {1,c,1,1}.
struct TensorShape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    bool operator==(const TensorShape&) const = default;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }
    std::string str() const;
};

namespace detail {

struct Node {
    std::vector<float> data;
    TensorShape shape;
    std::vector<float> grad; // sized lazily, same numel as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

} // namespace detail

/// Value-semantic handle to an autograd graph node. Copies share storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(TensorShape s, bool requires_grad = false);
    static Tensor full(TensorShape s, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<float> data, TensorShape s,
                            bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }
    const TensorShape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->shape.numel(); }

    std::span<float> data() { return node_->data; }
    std::span<const float> data() const { return node_->data; }
    float item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);

    std::span<const float> grad() const { return node_->grad; }
    std::span<float> grad_mut() { node_->ensure_grad(); return node_->grad; }
    void zero_grad();

    /// Reverse-mode pass from a scalar. Releases the tape afterwards unless
    /// retain_graph is set.
    void backward(bool retain_graph = false);

    /// Same values, detached from the tape.
    Tensor detach() const;
    /// Deep copy of the values, detached.
    Tensor clone() const;

    /// Same values with a new shape of equal numel; gradients flow through.
    Tensor reshaped(TensorShape s) const;

    std::shared_ptr<detail::Node>& node() { return node_; }
    const std::shared_ptr<detail::Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> n);

private:
    std::shared_ptr<detail::Node> node_;
};

/// While alive, newly created ops do not record the tape (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

} // namespace dbk
