#include "deblurkit/tensor.hpp"

#include "deblurkit/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dbk {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string TensorShape::str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
}

Tensor Tensor::zeros(TensorShape s, bool requires_grad) {
    return from_data(std::vector<float>(static_cast<std::size_t>(s.numel()), 0.0f),
                     s, requires_grad);
}

Tensor Tensor::full(TensorShape s, float value, bool requires_grad) {
    return from_data(std::vector<float>(static_cast<std::size_t>(s.numel()), value),
                     s, requires_grad);
}

Tensor Tensor::from_data(std::vector<float> data, TensorShape s, bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != s.numel())
        throw ContractError("Tensor::from_data: size " + std::to_string(data.size()) +
                            " does not match shape " + s.str());
    auto node = std::make_shared<detail::Node>();
    node->data = std::move(data);
    node->shape = s;
    node->requires_grad = requires_grad;
    return from_node(std::move(node));
}

Tensor Tensor::scalar(float value) { return from_data({value}, {1, 1, 1, 1}); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("Tensor::item: not a scalar, shape " + shape().str());
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->data = node_->data;
    node->shape = node_->shape;
    node->requires_grad = false;
    return from_node(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::reshaped(TensorShape s) const {
    if (s.numel() != numel())
        throw ContractError("Tensor::reshaped: numel mismatch " + shape().str() +
                            " -> " + s.str());
    auto node = std::make_shared<detail::Node>();
    node->data = node_->data;
    node->shape = s;
    if (g_grad_enabled && node_->requires_grad) {
        node->requires_grad = true;
        node->parents = {node_};
        node->backward_fn = [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        };
    }
    return from_node(std::move(node));
}

void Tensor::backward(bool retain_graph) {
    if (!node_) throw ContractError("backward on undefined tensor");
    if (numel() != 1) throw ContractError("backward requires a scalar root");

    // Topological order by iterative DFS.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::Node* parent = node->parents[next_child++].get();
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn && node->requires_grad) node->backward_fn(*node);
    }

    if (!retain_graph) {
        for (detail::Node* node : order) {
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

} // namespace dbk
