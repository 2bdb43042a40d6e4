#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "plgf/tensor.hpp"

namespace plgf {

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename Scalar>
struct Node {
    using Array = typename Tensor<Scalar>::Array;

    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Array& grad_array() {
        if (grad.empty()) grad = Tensor<Scalar>(value.shape());
        return grad.array();
    }
};

/// Handle to a value on the autodiff tape. Copies share the node.
template <typename Scalar>
class Var {
public:
    using NodeT = Node<Scalar>;
    using Array = typename Tensor<Scalar>::Array;

    Var() = default;
    explicit Var(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

    static Var constant(Tensor<Scalar> value) {
        auto node = std::make_shared<NodeT>();
        node->value = std::move(value);
        return Var(std::move(node));
    }

    static Var leaf(Tensor<Scalar> value) {
        auto node = std::make_shared<NodeT>();
        node->value = std::move(value);
        node->requires_grad = true;
        return Var(std::move(node));
    }

    bool defined() const { return static_cast<bool>(node_); }
    explicit operator bool() const { return defined(); }

    const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& mutable_value() { return node_->value; }
    const Tensor<Scalar>& grad() const { return node_->grad; }
    Tensor<Scalar>& mutable_grad() { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    NodeT* node() const { return node_.get(); }
    const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

    void zero_grad() { node_->grad = Tensor<Scalar>(); }

    /// Reverse sweep from this node. A non-scalar output is seeded with ones,
    /// i.e. the gradient of the sum of its elements.
    void backward() const;

private:
    std::shared_ptr<NodeT> node_;
};

/// Builds the result node of an op. The backward closure and parent links are
/// kept only when recording is on and some parent needs a gradient.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward_fn) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Var<Scalar>(std::move(node));
}

template <typename Scalar>
void Var<Scalar>::backward() const {
    if (!requires_grad()) return;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            NodeT* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_array() += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

/// Ordered collection of named trainable leaves. Names are dot-separated
/// block paths, e.g. "pub0.rdb.dense1.conv.weight".
template <typename Scalar>
class ParameterSet {
public:
    Var<Scalar> add(const std::string& name, Tensor<Scalar> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
        auto v = Var<Scalar>::leaf(std::move(init));
        index_[name] = entries_.size();
        entries_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, Var<Scalar>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    Var<Scalar> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter " + name);
        return entries_[it->second].second;
    }

    Eigen::Index scalar_count() const {
        Eigen::Index n = 0;
        for (const auto& [_, v] : entries_) n += v.value().size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : entries_) v.zero_grad();
    }

    std::map<std::string, Tensor<Scalar>> state() const {
        std::map<std::string, Tensor<Scalar>> out;
        for (const auto& [name, v] : entries_) out.emplace(name, v.value());
        return out;
    }

    /// Copies values in by name. Every parameter must be present with a
    /// matching shape; extra entries are rejected too.
    template <typename Other>
    void load_state(const std::map<std::string, Tensor<Other>>& state) {
        if (state.size() != entries_.size())
            throw LoadError("parameter count mismatch: have " + std::to_string(entries_.size()) + ", got " +
                            std::to_string(state.size()));
        for (auto& [name, v] : entries_) {
            auto it = state.find(name);
            if (it == state.end()) throw LoadError("missing parameter " + name);
            if (it->second.shape() != v.shape())
                throw LoadError("shape mismatch for " + name + ": expected " + to_string(v.shape()) + ", got " +
                                to_string(it->second.shape()));
            v.mutable_value() = it->second.template cast<Scalar>();
        }
    }

private:
    std::vector<std::pair<std::string, Var<Scalar>>> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace plgf
