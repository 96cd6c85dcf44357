#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptlm/common.hpp"

namespace ptlm {

// Dense row-major tensor over Real (float in the production path, double in
// gradient-check mode; precision is uniform within one graph because both the
// tape and every op are instantiated on the same Real).
//
// Values are immutable once an op has consumed the tensor; the only mutation
// after creation is gradient accumulation.

template <typename Real>
struct NodeT {
    std::vector<int> shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until the first backward touches this node
    bool requires_grad = false;
};

template <typename Real>
class TensorT {
  public:
    TensorT() : node_(std::make_shared<NodeT<Real>>()) {}

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        TensorT t;
        t.node_->shape = std::move(shape);
        t.node_->data.assign(t.checked_numel(), Real(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(std::vector<int> shape, Real value, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = value;
        return t;
    }

    static TensorT from(std::vector<int> shape, std::vector<Real> values, bool requires_grad = false) {
        TensorT t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(values);
        t.node_->requires_grad = requires_grad;
        if (t.node_->data.size() != t.checked_numel())
            throw ShapeError("tensor: data length " + std::to_string(t.node_->data.size()) +
                             " does not match shape " + shape_string(t.node_->shape));
        return t;
    }

    static TensorT scalar(Real value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static TensorT randn(std::vector<int> shape, RngState& rng, Real stddev, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<Real>(rng.normal(0.0, 1.0)) * stddev;
        return t;
    }

    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }

    int rows() const { return dim(0); }
    int cols() const { return dim(1); }
    int dim(int i) const {
        if (i < 0 || i >= static_cast<int>(node_->shape.size()))
            throw ShapeError("tensor: no dimension " + std::to_string(i) + " in shape " + shape_string(node_->shape));
        return node_->shape[i];
    }

    std::vector<Real>& values() { return node_->data; }
    const std::vector<Real>& values() const { return node_->data; }

    Real& at(int i, int j) { return node_->data[static_cast<std::size_t>(i) * cols() + j]; }
    Real at(int i, int j) const { return node_->data[static_cast<std::size_t>(i) * cols() + j]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Accumulated dLoss/dThis; allocated lazily, same shape as data.
    std::vector<Real>& grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), Real(0));
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    NodeT<Real>* node() const { return node_.get(); }
    std::shared_ptr<NodeT<Real>> node_ptr() const { return node_; }

    // Deep copy of values (fresh node, no grad, same requires_grad flag).
    TensorT clone() const {
        TensorT t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    template <typename Other>
    TensorT<Other> cast() const {
        TensorT<Other> t = TensorT<Other>::zeros(node_->shape, node_->requires_grad);
        for (std::size_t i = 0; i < node_->data.size(); ++i)
            t.values()[i] = static_cast<Other>(node_->data[i]);
        return t;
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

  private:
    std::size_t checked_numel() const {
        std::size_t n = 1;
        for (int d : node_->shape) {
            if (d < 0) throw ShapeError("tensor: negative dimension in shape " + shape_string(node_->shape));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::shared_ptr<NodeT<Real>> node_;
};

// Per-backward-call gradient scratch, keyed by node. A key is present iff some
// gradient has flowed to that node during this backward pass.
template <typename Real>
using GradMapT = std::unordered_map<NodeT<Real>*, std::vector<Real>>;

template <typename Real>
std::vector<Real>* find_flow(GradMapT<Real>& g, NodeT<Real>* node) {
    auto it = g.find(node);
    return it == g.end() ? nullptr : &it->second;
}

template <typename Real>
std::vector<Real>& flow_into(GradMapT<Real>& g, NodeT<Real>* node) {
    auto it = g.find(node);
    if (it == g.end()) it = g.emplace(node, std::vector<Real>(node->data.size(), Real(0))).first;
    return it->second;
}

// Ordered record of executed ops. Each entry can replay its backward step:
// read the upstream gradient of its output from the scratch map and
// accumulate into its inputs' slots. backward() walks entries exactly once,
// in reverse execution order.
template <typename Real>
class TapeT {
  public:
    struct Entry {
        std::shared_ptr<NodeT<Real>> output;
        std::function<void(GradMapT<Real>&)> back;
    };

    void record(const TensorT<Real>& output, std::function<void(GradMapT<Real>&)> back) {
        entries_.push_back(Entry{output.node_ptr(), std::move(back)});
    }

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

  private:
    std::vector<Entry> entries_;
};

// Reverse-mode sweep. Gradients of one call are computed in a private scratch
// map seeded with dLoss/dLoss = 1, then added into the persistent .grad of
// every requires_grad tensor they reached. Calling backward twice on the same
// tape therefore adds the same increments twice.
template <typename Real>
void backward(TapeT<Real>& tape, const TensorT<Real>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            TensorT<Real>::shape_string(loss.shape()));
    GradMapT<Real> scratch;
    scratch.emplace(loss.node(), std::vector<Real>{Real(1)});
    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (scratch.find(it->output.get()) == scratch.end()) continue;  // no gradient flowed here
        it->back(scratch);
    }
    for (auto& [node, g] : scratch) {
        if (!node->requires_grad) continue;
        if (node->grad.empty()) node->grad.assign(node->data.size(), Real(0));
        for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
    }
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace ptlm
