#include "deepbayes/tape.hpp"

#include <atomic>

#include "deepbayes/errors.hpp"

namespace deepbayes {

namespace {
thread_local GradientTape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_generation{1};
}  // namespace

void GradSink::add(std::size_t input_index, const Tensor& g) {
    const int node = inputs_.at(input_index);
    if (node < 0) return;  // constant input, gradient discarded
    auto& slot = grads_[static_cast<std::size_t>(node)];
    if (!slot.has_value()) {
        slot = g.clone();
        return;
    }
    if (slot->shape() != g.shape()) {
        throw ShapeError("backward: gradient shape " + g.shape_str() +
                         " does not match accumulated " + slot->shape_str());
    }
    double* acc = slot->data();
    const double* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += src[i];
}

Tensor Gradients::wrt(const Tensor& t) const {
    int node = -1;
    if (t.tape_generation() == generation_ && t.tape_node() >= 0) {
        node = t.tape_node();
    } else {
        auto it = watched_.find(t.buffer_id());
        if (it != watched_.end()) node = it->second;
    }
    if (node >= 0 && by_node_[static_cast<std::size_t>(node)].has_value()) {
        return by_node_[static_cast<std::size_t>(node)]->clone();
    }
    return Tensor::zeros(t.shape());
}

GradientTape::GradientTape()
    : generation_(g_generation.fetch_add(1, std::memory_order_relaxed)),
      parent_(g_active_tape) {
    g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = parent_; }

GradientTape* GradientTape::active() { return g_active_tape; }

int GradientTape::watch(const Tensor& t) {
    if (consumed_) throw NumericError("GradientTape: tape already consumed");
    auto it = watched_.find(t.buffer_id());
    if (it != watched_.end()) return it->second;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, t.shape(), nullptr});
    watched_.emplace(t.buffer_id(), id);
    return id;
}

int GradientTape::node_of(const Tensor& t) const {
    if (t.tape_generation() == generation_ && t.tape_node() >= 0) {
        return t.tape_node();
    }
    auto it = watched_.find(t.buffer_id());
    if (it != watched_.end()) return it->second;
    return -1;
}

int GradientTape::record(Tensor& out, std::vector<int> inputs,
                         std::function<void(const Tensor&, GradSink&)> backward) {
    if (consumed_) throw NumericError("GradientTape: tape already consumed");
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(inputs), out.shape(), std::move(backward)});
    out.bind_to_tape(generation_, id);
    return id;
}

Gradients GradientTape::backward(const Tensor& loss) {
    if (consumed_) throw NumericError("GradientTape: tape already consumed");
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         loss.shape_str());
    }
    const int loss_node = node_of(loss);
    if (loss_node < 0) {
        throw NumericError("backward: loss is not on the active tape");
    }
    consumed_ = true;

    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss_node)] =
        Tensor::full(loss.shape(), 1.0);

    // Reverse append order; append order is a topological order.
    for (int i = loss_node; i >= 0; --i) {
        auto& slot = grads[static_cast<std::size_t>(i)];
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (!slot.has_value() || !node.backward) continue;
        GradSink sink(node.inputs, grads);
        node.backward(*slot, sink);
    }

    Gradients out;
    out.generation_ = generation_;
    out.by_node_ = std::move(grads);
    out.watched_ = watched_;
    return out;
}

}  // namespace deepbayes
