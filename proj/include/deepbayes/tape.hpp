#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "deepbayes/tensor.hpp"

namespace deepbayes {

class GradientTape;

// Gradient accumulator handed to backward closures: add(i, g) accumulates
// g into the gradient of the node's i-th input.
class GradSink {
public:
    GradSink(const std::vector<int>& inputs,
             std::vector<std::optional<Tensor>>& grads)
        : inputs_(inputs), grads_(grads) {}
    void add(std::size_t input_index, const Tensor& g);

private:
    const std::vector<int>& inputs_;
    std::vector<std::optional<Tensor>>& grads_;
};

// Result of a backward pass: per-tensor partial derivatives of the loss.
// Tensors that never reached the loss get exact zeros.
class Gradients {
public:
    Tensor wrt(const Tensor& t) const;

private:
    friend class GradientTape;
    std::uint64_t generation_ = 0;
    std::vector<std::optional<Tensor>> by_node_;
    std::unordered_map<const void*, int> watched_;
};

// Reverse-mode gradient tape. Constructing one makes it the active tape
// for the current thread (tapes nest as a stack); operations on tensors
// record nodes onto it. Single-threaded per tape; independent tapes may
// live on different threads.
class GradientTape {
public:
    GradientTape();
    ~GradientTape();
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active();

    // Register a leaf whose gradient the caller wants. Tensors sharing the
    // buffer map to the same leaf.
    int watch(const Tensor& t);

    // Node id for t on this tape, or -1 if t is a constant here.
    int node_of(const Tensor& t) const;

    // Record an operation node; backward receives the output gradient and
    // a sink over `inputs`. Returns the new node id and binds `out`.
    int record(Tensor& out, std::vector<int> inputs,
               std::function<void(const Tensor&, GradSink&)> backward);

    // Reverse sweep from a scalar loss; consumes the tape.
    Gradients backward(const Tensor& loss);

    std::uint64_t generation() const { return generation_; }
    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::vector<int> inputs;
        std::vector<std::size_t> shape;
        std::function<void(const Tensor&, GradSink&)> backward;
    };

    std::uint64_t generation_;
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> watched_;
    bool consumed_ = false;
    GradientTape* parent_ = nullptr;
};

}  // namespace deepbayes
