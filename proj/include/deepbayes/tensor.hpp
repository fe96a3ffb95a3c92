#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace deepbayes {

// Dense row-major tensor of 64-bit floats. Tensors behave as values:
// operations allocate fresh outputs, copies share the underlying buffer,
// and nothing mutates a tensor once it has been fed to an operation under
// an active gradient tape. The (tape generation, node) pair links the
// tensor to the tape that produced it; on any other tape it is a constant.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor row(std::vector<double> values);  // shape [n]

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    const std::vector<double>& values() const { return *data_; }

    double item() const;                 // requires size() == 1
    double at(std::size_t flat) const { return (*data_)[flat]; }
    // 2-D accessor, row-major.
    double at(std::size_t r, std::size_t c) const {
        return (*data_)[r * shape_[1] + c];
    }

    bool all_finite() const;

    // Deep copy with a private buffer, detached from any tape.
    Tensor clone() const;

    // Buffer identity; the tape's watch list is keyed on this.
    const void* buffer_id() const { return data_.get(); }

    std::string shape_str() const;

    // Tape linkage (set by operations; -1 means constant).
    int tape_node() const { return node_; }
    std::uint64_t tape_generation() const { return generation_; }
    void bind_to_tape(std::uint64_t generation, int node) {
        generation_ = generation;
        node_ = node;
    }

private:
    std::vector<std::size_t> shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::uint64_t generation_ = 0;
    int node_ = -1;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace deepbayes
