#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "burstforge/common.hpp"

namespace burstforge {

// Dense row-major float32 tensor; the carrier of every feature map and
// parameter in the library. Shapes follow NCHW where four axes are present.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw shape_error("Tensor: nonpositive dimension");
            n *= d;
        }
        data_.assign(static_cast<size_t>(n), 0.0f);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        for (float& v : t.data_) v = value;
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    const std::vector<int>& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator()(int i) { return data_[static_cast<size_t>(i)]; }
    float operator()(int i) const { return data_[static_cast<size_t>(i)]; }

    float& operator()(int i, int j) {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i) * shape_[1] + j];
    }
    float operator()(int i, int j) const {
        assert(rank() == 2);
        return data_[static_cast<size_t>(i) * shape_[1] + j];
    }

    float& operator()(int i, int j, int k) {
        assert(rank() == 3);
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    float operator()(int i, int j, int k) const {
        assert(rank() == 3);
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    float& operator()(int i, int j, int k, int l) {
        assert(rank() == 4);
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    float operator()(int i, int j, int k, int l) const {
        assert(rank() == 4);
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Same data, new shape. Element count must match.
    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor t;
        t.shape_ = std::move(new_shape);
        int64_t n = 1;
        for (int d : t.shape_) n *= d;
        if (n != numel())
            throw shape_error("reshape: element count mismatch (" + shape_str() + ")");
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

bool all_finite(const Tensor& t);

// Throws numeric_error naming `op` if t holds a NaN or Inf.
void require_finite(const Tensor& t, const char* op);

void require_rank(const Tensor& t, int rank, const char* what);
void require_shape(const Tensor& t, const std::vector<int>& expect, const char* what);

}  // namespace burstforge
