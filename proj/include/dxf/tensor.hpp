#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "dxf/common.hpp"

namespace dxf {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

// Dense row-major tensor. Sequence tensors are channel-first [C x T].
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> data;
    std::vector<S> grad;  // optional, same length as data when in use

    Tensor() = default;

    Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<int> shp) {
        std::int64_t n = numel_of(shp);
        return Tensor(std::move(shp), std::vector<S>(static_cast<size_t>(n), S(0)));
    }

    static Tensor full(std::vector<int> shp, S v) {
        std::int64_t n = numel_of(shp);
        return Tensor(std::move(shp), std::vector<S>(static_cast<size_t>(n), v));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int extent(int axis) const {
        if (axis < 0 || axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
        return shape[static_cast<size_t>(axis)];
    }

    // 2-D accessors
    S& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    S at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }

    void zero_grad() { grad.assign(data.size(), S(0)); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data.size());
        for (size_t i = 0; i < data.size(); ++i) out[i] = static_cast<U>(data[i]);
        return Tensor<U>(shape, std::move(out));
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

}  // namespace dxf
