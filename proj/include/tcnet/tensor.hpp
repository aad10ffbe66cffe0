#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "tcnet/error.hpp"

namespace tcnet {

inline std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0)
            throw DimensionError("tensor axis " + std::to_string(i) + " has nonpositive extent " +
                                 std::to_string(shape[i]));
        n *= static_cast<std::size_t>(shape[i]);
    }
    return n;
}

// Dense rank-N numeric array: shape, row-major values, optional gradient buffer
// of identical length.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until ensure_grad()

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}

    Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (checked_numel(shape) != data.size())
            throw DimensionError("tensor " + shape_string(shape) + " expects " +
                                 std::to_string(checked_numel(shape)) + " values, got " +
                                 std::to_string(data.size()));
    }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const { return data.size(); }

    int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    T* grad_ptr() { return grad.data(); }
    const T* grad_ptr() const { return grad.data(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (grad.size() != data.size())
            grad.assign(data.size(), T(0));
        else
            std::fill(grad.begin(), grad.end(), T(0));
    }

    std::size_t offset(std::initializer_list<int> idx) const {
        std::size_t off = 0;
        std::size_t axis = 0;
        for (int i : idx) {
            off = off * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return off;
    }
    T& at(std::initializer_list<int> idx) { return data[offset(idx)]; }
    const T& at(std::initializer_list<int> idx) const { return data[offset(idx)]; }

    // Row-major reinterpretation; element count must match.
    void reshape(std::vector<int> s) {
        if (checked_numel(s) != data.size())
            throw DimensionError("reshape " + shape_string(shape) + " -> " + shape_string(s) +
                                 " changes element count");
        shape = std::move(s);
    }
};

template <class T>
bool all_finite(const Tensor<T>& t) {
    for (const T& v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <class T>
void require_finite(const Tensor<T>& t, const char* where) {
    if (!all_finite(t)) throw NumericError(std::string("non-finite values in ") + where);
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    Tensor<To> out(src.shape);
    for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
    return out;
}

// Debug-build finiteness checks on op outputs.
#ifndef NDEBUG
#define TCNET_DEBUG_CHECK_FINITE(t, where) ::tcnet::require_finite((t), (where))
#else
#define TCNET_DEBUG_CHECK_FINITE(t, where) ((void)0)
#endif

} // namespace tcnet
