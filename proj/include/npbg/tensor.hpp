#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace npbg {

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

/// Dense n-dimensional array, channels-first for images ([C,H,W]).
/// Storage is shared and treated as immutable once an op has produced it;
/// only the optimizer mutates leaf storage, between training steps.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::shared_ptr<std::vector<T>> store;
    bool requires_grad = false;

    Tensor() : store(std::make_shared<std::vector<T>>()) {}

    Tensor(std::vector<int64_t> shp, std::vector<T> values, bool req_grad = false)
        : shape(std::move(shp)),
          store(std::make_shared<std::vector<T>>(std::move(values))),
          requires_grad(req_grad) {
        if (static_cast<int64_t>(store->size()) != shape_numel(shape))
            throw std::runtime_error("Tensor: data length " + std::to_string(store->size()) +
                                     " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<int64_t> shp, bool req_grad = false) {
        std::vector<T> v(static_cast<size_t>(shape_numel(shp)), T(0));
        return Tensor(std::move(shp), std::move(v), req_grad);
    }

    static Tensor full(std::vector<int64_t> shp, T value, bool req_grad = false) {
        std::vector<T> v(static_cast<size_t>(shape_numel(shp)), value);
        return Tensor(std::move(shp), std::move(v), req_grad);
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    int64_t numel() const { return static_cast<int64_t>(store->size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    const T* data() const { return store->data(); }
    /// Mutable access for the optimizer and loaders; never call on a tensor
    /// that is already recorded on an active tape.
    T* mutable_data() { return store->data(); }
    const std::vector<T>& values() const { return *store; }

    T item() const {
        if (numel() != 1)
            throw std::runtime_error("Tensor::item: tensor has " + std::to_string(numel()) +
                                     " elements, expected 1");
        return (*store)[0];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& values) {
    for (const T& v : values)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(op) + ": produced a non-finite value");
}

}  // namespace npbg
