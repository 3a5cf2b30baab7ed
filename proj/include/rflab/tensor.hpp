#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/rng.hpp"

namespace rflab {

/// Dense row-major tensor. Gradient storage lives next to the values so the
/// layer backward passes can accumulate in place.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad; // same length as data when requires_grad

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shp, T fill = T(0)) : shape(std::move(shp)) {
        data.assign(count(shape), fill);
    }

    Tensor(std::vector<std::size_t> shp, std::vector<T> values) : shape(std::move(shp)), data(std::move(values)) {
        if (count(shape) != data.size())
            throw DimensionError("tensor: shape product " + std::to_string(count(shape)) +
                                 " != data length " + std::to_string(data.size()));
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator()(std::size_t i) { return data[i]; }
    T operator()(std::size_t i) const { return data[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    void ensure_grad() {
        requires_grad = true;
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), T(0));
    }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    }
};

} // namespace rflab
