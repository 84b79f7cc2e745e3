#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "derlab/errors.hpp"

namespace derlab {

// Dense double-precision tensor. Rank 2 tensors are [batch, features],
// rank 4 are [batch, channels, height, width]. grad is either empty or
// has exactly values.size() elements.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shp, std::vector<double> vals)
        : shape(std::move(shp)), values(std::move(vals)) {
        check_invariants();
    }

    static Tensor zeros(std::vector<std::size_t> shp) {
        std::size_t n = 1;
        for (const std::size_t d : shp) n *= d;
        return Tensor(std::move(shp), std::vector<double>(n, 0.0));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const { return shape.at(i); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }

    void clear_grad() { grad.clear(); }

    void check_invariants() const {
        std::size_t n = 1;
        for (const std::size_t d : shape) {
            if (d == 0) throw DimensionError("tensor extent must be >= 1");
            n *= d;
        }
        if (values.size() != n)
            throw DimensionError("tensor value count " + std::to_string(values.size()) +
                                 " does not match shape element count " + std::to_string(n));
        if (!grad.empty() && grad.size() != n)
            throw DimensionError("tensor grad count does not match shape element count");
    }
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::size_t shape_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return n;
}

}  // namespace derlab
