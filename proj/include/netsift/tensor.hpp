#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "netsift/errors.hpp"

namespace netsift {

// Dense row-major tensor of 64-bit reals. Rank and sizes live in `shape`;
// ops validate shapes at their boundaries and index flat afterwards.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::initializer_list<size_t> s, double fill = 0.0)
        : shape(s), data(count(shape), fill) {}
    explicit Tensor(std::vector<size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}

    static size_t count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t size() const { return data.size(); }
    size_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // 2-D accessors (row-major).
    double& at2(size_t r, size_t c) { return data[r * shape[1] + c]; }
    double at2(size_t r, size_t c) const { return data[r * shape[1] + c]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void require_shape(std::initializer_list<size_t> s, const char* what) const {
        if (!std::equal(shape.begin(), shape.end(), s.begin(), s.end()))
            throw ConfigError(std::string(what) + ": unexpected tensor shape");
    }
};

}  // namespace netsift
