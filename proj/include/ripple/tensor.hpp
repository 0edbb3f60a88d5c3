#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ripple/rng.hpp"

namespace ripple::ad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major 64-bit float tensor.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    // 2-D accessors; bounds are the caller's problem.
    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = rng.normal() * stddev;
        return t;
    }
};

}  // namespace ripple::ad
