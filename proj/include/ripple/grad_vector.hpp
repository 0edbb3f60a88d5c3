#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ripple/tensor.hpp"

namespace ripple::ad {

// Named parameter set. std::map keeps the canonical (lexicographic) order.
using NamedParams = std::map<std::string, Tensor>;

// Flattened per-parameter gradient in canonical layout: segments ordered
// lexicographically by parameter name, so two GradientVectors taken from the
// same model always line up element by element.
struct GradientVector {
    struct Segment {
        std::string name;
        std::int64_t offset = 0;
        std::int64_t length = 0;
        bool operator==(const Segment&) const = default;
    };

    std::vector<double> values;
    std::vector<Segment> layout;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    bool same_layout(const GradientVector& o) const { return layout == o.layout; }

    double dot(const GradientVector& o) const {
        double s = 0.0;
        for (size_t i = 0; i < values.size(); ++i) s += values[i] * o.values[i];
        return s;
    }
    double norm() const { return std::sqrt(dot(*this)); }
    double l1_norm() const {
        double s = 0.0;
        for (double v : values) s += std::abs(v);
        return s;
    }

    // Segment lookup by name; returns nullptr when absent.
    const Segment* find(const std::string& name) const {
        for (const auto& seg : layout)
            if (seg.name == name) return &seg;
        return nullptr;
    }

    // Assemble from per-name gradient tensors (zero-filled when a name has no
    // gradient). Iteration order of NamedParams is the canonical order.
    static GradientVector from_named(const NamedParams& grads);
};

// Central-difference gradient (L(p+eps*e_i) - L(p-eps*e_i)) / (2*eps) over
// every coordinate of `params`. The independent oracle for backward().
GradientVector finite_difference_gradient(
    const std::function<double(const NamedParams&)>& loss,
    const NamedParams& params, double eps);

}  // namespace ripple::ad
