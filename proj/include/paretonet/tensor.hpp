// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace paretonet {

/// Dense row-major tensor of doubles (rank 1 or 2 in practice).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& at(int i) { return v[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i) const { return v[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols() + j]; }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

/// Axis-aligned index box: the slice of a maximal tensor a subnet touches.
/// One {begin,end} interval per tensor dimension; empty() means the tensor is
/// not used by the subnet at all.
struct Box {
    struct Range {
        int begin = 0;
        int end = 0;
        int size() const { return end - begin; }
    };
    std::vector<Range> dims;

    bool empty() const { return dims.empty(); }

    std::int64_t volume() const {
        if (dims.empty()) return 0;
        std::int64_t n = 1;
        for (const auto& r : dims) n *= r.size();
        return n;
    }

    /// Whether the flat row-major index into a tensor of the given shape
    /// falls inside the box.
    bool contains_flat(std::int64_t flat, const std::vector<int>& shape) const {
        if (dims.empty()) return false;
        assert(dims.size() == shape.size());
        for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
            const int idx = static_cast<int>(flat % shape[static_cast<std::size_t>(d)]);
            flat /= shape[static_cast<std::size_t>(d)];
            const auto& r = dims[static_cast<std::size_t>(d)];
            if (idx < r.begin || idx >= r.end) return false;
        }
        return true;
    }

    /// True when this box is contained in the other (both non-empty).
    bool inside(const Box& other) const {
        if (dims.empty()) return true;
        if (other.dims.empty()) return false;
        assert(dims.size() == other.dims.size());
        for (std::size_t d = 0; d < dims.size(); ++d) {
            if (dims[d].begin < other.dims[d].begin || dims[d].end > other.dims[d].end)
                return false;
        }
        return true;
    }
};

/// Batched activation: `channels` rows, each holding `batch`*`length` values
/// laid out example-major ((c, b, i) -> c*batch*length + b*length + i).
struct Act {
    int channels = 0;
    int batch = 0;
    int length = 0;
    std::vector<double> v;

    Act() = default;
    Act(int c, int b, int l) : channels(c), batch(b), length(l) {
        v.assign(static_cast<std::size_t>(c) * b * l, 0.0);
    }

    int row_len() const { return batch * length; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double* row(int c) { return v.data() + static_cast<std::size_t>(c) * row_len(); }
    const double* row(int c) const {
        return v.data() + static_cast<std::size_t>(c) * row_len();
    }
    double* seq(int c, int b) { return row(c) + static_cast<std::size_t>(b) * length; }
    const double* seq(int c, int b) const {
        return row(c) + static_cast<std::size_t>(b) * length;
    }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

}  // namespace paretonet
