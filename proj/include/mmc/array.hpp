#pragma once

#include <string>
#include <vector>

namespace mmc {

[[noreturn]] void fail(const std::string& msg);
void check(bool cond, const std::string& msg);

std::string shape_str(const std::vector<int>& shape);

// Dense row-major array of 64-bit floats.
struct Array {
    std::vector<int> shape;
    std::vector<double> data;

    Array() = default;
    Array(std::vector<int> s, double fill);
    static Array zeros(std::vector<int> s) { return Array(std::move(s), 0.0); }
    static Array scalar(double v);
    static Array from(std::vector<int> s, std::vector<double> d);

    int ndim() const { return static_cast<int>(shape.size()); }
    long numel() const;
    int dim(int i) const;

    // row-major element access
    double& at(long i) { return data[static_cast<size_t>(i)]; }
    double at(long i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j);
    double at(int i, int j) const;
    double& at(int i, int j, int k);
    double at(int i, int j, int k) const;

    bool same_shape(const Array& o) const { return shape == o.shape; }
    bool all_finite() const;
};

}  // namespace mmc
