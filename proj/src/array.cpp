#include "mmc/array.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmc {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Array::Array(std::vector<int> s, double fill) : shape(std::move(s)) {
    long n = 1;
    for (int d : shape) {
        check(d >= 0, "array: negative dimension in " + shape_str(shape));
        n *= d;
    }
    data.assign(static_cast<size_t>(n), fill);
}

Array Array::scalar(double v) {
    Array a({1}, v);
    return a;
}

Array Array::from(std::vector<int> s, std::vector<double> d) {
    Array a;
    a.shape = std::move(s);
    a.data = std::move(d);
    check(a.numel() == static_cast<long>(a.data.size()),
          "array: shape " + shape_str(a.shape) + " does not match data length " +
              std::to_string(a.data.size()));
    return a;
}

long Array::numel() const {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

int Array::dim(int i) const {
    check(i >= 0 && i < ndim(), "array: dim index " + std::to_string(i) + " out of range for " +
                                    shape_str(shape));
    return shape[static_cast<size_t>(i)];
}

double& Array::at(int i, int j) {
    return data[static_cast<size_t>(i) * static_cast<size_t>(shape.back()) +
                static_cast<size_t>(j)];
}

double Array::at(int i, int j) const {
    return data[static_cast<size_t>(i) * static_cast<size_t>(shape.back()) +
                static_cast<size_t>(j)];
}

double& Array::at(int i, int j, int k) {
    const size_t d1 = static_cast<size_t>(shape[1]);
    const size_t d2 = static_cast<size_t>(shape[2]);
    return data[(static_cast<size_t>(i) * d1 + static_cast<size_t>(j)) * d2 +
                static_cast<size_t>(k)];
}

double Array::at(int i, int j, int k) const {
    const size_t d1 = static_cast<size_t>(shape[1]);
    const size_t d2 = static_cast<size_t>(shape[2]);
    return data[(static_cast<size_t>(i) * d1 + static_cast<size_t>(j)) * d2 +
                static_cast<size_t>(k)];
}

bool Array::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace mmc
