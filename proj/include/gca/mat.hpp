#pragma once
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gca {

// Minimal dense row-major matrix. Owns its storage; no views, no striding.
template <class T>
struct Mat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c, T fill = T{}) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative dimension");
    }

    T& operator()(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * cols + c)]; }
    const T& operator()(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * cols + c)]; }

    const T* row_ptr(std::int64_t r) const { return v.data() + r * cols; }
    T* row_ptr(std::int64_t r) { return v.data() + r * cols; }

    std::int64_t size() const { return rows * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Mat& a, const Mat& b) {
        return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
    }
};

using MatD = Mat<double>;
using MatF = Mat<float>;
using MatI = Mat<std::int64_t>;

} // namespace gca
