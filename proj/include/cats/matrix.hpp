#pragma once

// Dense row-major matrices for the whole stack. Every reduction runs in
// ascending index order, so results are bit-identical no matter how rows are
// batched, split across layer ranges, or replayed one token at a time. That
// property is what the decode losslessness checks lean on — do not "optimize"
// the loops into a different summation order.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cats/error.hpp"

namespace cats {

using Token = int32_t;

template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c) {
        if (r < 0 || c < 0) throw invalid_input("Mat: negative shape");
        data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), T(0));
    }

    T *row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const T *row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
    std::span<T> row_span(int i) { return {row(i), static_cast<size_t>(cols)}; }
    std::span<const T> row_span(int i) const { return {row(i), static_cast<size_t>(cols)}; }
    T &at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    const T &at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    bool same_shape(const Mat &o) const { return rows == o.rows && cols == o.cols; }

    void append_row(std::span<const T> r) {
        if (static_cast<int>(r.size()) != cols && rows != 0)
            throw invalid_input("Mat::append_row: width mismatch");
        if (rows == 0 && cols == 0) cols = static_cast<int>(r.size());
        data.insert(data.end(), r.begin(), r.end());
        ++rows;
    }
};

using Matf = Mat<float>;
using Matd = Mat<double>;

// ---- products ---------------------------------------------------------

// C = A * B. i-k-j loop: the k (reduction) index ascends for every C entry.
template <typename T>
Mat<T> matmul(const Mat<T> &a, const Mat<T> &b) {
    if (a.cols != b.rows)
        throw invalid_input("matmul: inner dims " + std::to_string(a.cols) + " vs " +
                            std::to_string(b.rows));
    Mat<T> c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T *ar = a.row(i);
        T *cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const T aik = ar[k];
            if (aik == T(0)) continue;
            const T *br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

// C = A * B^T
template <typename T>
Mat<T> matmul_nt(const Mat<T> &a, const Mat<T> &b) {
    if (a.cols != b.cols) throw invalid_input("matmul_nt: inner dims mismatch");
    Mat<T> c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const T *ar = a.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const T *br = b.row(j);
            T acc = T(0);
            for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
            c.at(i, j) = acc;
        }
    }
    return c;
}

// C = A^T * B
template <typename T>
Mat<T> matmul_tn(const Mat<T> &a, const Mat<T> &b) {
    if (a.rows != b.rows) throw invalid_input("matmul_tn: inner dims mismatch");
    Mat<T> c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const T *ar = a.row(k);
        const T *br = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const T aki = ar[i];
            if (aki == T(0)) continue;
            T *cr = c.row(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
        }
    }
    return c;
}

template <typename T>
Mat<T> transpose(const Mat<T> &a) {
    Mat<T> t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// ---- elementwise ------------------------------------------------------

template <typename T>
void add_inplace(Mat<T> &a, const Mat<T> &b) {
    if (!a.same_shape(b)) throw invalid_input("add_inplace: shape mismatch");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void scale_inplace(Mat<T> &a, T s) {
    for (T &x : a.data) x *= s;
}

template <typename U, typename T>
Mat<U> cast_mat(const Mat<T> &a) {
    Mat<U> o(a.rows, a.cols);
    for (size_t i = 0; i < a.data.size(); ++i) o.data[i] = static_cast<U>(a.data[i]);
    return o;
}

// ---- softmax / norms / reductions -------------------------------------

// In-place row softmax: subtract the row max, then divide by temperature,
// exponentiate, normalize. Max first, so shifting a row by a constant yields
// bit-identical output.
template <typename T>
void softmax_row_inplace(std::span<T> x, T temperature) {
    if (!(temperature > T(0))) throw invalid_input("softmax: temperature must be > 0");
    if (x.empty()) throw invalid_input("softmax: empty row");
    T m = x[0];
    for (const T v : x)
        if (v > m) m = v;
    T sum = T(0);
    for (T &v : x) {
        v = std::exp((v - m) / temperature);
        sum += v;
    }
    for (T &v : x) v /= sum;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T> &logits, T temperature) {
    Mat<T> p = logits;
    for (int i = 0; i < p.rows; ++i) softmax_row_inplace(p.row_span(i), temperature);
    return p;
}

// y = gain ⊙ x / sqrt(mean(x^2) + eps)
template <typename T>
void rms_norm_row(std::span<const T> x, std::span<const T> gain, std::span<T> out,
                  T eps = T(1e-6)) {
    if (x.size() != gain.size() || x.size() != out.size())
        throw invalid_input("rms_norm: width mismatch");
    T ms = T(0);
    for (const T v : x) ms += v * v;
    ms = ms / static_cast<T>(x.size()) + eps;
    const T inv = T(1) / std::sqrt(ms);
    for (size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * x[i] * inv;
}

template <typename T>
Mat<T> rms_norm_rows(const Mat<T> &x, std::span<const T> gain, T eps = T(1e-6)) {
    if (static_cast<int>(gain.size()) != x.cols)
        throw invalid_input("rms_norm: gain width mismatch");
    Mat<T> o(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) rms_norm_row<T>(x.row_span(i), gain, o.row_span(i), eps);
    return o;
}

// Lowest index wins ties, so equal distributions pick equal tokens everywhere.
template <typename T>
int argmax_tiebreak(std::span<const T> x) {
    if (x.empty()) throw invalid_input("argmax: empty row");
    int best = 0;
    for (size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = static_cast<int>(i);
    return best;
}

// Shannon entropy in nats; p log p -> 0 for p == 0. Accumulated in double.
template <typename T>
double entropy(std::span<const T> p) {
    double h = 0.0;
    for (const T v : p) {
        const double d = static_cast<double>(v);
        if (d > 0.0) h -= d * std::log(d);
    }
    return h;
}

template <typename T>
bool normalized_within(std::span<const T> p, double tol) {
    double s = 0.0;
    for (const T v : p) s += static_cast<double>(v);
    return std::abs(s - 1.0) <= tol;
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw invalid_input("max_abs_diff: length mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (d > m) m = d;
    }
    return m;
}

template <typename T>
double max_abs_diff(const Mat<T> &a, const Mat<T> &b) {
    if (!a.same_shape(b)) throw invalid_input("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
        if (d > m) m = d;
    }
    return m;
}

}  // namespace cats
