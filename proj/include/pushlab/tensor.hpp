#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "pushlab/util.hpp"

namespace pushlab::nets {

// Dense row-major matrix. Everything the network core moves around is 2-D;
// vectors are rows [1, n] and scalars are [1, 1].
template <typename S>
struct TensorT {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  TensorT() = default;
  TensorT(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, S(0)) {}

  static TensorT zeros(int r, int c) { return TensorT(r, c); }
  static TensorT full(int r, int c, S value) {
    TensorT t(r, c);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static TensorT row(std::initializer_list<S> vals) {
    TensorT t(1, static_cast<int>(vals.size()));
    std::copy(vals.begin(), vals.end(), t.v.begin());
    return t;
  }

  int size() const { return rows * cols; }
  S* data() { return v.data(); }
  const S* data() const { return v.data(); }
  S& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  S at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  bool same_shape(const TensorT& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (const S x : v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> out(rows, cols);
    for (int i = 0; i < size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// C += A * B
template <typename S>
void matmul_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const S* arow = a.data() + static_cast<size_t>(i) * k;
    S* crow = c.data() + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      if (av == S(0)) continue;
      const S* brow = b.data() + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  TensorT<S> c(a.rows, b.cols);
  matmul_acc(a, b, c);
  return c;
}

// C += A^T * B
template <typename S>
void matmul_at_b_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const S* arow = a.data() + static_cast<size_t>(i) * k;
    const S* brow = b.data() + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      if (av == S(0)) continue;
      S* crow = c.data() + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T
template <typename S>
void matmul_a_bt_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  const int m = a.rows, k = a.cols, n = b.rows;
  for (int i = 0; i < m; ++i) {
    const S* arow = a.data() + static_cast<size_t>(i) * k;
    S* crow = c.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b.data() + static_cast<size_t>(j) * k;
      S acc(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

}  // namespace pushlab::nets
