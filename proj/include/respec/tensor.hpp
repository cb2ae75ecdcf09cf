#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <vector>

namespace respec::nn {

// 64-byte-aligned allocator for tensor storage. Eigen picks vector kernels
// by runtime pointer alignment; pinning every buffer to one alignment makes
// floating-point summation order — and therefore results — a pure function
// of shapes, so repeated runs inside one process stay bit-identical.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Dense row-major tensor. Shapes are small (rank <= 4); all heavy math runs
// through the Eigen views below.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  AlignedVec<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  // Reinterprets the buffer with a new shape of equal element count.
  Tensor reshaped(std::vector<int> s) const {
    assert(count(s) == numel());
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatView = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatView = Eigen::Map<const RowMat<T>>;

// 2D views over raw buffers (callers assert the element count).
template <typename T>
MatView<T> mat_view(T* p, int64_t rows, int64_t cols) {
  return MatView<T>(p, rows, cols);
}
template <typename T>
ConstMatView<T> mat_view(const T* p, int64_t rows, int64_t cols) {
  return ConstMatView<T>(p, rows, cols);
}

// Views treating a tensor as [rows, cols]; rows defaults to everything but
// the last axis.
template <typename T>
MatView<T> as_2d(Tensor<T>& t) {
  int64_t cols = t.rank() == 0 ? 1 : t.dim(t.rank() - 1);
  return MatView<T>(t.ptr(), t.numel() / cols, cols);
}
template <typename T>
ConstMatView<T> as_2d(const Tensor<T>& t) {
  int64_t cols = t.rank() == 0 ? 1 : t.dim(t.rank() - 1);
  return ConstMatView<T>(t.ptr(), t.numel() / cols, cols);
}

// C = A * B^T      (the layer-forward shape: [N,in] x [out,in]^T -> [N,out])
template <typename T>
void matmul_nt(const T* a, int64_t m, int64_t k, const T* b, int64_t n, T* c,
               bool accumulate = false) {
  auto A = mat_view(a, m, k);
  auto B = mat_view(b, n, k);
  auto C = mat_view(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C = A * B        ([M,K] x [K,N] -> [M,N])
template <typename T>
void matmul_nn(const T* a, int64_t m, int64_t k, const T* b, int64_t n, T* c,
               bool accumulate = false) {
  auto A = mat_view(a, m, k);
  auto B = mat_view(b, k, n);
  auto C = mat_view(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C = A^T * B      ([K,M]^T x [K,N] -> [M,N]; the dW shape)
template <typename T>
void matmul_tn(const T* a, int64_t k, int64_t m, const T* b, int64_t n, T* c,
               bool accumulate = false) {
  auto A = mat_view(a, k, m);
  auto B = mat_view(b, k, n);
  auto C = mat_view(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

}  // namespace respec::nn
