#pragma once
#include <array>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compinfer/errors.hpp"

namespace compinfer {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major float64 tensor with 1 to 4 axes. All numerics in the
// library run in double precision.
struct Tensor {
  std::vector<double> v;
  std::array<long, 4> d{0, 0, 0, 0};
  int nd = 0;

  Tensor() = default;
  explicit Tensor(const std::vector<long>& shape, double fill = 0.0) { resize(shape, fill); }

  static Tensor scalar(double x) {
    Tensor t({1});
    t.v[0] = x;
    return t;
  }

  void resize(const std::vector<long>& shape, double fill = 0.0) {
    if (shape.empty() || shape.size() > 4) throw shape_error("tensor rank must be 1..4");
    nd = static_cast<int>(shape.size());
    long n = 1;
    for (int i = 0; i < nd; ++i) {
      if (shape[i] <= 0) throw shape_error("tensor axis must be positive");
      d[i] = shape[i];
      n *= shape[i];
    }
    for (int i = nd; i < 4; ++i) d[i] = 1;
    v.assign(static_cast<size_t>(n), fill);
  }

  long numel() const { return static_cast<long>(v.size()); }
  long dim(int i) const { return d[i]; }

  std::vector<long> shape() const {
    std::vector<long> s(nd);
    for (int i = 0; i < nd; ++i) s[i] = d[i];
    return s;
  }

  bool same_shape(const Tensor& o) const {
    if (nd != o.nd) return false;
    for (int i = 0; i < nd; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < nd; ++i) os << d[i] << (i + 1 < nd ? "," : "");
    os << ")";
    return os.str();
  }

  double& operator()(long i) { return v[i]; }
  double operator()(long i) const { return v[i]; }
  double& operator()(long i, long j) { return v[i * d[1] + j]; }
  double operator()(long i, long j) const { return v[i * d[1] + j]; }
  double& operator()(long i, long j, long k) { return v[(i * d[1] + j) * d[2] + k]; }
  double operator()(long i, long j, long k) const { return v[(i * d[1] + j) * d[2] + k]; }
  double& operator()(long i, long j, long k, long l) {
    return v[((i * d[1] + j) * d[2] + k) * d[3] + l];
  }
  double operator()(long i, long j, long k, long l) const {
    return v[((i * d[1] + j) * d[2] + k) * d[3] + l];
  }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  MatMap mat(long r, long c) { return MatMap(v.data(), r, c); }
  ConstMatMap mat(long r, long c) const { return ConstMatMap(v.data(), r, c); }
  // View of batch slab b of a (B, r, c) tensor.
  MatMap slab(long b, long r, long c) { return MatMap(v.data() + b * r * c, r, c); }
  ConstMatMap slab(long b, long r, long c) const {
    return ConstMatMap(v.data() + b * r * c, r, c);
  }
  VecMap vec() { return VecMap(v.data(), numel()); }
  ConstVecMap vec() const { return ConstVecMap(v.data(), numel()); }

  Tensor reshaped(const std::vector<long>& shape) const {
    Tensor out(shape);
    if (out.numel() != numel())
      throw shape_error("reshape " + shape_str() + " -> incompatible element count");
    out.v = v;
    return out;
  }
};

inline Tensor from_vector(const std::vector<double>& x) {
  Tensor t({static_cast<long>(x.size())});
  t.v = x;
  return t;
}

inline Tensor from_matrix(const RowMat& m) {
  Tensor t({m.rows(), m.cols()});
  std::memcpy(t.data(), m.data(), sizeof(double) * m.size());
  return t;
}

}  // namespace compinfer
