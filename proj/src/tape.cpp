#include "compinfer/tape.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace compinfer {

namespace {

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), requires_grad, std::move(back)});
  grads_.emplace_back();
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tensor& Tape::g(int id) {
  if (grads_[id].numel() == 0) grads_[id].resize(nodes_[id].value.shape(), 0.0);
  return grads_[id];
}

const Tensor& Tape::grad(Var x) const {
  check(x);
  if (grads_[x.id].numel() == 0) throw shape_error("no gradient recorded for node");
  return grads_[x.id];
}

void Tape::check(Var x) const {
  if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
    throw shape_error("invalid tape variable");
}

void Tape::backward(Var loss) {
  check(loss);
  if (nodes_[loss.id].value.numel() != 1) throw shape_error("backward needs a scalar loss");
  g(loss.id).v[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (!nodes_[i].back) continue;
    if (grads_[i].numel() == 0) continue;
    nodes_[i].back(*this);
  }
}

// ---- elementwise ----

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  if (!val(a).same_shape(val(b)))
    throw shape_error("add: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  out.vec() += val(b).vec();
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib](Tape& t) {
      const Tensor& go = t.grads_[io];
      if (t.nodes_[ia].requires_grad) t.g(ia).vec() += go.vec();
      if (t.nodes_[ib].requires_grad) t.g(ib).vec() += go.vec();
    };
  }
  return o;
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  if (!val(a).same_shape(val(b)))
    throw shape_error("sub: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  out.vec() -= val(b).vec();
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib](Tape& t) {
      const Tensor& go = t.grads_[io];
      if (t.nodes_[ia].requires_grad) t.g(ia).vec() += go.vec();
      if (t.nodes_[ib].requires_grad) t.g(ib).vec() -= go.vec();
    };
  }
  return o;
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  if (!val(a).same_shape(val(b)))
    throw shape_error("mul: " + val(a).shape_str() + " vs " + val(b).shape_str());
  Tensor out = val(a);
  out.vec().array() *= val(b).vec().array();
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib](Tape& t) {
      const Tensor& go = t.grads_[io];
      if (t.nodes_[ia].requires_grad)
        t.g(ia).vec().array() += go.vec().array() * t.nodes_[ib].value.vec().array();
      if (t.nodes_[ib].requires_grad)
        t.g(ib).vec().array() += go.vec().array() * t.nodes_[ia].value.vec().array();
    };
  }
  return o;
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double c) {
  check(a);
  Tensor out = val(a);
  out.vec() *= c;
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, c](Tape& t) { t.g(ia).vec() += c * t.grads_[io].vec(); };
  }
  return o;
}

Var Tape::add_scalar(Var a, double c) {
  check(a);
  Tensor out = val(a);
  out.vec().array() += c;
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) { t.g(ia).vec() += t.grads_[io].vec(); };
  }
  return o;
}

Var Tape::abs(Var a) {
  check(a);
  Tensor out = val(a);
  out.vec() = out.vec().array().abs();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      t.g(ia).vec().array() +=
          t.grads_[io].vec().array() * t.nodes_[ia].value.vec().array().sign();
    };
  }
  return o;
}

Var Tape::exp(Var a) {
  check(a);
  Tensor out = val(a);
  out.vec() = out.vec().array().exp();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      t.g(ia).vec().array() += t.grads_[io].vec().array() * t.nodes_[io].value.vec().array();
    };
  }
  return o;
}

Var Tape::log(Var a) {
  check(a);
  Tensor out = val(a);
  out.vec() = out.vec().array().log();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      t.g(ia).vec().array() += t.grads_[io].vec().array() / t.nodes_[ia].value.vec().array();
    };
  }
  return o;
}

Var Tape::tanh(Var a) {
  check(a);
  Tensor out = val(a);
  out.vec() = out.vec().array().tanh();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      auto y = t.nodes_[io].value.vec().array();
      t.g(ia).vec().array() += t.grads_[io].vec().array() * (1.0 - y * y);
    };
  }
  return o;
}

Var Tape::relu(Var a) {
  check(a);
  Tensor out = val(a);
  out.vec() = out.vec().array().max(0.0);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      auto x = t.nodes_[ia].value.vec().array();
      t.g(ia).vec().array() += t.grads_[io].vec().array() * (x > 0.0).cast<double>();
    };
  }
  return o;
}

Var Tape::softplus(Var a) {
  check(a);
  Tensor out = val(a);
  for (double& x : out.v) x = stable_softplus(x);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      const Tensor& x = t.nodes_[ia].value;
      Tensor& ga = t.g(ia);
      const Tensor& go = t.grads_[io];
      for (long i = 0; i < x.numel(); ++i) ga.v[i] += go.v[i] * sigmoid(x.v[i]);
    };
  }
  return o;
}

// ---- linear algebra ----

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.nd != 2 || B.nd != 2 || A.d[1] != B.d[0])
    throw shape_error("matmul: " + A.shape_str() + " x " + B.shape_str());
  Tensor out({A.d[0], B.d[1]});
  out.mat(A.d[0], B.d[1]).noalias() = A.mat(A.d[0], A.d[1]) * B.mat(B.d[0], B.d[1]);
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib](Tape& t) {
      const Tensor& A = t.nodes_[ia].value;
      const Tensor& B = t.nodes_[ib].value;
      const Tensor& go = t.grads_[io];
      auto G = go.mat(A.d[0], B.d[1]);
      if (t.nodes_[ia].requires_grad)
        t.g(ia).mat(A.d[0], A.d[1]).noalias() += G * B.mat(B.d[0], B.d[1]).transpose();
      if (t.nodes_[ib].requires_grad)
        t.g(ib).mat(B.d[0], B.d[1]).noalias() += A.mat(A.d[0], A.d[1]).transpose() * G;
    };
  }
  return o;
}

Var Tape::bmm(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.nd != 3 || B.nd != 3 || A.d[0] != B.d[0] || A.d[2] != B.d[1])
    throw shape_error("bmm: " + A.shape_str() + " x " + B.shape_str());
  long nb = A.d[0], m = A.d[1], k = A.d[2], n = B.d[2];
  Tensor out({nb, m, n});
  for (long i = 0; i < nb; ++i)
    out.slab(i, m, n).noalias() = A.slab(i, m, k) * B.slab(i, k, n);
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib, nb, m, k, n](Tape& t) {
      const Tensor& A = t.nodes_[ia].value;
      const Tensor& B = t.nodes_[ib].value;
      const Tensor& go = t.grads_[io];
      for (long i = 0; i < nb; ++i) {
        auto G = go.slab(i, m, n);
        if (t.nodes_[ia].requires_grad)
          t.g(ia).slab(i, m, k).noalias() += G * B.slab(i, k, n).transpose();
        if (t.nodes_[ib].requires_grad)
          t.g(ib).slab(i, k, n).noalias() += A.slab(i, m, k).transpose() * G;
      }
    };
  }
  return o;
}

Var Tape::linear(Var x, Var w, Var b) {
  check(x);
  check(w);
  check(b);
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(b);
  if (X.nd != 2 || W.nd != 2 || B.nd != 1 || X.d[1] != W.d[1] || W.d[0] != B.d[0])
    throw shape_error("linear: x" + X.shape_str() + " w" + W.shape_str() + " b" + B.shape_str());
  long m = X.d[0], in = X.d[1], outw = W.d[0];
  Tensor out({m, outw});
  out.mat(m, outw).noalias() = X.mat(m, in) * W.mat(outw, in).transpose();
  out.mat(m, outw).rowwise() += B.vec().transpose();
  Var o = push(std::move(out), rg(x) || rg(w) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ix = x.id, iw = w.id, ib = b.id;
    nodes_[o.id].back = [io, ix, iw, ib, m, in, outw](Tape& t) {
      const Tensor& X = t.nodes_[ix].value;
      const Tensor& W = t.nodes_[iw].value;
      auto G = t.grads_[io].mat(m, outw);
      if (t.nodes_[ix].requires_grad)
        t.g(ix).mat(m, in).noalias() += G * W.mat(outw, in);
      if (t.nodes_[iw].requires_grad)
        t.g(iw).mat(outw, in).noalias() += G.transpose() * X.mat(m, in);
      if (t.nodes_[ib].requires_grad)
        t.g(ib).vec() += G.colwise().sum().transpose();
    };
  }
  return o;
}

Var Tape::transpose_last(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2 && A.nd != 3) throw shape_error("transpose_last: rank must be 2 or 3");
  long nb = A.nd == 3 ? A.d[0] : 1;
  long m = A.d[A.nd - 2], n = A.d[A.nd - 1];
  Tensor out(A.nd == 3 ? std::vector<long>{nb, n, m} : std::vector<long>{n, m});
  for (long i = 0; i < nb; ++i) out.slab(i, n, m) = A.slab(i, m, n).transpose();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, nb, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      for (long i = 0; i < nb; ++i) t.g(ia).slab(i, m, n) += go.slab(i, n, m).transpose();
    };
  }
  return o;
}

namespace {
struct LuFactors {
  std::vector<Eigen::PartialPivLU<RowMat>> lu;
};
struct LltFactors {
  std::vector<Eigen::LLT<RowMat>> llt;
};
}  // namespace

Var Tape::lu_solve(Var a, Var rhs) {
  check(a);
  check(rhs);
  const Tensor& A = val(a);
  const Tensor& R = val(rhs);
  if (A.nd != R.nd || (A.nd != 2 && A.nd != 3))
    throw shape_error("lu_solve: rank mismatch " + A.shape_str() + ", " + R.shape_str());
  long nb = A.nd == 3 ? A.d[0] : 1;
  long n = A.d[A.nd - 2];
  if (A.d[A.nd - 1] != n || R.d[R.nd - 2] != n || (A.nd == 3 && R.d[0] != nb))
    throw shape_error("lu_solve: " + A.shape_str() + " \\ " + R.shape_str());
  long m = R.d[R.nd - 1];
  auto fac = std::make_shared<LuFactors>();
  fac->lu.reserve(nb);
  Tensor out(R.shape());
  for (long i = 0; i < nb; ++i) {
    fac->lu.emplace_back(A.slab(i, n, n));
    out.slab(i, n, m) = fac->lu.back().solve(R.slab(i, n, m));
  }
  Var o = push(std::move(out), rg(a) || rg(rhs), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ir = rhs.id;
    nodes_[o.id].back = [io, ia, ir, fac, nb, n, m](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& X = t.nodes_[io].value;
      for (long i = 0; i < nb; ++i) {
        // dRHS = A^-T g, dA = -dRHS X^T
        RowMat gr = fac->lu[i].matrixLU().template triangularView<Eigen::Upper>().transpose().solve(
            go.slab(i, n, m).eval());
        gr = fac->lu[i].matrixLU().template triangularView<Eigen::UnitLower>().transpose().solve(gr);
        gr = fac->lu[i].permutationP().transpose() * gr;
        if (t.nodes_[ir].requires_grad) t.g(ir).slab(i, n, m) += gr;
        if (t.nodes_[ia].requires_grad)
          t.g(ia).slab(i, n, n).noalias() -= gr * X.slab(i, n, m).transpose();
      }
    };
  }
  return o;
}

Var Tape::cholesky_solve(Var a, Var rhs) {
  check(a);
  check(rhs);
  const Tensor& A = val(a);
  const Tensor& R = val(rhs);
  if (A.nd != R.nd || (A.nd != 2 && A.nd != 3))
    throw shape_error("cholesky_solve: rank mismatch");
  long nb = A.nd == 3 ? A.d[0] : 1;
  long n = A.d[A.nd - 2];
  if (A.d[A.nd - 1] != n || R.d[R.nd - 2] != n || (A.nd == 3 && R.d[0] != nb))
    throw shape_error("cholesky_solve: " + A.shape_str() + " \\ " + R.shape_str());
  long m = R.d[R.nd - 1];
  auto fac = std::make_shared<LltFactors>();
  fac->llt.reserve(nb);
  Tensor out(R.shape());
  for (long i = 0; i < nb; ++i) {
    fac->llt.emplace_back(A.slab(i, n, n));
    if (fac->llt.back().info() != Eigen::Success)
      throw numeric_error("cholesky_solve: matrix not positive definite");
    out.slab(i, n, m) = fac->llt.back().solve(R.slab(i, n, m));
  }
  Var o = push(std::move(out), rg(a) || rg(rhs), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ir = rhs.id;
    nodes_[o.id].back = [io, ia, ir, fac, nb, n, m](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& X = t.nodes_[io].value;
      for (long i = 0; i < nb; ++i) {
        RowMat gr = fac->llt[i].solve(go.slab(i, n, m).eval());
        if (t.nodes_[ir].requires_grad) t.g(ir).slab(i, n, m) += gr;
        if (t.nodes_[ia].requires_grad) {
          // The factorization reads only the lower triangle, so the symmetric
          // sensitivity -gr X^T is folded onto it.
          RowMat ga = gr * X.slab(i, n, m).transpose();
          auto GA = t.g(ia).slab(i, n, n);
          for (long r = 0; r < n; ++r) {
            GA(r, r) -= ga(r, r);
            for (long c = 0; c < r; ++c) GA(r, c) -= ga(r, c) + ga(c, r);
          }
        }
      }
    };
  }
  return o;
}

Var Tape::logdet(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2 && A.nd != 3) throw shape_error("logdet: rank must be 2 or 3");
  long nb = A.nd == 3 ? A.d[0] : 1;
  long n = A.d[A.nd - 2];
  if (A.d[A.nd - 1] != n) throw shape_error("logdet: matrix must be square");
  auto fac = std::make_shared<LuFactors>();
  fac->lu.reserve(nb);
  Tensor out(A.nd == 3 ? std::vector<long>{nb} : std::vector<long>{1});
  for (long i = 0; i < nb; ++i) {
    fac->lu.emplace_back(A.slab(i, n, n));
    double det = fac->lu.back().determinant();
    out.v[i] = std::log(std::max(det, 1e-30));
  }
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, fac, nb, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      for (long i = 0; i < nb; ++i) {
        RowMat inv = fac->lu[i].inverse();
        t.g(ia).slab(i, n, n) += go.v[i] * inv.transpose();
      }
    };
  }
  return o;
}

// ---- structure ----

Var Tape::reshape(Var a, const std::vector<long>& shape) {
  check(a);
  Tensor out = val(a).reshaped(shape);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) { t.g(ia).vec() += t.grads_[io].vec(); };
  }
  return o;
}

Var Tape::add_rowvec(Var a, Var r) {
  check(a);
  check(r);
  const Tensor& A = val(a);
  const Tensor& R = val(r);
  if (A.nd != 2 || R.nd != 1 || A.d[1] != R.d[0])
    throw shape_error("add_rowvec: " + A.shape_str() + " + " + R.shape_str());
  Tensor out = A;
  out.mat(A.d[0], A.d[1]).rowwise() += R.vec().transpose();
  Var o = push(std::move(out), rg(a) || rg(r), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ir = r.id;
    long m = A.d[0], n = A.d[1];
    nodes_[o.id].back = [io, ia, ir, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      if (t.nodes_[ia].requires_grad) t.g(ia).vec() += go.vec();
      if (t.nodes_[ir].requires_grad) t.g(ir).vec() += go.mat(m, n).colwise().sum().transpose();
    };
  }
  return o;
}

Var Tape::scale_cols(Var a, Var s) {
  check(a);
  check(s);
  const Tensor& A = val(a);
  const Tensor& S = val(s);
  if (A.nd != 3 || S.nd != 2 || A.d[0] != S.d[0] || A.d[2] != S.d[1])
    throw shape_error("scale_cols: " + A.shape_str() + " * " + S.shape_str());
  long nb = A.d[0], m = A.d[1], n = A.d[2];
  Tensor out = A;
  for (long b = 0; b < nb; ++b)
    out.slab(b, m, n).array().rowwise() *= S.mat(nb, n).row(b).array();
  Var o = push(std::move(out), rg(a) || rg(s), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, is = s.id;
    nodes_[o.id].back = [io, ia, is, nb, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& A = t.nodes_[ia].value;
      const Tensor& S = t.nodes_[is].value;
      for (long b = 0; b < nb; ++b) {
        if (t.nodes_[ia].requires_grad)
          t.g(ia).slab(b, m, n).array() +=
              go.slab(b, m, n).array().rowwise() * S.mat(nb, n).row(b).array();
        if (t.nodes_[is].requires_grad)
          t.g(is).mat(nb, n).row(b) +=
              (go.slab(b, m, n).array() * A.slab(b, m, n).array()).colwise().sum().matrix();
      }
    };
  }
  return o;
}

Var Tape::extract_diag(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 3 || A.d[1] != A.d[2]) throw shape_error("extract_diag: need (B,n,n)");
  long nb = A.d[0], n = A.d[1];
  Tensor out({nb, n});
  for (long b = 0; b < nb; ++b)
    for (long i = 0; i < n; ++i) out(b, i) = A(b, i, i);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, nb, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long b = 0; b < nb; ++b)
        for (long i = 0; i < n; ++i) ga(b, i, i) += go(b, i);
    };
  }
  return o;
}

Var Tape::diag_embed(Var dv) {
  check(dv);
  const Tensor& D = val(dv);
  if (D.nd != 2) throw shape_error("diag_embed: need (B,n)");
  long nb = D.d[0], n = D.d[1];
  Tensor out({nb, n, n}, 0.0);
  for (long b = 0; b < nb; ++b)
    for (long i = 0; i < n; ++i) out(b, i, i) = D(b, i);
  Var o = push(std::move(out), rg(dv), nullptr);
  if (rg(o)) {
    int io = o.id, ia = dv.id;
    nodes_[o.id].back = [io, ia, nb, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long b = 0; b < nb; ++b)
        for (long i = 0; i < n; ++i) ga(b, i) += go(b, i, i);
    };
  }
  return o;
}

Var Tape::tril_embed(Var strict, Var diag) {
  check(strict);
  check(diag);
  const Tensor& S = val(strict);
  const Tensor& D = val(diag);
  if (S.nd != 2 || D.nd != 2 || S.d[0] != D.d[0])
    throw shape_error("tril_embed: " + S.shape_str() + ", " + D.shape_str());
  long nb = D.d[0], n = D.d[1];
  if (S.d[1] != n * (n - 1) / 2) throw shape_error("tril_embed: strict part size mismatch");
  Tensor out({nb, n, n}, 0.0);
  for (long b = 0; b < nb; ++b) {
    long p = 0;
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < i; ++j) out(b, i, j) = S(b, p++);
      out(b, i, i) = D(b, i);
    }
  }
  Var o = push(std::move(out), rg(strict) || rg(diag), nullptr);
  if (rg(o)) {
    int io = o.id, is = strict.id, id = diag.id;
    nodes_[o.id].back = [io, is, id, nb, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      for (long b = 0; b < nb; ++b) {
        long p = 0;
        for (long i = 0; i < n; ++i) {
          for (long j = 0; j < i; ++j) {
            if (t.nodes_[is].requires_grad) t.g(is)(b, p) += go(b, i, j);
            ++p;
          }
          if (t.nodes_[id].requires_grad) t.g(id)(b, i) += go(b, i, i);
        }
      }
    };
  }
  return o;
}

Var Tape::concat_cols(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.nd != 2 || B.nd != 2 || A.d[0] != B.d[0])
    throw shape_error("concat_cols: " + A.shape_str() + " | " + B.shape_str());
  long m = A.d[0], na = A.d[1], nbc = B.d[1];
  Tensor out({m, na + nbc});
  out.mat(m, na + nbc).leftCols(na) = A.mat(m, na);
  out.mat(m, na + nbc).rightCols(nbc) = B.mat(m, nbc);
  Var o = push(std::move(out), rg(a) || rg(b), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id, ib = b.id;
    nodes_[o.id].back = [io, ia, ib, m, na, nbc](Tape& t) {
      auto G = t.grads_[io].mat(m, na + nbc);
      if (t.nodes_[ia].requires_grad) t.g(ia).mat(m, na) += G.leftCols(na);
      if (t.nodes_[ib].requires_grad) t.g(ib).mat(m, nbc) += G.rightCols(nbc);
    };
  }
  return o;
}

Var Tape::stack_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw shape_error("stack_cols: empty list");
  long m = -1;
  bool anyrg = false;
  for (Var x : xs) {
    check(x);
    const Tensor& X = val(x);
    if (X.nd != 1) throw shape_error("stack_cols: inputs must be rank 1");
    if (m < 0) m = X.d[0];
    if (X.d[0] != m) throw shape_error("stack_cols: length mismatch");
    anyrg = anyrg || rg(x);
  }
  long k = static_cast<long>(xs.size());
  Tensor out({m, k});
  for (long j = 0; j < k; ++j)
    for (long i = 0; i < m; ++i) out(i, j) = val(xs[j])(i);
  Var o = push(std::move(out), anyrg, nullptr);
  if (rg(o)) {
    int io = o.id;
    std::vector<int> ids(xs.size());
    for (size_t j = 0; j < xs.size(); ++j) ids[j] = xs[j].id;
    nodes_[o.id].back = [io, ids, m](Tape& t) {
      const Tensor& go = t.grads_[io];
      for (size_t j = 0; j < ids.size(); ++j) {
        if (!t.nodes_[ids[j]].requires_grad) continue;
        Tensor& gj = t.g(ids[j]);
        for (long i = 0; i < m; ++i) gj(i) += go(i, static_cast<long>(j));
      }
    };
  }
  return o;
}

Var Tape::slice_cols(Var a, long begin, long len) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2 || begin < 0 || len <= 0 || begin + len > A.d[1])
    throw shape_error("slice_cols: bad range on " + A.shape_str());
  long m = A.d[0];
  Tensor out({m, len});
  out.mat(m, len) = A.mat(m, A.d[1]).middleCols(begin, len);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    long n = A.d[1];
    nodes_[o.id].back = [io, ia, m, n, begin, len](Tape& t) {
      t.g(ia).mat(m, n).middleCols(begin, len) += t.grads_[io].mat(m, len);
    };
  }
  return o;
}

Var Tape::gather_cols(Var a, const std::vector<long>& idx) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2) throw shape_error("gather_cols: need rank 2");
  long m = A.d[0], n = A.d[1], k = static_cast<long>(idx.size());
  for (long j : idx)
    if (j < 0 || j >= n) throw shape_error("gather_cols: index out of range");
  Tensor out({m, k});
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < k; ++j) out(i, j) = A(i, idx[j]);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, idx, m, k](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long i = 0; i < m; ++i)
        for (long j = 0; j < k; ++j) ga(i, idx[j]) += go(i, j);
    };
  }
  return o;
}

Var Tape::gather_submatrix(Var a, const std::vector<long>& idx) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 3 || A.d[1] != A.d[2]) throw shape_error("gather_submatrix: need (B,n,n)");
  long nb = A.d[0], n = A.d[1], k = static_cast<long>(idx.size());
  for (long j : idx)
    if (j < 0 || j >= n) throw shape_error("gather_submatrix: index out of range");
  Tensor out({nb, k, k});
  for (long b = 0; b < nb; ++b)
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < k; ++j) out(b, i, j) = A(b, idx[i], idx[j]);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, idx, nb, k](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long b = 0; b < nb; ++b)
        for (long i = 0; i < k; ++i)
          for (long j = 0; j < k; ++j) ga(b, idx[i], idx[j]) += go(b, i, j);
    };
  }
  return o;
}

Var Tape::take_rows(Var a, const std::vector<long>& rows) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd < 2) throw shape_error("take_rows: need rank >= 2");
  long m = A.d[0];
  for (long r : rows)
    if (r < 0 || r >= m) throw shape_error("take_rows: index out of range");
  long k = static_cast<long>(rows.size());
  long row_elems = A.numel() / m;
  std::vector<long> shape = A.shape();
  shape[0] = k;
  Tensor out(shape);
  for (long i = 0; i < k; ++i)
    std::memcpy(out.data() + i * row_elems, A.data() + rows[i] * row_elems,
                sizeof(double) * row_elems);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, rows, row_elems](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (size_t i = 0; i < rows.size(); ++i)
        VecMap(ga.data() + rows[i] * row_elems, row_elems) +=
            ConstVecMap(go.data() + static_cast<long>(i) * row_elems, row_elems);
    };
  }
  return o;
}

Var Tape::pick_per_row(Var a, const std::vector<long>& idx) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2 || static_cast<long>(idx.size()) != A.d[0])
    throw shape_error("pick_per_row: need (m,n) and m indices");
  long m = A.d[0], n = A.d[1];
  for (long j : idx)
    if (j < 0 || j >= n) throw shape_error("pick_per_row: index out of range");
  Tensor out({m});
  for (long i = 0; i < m; ++i) out(i) = A(i, idx[i]);
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, idx, m](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long i = 0; i < m; ++i) ga(i, idx[i]) += go(i);
    };
  }
  return o;
}

// ---- reductions, row transforms ----

Var Tape::sum_all(Var a) {
  check(a);
  Tensor out = Tensor::scalar(val(a).vec().sum());
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia](Tape& t) {
      t.g(ia).vec().array() += t.grads_[io].v[0];
    };
  }
  return o;
}

Var Tape::mean_all(Var a) {
  check(a);
  long n = val(a).numel();
  Var s = sum_all(a);
  return scale(s, 1.0 / static_cast<double>(n));
}

Var Tape::sum_last(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd < 2) throw shape_error("sum_last: need rank >= 2");
  long n = A.d[A.nd - 1];
  long rows = A.numel() / n;
  std::vector<long> shape = A.shape();
  shape.pop_back();
  Tensor out(shape);
  for (long i = 0; i < rows; ++i) out.v[i] = ConstVecMap(A.data() + i * n, n).sum();
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, rows, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      for (long i = 0; i < rows; ++i)
        VecMap(ga.data() + i * n, n).array() += go.v[i];
    };
  }
  return o;
}

Var Tape::dot_rows(Var a, Var b) {
  check(a);
  check(b);
  if (!val(a).same_shape(val(b)) || val(a).nd != 2)
    throw shape_error("dot_rows: need matching (m,n)");
  return sum_last(mul(a, b));
}

Var Tape::softmax_rows(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2) throw shape_error("softmax_rows: need rank 2");
  long m = A.d[0], n = A.d[1];
  Tensor out({m, n});
  for (long i = 0; i < m; ++i) {
    auto row = A.mat(m, n).row(i);
    double mx = row.maxCoeff();
    Eigen::ArrayXd e = (row.array() - mx).exp();
    out.mat(m, n).row(i) = (e / e.sum()).matrix();
  }
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& s = t.nodes_[io].value;
      auto G = go.mat(m, n);
      auto S = s.mat(m, n);
      for (long i = 0; i < m; ++i) {
        double dot = G.row(i).dot(S.row(i));
        t.g(ia).mat(m, n).row(i).array() += S.row(i).array() * (G.row(i).array() - dot);
      }
    };
  }
  return o;
}

Var Tape::log_softmax_rows(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2) throw shape_error("log_softmax_rows: need rank 2");
  long m = A.d[0], n = A.d[1];
  Tensor out({m, n});
  for (long i = 0; i < m; ++i) {
    auto row = A.mat(m, n).row(i);
    double mx = row.maxCoeff();
    double lse = mx + std::log((row.array() - mx).exp().sum());
    out.mat(m, n).row(i) = row.array() - lse;
  }
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& ls = t.nodes_[io].value;
      for (long i = 0; i < m; ++i) {
        auto G = go.mat(m, n).row(i);
        double gsum = G.sum();
        t.g(ia).mat(m, n).row(i).array() +=
            G.array() - ls.mat(m, n).row(i).array().exp() * gsum;
      }
    };
  }
  return o;
}

Var Tape::log_sum_exp_rows(Var a) {
  check(a);
  const Tensor& A = val(a);
  if (A.nd != 2) throw shape_error("log_sum_exp_rows: need rank 2");
  long m = A.d[0], n = A.d[1];
  Tensor out({m});
  for (long i = 0; i < m; ++i) {
    auto row = A.mat(m, n).row(i);
    double mx = row.maxCoeff();
    out(i) = mx + std::log((row.array() - mx).exp().sum());
  }
  Var o = push(std::move(out), rg(a), nullptr);
  if (rg(o)) {
    int io = o.id, ia = a.id;
    nodes_[o.id].back = [io, ia, m, n](Tape& t) {
      const Tensor& go = t.grads_[io];
      const Tensor& lse = t.nodes_[io].value;
      const Tensor& A = t.nodes_[ia].value;
      for (long i = 0; i < m; ++i)
        t.g(ia).mat(m, n).row(i).array() +=
            go(i) * (A.mat(m, n).row(i).array() - lse(i)).exp();
    };
  }
  return o;
}

// ---- sequence ops ----

Var Tape::conv1d(Var x, Var w, Var bias) {
  check(x);
  check(w);
  check(bias);
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(bias);
  if (X.nd != 3 || W.nd != 3 || B.nd != 1 || X.d[1] != W.d[1] || B.d[0] != W.d[0])
    throw shape_error("conv1d: x" + X.shape_str() + " w" + W.shape_str());
  long nb = X.d[0], c = X.d[1], l = X.d[2], oc = W.d[0], k = W.d[2];
  if (l < k) throw shape_error("conv1d: input shorter than kernel");
  long lo = l - k + 1;
  Tensor out({nb, oc, lo});
  RowMat col(c * k, lo);
  ConstMatMap Wm(W.data(), oc, c * k);
  for (long b = 0; b < nb; ++b) {
    for (long ci = 0; ci < c; ++ci)
      for (long ki = 0; ki < k; ++ki)
        col.row(ci * k + ki) =
            ConstVecMap(X.data() + (b * c + ci) * l + ki, lo).transpose();
    out.slab(b, oc, lo).noalias() = Wm * col;
    out.slab(b, oc, lo).colwise() += B.vec();
  }
  Var o = push(std::move(out), rg(x) || rg(w) || rg(bias), nullptr);
  if (rg(o)) {
    int io = o.id, ix = x.id, iw = w.id, ib = bias.id;
    nodes_[o.id].back = [io, ix, iw, ib, nb, c, l, oc, k, lo](Tape& t) {
      const Tensor& X = t.nodes_[ix].value;
      const Tensor& W = t.nodes_[iw].value;
      const Tensor& go = t.grads_[io];
      ConstMatMap Wm(W.data(), oc, c * k);
      RowMat col(c * k, lo);
      RowMat dcol(c * k, lo);
      for (long b = 0; b < nb; ++b) {
        auto G = go.slab(b, oc, lo);
        if (t.nodes_[iw].requires_grad) {
          for (long ci = 0; ci < c; ++ci)
            for (long ki = 0; ki < k; ++ki)
              col.row(ci * k + ki) =
                  ConstVecMap(X.data() + (b * c + ci) * l + ki, lo).transpose();
          t.g(iw).mat(oc, c * k).noalias() += G * col.transpose();
        }
        if (t.nodes_[ix].requires_grad) {
          dcol.noalias() = Wm.transpose() * G;
          Tensor& gx = t.g(ix);
          for (long ci = 0; ci < c; ++ci)
            for (long ki = 0; ki < k; ++ki)
              VecMap(gx.data() + (b * c + ci) * l + ki, lo) +=
                  dcol.row(ci * k + ki).transpose();
        }
        if (t.nodes_[ib].requires_grad) t.g(ib).vec() += G.rowwise().sum();
      }
    };
  }
  return o;
}

Var Tape::mean_pool_sets(Var x, long set_size) {
  check(x);
  const Tensor& X = val(x);
  if (X.nd != 2 || set_size <= 0 || X.d[0] % set_size != 0)
    throw shape_error("mean_pool_sets: rows not divisible by set size");
  long m = X.d[0] / set_size, f = X.d[1];
  Tensor out({m, f}, 0.0);
  for (long i = 0; i < m; ++i) {
    for (long s = 0; s < set_size; ++s)
      out.mat(m, f).row(i) += X.mat(X.d[0], f).row(i * set_size + s);
    out.mat(m, f).row(i) /= static_cast<double>(set_size);
  }
  Var o = push(std::move(out), rg(x), nullptr);
  if (rg(o)) {
    int io = o.id, ia = x.id;
    long rows = X.d[0];
    nodes_[o.id].back = [io, ia, m, f, set_size, rows](Tape& t) {
      const Tensor& go = t.grads_[io];
      Tensor& ga = t.g(ia);
      double inv = 1.0 / static_cast<double>(set_size);
      for (long i = 0; i < m; ++i)
        for (long s = 0; s < set_size; ++s)
          ga.mat(rows, f).row(i * set_size + s) += inv * go.mat(m, f).row(i);
    };
  }
  return o;
}

}  // namespace compinfer
