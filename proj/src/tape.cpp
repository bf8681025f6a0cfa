#include "imf/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

namespace imf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

CMapM mat(const Tensor& t) { return CMapM(t.data(), t.rows(), t.cols()); }
MapM mat(Tensor& t) { return MapM(t.data(), t.rows(), t.cols()); }

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

double safe_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double safe_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Strided 2D view used to realize scalar and equal-or-1 broadcasting.
struct BView {
  const double* p;
  std::size_t stride_r, stride_c;
  double at(std::size_t i, std::size_t j) const { return p[i * stride_r + j * stride_c]; }
};

enum BinOp { kAdd, kSub, kMul, kDiv };
enum UnOp { kNeg, kAbs, kRelu, kLeakyRelu, kElu, kSigmoid, kSoftplus, kLog, kAffine };

}  // namespace

const Tape::Node& Tape::node(std::uint32_t id) const { return nodes_[id]; }
Tape::Node& Tape::node(std::uint32_t id) { return nodes_[id]; }

void Tape::check(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw LogicError("tape: dangling or invalid node handle");
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(std::uint32_t id) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  if (grads_[id].empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape());
  return grads_[id];
}

Var Tape::leaf(Tensor value) {
  bool rg = value.requires_grad;
  return leaf(std::move(value), rg);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw DimensionError("tape: cannot register an empty tensor");
  return push(std::move(value), requires_grad, nullptr);
}

// ---------------------------------------------------------------------------
// Elementwise

Var Tape::binary_elementwise(Var va, Var vb, int op) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);

  Shape out_shape;
  std::size_t R, C;
  std::size_t a_sr, a_sc, b_sr, b_sc;
  if (a.same_shape(b)) {
    out_shape = a.shape();
    R = 1;
    C = a.size();
    a_sr = b_sr = 0;
    a_sc = b_sc = 1;
  } else if (a.size() == 1 || b.size() == 1) {
    const Tensor& big = a.size() == 1 ? b : a;
    out_shape = big.shape();
    R = 1;
    C = big.size();
    a_sr = b_sr = 0;
    a_sc = a.size() == 1 ? 0 : 1;
    b_sc = b.size() == 1 ? 0 : 1;
  } else if (a.rank() == 2 && b.rank() == 2 &&
             (a.shape()[0] == b.shape()[0] || a.shape()[0] == 1 || b.shape()[0] == 1) &&
             (a.shape()[1] == b.shape()[1] || a.shape()[1] == 1 || b.shape()[1] == 1)) {
    R = std::max(a.shape()[0], b.shape()[0]);
    C = std::max(a.shape()[1], b.shape()[1]);
    out_shape = {R, C};
    a_sr = a.shape()[0] == 1 ? 0 : a.shape()[1];
    a_sc = a.shape()[1] == 1 ? 0 : 1;
    b_sr = b.shape()[0] == 1 ? 0 : b.shape()[1];
    b_sc = b.shape()[1] == 1 ? 0 : 1;
  } else {
    throw DimensionError("elementwise op: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }

  Tensor out(out_shape);
  BView av{a.data(), a_sr, a_sc}, bv{b.data(), b_sr, b_sc};
  double* o = out.data();
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      double x = av.at(i, j), y = bv.at(i, j);
      double r;
      switch (op) {
        case kAdd: r = x + y; break;
        case kSub: r = x - y; break;
        case kMul: r = x * y; break;
        default: r = x / y; break;
      }
      *o++ = r;
    }
  }

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    const Tensor& ta = t.value(Var{aid});
    const Tensor& tb = t.value(Var{bid});
    BView gav{ta.data(), a_sr, a_sc}, gbv{tb.data(), b_sr, b_sc};
    bool wa = t.nodes_[aid].requires_grad, wb = t.nodes_[bid].requires_grad;
    double* ga = wa ? t.grad_buf(aid).data() : nullptr;
    double* gb = wb ? t.grad_buf(bid).data() : nullptr;
    const double* gp = g.data();
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        double gv = *gp++;
        std::size_t ia = i * a_sr + j * a_sc, ib = i * b_sr + j * b_sc;
        switch (op) {
          case kAdd:
            if (wa) ga[ia] += gv;
            if (wb) gb[ib] += gv;
            break;
          case kSub:
            if (wa) ga[ia] += gv;
            if (wb) gb[ib] -= gv;
            break;
          case kMul:
            if (wa) ga[ia] += gv * gbv.p[ib];
            if (wb) gb[ib] += gv * gav.p[ia];
            break;
          default: {
            double y = gbv.p[ib];
            if (wa) ga[ia] += gv / y;
            if (wb) gb[ib] -= gv * gav.p[ia] / (y * y);
            break;
          }
        }
      }
    }
  };
  return vo;
}

Var Tape::add(Var a, Var b) { return binary_elementwise(a, b, kAdd); }
Var Tape::sub(Var a, Var b) { return binary_elementwise(a, b, kSub); }
Var Tape::mul(Var a, Var b) { return binary_elementwise(a, b, kMul); }
Var Tape::div(Var a, Var b) { return binary_elementwise(a, b, kDiv); }

Var Tape::unary_elementwise(Var va, int op, double p0, double p1) {
  check(va);
  const Tensor& a = value(va);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = a[i];
    double r;
    switch (op) {
      case kNeg: r = -x; break;
      case kAbs: r = std::abs(x); break;
      case kRelu: r = x > 0 ? x : 0.0; break;
      case kLeakyRelu: r = x > 0 ? x : p0 * x; break;
      case kElu: r = x > 0 ? x : std::expm1(x); break;
      case kSigmoid: r = safe_sigmoid(x); break;
      case kSoftplus: r = safe_softplus(x); break;
      case kLog:
        if (x <= 0) throw DomainError("log of non-positive value " + std::to_string(x));
        r = std::log(x);
        break;
      default: r = p0 * x + p1; break;  // affine
    }
    out[i] = r;
  }

  bool rg = requires_grad(va);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[aid].requires_grad) return;
    const Tensor& g = t.grads_[oid];
    const Tensor& x = t.value(Var{aid});
    const Tensor& y = t.value(Var{oid});
    double* ga = t.grad_buf(aid).data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d;
      switch (op) {
        case kNeg: d = -1.0; break;
        case kAbs: d = sign(x[i]); break;
        case kRelu: d = x[i] > 0 ? 1.0 : 0.0; break;
        case kLeakyRelu: d = x[i] > 0 ? 1.0 : p0; break;
        case kElu: d = x[i] > 0 ? 1.0 : y[i] + 1.0; break;
        case kSigmoid: d = y[i] * (1.0 - y[i]); break;
        case kSoftplus: d = safe_sigmoid(x[i]); break;
        case kLog: d = 1.0 / x[i]; break;
        default: d = p0; break;
      }
      ga[i] += g[i] * d;
    }
  };
  return vo;
}

Var Tape::neg(Var a) { return unary_elementwise(a, kNeg); }
Var Tape::abs(Var a) { return unary_elementwise(a, kAbs); }
Var Tape::relu(Var a) { return unary_elementwise(a, kRelu); }
Var Tape::leaky_relu(Var a, double slope) { return unary_elementwise(a, kLeakyRelu, slope); }
Var Tape::elu(Var a) { return unary_elementwise(a, kElu); }
Var Tape::sigmoid(Var a) { return unary_elementwise(a, kSigmoid); }
Var Tape::softplus(Var a) { return unary_elementwise(a, kSoftplus); }
Var Tape::log(Var a) { return unary_elementwise(a, kLog); }
Var Tape::affine(Var a, double m, double c) { return unary_elementwise(a, kAffine, m, c); }

// ---------------------------------------------------------------------------
// Linear algebra

Var Tape::matmul(Var va, Var vb) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out({a.shape()[0], b.shape()[1]});
  mat(out) = mat(a) * mat(b);

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    if (t.nodes_[aid].requires_grad) mat(t.grad_buf(aid)) += mat(g) * mat(t.value(Var{bid})).transpose();
    if (t.nodes_[bid].requires_grad) mat(t.grad_buf(bid)) += mat(t.value(Var{aid})).transpose() * mat(g);
  };
  return vo;
}

Var Tape::matmul_nt(Var va, Var vb) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out({a.shape()[0], b.shape()[0]});
  mat(out) = mat(a) * mat(b).transpose();

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    if (t.nodes_[aid].requires_grad) mat(t.grad_buf(aid)) += mat(g) * mat(t.value(Var{bid}));
    if (t.nodes_[bid].requires_grad) mat(t.grad_buf(bid)) += mat(g).transpose() * mat(t.value(Var{aid}));
  };
  return vo;
}

// ---------------------------------------------------------------------------
// Shape and reduction

Var Tape::reshape(Var va, Shape shape) {
  check(va);
  const Tensor& a = value(va);
  Tensor out(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));

  bool rg = requires_grad(va);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[aid].requires_grad) return;
    const Tensor& g = t.grads_[oid];
    double* ga = t.grad_buf(aid).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return vo;
}

Var Tape::sum_all(Var va) {
  check(va);
  const Tensor& a = value(va);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];

  bool rg = requires_grad(va);
  Var vo = push(Tensor::scalar(s), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[aid].requires_grad) return;
    double gv = t.grads_[oid][0];
    double* ga = t.grad_buf(aid).data();
    std::size_t n = t.value(Var{aid}).size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += gv;
  };
  return vo;
}

Var Tape::mean_all(Var va) {
  check(va);
  std::size_t n = value(va).size();
  return affine(sum_all(va), 1.0 / static_cast<double>(n), 0.0);
}

Var Tape::sum_rows(Var va) {
  check(va);
  const Tensor& a = value(va);
  if (a.rank() != 2) throw DimensionError("sum_rows: expected 2D tensor, got " + shape_str(a.shape()));
  std::size_t n = a.shape()[0], d = a.shape()[1];
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += a.at(i, j);
    out[i] = s;
  }

  bool rg = requires_grad(va);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[aid].requires_grad) return;
    const Tensor& g = t.grads_[oid];
    double* ga = t.grad_buf(aid).data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[i];
    }
  };
  return vo;
}

Var Tape::gather_rows(Var va, std::vector<std::uint32_t> index) {
  check(va);
  const Tensor& a = value(va);
  if (a.rank() != 2) throw DimensionError("gather_rows: expected 2D tensor, got " + shape_str(a.shape()));
  std::size_t n = a.shape()[0], d = a.shape()[1];
  for (std::uint32_t ix : index) {
    if (ix >= n) throw DimensionError("gather_rows: index " + std::to_string(ix) + " out of range " + std::to_string(n));
  }
  Tensor out({index.size(), d});
  for (std::size_t k = 0; k < index.size(); ++k) {
    const double* src = a.data() + static_cast<std::size_t>(index[k]) * d;
    std::copy(src, src + d, out.data() + k * d);
  }

  bool rg = requires_grad(va);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, oid = vo.id;
  auto idx = std::make_shared<std::vector<std::uint32_t>>(std::move(index));
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[aid].requires_grad) return;
    const Tensor& g = t.grads_[oid];
    double* ga = t.grad_buf(aid).data();
    for (std::size_t k = 0; k < idx->size(); ++k) {
      const double* gp = g.data() + k * d;
      double* dst = ga + static_cast<std::size_t>((*idx)[k]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += gp[j];
    }
  };
  return vo;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::size_t n = 0, total = 0;
  bool rg = false;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check(parts[p]);
    const Tensor& t = value(parts[p]);
    if (t.rank() != 2) throw DimensionError("concat_cols: expected 2D tensors");
    if (p == 0) n = t.shape()[0];
    if (t.shape()[0] != n) throw DimensionError("concat_cols: row counts differ");
    total += t.shape()[1];
    rg = rg || requires_grad(parts[p]);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& t = value(p);
    std::size_t d = t.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(t.data() + i * d, t.data() + (i + 1) * d, out.data() + i * total + off);
    }
    off += d;
  }

  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto ids = std::make_shared<std::vector<std::uint32_t>>();
  for (const Var& p : parts) ids->push_back(p.id);
  auto oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    std::size_t off2 = 0;
    for (std::uint32_t pid : *ids) {
      const Tensor& tv = t.value(Var{pid});
      std::size_t d = tv.shape()[1];
      if (t.nodes_[pid].requires_grad) {
        double* gp = t.grad_buf(pid).data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* src = g.data() + i * total + off2;
          for (std::size_t j = 0; j < d; ++j) gp[i * d + j] += src[j];
        }
      }
      off2 += d;
    }
  };
  return vo;
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::size_t d = 0, total = 0;
  bool rg = false;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check(parts[p]);
    const Tensor& t = value(parts[p]);
    if (t.rank() != 2) throw DimensionError("concat_rows: expected 2D tensors");
    if (p == 0) d = t.shape()[1];
    if (t.shape()[1] != d) throw DimensionError("concat_rows: column counts differ");
    total += t.shape()[0];
    rg = rg || requires_grad(parts[p]);
  }
  Tensor out({total, d});
  double* o = out.data();
  for (const Var& p : parts) {
    const Tensor& t = value(p);
    o = std::copy(t.data(), t.data() + t.size(), o);
  }

  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto ids = std::make_shared<std::vector<std::uint32_t>>();
  for (const Var& p : parts) ids->push_back(p.id);
  auto oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    std::size_t row = 0;
    for (std::uint32_t pid : *ids) {
      std::size_t rows = t.value(Var{pid}).shape()[0];
      if (t.nodes_[pid].requires_grad) {
        double* gp = t.grad_buf(pid).data();
        const double* src = g.data() + row * d;
        for (std::size_t i = 0; i < rows * d; ++i) gp[i] += src[i];
      }
      row += rows;
    }
  };
  return vo;
}

// ---------------------------------------------------------------------------
// Similarity kernels

Var Tape::cosine_rows(Var va, Var vb) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] ||
      (b.shape()[0] != a.shape()[0] && b.shape()[0] != 1)) {
    throw DimensionError("cosine_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::size_t n = a.shape()[0], d = a.shape()[1];
  bool bcast = b.shape()[0] == 1;

  auto nu = std::make_shared<std::vector<double>>(n);
  auto nv = std::make_shared<std::vector<double>>(bcast ? 1 : n);
  Tensor out({n});
  for (std::size_t i = 0; i < (bcast ? 1 : n); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += b.at(i, j) * b.at(i, j);
    (*nv)[i] = std::max(std::sqrt(s), kCosineEps);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = a.data() + i * d;
    const double* v = b.data() + (bcast ? 0 : i * d);
    double dot = 0, uu = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += u[j] * v[j];
      uu += u[j] * u[j];
    }
    (*nu)[i] = std::max(std::sqrt(uu), kCosineEps);
    out[i] = dot / ((*nu)[i] * (*nv)[bcast ? 0 : i]);
  }

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    const Tensor& c = t.value(Var{oid});
    const Tensor& ta = t.value(Var{aid});
    const Tensor& tb = t.value(Var{bid});
    bool wa = t.nodes_[aid].requires_grad, wb = t.nodes_[bid].requires_grad;
    double* ga = wa ? t.grad_buf(aid).data() : nullptr;
    double* gb = wb ? t.grad_buf(bid).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      double gi = g[i];
      if (gi == 0) continue;
      std::size_t bi = bcast ? 0 : i;
      const double* u = ta.data() + i * d;
      const double* v = tb.data() + bi * d;
      double inu = 1.0 / (*nu)[i], inv = 1.0 / (*nv)[bi];
      bool live_u = (*nu)[i] > kCosineEps, live_v = (*nv)[bi] > kCosineEps;
      for (std::size_t j = 0; j < d; ++j) {
        if (wa) ga[i * d + j] += gi * (v[j] * inu * inv - (live_u ? c[i] * u[j] * inu * inu : 0.0));
        if (wb) gb[bi * d + j] += gi * (u[j] * inu * inv - (live_v ? c[i] * v[j] * inv * inv : 0.0));
      }
    }
  };
  return vo;
}

Var Tape::cosine_matrix(Var va, Var vb) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DimensionError("cosine_matrix: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::size_t n = a.shape()[0], m = b.shape()[0];

  auto nu = std::make_shared<Eigen::VectorXd>(n);
  auto nv = std::make_shared<Eigen::VectorXd>(m);
  for (std::size_t i = 0; i < n; ++i) {
    (*nu)(i) = std::max(mat(a).row(i).norm(), kCosineEps);
  }
  for (std::size_t j = 0; j < m; ++j) {
    (*nv)(j) = std::max(mat(b).row(j).norm(), kCosineEps);
  }
  Tensor out({n, m});
  mat(out) = (nu->cwiseInverse().asDiagonal() * mat(a)) * (nv->cwiseInverse().asDiagonal() * mat(b)).transpose();

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    const Tensor& c = t.value(Var{oid});
    const Tensor& ta = t.value(Var{aid});
    const Tensor& tb = t.value(Var{bid});
    Eigen::ArrayXd live_u = (nu->array() > kCosineEps).cast<double>();
    Eigen::ArrayXd live_v = (nv->array() > kCosineEps).cast<double>();
    if (t.nodes_[aid].requires_grad) {
      // dA = diag(1/nu) * (G diag(1/nv)) * B - diag(live * rowsum(G.*C) / nu^2) * A
      RowMat gs = mat(g) * nv->cwiseInverse().asDiagonal();
      Eigen::VectorXd rs = (mat(g).cwiseProduct(mat(c))).rowwise().sum();
      mat(t.grad_buf(aid)) += nu->cwiseInverse().asDiagonal() * (gs * mat(tb)) -
                              (live_u * rs.array() / (nu->array() * nu->array())).matrix().asDiagonal() * mat(ta);
    }
    if (t.nodes_[bid].requires_grad) {
      RowMat gs = nu->cwiseInverse().asDiagonal() * mat(g);
      Eigen::VectorXd cs = (mat(g).cwiseProduct(mat(c))).colwise().sum();
      mat(t.grad_buf(bid)) += nv->cwiseInverse().asDiagonal() * (gs.transpose() * mat(ta)) -
                              (live_v * cs.array() / (nv->array() * nv->array())).matrix().asDiagonal() * mat(tb);
    }
  };
  return vo;
}

Var Tape::l1_distance_matrix(Var va, Var vb) {
  check(va);
  check(vb);
  const Tensor& a = value(va);
  const Tensor& b = value(vb);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DimensionError("l1_distance_matrix: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = a.data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* v = b.data() + j * d;
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += std::abs(u[k] - v[k]);
      out.at(i, j) = s;
    }
  }

  bool rg = requires_grad(va) || requires_grad(vb);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = va.id, bid = vb.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    const Tensor& ta = t.value(Var{aid});
    const Tensor& tb = t.value(Var{bid});
    bool wa = t.nodes_[aid].requires_grad, wb = t.nodes_[bid].requires_grad;
    double* ga = wa ? t.grad_buf(aid).data() : nullptr;
    double* gb = wb ? t.grad_buf(bid).data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double* u = ta.data() + i * d;
      for (std::size_t j = 0; j < m; ++j) {
        double gv = g.at(i, j);
        if (gv == 0) continue;
        const double* v = tb.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) {
          double s = sign(u[k] - v[k]);
          if (wa) ga[i * d + k] += gv * s;
          if (wb) gb[j * d + k] -= gv * s;
        }
      }
    }
  };
  return vo;
}

// ---------------------------------------------------------------------------
// Segment ops (ragged neighborhoods)

namespace {

void check_segments(const Tensor& per_edge, const EdgeSegments& seg) {
  if (per_edge.size() != seg.num_edges()) {
    throw DimensionError("segment op: got " + std::to_string(per_edge.size()) + " values for " +
                         std::to_string(seg.num_edges()) + " edges");
  }
}

}  // namespace

Var Tape::segment_softmax(Var vl, EdgeSegmentsPtr segments) {
  check(vl);
  const Tensor& logits = value(vl);
  check_segments(logits, *segments);
  Tensor out(logits.shape());
  std::size_t ns = segments->num_segments();
  for (std::size_t s = 0; s < ns; ++s) {
    std::uint32_t lo = segments->offsets[s], hi = segments->offsets[s + 1];
    if (lo == hi) continue;
    double mx = logits[lo];
    for (std::uint32_t e = lo + 1; e < hi; ++e) mx = std::max(mx, logits[e]);
    double z = 0;
    for (std::uint32_t e = lo; e < hi; ++e) {
      out[e] = std::exp(logits[e] - mx);
      z += out[e];
    }
    for (std::uint32_t e = lo; e < hi; ++e) out[e] /= z;
  }

  bool rg = requires_grad(vl);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto lid = vl.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    if (!t.nodes_[lid].requires_grad) return;
    const Tensor& g = t.grads_[oid];
    const Tensor& alpha = t.value(Var{oid});
    double* gl = t.grad_buf(lid).data();
    for (std::size_t s = 0; s < segments->num_segments(); ++s) {
      std::uint32_t lo = segments->offsets[s], hi = segments->offsets[s + 1];
      double dot = 0;
      for (std::uint32_t e = lo; e < hi; ++e) dot += g[e] * alpha[e];
      for (std::uint32_t e = lo; e < hi; ++e) gl[e] += alpha[e] * (g[e] - dot);
    }
  };
  return vo;
}

Var Tape::segment_weighted_sum(Var valpha, Var vrows, EdgeSegmentsPtr segments) {
  check(valpha);
  check(vrows);
  const Tensor& alpha = value(valpha);
  const Tensor& rows = value(vrows);
  check_segments(alpha, *segments);
  if (rows.rank() != 2) throw DimensionError("segment_weighted_sum: rows must be 2D");
  std::size_t d = rows.shape()[1], ns = segments->num_segments();
  Tensor out({ns, d});
  for (std::size_t s = 0; s < ns; ++s) {
    double* o = out.data() + s * d;
    for (std::uint32_t e = segments->offsets[s]; e < segments->offsets[s + 1]; ++e) {
      const double* r = rows.data() + static_cast<std::size_t>(segments->dst[e]) * d;
      double w = alpha[e];
      for (std::size_t j = 0; j < d; ++j) o[j] += w * r[j];
    }
  }

  bool rg = requires_grad(valpha) || requires_grad(vrows);
  Var vo = push(std::move(out), rg, nullptr);
  if (!rg) return vo;

  auto aid = valpha.id, rid = vrows.id, oid = vo.id;
  node(oid).backward = [=](Tape& t) {
    const Tensor& g = t.grads_[oid];
    const Tensor& al = t.value(Var{aid});
    const Tensor& rw = t.value(Var{rid});
    bool wa = t.nodes_[aid].requires_grad, wr = t.nodes_[rid].requires_grad;
    double* ga = wa ? t.grad_buf(aid).data() : nullptr;
    double* gr = wr ? t.grad_buf(rid).data() : nullptr;
    for (std::size_t s = 0; s < segments->num_segments(); ++s) {
      const double* go = g.data() + s * d;
      for (std::uint32_t e = segments->offsets[s]; e < segments->offsets[s + 1]; ++e) {
        std::size_t r0 = static_cast<std::size_t>(segments->dst[e]) * d;
        if (wa) {
          double acc = 0;
          for (std::size_t j = 0; j < d; ++j) acc += go[j] * rw[r0 + j];
          ga[e] += acc;
        }
        if (wr) {
          double w = al[e];
          for (std::size_t j = 0; j < d; ++j) gr[r0 + j] += w * go[j];
        }
      }
    }
  };
  return vo;
}

// ---------------------------------------------------------------------------
// Reverse pass

void Tape::backward(Var loss) {
  check(loss);
  if (backward_run_) throw LogicError("tape: backward() called twice without reset_grads()");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  }
  backward_run_ = true;
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  grad_buf(loss.id)[0] = 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& nd = nodes_[i];
    if (!nd.requires_grad || grads_[i].empty()) continue;
    if (nd.backward) nd.backward(*this);
  }
  // Every requires_grad leaf gets a (possibly zero) gradient buffer.
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad && !nodes_[i].backward) grad_buf(i);
  }
}

void Tape::reset_grads() {
  grads_.clear();
  backward_run_ = false;
}

const Tensor& Tape::grad(Var v) const {
  check(v);
  if (!backward_run_) throw LogicError("tape: grad() before backward()");
  if (v.id >= grads_.size() || grads_[v.id].empty()) {
    throw LogicError("tape: no gradient recorded for node " + std::to_string(v.id));
  }
  return grads_[v.id];
}

bool Tape::has_grad(Var v) const {
  check(v);
  return backward_run_ && v.id < grads_.size() && !grads_[v.id].empty();
}

}  // namespace imf
