#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ebml {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {

void check_finite(const std::vector<double>& v, const char* opname) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         opname + "'");
    }
  }
}

std::vector<double>& grad_of(detail::Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw ContractError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  check_finite(data, "leaf");
  n_ = std::make_shared<detail::Node>();
  n_->shape = std::move(shape);
  n_->value = std::move(data);
  n_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_size(shape), 0.0);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> d(shape_size(shape), v);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor");
  return n_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  if (n_->grad.size() != n_->value.size())
    throw ContractError("grad accessed before backward reached this leaf");
  return n_->grad;
}

Tensor Tensor::detach() const {
  return Tensor(n_->shape, n_->value, false);
}

void Tensor::backward() {
  if (!n_) throw ContractError("backward on empty tensor");
  if (size() != 1) throw ContractError("backward root must be a scalar");
  if (!n_->backfn && !n_->requires_grad)
    throw ContractError("backward on a detached root");
  if (n_->backward_done) throw ContractError("backward called twice on root");

  // reverse topological order
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{n_.get()};
  std::vector<std::size_t> edge{0};
  seen.insert(n_.get());
  while (!stack.empty()) {
    detail::Node* cur = stack.back();
    if (edge.back() < cur->parents.size()) {
      detail::Node* p = cur->parents[edge.back()++].get();
      if (seen.insert(p).second) {
        stack.push_back(p);
        edge.push_back(0);
      }
    } else {
      topo.push_back(cur);
      stack.pop_back();
      edge.pop_back();
    }
  }

  grad_of(*n_)[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* cur = *it;
    if (cur->backfn) {
      if (cur->grad.size() != cur->value.size())
        cur->grad.assign(cur->value.size(), 0.0);
      cur->backfn(*cur);
    }
  }
  n_->backward_done = true;
  // free the tape; leaves keep their grads
  for (detail::Node* cur : topo) {
    cur->backfn = nullptr;
    cur->parents.clear();
  }
}

Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backfn, const char* opname) {
  check_finite(value, opname);
  Tensor t;
  t.n_ = std::make_shared<detail::Node>();
  t.n_->shape = std::move(shape);
  t.n_->value = std::move(value);
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p.requires_grad() || p.node()->backfn;
  if (any_grad) {
    for (const auto& p : parents) t.n_->parents.push_back(p.node_ptr());
    t.n_->backfn = std::move(backfn);
    t.n_->requires_grad = true;
  }
  return t;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

bool needs_grad(const detail::Node& n) {
  return n.requires_grad || n.backfn;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](detail::Node& n) {
                   for (int p = 0; p < 2; ++p) {
                     auto& par = *n.parents[p];
                     if (!needs_grad(par)) continue;
                     auto& g = grad_of(par);
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                   }
                 },
                 "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](detail::Node& n) {
                   if (needs_grad(*n.parents[0])) {
                     auto& g = grad_of(*n.parents[0]);
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                   }
                   if (needs_grad(*n.parents[1])) {
                     auto& g = grad_of(*n.parents[1]);
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
                   }
                 },
                 "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](detail::Node& n) {
                   auto& pa = *n.parents[0];
                   auto& pb = *n.parents[1];
                   if (needs_grad(pa)) {
                     auto& g = grad_of(pa);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += n.grad[i] * pb.value[i];
                   }
                   if (needs_grad(pb)) {
                     auto& g = grad_of(pb);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += n.grad[i] * pa.value[i];
                   }
                 },
                 "mul");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return make_op(a.shape(), std::move(out), {a},
                 [c](detail::Node& n) {
                   auto& g = grad_of(*n.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += n.grad[i] * c;
                 },
                 "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return make_op(a.shape(), std::move(out), {a},
                 [](detail::Node& n) {
                   auto& g = grad_of(*n.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                 },
                 "add_scalar");
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0 ? av[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a},
                 [](detail::Node& n) {
                   auto& par = *n.parents[0];
                   auto& g = grad_of(par);
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (par.value[i] > 0) g[i] += n.grad[i];
                 },
                 "relu");
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return make_op(a.shape(), std::move(out), {a},
                 [](detail::Node& n) {
                   auto& g = grad_of(*n.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i)
                     g[i] += n.grad[i] * n.value[i];
                 },
                 "exp");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_op(Shape{}, {s}, {a},
                 [](detail::Node& n) {
                   auto& g = grad_of(*n.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
                 },
                 "sum");
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_sum(const Tensor& a) {
  if (a.ndim() != 2) throw ContractError("row_sum expects a 2-d tensor");
  std::size_t n = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(n, 0.0);
  const auto& av = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += av[i * k + j];
  return make_op(Shape{n}, std::move(out), {a},
                 [k](detail::Node& n_) {
                   auto& g = grad_of(*n_.parents[0]);
                   std::size_t rows = n_.value.size();
                   for (std::size_t i = 0; i < rows; ++i)
                     for (std::size_t j = 0; j < k; ++j)
                       g[i * k + j] += n_.grad[i];
                 },
                 "row_sum");
}

double logsumexp(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("logsumexp of empty vector");
  double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Tensor logsumexp_rows(const Tensor& a) {
  if (a.ndim() != 2) throw ContractError("logsumexp_rows expects a 2-d tensor");
  std::size_t n = a.shape()[0], k = a.shape()[1];
  if (k == 0) throw ContractError("logsumexp over empty rows");
  std::vector<double> out(n);
  const auto& av = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double m = av[i * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, av[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(av[i * k + j] - m);
    out[i] = m + std::log(s);
  }
  return make_op(Shape{n}, std::move(out), {a},
                 [k](detail::Node& n_) {
                   auto& par = *n_.parents[0];
                   auto& g = grad_of(par);
                   std::size_t rows = n_.value.size();
                   // d lse/d a_j = softmax_j
                   for (std::size_t i = 0; i < rows; ++i)
                     for (std::size_t j = 0; j < k; ++j)
                       g[i * k + j] += n_.grad[i] *
                                       std::exp(par.value[i * k + j] - n_.value[i]);
                 },
                 "logsumexp_rows");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) +
                        " x " + shape_str(b.shape()));
  std::size_t n = a.shape()[0], m = a.shape()[1], p = b.shape()[1];
  std::vector<double> out(n * p, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < m; ++l) {
      double x = av[i * m + l];
      const double* brow = &bv[l * p];
      double* orow = &out[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += x * brow[j];
    }
  return make_op(Shape{n, p}, std::move(out), {a, b},
                 [n, m, p](detail::Node& nd) {
                   auto& pa = *nd.parents[0];
                   auto& pb = *nd.parents[1];
                   if (needs_grad(pa)) {
                     auto& ga = grad_of(pa);
                     // dA = dC * B^T
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t l = 0; l < m; ++l) {
                         double s = 0.0;
                         const double* grow = &nd.grad[i * p];
                         const double* brow = &pb.value[l * p];
                         for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
                         ga[i * m + l] += s;
                       }
                   }
                   if (needs_grad(pb)) {
                     auto& gb = grad_of(pb);
                     // dB = A^T * dC
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t l = 0; l < m; ++l) {
                         double x = pa.value[i * m + l];
                         const double* grow = &nd.grad[i * p];
                         double* brow = &gb[l * p];
                         for (std::size_t j = 0; j < p; ++j) brow[j] += x * grow[j];
                       }
                   }
                 },
                 "matmul");
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 1 || a.shape()[1] != b.shape()[0])
    throw ContractError("add_rowvec: incompatible shapes");
  std::size_t n = a.shape()[0], p = a.shape()[1];
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] += bv[j];
  return make_op(a.shape(), std::move(out), {a, b},
                 [n, p](detail::Node& nd) {
                   if (needs_grad(*nd.parents[0])) {
                     auto& g = grad_of(*nd.parents[0]);
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                   }
                   if (needs_grad(*nd.parents[1])) {
                     auto& g = grad_of(*nd.parents[1]);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < p; ++j) g[j] += nd.grad[i * p + j];
                   }
                 },
                 "add_rowvec");
}

Tensor sub_colvec(const Tensor& a, const Tensor& v) {
  if (a.ndim() != 2 || v.ndim() != 1 || a.shape()[0] != v.shape()[0])
    throw ContractError("sub_colvec: incompatible shapes");
  std::size_t n = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(a.data());
  const auto& vv = v.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] -= vv[i];
  return make_op(a.shape(), std::move(out), {a, v},
                 [n, k](detail::Node& nd) {
                   if (needs_grad(*nd.parents[0])) {
                     auto& g = grad_of(*nd.parents[0]);
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                   }
                   if (needs_grad(*nd.parents[1])) {
                     auto& g = grad_of(*nd.parents[1]);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < k; ++j) g[i] -= nd.grad[i * k + j];
                   }
                 },
                 "sub_colvec");
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.ndim() != 2 || idx.size() != a.shape()[0])
    throw ContractError("gather_rows: need one index per row");
  std::size_t n = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k)
      throw ContractError("gather_rows: index " + std::to_string(idx[i]) +
                          " out of range for " + std::to_string(k) + " columns");
    out[i] = a.data()[i * k + idx[i]];
  }
  return make_op(Shape{n}, std::move(out), {a},
                 [idx, k](detail::Node& nd) {
                   auto& g = grad_of(*nd.parents[0]);
                   for (std::size_t i = 0; i < nd.value.size(); ++i)
                     g[i * k + idx[i]] += nd.grad[i];
                 },
                 "gather_rows");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw ContractError("reshape: size mismatch");
  return make_op(std::move(shape), a.data(), {a},
                 [](detail::Node& nd) {
                   auto& g = grad_of(*nd.parents[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                 },
                 "reshape");
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, oc, kh, kw, oh, ow, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, std::size_t stride,
                   std::size_t pad) {
  if (x.ndim() != 4 || wt.ndim() != 4)
    throw ContractError("conv2d expects 4-d input and weight");
  ConvDims d;
  d.n = x.shape()[0];
  d.c = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.oc = wt.shape()[0];
  d.kh = wt.shape()[2];
  d.kw = wt.shape()[3];
  d.stride = stride;
  d.pad = pad;
  if (wt.shape()[1] != d.c) throw ContractError("conv2d: channel mismatch");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  if (b.ndim() != 1 || b.shape()[0] != d.oc)
    throw ContractError("conv2d: bias shape mismatch");
  std::vector<double> out(d.n * d.oc * d.oh * d.ow);
  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
  for (std::size_t ni = 0; ni < d.n; ++ni)
    for (std::size_t oc = 0; oc < d.oc; ++oc)
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          double acc = bv[oc];
          std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * d.stride) -
                               static_cast<std::ptrdiff_t>(d.pad);
          std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * d.stride) -
                               static_cast<std::ptrdiff_t>(d.pad);
          for (std::size_t ic = 0; ic < d.c; ++ic)
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              const double* xrow =
                  &xv[((ni * d.c + ic) * d.h + iy) * d.w];
              const double* wrow = &wv[((oc * d.c + ic) * d.kh + ky) * d.kw];
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                acc += xrow[ix] * wrow[kx];
              }
            }
          out[((ni * d.oc + oc) * d.oh + oy) * d.ow + ox] = acc;
        }
  return make_op(Shape{d.n, d.oc, d.oh, d.ow}, std::move(out), {x, w, b},
                 [d](detail::Node& nd) {
                   auto& px = *nd.parents[0];
                   auto& pw = *nd.parents[1];
                   auto& pb = *nd.parents[2];
                   bool gx = needs_grad(px), gw = needs_grad(pw), gb = needs_grad(pb);
                   std::vector<double>* xg = gx ? &grad_of(px) : nullptr;
                   std::vector<double>* wg = gw ? &grad_of(pw) : nullptr;
                   std::vector<double>* bg = gb ? &grad_of(pb) : nullptr;
                   for (std::size_t ni = 0; ni < d.n; ++ni)
                     for (std::size_t oc = 0; oc < d.oc; ++oc)
                       for (std::size_t oy = 0; oy < d.oh; ++oy)
                         for (std::size_t ox = 0; ox < d.ow; ++ox) {
                           double go = nd.grad[((ni * d.oc + oc) * d.oh + oy) * d.ow + ox];
                           if (go == 0.0) continue;
                           if (bg) (*bg)[oc] += go;
                           std::ptrdiff_t iy0 =
                               static_cast<std::ptrdiff_t>(oy * d.stride) -
                               static_cast<std::ptrdiff_t>(d.pad);
                           std::ptrdiff_t ix0 =
                               static_cast<std::ptrdiff_t>(ox * d.stride) -
                               static_cast<std::ptrdiff_t>(d.pad);
                           for (std::size_t ic = 0; ic < d.c; ++ic)
                             for (std::size_t ky = 0; ky < d.kh; ++ky) {
                               std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                               if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h))
                                 continue;
                               std::size_t xbase = ((ni * d.c + ic) * d.h + iy) * d.w;
                               std::size_t wbase = ((oc * d.c + ic) * d.kh + ky) * d.kw;
                               for (std::size_t kx = 0; kx < d.kw; ++kx) {
                                 std::ptrdiff_t ix =
                                     ix0 + static_cast<std::ptrdiff_t>(kx);
                                 if (ix < 0 ||
                                     ix >= static_cast<std::ptrdiff_t>(d.w))
                                   continue;
                                 if (xg) (*xg)[xbase + ix] += go * pw.value[wbase + kx];
                                 if (wg) (*wg)[wbase + kx] += go * px.value[xbase + ix];
                               }
                             }
                         }
                 },
                 "conv2d");
}

}  // namespace ebml
