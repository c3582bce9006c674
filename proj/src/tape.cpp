// Copyright 2026 The touchrag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "touchrag/tape.hpp"

#include <cmath>
#include <sstream>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"
#include "touchrag/optim.hpp"

namespace touchrag::num {
namespace {

constexpr double kNormEps = 1e-12;  // see rownormalize() contract in tape.hpp

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    std::ostringstream msg;
    msg << op << " shape mismatch: " << a.rows() << "x" << a.cols() << " vs "
        << b.rows() << "x" << b.cols();
    throw DimensionError(msg.str());
  }
}

Tape& own_tape(Var a, const char* op) {
  if (!a.valid()) {
    std::ostringstream msg;
    msg << op << ": invalid Var handle (no forward value was recorded)";
    throw StateError(msg.str());
  }
  return *a.tape;
}

Tape& common_tape(Var a, Var b, const char* op) {
  Tape& t = own_tape(a, op);
  own_tape(b, op);
  if (a.tape != b.tape)
    throw ConfigError(std::string(op) + ": Vars from different tapes");
  return t;
}

// dst += src, elementwise.
void acc(Tensor& dst, const Tensor& src) {
  kern::active().axpy_f64(1.0, src.data(), dst.data(), dst.numel());
}

// dst += s * src.
void acc_scaled(Tensor& dst, double s, const Tensor& src) {
  kern::active().axpy_f64(s, src.data(), dst.data(), dst.numel());
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw StateError("Var::value on an invalid handle");
  return tape->value(*this);
}

uint32_t Tape::check_ours(Var v, const char* op) const {
  if (!v.valid()) {
    std::ostringstream msg;
    msg << op << ": invalid Var handle (no forward value was recorded)";
    throw StateError(msg.str());
  }
  if (v.tape != this)
    throw ConfigError(std::string(op) + ": Var belongs to a different tape");
  return v.id;
}

Var Tape::emit(Tensor value, std::vector<uint32_t> parents, BackFn back,
               const char* op) {
  check_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<uint32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  return emit(std::move(value), {}, nullptr, "input");
}

Var Tape::param(ParamStore& store, const std::string& name, bool trainable) {
  auto key = std::make_pair(static_cast<const ParamStore*>(&store), name);
  auto it = param_cache_.find(key);
  if (it != param_cache_.end()) {
    if (nodes_[it->second.id].trainable != trainable)
      throw ConfigError("parameter '" + name +
                        "' requested both frozen and trainable on one tape");
    return it->second;
  }
  Var v = emit(store.value(name), {}, nullptr, "param");
  nodes_[v.id].store = &store;
  nodes_[v.id].param_name = name;
  nodes_[v.id].trainable = trainable;
  param_cache_.emplace(key, v);
  return v;
}

const Tensor& Tape::value(Var v) const {
  return nodes_[check_ours(v, "value")].value;
}

const Tensor& Tape::grad(Var v) const {
  uint32_t id = check_ours(v, "grad");
  if (!ran_backward_) throw StateError("grad requested before backward()");
  if (nodes_[id].grad.numel() == 0)
    throw StateError("node was not reached by the last backward()");
  return nodes_[id].grad;
}

void Tape::backward(Var loss) {
  uint32_t id = check_ours(loss, "backward");
  const Tensor& lv = nodes_[id].value;
  if (!lv.is_scalar()) {
    std::ostringstream msg;
    msg << "backward requires a scalar loss, got " << lv.rows() << "x"
        << lv.cols();
    throw DimensionError(msg.str());
  }

  // Fresh zero gradients for every node at or below the loss. Nodes recorded
  // after the loss cannot be its ancestors, so they are left alone.
  for (uint32_t i = 0; i <= id; ++i) {
    const Tensor& v = nodes_[i].value;
    nodes_[i].grad = Tensor(v.rows(), v.cols(), 0.0);
  }
  nodes_[id].grad.at(0, 0) = 1.0;

  for (uint32_t i = id + 1; i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this, i);
  }

  // Gradients must stay finite too; a blowup here should stop the run, not
  // poison the optimizer state.
  for (uint32_t i = 0; i <= id; ++i) check_finite(nodes_[i].grad, "backward");

  for (uint32_t i = 0; i <= id; ++i) {
    Node& n = nodes_[i];
    if (n.store != nullptr && n.trainable)
      n.store->accumulate_grad(n.param_name, n.grad);
  }
  ran_backward_ = true;
}

// ---------------------------------------------------------------------------
// Operations. Each pullback *adds* into the parents' gradient buffers, so
// diamonds and repeated parents (e.g. mul(x, x)) accumulate correctly.
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b, "add");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Tensor out = av;
  acc(out, bv);
  uint32_t pa = a.id, pb = b.id;
  return t.emit(std::move(out), {pa, pb},
                [pa, pb](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  acc(tp.grad_buffer(pa), g);
                  acc(tp.grad_buffer(pb), g);
                },
                "add");
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b, "sub");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  acc_scaled(out, -1.0, bv);
  uint32_t pa = a.id, pb = b.id;
  return t.emit(std::move(out), {pa, pb},
                [pa, pb](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  acc(tp.grad_buffer(pa), g);
                  acc_scaled(tp.grad_buffer(pb), -1.0, g);
                },
                "sub");
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b, "mul");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (size_t i = 0; i < out.numel(); ++i) out.data()[i] *= bv.data()[i];
  uint32_t pa = a.id, pb = b.id;
  return t.emit(std::move(out), {pa, pb},
                [pa, pb](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& av = tp.value_at(pa);
                  const Tensor& bv = tp.value_at(pb);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t i = 0; i < g.numel(); ++i)
                    ga.data()[i] += g.data()[i] * bv.data()[i];
                  Tensor& gb = tp.grad_buffer(pb);
                  for (size_t i = 0; i < g.numel(); ++i)
                    gb.data()[i] += g.data()[i] * av.data()[i];
                },
                "mul");
}

Var scale(Var a, double c) {
  Tape& t = own_tape(a, "scale");
  Tensor out = t.value(a);
  kern::active().scale_f64(c, out.data(), out.numel());
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa, c](Tape& tp, uint32_t self) {
                  acc_scaled(tp.grad_buffer(pa), c, tp.grad_buffer(self));
                },
                "scale");
}

Var affine(Var a, double m, double c) {
  Tape& t = own_tape(a, "affine");
  Tensor out = t.value(a);
  for (size_t i = 0; i < out.numel(); ++i) out.data()[i] = m * out.data()[i] + c;
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa, m](Tape& tp, uint32_t self) {
                  acc_scaled(tp.grad_buffer(pa), m, tp.grad_buffer(self));
                },
                "affine");
}

Var add_rowvec(Var m, Var row) {
  Tape& t = common_tape(m, row, "add_rowvec");
  const Tensor& mv = t.value(m);
  const Tensor& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != mv.cols())
    throw DimensionError("add_rowvec: row vector must be 1 x cols(m)");
  Tensor out = mv;
  for (size_t r = 0; r < out.rows(); ++r)
    kern::active().axpy_f64(1.0, rv.data(), out.row_ptr(r), out.cols());
  uint32_t pm = m.id, pr = row.id;
  return t.emit(std::move(out), {pm, pr},
                [pm, pr](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  acc(tp.grad_buffer(pm), g);
                  Tensor& gr = tp.grad_buffer(pr);
                  for (size_t r = 0; r < g.rows(); ++r)
                    kern::active().axpy_f64(1.0, g.row_ptr(r), gr.data(), g.cols());
                },
                "add_rowvec");
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b, "matmul");
  Tensor out = matmul(t.value(a), t.value(b));  // validates shapes
  uint32_t pa = a.id, pb = b.id;
  return t.emit(std::move(out), {pa, pb},
                [pa, pb](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& av = tp.value_at(pa);
                  const Tensor& bv = tp.value_at(pb);
                  acc(tp.grad_buffer(pa), matmul(g, transpose(bv)));
                  acc(tp.grad_buffer(pb), matmul(transpose(av), g));
                },
                "matmul");
}

Var transpose(Var a) {
  Tape& t = own_tape(a, "transpose");
  Tensor out = transpose(t.value(a));
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  acc(tp.grad_buffer(pa), transpose(tp.grad_buffer(self)));
                },
                "transpose");
}

Var slice_cols(Var a, size_t c0, size_t c1) {
  Tape& t = own_tape(a, "slice_cols");
  const Tensor& av = t.value(a);
  if (c0 >= c1 || c1 > av.cols()) {
    std::ostringstream msg;
    msg << "slice_cols: range [" << c0 << ", " << c1 << ") invalid for "
        << av.cols() << " columns";
    throw DimensionError(msg.str());
  }
  Tensor out(av.rows(), c1 - c0);
  for (size_t r = 0; r < av.rows(); ++r)
    for (size_t c = c0; c < c1; ++c) out.at(r, c - c0) = av.at(r, c);
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa, c0](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t r = 0; r < g.rows(); ++r)
                    kern::active().axpy_f64(1.0, g.row_ptr(r),
                                            ga.row_ptr(r) + c0, g.cols());
                },
                "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  Tape& t = own_tape(parts[0], "concat_cols");
  size_t rows = t.value(parts[0]).rows();
  size_t cols = 0;
  std::vector<uint32_t> ids;
  for (Var p : parts) {
    common_tape(parts[0], p, "concat_cols");
    if (t.value(p).rows() != rows)
      throw DimensionError("concat_cols: row counts differ");
    cols += t.value(p).cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < pv.cols(); ++c) out.at(r, off + c) = pv.at(r, c);
    off += pv.cols();
  }
  return t.emit(std::move(out), ids,
                [ids](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  size_t off = 0;
                  for (uint32_t id : ids) {
                    Tensor& gp = tp.grad_buffer(id);
                    for (size_t r = 0; r < g.rows(); ++r)
                      kern::active().axpy_f64(1.0, g.row_ptr(r) + off,
                                              gp.row_ptr(r), gp.cols());
                    off += gp.cols();
                  }
                },
                "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  Tape& t = own_tape(parts[0], "concat_rows");
  size_t cols = t.value(parts[0]).cols();
  size_t rows = 0;
  std::vector<uint32_t> ids;
  for (Var p : parts) {
    common_tape(parts[0], p, "concat_rows");
    if (t.value(p).cols() != cols)
      throw DimensionError("concat_rows: column counts differ");
    rows += t.value(p).rows();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    std::copy(pv.data(), pv.data() + pv.numel(), out.data() + off * cols);
    off += pv.rows();
  }
  return t.emit(std::move(out), ids,
                [ids](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  size_t off = 0;
                  for (uint32_t id : ids) {
                    Tensor& gp = tp.grad_buffer(id);
                    kern::active().axpy_f64(1.0, g.data() + off * g.cols(),
                                            gp.data(), gp.numel());
                    off += gp.rows();
                  }
                },
                "concat_rows");
}

Var softmax_rows(Var a) {
  Tape& t = own_tape(a, "softmax_rows");
  Tensor out = softmax_rows(t.value(a));
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  // d/dx softmax: ga_j += y_j * (g_j - sum_k g_k y_k)
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& y = tp.value_at(self);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t r = 0; r < y.rows(); ++r) {
                    double gy =
                        kern::active().dot_f64(g.row_ptr(r), y.row_ptr(r), y.cols());
                    for (size_t c = 0; c < y.cols(); ++c)
                      ga.at(r, c) += y.at(r, c) * (g.at(r, c) - gy);
                  }
                },
                "softmax_rows");
}

Var relu(Var a) {
  Tape& t = own_tape(a, "relu");
  Tensor out = t.value(a);
  for (size_t i = 0; i < out.numel(); ++i)
    if (out.data()[i] < 0.0) out.data()[i] = 0.0;
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& x = tp.value_at(pa);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t i = 0; i < g.numel(); ++i)
                    if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
                },
                "relu");
}

Var rownormalize(Var a) {
  Tape& t = own_tape(a, "rownormalize");
  const Tensor& av = t.value(a);
  Tensor out = av;
  for (size_t r = 0; r < out.rows(); ++r) {
    double n = std::sqrt(
        kern::active().dot_f64(av.row_ptr(r), av.row_ptr(r), av.cols()) +
        kNormEps * kNormEps);
    kern::active().scale_f64(1.0 / n, out.row_ptr(r), out.cols());
  }
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  // u = x/n with n = sqrt(|x|^2 + eps^2):
                  // gx += g/n - x * (g.x) / n^3
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& x = tp.value_at(pa);
                  Tensor& gx = tp.grad_buffer(pa);
                  for (size_t r = 0; r < x.rows(); ++r) {
                    double n2 = kern::active().dot_f64(x.row_ptr(r), x.row_ptr(r),
                                                       x.cols()) +
                                kNormEps * kNormEps;
                    double n = std::sqrt(n2);
                    double gxdot = kern::active().dot_f64(g.row_ptr(r),
                                                          x.row_ptr(r), x.cols());
                    double c1 = 1.0 / n;
                    double c2 = gxdot / (n2 * n);
                    for (size_t c = 0; c < x.cols(); ++c)
                      gx.at(r, c) += c1 * g.at(r, c) - c2 * x.at(r, c);
                  }
                },
                "rownormalize");
}

Var logsumexp_rows(Var a) {
  Tape& t = own_tape(a, "logsumexp_rows");
  const Tensor& av = t.value(a);
  Tensor out(av.rows(), 1);
  for (size_t r = 0; r < av.rows(); ++r) {
    const double* x = av.row_ptr(r);
    double mx = x[0];
    for (size_t c = 1; c < av.cols(); ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (size_t c = 0; c < av.cols(); ++c) s += std::exp(x[c] - mx);
    out.at(r, 0) = mx + std::log(s);
  }
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  const Tensor& x = tp.value_at(pa);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t r = 0; r < x.rows(); ++r) {
                    const double* xr = x.row_ptr(r);
                    double mx = xr[0];
                    for (size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, xr[c]);
                    double s = 0.0;
                    for (size_t c = 0; c < x.cols(); ++c) s += std::exp(xr[c] - mx);
                    double gr = g.at(r, 0);
                    for (size_t c = 0; c < x.cols(); ++c)
                      ga.at(r, c) += gr * std::exp(xr[c] - mx) / s;
                  }
                },
                "logsumexp_rows");
}

Var sum_rows(Var a) {
  Tape& t = own_tape(a, "sum_rows");
  const Tensor& av = t.value(a);
  Tensor out(av.rows(), 1);
  for (size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (size_t c = 0; c < av.cols(); ++c) s += av.at(r, c);
    out.at(r, 0) = s;
  }
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t r = 0; r < ga.rows(); ++r) {
                    double gr = g.at(r, 0);
                    for (size_t c = 0; c < ga.cols(); ++c) ga.at(r, c) += gr;
                  }
                },
                "sum_rows");
}

Var sum_all(Var a) {
  Tape& t = own_tape(a, "sum_all");
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (size_t i = 0; i < av.numel(); ++i) s += av.data()[i];
  uint32_t pa = a.id;
  return t.emit(Tensor::scalar(s), {pa},
                [pa](Tape& tp, uint32_t self) {
                  double g = tp.grad_buffer(self).at(0, 0);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t i = 0; i < ga.numel(); ++i) ga.data()[i] += g;
                },
                "sum_all");
}

Var mean_all(Var a) {
  Tape& t = own_tape(a, "mean_all");
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (size_t i = 0; i < av.numel(); ++i) s += av.data()[i];
  double inv = 1.0 / static_cast<double>(av.numel());
  uint32_t pa = a.id;
  return t.emit(Tensor::scalar(s * inv), {pa},
                [pa, inv](Tape& tp, uint32_t self) {
                  double g = tp.grad_buffer(self).at(0, 0) * inv;
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t i = 0; i < ga.numel(); ++i) ga.data()[i] += g;
                },
                "mean_all");
}

Var diag(Var a) {
  Tape& t = own_tape(a, "diag");
  const Tensor& av = t.value(a);
  if (av.rows() != av.cols())
    throw DimensionError("diag requires a square matrix");
  Tensor out(av.rows(), 1);
  for (size_t i = 0; i < av.rows(); ++i) out.at(i, 0) = av.at(i, i);
  uint32_t pa = a.id;
  return t.emit(std::move(out), {pa},
                [pa](Tape& tp, uint32_t self) {
                  const Tensor& g = tp.grad_buffer(self);
                  Tensor& ga = tp.grad_buffer(pa);
                  for (size_t i = 0; i < ga.rows(); ++i)
                    ga.at(i, i) += g.at(i, 0);
                },
                "diag");
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  Tape& t = own_tape(logits, "bce_with_logits");
  const Tensor& zv = t.value(logits);
  require_same_shape(zv, targets, "bce_with_logits");
  for (size_t i = 0; i < targets.numel(); ++i) {
    double tv = targets.data()[i];
    if (!(tv >= 0.0 && tv <= 1.0))
      throw ConfigError("bce_with_logits: targets must lie in [0, 1]");
  }
  double loss = 0.0;
  for (size_t i = 0; i < zv.numel(); ++i) {
    double z = zv.data()[i];
    double tv = targets.data()[i];
    loss += std::max(z, 0.0) - z * tv + std::log1p(std::exp(-std::abs(z)));
  }
  double inv = 1.0 / static_cast<double>(zv.numel());
  uint32_t pz = logits.id;
  Tensor tcopy = targets;
  return t.emit(Tensor::scalar(loss * inv), {pz},
                [pz, inv, tcopy](Tape& tp, uint32_t self) {
                  double g = tp.grad_buffer(self).at(0, 0) * inv;
                  const Tensor& z = tp.value_at(pz);
                  Tensor& gz = tp.grad_buffer(pz);
                  for (size_t i = 0; i < z.numel(); ++i)
                    gz.data()[i] +=
                        g * (stable_sigmoid(z.data()[i]) - tcopy.data()[i]);
                },
                "bce_with_logits");
}

}  // namespace touchrag::num
