#include "omni/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "omni/kernels.hpp"

namespace omni::numerics {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLayerNormEps = 1e-5;

void check_same_tape(Var a, Var b, const char* what) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape) {
    throw std::logic_error(std::string(what) + ": vars from different tapes");
  }
}

void accumulate(Tensor& g, const Tensor& delta) {
  for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) += delta.at(i);
}

Tensor row_sums(const Tensor& m) {  // (r,c) -> (r,1)
  Tensor out = Tensor::zeros({m.rows(), 1});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m.at2(i, j);
    out.at2(i, 0) = s;
  }
  return out;
}

Tensor col_sums(const Tensor& m) {  // (r,c) -> (1,c)
  Tensor out = Tensor::zeros({1, m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at2(0, j) += m.at2(i, j);
  return out;
}

}  // namespace

Var Tape::make(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, int)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  for (int p : n.parents) {
    if (nodes_[static_cast<std::size_t>(p)].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this) throw std::logic_error("value(): var belongs to another tape");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

const Tensor& Tape::grad(Var v) const {
  if (v.tape != this) throw std::logic_error("grad(): var belongs to another tape");
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.empty()) throw std::logic_error("grad(): backward has not been run");
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::logic_error("backward(): loss from another tape");
  const std::size_t loss_id = static_cast<std::size_t>(loss.id);
  if (nodes_[loss_id].value.numel() != 1) {
    throw std::invalid_argument("backward(): loss must be scalar, got shape " +
                                nodes_[loss_id].value.shape_str());
  }
  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape());

  std::vector<std::uint8_t> reachable(nodes_.size(), 0);
  reachable[loss_id] = 1;
  for (std::size_t i = loss_id + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    for (int p : nodes_[i].parents) reachable[static_cast<std::size_t>(p)] = 1;
  }

  nodes_[loss_id].grad.at(0) = 1.0;
  for (std::size_t i = loss_id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (reachable[i] && n.requires_grad && n.backward_fn) {
      n.backward_fn(*this, static_cast<int>(i));
    }
  }
}

// ---- ops --------------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += bv.at(i);
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ai)) accumulate(tp.grad_ref(ai), g);
    if (tp.requires_grad(bi)) accumulate(tp.grad_ref(bi), g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) -= bv.at(i);
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ai)) accumulate(tp.grad_ref(ai), g);
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_ref(bi);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb.at(i) -= g.at(i);
    }
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= bv.at(i);
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& av2 = tp.value_of(ai);
    const Tensor& bv2 = tp.value_of(bi);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_ref(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga.at(i) += g.at(i) * bv2.at(i);
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_ref(bi);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb.at(i) += g.at(i) * av2.at(i);
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= c;
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai, c](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga.at(i) += c * g.at(i);
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += c;
  int ai = a.id;
  return t.make(std::move(out), {ai}, [ai](Tape& tp, int self) {
    accumulate(tp.grad_ref(ai), tp.grad_ref(self));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  Tensor out = kernels::matmul(t.value(a), t.value(b));
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ai)) accumulate(tp.grad_ref(ai), kernels::matmul_nt(g, tp.value_of(bi)));
    if (tp.requires_grad(bi)) accumulate(tp.grad_ref(bi), kernels::matmul_tn(tp.value_of(ai), g));
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b, "matmul_nt");
  Tape& t = *a.tape;
  Tensor out = kernels::matmul_nt(t.value(a), t.value(b));
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ai)) accumulate(tp.grad_ref(ai), kernels::matmul(g, tp.value_of(bi)));
    if (tp.requires_grad(bi)) accumulate(tp.grad_ref(bi), kernels::matmul_tn(g, tp.value_of(ai)));
  });
}

Var matmul_tn(Var a, Var b) {
  check_same_tape(a, b, "matmul_tn");
  Tape& t = *a.tape;
  Tensor out = kernels::matmul_tn(t.value(a), t.value(b));
  int ai = a.id, bi = b.id;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(ai)) accumulate(tp.grad_ref(ai), kernels::matmul_nt(tp.value_of(bi), g));
    if (tp.requires_grad(bi)) accumulate(tp.grad_ref(bi), kernels::matmul(tp.value_of(ai), g));
  });
}

Var linear(Var x, Var weight, Var bias) {
  Var y = matmul_nt(x, weight);
  if (bias.tape != nullptr) y = add_rowvec(y, bias);
  return y;
}

Var linear(Var x, Var weight) { return linear(x, weight, Var{}); }

Var leaky_relu(Var x, double slope) {
  if (slope <= 0.0 || slope >= 1.0) {
    throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
  }
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = out.at(i);
    out.at(i) = v >= 0.0 ? v : slope * v;
  }
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi, slope](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& xv = tp.value_of(xi);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      gx.at(i) += g.at(i) * (xv.at(i) >= 0.0 ? 1.0 : slope);
    }
  });
}

Var tanh_op(Var x) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::tanh(out.at(i));
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& y = tp.value_of(self);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      gx.at(i) += g.at(i) * (1.0 - y.at(i) * y.at(i));
    }
  });
}

Var gelu(Var x) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = out.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& xv = tp.value_of(xi);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      double v = xv.at(i);
      double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * kPi);
      gx.at(i) += g.at(i) * (cdf + v * pdf);
    }
  });
}

Var masked_softmax(Var scores, const std::vector<std::uint8_t>& mask) {
  Tape& t = *scores.tape;
  Tensor out = kernels::row_softmax_masked(t.value(scores), mask);
  int si = scores.id;
  std::vector<std::uint8_t> m = mask;
  return t.make(std::move(out), {si}, [si, m = std::move(m)](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& s = tp.value_of(self);
    Tensor& gx = tp.grad_ref(si);
    const std::size_t r = s.rows(), c = s.cols();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        if (m[i * c + j]) dot += g.at2(i, j) * s.at2(i, j);
      }
      for (std::size_t j = 0; j < c; ++j) {
        if (m[i * c + j]) gx.at2(i, j) += s.at2(i, j) * (g.at2(i, j) - dot);
      }
    }
  });
}

Var add_rowvec(Var m, Var v) {
  check_same_tape(m, v, "add_rowvec");
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  const Tensor& vv = t.value(v);
  if (vv.rows() != 1 || vv.cols() != mv.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + mv.shape_str() + " vs " +
                                vv.shape_str());
  }
  Tensor out = mv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at2(i, j) += vv.at2(0, j);
  int mi = m.id, vi = v.id;
  return t.make(std::move(out), {mi, vi}, [mi, vi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(mi)) accumulate(tp.grad_ref(mi), g);
    if (tp.requires_grad(vi)) accumulate(tp.grad_ref(vi), col_sums(g));
  });
}

Var add_colvec(Var m, Var u) {
  check_same_tape(m, u, "add_colvec");
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  const Tensor& uv = t.value(u);
  if (uv.cols() != 1 || uv.rows() != mv.rows()) {
    throw std::invalid_argument("add_colvec: shape mismatch " + mv.shape_str() + " vs " +
                                uv.shape_str());
  }
  Tensor out = mv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out.at2(i, j) += uv.at2(i, 0);
  int mi = m.id, ui = u.id;
  return t.make(std::move(out), {mi, ui}, [mi, ui](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(mi)) accumulate(tp.grad_ref(mi), g);
    if (tp.requires_grad(ui)) accumulate(tp.grad_ref(ui), row_sums(g));
  });
}

Var add_const(Var m, const Tensor& c) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  if (!mv.same_shape(c)) {
    throw std::invalid_argument("add_const: shape mismatch " + mv.shape_str() + " vs " +
                                c.shape_str());
  }
  Tensor out = mv;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += c.at(i);
  int mi = m.id;
  return t.make(std::move(out), {mi}, [mi](Tape& tp, int self) {
    accumulate(tp.grad_ref(mi), tp.grad_ref(self));
  });
}

Var mul_scalar_var(Var m, Var s) {
  check_same_tape(m, s, "mul_scalar_var");
  Tape& t = *m.tape;
  const Tensor& sv = t.value(s);
  if (sv.numel() != 1) {
    throw std::invalid_argument("mul_scalar_var: scalar operand has shape " + sv.shape_str());
  }
  const double sval = sv.at(0);
  Tensor out = t.value(m);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= sval;
  int mi = m.id, si = s.id;
  return t.make(std::move(out), {mi, si}, [mi, si](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const double sval2 = tp.value_of(si).at(0);
    const Tensor& mval = tp.value_of(mi);
    if (tp.requires_grad(mi)) {
      Tensor& gm = tp.grad_ref(mi);
      for (std::size_t i = 0; i < gm.numel(); ++i) gm.at(i) += sval2 * g.at(i);
    }
    if (tp.requires_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g.at(i) * mval.at(i);
      tp.grad_ref(si).at(0) += acc;
    }
  });
}

Var sum_all(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv.at(i);
  int xi = x.id;
  return t.make(Tensor::scalar(s), {xi}, [xi](Tape& tp, int self) {
    const double g = tp.grad_ref(self).at(0);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.at(i) += g;
  });
}

Var mean_all(Var x) {
  Tape& t = *x.tape;
  const std::size_t n = t.value(x).numel();
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Var col_mean(Var m) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  const std::size_t r = mv.rows(), c = mv.cols();
  Tensor out = col_sums(mv);
  for (std::size_t j = 0; j < c; ++j) out.at2(0, j) /= static_cast<double>(r);
  int mi = m.id;
  return t.make(std::move(out), {mi}, [mi, r](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gm = tp.grad_ref(mi);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < gm.rows(); ++i)
      for (std::size_t j = 0; j < gm.cols(); ++j) gm.at2(i, j) += g.at2(0, j) * inv;
  });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  if (shape_numel(shape) != xv.numel()) {
    throw std::invalid_argument("reshape: element count mismatch for " + xv.shape_str());
  }
  Tensor out(std::move(shape), xv.data());
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.at(i) += g.at(i);
  });
}

Var slice_rows(Var m, std::size_t r0, std::size_t r1) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  if (r1 > mv.rows() || r0 >= r1) {
    throw std::invalid_argument("slice_rows: bad range on " + mv.shape_str());
  }
  const std::size_t c = mv.cols();
  Tensor out = Tensor::zeros({r1 - r0, c});
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at2(i - r0, j) = mv.at2(i, j);
  int mi = m.id;
  return t.make(std::move(out), {mi}, [mi, r0, r1](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gm = tp.grad_ref(mi);
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = 0; j < gm.cols(); ++j) gm.at2(i, j) += g.at2(i - r0, j);
  });
}

Var slice_cols(Var m, std::size_t c0, std::size_t c1) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  if (c1 > mv.cols() || c0 >= c1) {
    throw std::invalid_argument("slice_cols: bad range on " + mv.shape_str());
  }
  const std::size_t r = mv.rows();
  Tensor out = Tensor::zeros({r, c1 - c0});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at2(i, j - c0) = mv.at2(i, j);
  int mi = m.id;
  return t.make(std::move(out), {mi}, [mi, c0, c1](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gm = tp.grad_ref(mi);
    for (std::size_t i = 0; i < gm.rows(); ++i)
      for (std::size_t j = c0; j < c1; ++j) gm.at2(i, j) += g.at2(i, j - c0);
  });
}

Var row(Var m, std::size_t r) { return slice_rows(m, r, r + 1); }

Var element(Var m, std::size_t r, std::size_t c) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m);
  int mi = m.id;
  return t.make(Tensor::scalar(mv.at2(r, c)), {mi}, [mi, r, c](Tape& tp, int self) {
    tp.grad_ref(mi).at2(r, c) += tp.grad_ref(self).at(0);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
  Tape& t = *parts[0].tape;
  const std::size_t c = t.value(parts[0]).cols();
  std::size_t total = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat_rows");
    if (t.value(p).cols() != c) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    total += t.value(p).rows();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros({total, c});
  std::size_t r = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    for (std::size_t i = 0; i < pv.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) out.at2(r + i, j) = pv.at2(i, j);
    r += pv.rows();
  }
  return t.make(std::move(out), std::vector<int>(ids.begin(), ids.end()),
                [ids](Tape& tp, int self) {
                  const Tensor& g = tp.grad_ref(self);
                  std::size_t r0 = 0;
                  for (int id : ids) {
                    Tensor& gp = tp.grad_ref(id);
                    if (tp.requires_grad(id)) {
                      for (std::size_t i = 0; i < gp.rows(); ++i)
                        for (std::size_t j = 0; j < gp.cols(); ++j)
                          gp.at2(i, j) += g.at2(r0 + i, j);
                    }
                    r0 += tp.value_of(id).rows();
                  }
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty part list");
  Tape& t = *parts[0].tape;
  const std::size_t r = t.value(parts[0]).rows();
  std::size_t total = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat_cols");
    if (t.value(p).rows() != r) {
      throw std::invalid_argument("concat_cols: row mismatch");
    }
    total += t.value(p).cols();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros({r, total});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out.at2(i, c0 + j) = pv.at2(i, j);
    c0 += pv.cols();
  }
  return t.make(std::move(out), std::vector<int>(ids.begin(), ids.end()),
                [ids](Tape& tp, int self) {
                  const Tensor& g = tp.grad_ref(self);
                  std::size_t c1 = 0;
                  for (int id : ids) {
                    Tensor& gp = tp.grad_ref(id);
                    if (tp.requires_grad(id)) {
                      for (std::size_t i = 0; i < gp.rows(); ++i)
                        for (std::size_t j = 0; j < gp.cols(); ++j)
                          gp.at2(i, j) += g.at2(i, c1 + j);
                    }
                    c1 += tp.value_of(id).cols();
                  }
                });
}

Var layer_norm(Var x, Var gain, Var offset) {
  check_same_tape(x, gain, "layer_norm");
  check_same_tape(x, offset, "layer_norm");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(offset);
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gv.rows() != 1 || gv.cols() != c || bv.rows() != 1 || bv.cols() != c) {
    throw std::invalid_argument("layer_norm: gain/offset must be 1x" + std::to_string(c));
  }
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv.at2(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = xv.at2(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      out.at2(i, j) = gv.at2(0, j) * (xv.at2(i, j) - mu) * inv + bv.at2(0, j);
    }
  }
  int xi = x.id, gi = gain.id, bi = offset.id;
  return t.make(std::move(out), {xi, gi, bi}, [xi, gi, bi](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& xv2 = tp.value_of(xi);
    const Tensor& gv2 = tp.value_of(gi);
    const std::size_t r2 = xv2.rows(), c2 = xv2.cols();
    const double n = static_cast<double>(c2);
    for (std::size_t i = 0; i < r2; ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < c2; ++j) mu += xv2.at2(i, j);
      mu /= n;
      double var = 0.0;
      for (std::size_t j = 0; j < c2; ++j) {
        double d = xv2.at2(i, j) - mu;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      // dxhat, plus reductions needed for the row
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < c2; ++j) {
        double xhat = (xv2.at2(i, j) - mu) * inv;
        double dxhat = g.at2(i, j) * gv2.at2(0, j);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      if (tp.requires_grad(xi)) {
        Tensor& gx = tp.grad_ref(xi);
        for (std::size_t j = 0; j < c2; ++j) {
          double xhat = (xv2.at2(i, j) - mu) * inv;
          double dxhat = g.at2(i, j) * gv2.at2(0, j);
          gx.at2(i, j) += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
        }
      }
      if (tp.requires_grad(gi)) {
        Tensor& gg = tp.grad_ref(gi);
        for (std::size_t j = 0; j < c2; ++j) {
          double xhat = (xv2.at2(i, j) - mu) * inv;
          gg.at2(0, j) += g.at2(i, j) * xhat;
        }
      }
      if (tp.requires_grad(bi)) {
        Tensor& gb = tp.grad_ref(bi);
        for (std::size_t j = 0; j < c2; ++j) gb.at2(0, j) += g.at2(i, j);
      }
    }
  });
}

Var dropout(Var x, double p, SplitMix64& rng, bool training) {
  if (!training || p == 0.0) return x;
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const double keep = 1.0 - p;
  std::vector<double> mask(xv.numel());
  for (double& m : mask) m = rng.next_double() < keep ? 1.0 / keep : 0.0;
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= mask[i];
  int xi = x.id;
  return t.make(std::move(out), {xi}, [xi, mask = std::move(mask)](Tape& tp, int self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.at(i) += g.at(i) * mask[i];
  });
}

Var mse(Var pred, Var target) {
  Var d = sub(pred, target);
  return mean_all(mul(d, d));
}

}  // namespace omni::numerics
