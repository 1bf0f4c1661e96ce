#include "ensembits/tape.hpp"

#include "ensembits/error.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <numbers>

namespace ensembits::nn {

namespace {

std::atomic<std::uint32_t> next_tag{1};

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tape::Tape() : tag_(next_tag.fetch_add(1)) {}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, std::int32_t)> bw) {
  if (backward_done_) throw Error("tape: cannot record after backward()");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{tag_, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
  if (v.tape != tag_ || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw Error("tape: variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const { return const_cast<Tape*>(this)->node(v); }

Matrix& Tape::grad_ref(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::int32_t id, const Matrix& g) {
  if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
  grad_ref(id) += g;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::parameter(const Matrix& value, int slot) {
  Var v = push(value, true, [](Tape&, std::int32_t) {});
  nodes_.back().param_slot = slot;
  return v;
}

Var Tape::input(Matrix value) { return push(std::move(value), true, [](Tape&, std::int32_t) {}); }

const Matrix& Tape::value(Var v) const { return node(v).value; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw Error("tape: node is not a scalar");
  return m(0, 0);
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) throw Error("matmul: inner dimensions differ");
  const std::int32_t ia = a.id, ib = b.id;
  return push(av * bv, needs(a) || needs(b), [ia, ib](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.nodes_[ia].needs_grad) t.grad_ref(ia).noalias() += g * t.nodes_[ib].value.transpose();
    if (t.nodes_[ib].needs_grad) t.grad_ref(ib).noalias() += t.nodes_[ia].value.transpose() * g;
  });
}

Var Tape::add_bias(Var x, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw Error("add_bias: bias must be 1 x cols");
  Matrix out = xv.rowwise() + bv.row(0);
  const std::int32_t ix = x.id, ib = bias.id;
  return push(std::move(out), needs(x) || needs(bias), [ix, ib](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(ix, g);
    if (t.nodes_[ib].needs_grad) t.grad_ref(ib) += g.colwise().sum();
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  const std::int32_t ia = a.id, ib = b.id;
  return push(value(a) + value(b), needs(a) || needs(b), [ia, ib](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  const std::int32_t ia = a.id, ib = b.id;
  return push(value(a) - value(b), needs(a) || needs(b), [ia, ib](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.accumulate(ia, g);
    if (t.nodes_[ib].needs_grad) t.grad_ref(ib) -= g;
  });
}

Var Tape::scale(Var a, double s) {
  const std::int32_t ia = a.id;
  return push(value(a) * s, needs(a), [ia, s](Tape& t, std::int32_t self) {
    t.accumulate(ia, t.nodes_[self].grad * s);
  });
}

Var Tape::gelu(Var x) {
  const Matrix& xv = value(x);
  Matrix out = xv.unaryExpr([](double v) { return nn::gelu(v); });
  const std::int32_t ix = x.id;
  return push(std::move(out), needs(x), [ix](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& in = t.nodes_[ix].value;
    t.grad_ref(ix).array() += g.array() * in.unaryExpr([](double v) { return gelu_derivative(v); }).array();
  });
}

Var Tape::tile_rows(Var x, std::size_t times) {
  const Matrix& xv = value(x);
  const Eigen::Index r = xv.rows();
  Matrix out(r * static_cast<Eigen::Index>(times), xv.cols());
  for (std::size_t i = 0; i < times; ++i) out.middleRows(static_cast<Eigen::Index>(i) * r, r) = xv;
  const std::int32_t ix = x.id;
  return push(std::move(out), needs(x), [ix, times, r](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < times; ++i) gx += g.middleRows(static_cast<Eigen::Index>(i) * r, r);
  });
}

Var Tape::reshape(Var x, std::size_t rows, std::size_t cols) {
  const Matrix& xv = value(x);
  if (static_cast<std::size_t>(xv.size()) != rows * cols) throw Error("reshape: element count differs");
  Matrix out = Eigen::Map<const Matrix>(xv.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const std::int32_t ix = x.id;
  const Eigen::Index r0 = xv.rows(), c0 = xv.cols();
  return push(std::move(out), needs(x), [ix, r0, c0](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.grad_ref(ix) += Eigen::Map<const Matrix>(g.data(), r0, c0);
  });
}

Var Tape::gather_rows(Var x, std::vector<std::size_t> rows) {
  const Matrix& xv = value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(xv.rows())) throw Error("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(static_cast<Eigen::Index>(rows[i]));
  }
  const std::int32_t ix = x.id;
  return push(std::move(out), needs(x), [ix, rows = std::move(rows)](Tape& t, std::int32_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < rows.size(); ++i)
      gx.row(static_cast<Eigen::Index>(rows[i])) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::segment_attention(Var q, Var k, Var v, const Segments& qs, const Segments& kvs, std::size_t heads) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  const Matrix& vv = value(v);
  const Eigen::Index width = qv.cols();
  if (kv.cols() != width || vv.cols() != width || kv.rows() != vv.rows())
    throw Error("segment_attention: q/k/v widths differ");
  if (heads == 0 || width % static_cast<Eigen::Index>(heads) != 0)
    throw Error("segment_attention: width not divisible by head count");
  if (qs.size() != kvs.size() || qs.size() < 2) throw Error("segment_attention: segment lists differ");
  if (qs.back() != static_cast<std::size_t>(qv.rows()) || kvs.back() != static_cast<std::size_t>(kv.rows()))
    throw Error("segment_attention: segments do not cover the inputs");

  const Eigen::Index dh = width / static_cast<Eigen::Index>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  const std::size_t items = qs.size() - 1;
  // Attention weights per (item, head), kept for the backward pass.
  auto weights = std::make_shared<std::vector<Matrix>>(items * heads);
  Matrix out = Matrix::Zero(qv.rows(), width);

  for (std::size_t b = 0; b < items; ++b) {
    const auto q0 = static_cast<Eigen::Index>(qs[b]), nq = static_cast<Eigen::Index>(qs[b + 1] - qs[b]);
    const auto k0 = static_cast<Eigen::Index>(kvs[b]), nk = static_cast<Eigen::Index>(kvs[b + 1] - kvs[b]);
    if (nk == 0) throw Error("segment_attention: empty key segment");
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix s = qv.block(q0, c0, nq, dh) * kv.block(k0, c0, nk, dh).transpose() * inv_sqrt;
      for (Eigen::Index i = 0; i < nq; ++i) {
        const double m = s.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < nk; ++j) {
          s(i, j) = std::exp(s(i, j) - m);
          z += s(i, j);
        }
        s.row(i) /= z;
      }
      out.block(q0, c0, nq, dh).noalias() = s * vv.block(k0, c0, nk, dh);
      (*weights)[b * heads + h] = std::move(s);
    }
  }

  const std::int32_t iq = q.id, ik = k.id, iv = v.id;
  return push(std::move(out), needs(q) || needs(k) || needs(v),
              [iq, ik, iv, qs, kvs, heads, dh, inv_sqrt, weights](Tape& t, std::int32_t self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& qv = t.nodes_[iq].value;
                const Matrix& kv = t.nodes_[ik].value;
                const Matrix& vv = t.nodes_[iv].value;
                const bool gq = t.nodes_[iq].needs_grad, gk = t.nodes_[ik].needs_grad, gv = t.nodes_[iv].needs_grad;
                Matrix* dq = gq ? &t.grad_ref(iq) : nullptr;
                Matrix* dk = gk ? &t.grad_ref(ik) : nullptr;
                Matrix* dv = gv ? &t.grad_ref(iv) : nullptr;
                for (std::size_t b = 0; b + 1 < qs.size(); ++b) {
                  const auto q0 = static_cast<Eigen::Index>(qs[b]), nq = static_cast<Eigen::Index>(qs[b + 1] - qs[b]);
                  const auto k0 = static_cast<Eigen::Index>(kvs[b]),
                             nk = static_cast<Eigen::Index>(kvs[b + 1] - kvs[b]);
                  for (std::size_t h = 0; h < heads; ++h) {
                    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                    const Matrix& a = (*weights)[b * heads + h];
                    const Matrix go = g.block(q0, c0, nq, dh);
                    if (dv) dv->block(k0, c0, nk, dh).noalias() += a.transpose() * go;
                    if (!dq && !dk) continue;
                    Matrix da = go * vv.block(k0, c0, nk, dh).transpose();
                    const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
                    Matrix ds = a.array() * (da.colwise() - rowdot).array();
                    ds *= inv_sqrt;
                    if (dq) dq->block(q0, c0, nq, dh).noalias() += ds * kv.block(k0, c0, nk, dh);
                    if (dk) dk->block(k0, c0, nk, dh).noalias() += ds.transpose() * qv.block(q0, c0, nq, dh);
                  }
                }
              });
}

Var Tape::stop_gradient(Var x) { return push(value(x), false); }

Var Tape::straight_through(Var x, Matrix forward_value) {
  require_same_shape(value(x), forward_value, "straight_through");
  const std::int32_t ix = x.id;
  return push(std::move(forward_value), needs(x),
              [ix](Tape& t, std::int32_t self) { t.accumulate(ix, t.nodes_[self].grad); });
}

Var Tape::sq_error(Var a, Var b, double weight) {
  require_same_shape(value(a), value(b), "sq_error");
  const double loss = weight * (value(a) - value(b)).squaredNorm();
  const std::int32_t ia = a.id, ib = b.id;
  return push(Matrix::Constant(1, 1, loss), needs(a) || needs(b), [ia, ib, weight](Tape& t, std::int32_t self) {
    const double g = t.nodes_[self].grad(0, 0);
    const Matrix diff = (t.nodes_[ia].value - t.nodes_[ib].value) * (2.0 * weight * g);
    t.accumulate(ia, diff);
    if (t.nodes_[ib].needs_grad) t.grad_ref(ib) -= diff;
  });
}

Var Tape::weighted_sq_error(Var x, Matrix target, Matrix w) {
  require_same_shape(value(x), target, "weighted_sq_error");
  require_same_shape(value(x), w, "weighted_sq_error");
  const double loss = (w.array() * (value(x) - target).array().square()).sum();
  const std::int32_t ix = x.id;
  return push(Matrix::Constant(1, 1, loss), needs(x),
              [ix, target = std::move(target), w = std::move(w)](Tape& t, std::int32_t self) {
                const double g = t.nodes_[self].grad(0, 0);
                t.grad_ref(ix).array() += 2.0 * g * w.array() * (t.nodes_[ix].value - target).array();
              });
}

Var Tape::sum(Var x) {
  const std::int32_t ix = x.id;
  return push(Matrix::Constant(1, 1, value(x).sum()), needs(x), [ix](Tape& t, std::int32_t self) {
    const double g = t.nodes_[self].grad(0, 0);
    t.grad_ref(ix).array() += g;
  });
}

void Tape::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) throw Error("backward: loss must be a 1x1 node");
  if (backward_done_) throw Error("backward: already run on this tape");
  backward_done_ = true;
  grad_ref(loss.id)(0, 0) += 1.0;
  for (std::int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

std::vector<Tape::ParamGrad> Tape::parameter_grads() const {
  std::vector<ParamGrad> out;
  for (auto& n : nodes_)
    if (n.param_slot >= 0) {
      if (n.grad.size() == 0) const_cast<Node&>(n).grad = Matrix::Zero(n.value.rows(), n.value.cols());
      out.push_back({n.param_slot, &n.grad});
    }
  return out;
}

}  // namespace ensembits::nn
