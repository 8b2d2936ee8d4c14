#include "fedcsr/autodiff.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace fedcsr::ad {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a) + " vs " + shape_string(b));
  }
}

bool any_grad(std::initializer_list<Var> vars) {
  for (const auto& v : vars) {
    if (v.requires_grad()) return true;
  }
  return false;
}

Tape& tape_of(Var a) { return *a.tape(); }

double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on " + shape_string(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, {}); }

Var Tape::parameter(Matrix value) { return record(std::move(value), true, {}); }

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix Tape::grad(int id) const {
  const auto& n = nodes_[id];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  auto& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: var from another tape");
  if (nodes_[root.id()].value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(nodes_[root.id()].value));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
  }
  if (!nodes_[root.id()].requires_grad) return;
  accumulate(root.id(), Matrix::Ones(1, 1));
  for (int i = root.id(); i >= 0; --i) {
    auto& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(n.grad);
  }
}

std::vector<Var> bind(Tape& tape, const NamedTensors& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& [name, value] : params) vars.push_back(tape.parameter(value));
  return vars;
}

NamedTensors gradients(const Tape& tape, const NamedTensors& params, const std::vector<Var>& vars) {
  NamedTensors out;
  std::size_t i = 0;
  for (const auto& [name, value] : params) out.add(name, tape.grad(vars.at(i++).id()));
  return out;
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  auto& t = tape_of(a);
  return t.record(a.value() + b.value(), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    t.accumulate(a.id(), g);
    t.accumulate(b.id(), g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  auto& t = tape_of(a);
  return t.record(a.value() - b.value(), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    t.accumulate(a.id(), g);
    if (b.requires_grad()) t.accumulate(b.id(), -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  auto& t = tape_of(a);
  return t.record(a.value().cwiseProduct(b.value()), any_grad({a, b}),
                  [&t, a, b](const Matrix& g) {
                    if (a.requires_grad()) t.accumulate(a.id(), g.cwiseProduct(b.value()));
                    if (b.requires_grad()) t.accumulate(b.id(), g.cwiseProduct(a.value()));
                  });
}

Var scale(Var a, double s) {
  auto& t = tape_of(a);
  return t.record(a.value() * s, a.requires_grad(),
                  [&t, a, s](const Matrix& g) { t.accumulate(a.id(), g * s); });
}

Var add_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.value()) + " for input " +
                     shape_string(x.value()));
  }
  auto& t = tape_of(x);
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return t.record(std::move(out), any_grad({x, bias}), [&t, x, bias](const Matrix& g) {
    t.accumulate(x.id(), g);
    if (bias.requires_grad()) t.accumulate(bias.id(), g.colwise().sum());
  });
}

Var mul_constant(Var x, const Matrix& factor) {
  require_same_shape(x.value(), factor, "mul_constant");
  auto& t = tape_of(x);
  return t.record(x.value().cwiseProduct(factor), x.requires_grad(),
                  [&t, x, factor](const Matrix& g) {
                    t.accumulate(x.id(), g.cwiseProduct(factor));
                  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.value()) + " · " + shape_string(b.value()));
  }
  auto& t = tape_of(a);
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a.id(), g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b.id(), a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_string(a.value()) + " · " + shape_string(b.value()) +
                     "ᵀ");
  }
  auto& t = tape_of(a);
  Matrix out = a.value() * b.value().transpose();
  return t.record(std::move(out), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a.id(), g * b.value());
    if (b.requires_grad()) t.accumulate(b.id(), g.transpose() * a.value());
  });
}

Var sparse_matmul(const SparseMatrix& lhs, Var x) {
  if (lhs.cols() != x.rows()) {
    throw ShapeError("sparse_matmul: " + std::to_string(lhs.rows()) + "x" +
                     std::to_string(lhs.cols()) + " · " + shape_string(x.value()));
  }
  auto& t = tape_of(x);
  Matrix out = lhs * x.value();
  // The closure keeps its own copy of the operator; graphs are small and sparse.
  return t.record(std::move(out), x.requires_grad(), [&t, x, lhs](const Matrix& g) {
    Matrix gx = lhs.transpose() * g;
    t.accumulate(x.id(), gx);
  });
}

Var gather_rows(Var table, const std::vector<int>& rows) {
  const auto& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= tv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[i]) + " outside [0, " +
                              std::to_string(tv.rows()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(rows[i]);
  }
  auto& t = tape_of(table);
  return t.record(std::move(out), table.requires_grad(), [&t, table, rows](const Matrix& g) {
    Matrix gt = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    t.accumulate(table.id(), gt);
  });
}

Var concat_rows(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: " + shape_string(a.value()) + " and " +
                     shape_string(b.value()));
  }
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  auto& t = tape_of(a);
  return t.record(std::move(out), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a.id(), g.topRows(a.rows()));
    if (b.requires_grad()) t.accumulate(b.id(), g.bottomRows(b.rows()));
  });
}

Var stop_gradient(Var x) { return tape_of(x).constant(x.value()); }

Var exp(Var x) {
  auto& t = tape_of(x);
  Matrix out = x.value().array().exp().matrix();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), x.requires_grad(), [&t, x, out_id](const Matrix& g) {
    t.accumulate(x.id(), g.cwiseProduct(t.value(out_id)));
  });
}

Var clamp(Var x, double lo, double hi) {
  auto& t = tape_of(x);
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(out), x.requires_grad(), [&t, x, lo, hi](const Matrix& g) {
    const auto& xv = x.value();
    Matrix gx = g;
    for (Eigen::Index i = 0; i < gx.size(); ++i) {
      const double v = xv.data()[i];
      if (v < lo || v > hi) gx.data()[i] = 0.0;
    }
    t.accumulate(x.id(), gx);
  });
}

Var softplus(Var x) {
  auto& t = tape_of(x);
  Matrix out = x.value().unaryExpr([](double v) { return softplus_scalar(v); });
  return t.record(std::move(out), x.requires_grad(), [&t, x](const Matrix& g) {
    Matrix d = x.value().unaryExpr([](double v) { return sigmoid(v); });
    t.accumulate(x.id(), g.cwiseProduct(d));
  });
}

Var gelu(Var x) {
  auto& t = tape_of(x);
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Matrix out =
      x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return t.record(std::move(out), x.requires_grad(), [&t, x](const Matrix& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = x.value().unaryExpr([inv_sqrt_2pi](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    t.accumulate(x.id(), g.cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  auto xhat = std::make_shared<Matrix>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  auto& t = tape_of(x);
  return t.record(std::move(out), any_grad({x, gain, bias}),
                  [&t, x, gain, bias, xhat, inv_std](const Matrix& g) {
                    if (gain.requires_grad()) {
                      t.accumulate(gain.id(), g.cwiseProduct(*xhat).colwise().sum());
                    }
                    if (bias.requires_grad()) t.accumulate(bias.id(), g.colwise().sum());
                    if (!x.requires_grad()) return;
                    const double dd = static_cast<double>(xhat->cols());
                    Matrix gx(g.rows(), g.cols());
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      RowVector gh = g.row(r).cwiseProduct(gain.value().row(0));
                      const double m1 = gh.mean();
                      const double m2 = gh.cwiseProduct(xhat->row(r)).sum() / dd;
                      gx.row(r) = ((gh.array() - m1) - xhat->row(r).array() * m2) * (*inv_std)(r);
                    }
                    t.accumulate(x.id(), gx);
                  });
}

Var sum(Var x) {
  auto& t = tape_of(x);
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), x.requires_grad(), [&t, x](const Matrix& g) {
    t.accumulate(x.id(), Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var rowwise_dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "rowwise_dot");
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  auto& t = tape_of(a);
  return t.record(std::move(out), any_grad({a, b}), [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) {
      t.accumulate(a.id(), (b.value().array().colwise() * g.col(0).array()).matrix());
    }
    if (b.requires_grad()) {
      t.accumulate(b.id(), (a.value().array().colwise() * g.col(0).array()).matrix());
    }
  });
}

Var l2_normalize_rows(Var x, int* zero_rows) {
  const auto& xv = x.value();
  auto norms = std::make_shared<Eigen::VectorXd>(xv.rows());
  Matrix out = Matrix::Zero(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double nrm = xv.row(r).norm();
    (*norms)(r) = nrm;
    if (nrm < 1e-12) {
      if (zero_rows != nullptr) ++*zero_rows;
      continue;
    }
    out.row(r) = xv.row(r) / nrm;
  }
  auto& t = tape_of(x);
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), x.requires_grad(), [&t, x, norms, out_id](const Matrix& g) {
    const auto& y = t.value(out_id);
    Matrix gx = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double nrm = (*norms)(r);
      if (nrm < 1e-12) continue;
      const double proj = g.row(r).dot(y.row(r));
      gx.row(r) = (g.row(r) - proj * y.row(r)) / nrm;
    }
    t.accumulate(x.id(), gx);
  });
}

Var causal_attention(Var q, Var k, Var v, int batch, int seq_len, int heads,
                     const std::vector<char>& key_real) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  require_same_shape(qv, kv, "causal_attention(q,k)");
  require_same_shape(qv, vv, "causal_attention(q,v)");
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * seq_len;
  if (qv.rows() != rows || static_cast<Eigen::Index>(key_real.size()) != rows) {
    throw ShapeError("causal_attention: expected " + std::to_string(rows) + " rows");
  }
  const Eigen::Index d = qv.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index T = seq_len;

  // probs[b * heads + h] is the T×T attention matrix for that slice.
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(batch) * heads);
  Matrix out(rows, d);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix s = qv.block(r0, c0, T, dh) * kv.block(r0, c0, T, dh).transpose() * inv_sqrt;
      Matrix p = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
          if (key_real[r0 + j] || j == i) mx = std::max(mx, s(i, j));
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          if (key_real[r0 + j] || j == i) {
            p(i, j) = std::exp(s(i, j) - mx);
            z += p(i, j);
          }
        }
        p.row(i) /= z;
      }
      out.block(r0, c0, T, dh) = p * vv.block(r0, c0, T, dh);
      (*probs)[static_cast<std::size_t>(b) * heads + h] = std::move(p);
    }
  }
  auto& t = tape_of(q);
  return t.record(
      std::move(out), any_grad({q, k, v}),
      [&t, q, k, v, batch, heads, T, dh, inv_sqrt, probs](const Matrix& g) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix gv = Matrix::Zero(vv.rows(), vv.cols());
        for (int b = 0; b < batch; ++b) {
          const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
          for (int h = 0; h < heads; ++h) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
            const Matrix& p = (*probs)[static_cast<std::size_t>(b) * heads + h];
            const Matrix go = g.block(r0, c0, T, dh);
            gv.block(r0, c0, T, dh) = p.transpose() * go;
            Matrix gp = go * vv.block(r0, c0, T, dh).transpose();
            Matrix gs = p.cwiseProduct(gp);
            const Eigen::VectorXd row_dot = gs.rowwise().sum();
            gs -= (p.array().colwise() * row_dot.array()).matrix();
            gs *= inv_sqrt;
            gq.block(r0, c0, T, dh) = gs * kv.block(r0, c0, T, dh);
            gk.block(r0, c0, T, dh) = gs.transpose() * qv.block(r0, c0, T, dh);
          }
        }
        t.accumulate(q.id(), gq);
        t.accumulate(k.id(), gk);
        t.accumulate(v.id(), gv);
      });
}

Var segment_causal_attention(Var q, Var k, Var v, const std::vector<int>& seg_start,
                             const std::vector<int>& seg_len, int heads) {
  const auto& qv = q.value();
  require_same_shape(qv, k.value(), "segment_causal_attention(q,k)");
  require_same_shape(qv, v.value(), "segment_causal_attention(q,v)");
  if (seg_start.size() != seg_len.size()) throw ShapeError("segment_causal_attention: segments");
  Eigen::Index covered = 0;
  for (std::size_t s = 0; s < seg_start.size(); ++s) {
    if (seg_start[s] != covered || seg_len[s] < 1) {
      throw ShapeError("segment_causal_attention: segments must tile the rows");
    }
    covered += seg_len[s];
  }
  if (covered != qv.rows()) throw ShapeError("segment_causal_attention: segments cover " +
                                             std::to_string(covered) + " of " +
                                             std::to_string(qv.rows()) + " rows");
  const Eigen::Index d = qv.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("segment_causal_attention: width " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& kv = k.value();
  const auto& vv = v.value();

  auto probs = std::make_shared<std::vector<Matrix>>(seg_start.size() * static_cast<std::size_t>(heads));
  Matrix out(qv.rows(), d);
  for (std::size_t s = 0; s < seg_start.size(); ++s) {
    const Eigen::Index r0 = seg_start[s];
    const Eigen::Index n = seg_len[s];
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix p;
      if (n == 1) {
        p = Matrix::Ones(1, 1);
        out.block(r0, c0, 1, dh) = vv.block(r0, c0, 1, dh);
      } else {
        Matrix sc = qv.block(r0, c0, n, dh) * kv.block(r0, c0, n, dh).transpose() * inv_sqrt;
        p = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mx = sc.row(i).head(i + 1).maxCoeff();
          p.row(i).head(i + 1) = (sc.row(i).head(i + 1).array() - mx).exp().matrix();
          p.row(i).head(i + 1) /= p.row(i).head(i + 1).sum();
        }
        out.block(r0, c0, n, dh) = p * vv.block(r0, c0, n, dh);
      }
      (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(p);
    }
  }
  auto& t = tape_of(q);
  return t.record(
      std::move(out), any_grad({q, k, v}),
      [&t, q, k, v, seg_start, seg_len, heads, dh, inv_sqrt, probs](const Matrix& g) {
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        Matrix gq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix gv(vv.rows(), vv.cols());
        for (std::size_t s = 0; s < seg_start.size(); ++s) {
          const Eigen::Index r0 = seg_start[s];
          const Eigen::Index n = seg_len[s];
          for (int h = 0; h < heads; ++h) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
            if (n == 1) {
              gv.block(r0, c0, 1, dh) = g.block(r0, c0, 1, dh);
              continue;
            }
            const Matrix& p = (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
            const Matrix go = g.block(r0, c0, n, dh);
            gv.block(r0, c0, n, dh) = p.transpose() * go;
            Matrix gs = p.cwiseProduct(go * vv.block(r0, c0, n, dh).transpose());
            const Eigen::VectorXd row_dot = gs.rowwise().sum();
            gs -= (p.array().colwise() * row_dot.array()).matrix();
            gs *= inv_sqrt;
            gq.block(r0, c0, n, dh) = gs * kv.block(r0, c0, n, dh);
            gk.block(r0, c0, n, dh) = gs.transpose() * qv.block(r0, c0, n, dh);
          }
        }
        t.accumulate(q.id(), gq);
        t.accumulate(k.id(), gk);
        t.accumulate(v.id(), gv);
      });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& rows,
                          const std::vector<int>& targets) {
  if (rows.size() != targets.size()) throw ShapeError("softmax_cross_entropy: rows/targets");
  if (rows.empty()) throw DataError("empty batch");
  const auto& lv = logits.value();
  auto probs = std::make_shared<Matrix>(static_cast<Eigen::Index>(rows.size()), lv.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= lv.rows() || targets[i] < 0 || targets[i] >= lv.cols()) {
      throw std::out_of_range("softmax_cross_entropy: row/target out of range");
    }
    const auto row = lv.row(rows[i]);
    const double mx = row.maxCoeff();
    RowVector e = (row.array() - mx).exp().matrix();
    const double z = e.sum();
    total += -(row(targets[i]) - mx - std::log(z));
    probs->row(static_cast<Eigen::Index>(i)) = e / z;
  }
  const double n = static_cast<double>(rows.size());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  auto& t = tape_of(logits);
  return t.record(std::move(out), logits.requires_grad(),
                  [&t, logits, rows, targets, probs, n](const Matrix& g) {
                    Matrix gl = Matrix::Zero(logits.rows(), logits.cols());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      RowVector gr = probs->row(static_cast<Eigen::Index>(i));
                      gr(targets[i]) -= 1.0;
                      gl.row(rows[i]) += gr * (g(0, 0) / n);
                    }
                    t.accumulate(logits.id(), gl);
                  });
}

Var kl_standard_normal(Var mu, Var sigma, const std::vector<double>& row_weight) {
  require_same_shape(mu.value(), sigma.value(), "kl_standard_normal");
  const auto& mv = mu.value();
  const auto& sv = sigma.value();
  if (static_cast<Eigen::Index>(row_weight.size()) != mv.rows()) {
    throw ShapeError("kl_standard_normal: weight count");
  }
  double wsum = 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < mv.rows(); ++r) {
    const double w = row_weight[r];
    if (w == 0.0) continue;
    wsum += w;
    double acc = 0.0;
    for (Eigen::Index c = 0; c < mv.cols(); ++c) {
      const double m = mv(r, c);
      const double s = sv(r, c);
      acc += 0.5 * (m * m + s * s - 1.0 - 2.0 * std::log(s));
    }
    total += w * acc;
  }
  if (wsum <= 0.0) throw DataError("empty batch");
  Matrix out(1, 1);
  out(0, 0) = total / wsum;
  auto& t = tape_of(mu);
  return t.record(std::move(out), any_grad({mu, sigma}),
                  [&t, mu, sigma, row_weight, wsum](const Matrix& g) {
                    const auto& mv = mu.value();
                    const auto& sv = sigma.value();
                    Matrix gm = Matrix::Zero(mv.rows(), mv.cols());
                    Matrix gs = Matrix::Zero(sv.rows(), sv.cols());
                    for (Eigen::Index r = 0; r < mv.rows(); ++r) {
                      const double w = row_weight[r] * g(0, 0) / wsum;
                      if (w == 0.0) continue;
                      gm.row(r) = w * mv.row(r);
                      gs.row(r) = w * (sv.row(r).array() - sv.row(r).array().inverse()).matrix();
                    }
                    if (mu.requires_grad()) t.accumulate(mu.id(), gm);
                    if (sigma.requires_grad()) t.accumulate(sigma.id(), gs);
                  });
}

Var contrastive_cross_entropy(Var logits, const std::vector<int>& positive) {
  const auto& sv = logits.value();
  const Eigen::Index n = sv.rows();
  if (sv.cols() != n || static_cast<Eigen::Index>(positive.size()) != n) {
    throw ShapeError("contrastive_cross_entropy: expects square logits and one positive per row");
  }
  if (n == 0) throw DataError("empty batch");
  auto probs = std::make_shared<Matrix>(Matrix::Zero(n, n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = positive[i];
    if (p < 0 || p >= n || p == i) throw std::invalid_argument("contrastive: bad positive index");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) mx = std::max(mx, sv(i, j));
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      (*probs)(i, j) = std::exp(sv(i, j) - mx);
      z += (*probs)(i, j);
    }
    probs->row(i) /= z;
    total += -(sv(i, p) - mx - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  auto& t = tape_of(logits);
  return t.record(std::move(out), logits.requires_grad(),
                  [&t, logits, positive, probs, n](const Matrix& g) {
                    Matrix gs = *probs;
                    for (Eigen::Index i = 0; i < n; ++i) gs(i, positive[i]) -= 1.0;
                    gs *= g(0, 0) / static_cast<double>(n);
                    t.accumulate(logits.id(), gs);
                  });
}

}  // namespace fedcsr::ad
