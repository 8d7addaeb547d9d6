#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records primitive operations in execution order. Each node keeps
// its value and, when any input requires a gradient, a closure that pushes
// the node's output gradient back into its inputs. backward() walks the
// tape once, in exact reverse order; a consumed tape rejects a second pass.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace bott::ad {

/// Rank-2 tensor; vectors are 1 x n.
template <typename T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape {
 public:
  using Matrix = Tensor<T>;
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without a gradient.
  Var constant(Matrix value) { return push(std::move(value), nullptr, false, {}); }

  /// Leaf referring to caller-owned storage that must outlive the tape.
  Var constant_ref(const Matrix& value) { return push({}, &value, false, {}); }

  /// Leaf whose gradient is accumulated during backward().
  Var parameter(Matrix value) { return push(std::move(value), nullptr, true, {}); }

  Var parameter_ref(const Matrix& value) { return push({}, &value, true, {}); }

  const Matrix& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() root with respect to `v`; zeros when
  /// nothing flowed into it.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      const Matrix& val = value(v);
      return Matrix::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  /// Records an operation; `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool rg = false;
    for (Var in : inputs) rg = rg || requires_grad(in);
    return push(std::move(value), nullptr, rg, rg ? std::move(backward) : Backward{});
  }

  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    bool rg = false;
    for (Var in : inputs) rg = rg || requires_grad(in);
    return push(std::move(value), nullptr, rg, rg ? std::move(backward) : Backward{});
  }

  /// Adds `g` into the gradient of `v`; no-op for constants.
  template <typename Derived>
  void accumulate(Var v, const Eigen::DenseBase<Derived>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g.derived().matrix();
    } else {
      n.grad += g.derived().matrix();
    }
  }

  /// Back-propagates from a 1 x 1 root.
  void backward(Var root) {
    if (consumed_) throw std::logic_error("tape already consumed by a previous backward pass");
    consumed_ = true;
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) throw std::domain_error("backward: root must be a scalar");
    if (!requires_grad(root)) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Matrix value, const Matrix* external, bool rg, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.external = external;
    n.requires_grad = rg;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::domain_error(what);
}

template <typename T>
void check_finite(const Tensor<T>& m, const char* op) {
#ifndef NDEBUG
  if (!m.allFinite()) throw std::domain_error(std::string(op) + ": non-finite output");
#else
  (void)m;
  (void)op;
#endif
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Tensor<T> out = A * B;
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

/// x W + bias, with bias broadcast over rows.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var W, Var bias) {
  const auto& X = tape.value(x);
  const auto& Wm = tape.value(W);
  const auto& B = tape.value(bias);
  detail::require(X.cols() == Wm.rows(), "linear: input width does not match weight rows");
  detail::require(B.rows() == 1 && B.cols() == Wm.cols(), "linear: bias shape mismatch");
  Tensor<T> out = X * Wm;
  out.rowwise() += B.row(0);
  detail::check_finite(out, "linear");
  return tape.record(std::move(out), {x, W, bias}, [x, W, bias](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(W).transpose());
    if (tp.requires_grad(W)) tp.accumulate(W, tp.value(x).transpose() * g);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

/// max(x, 0); the subgradient at 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x).cwiseMax(T(0));
  return tape.record(std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, (tp.value(x).array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
  Tensor<T> out = A + B;
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> out = tape.value(x) * factor;
  return tape.record(std::move(out), {x}, [x, factor](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, g * factor);
  });
}

/// Sum of all entries, as a 1 x 1 tensor.
template <typename T>
Var sum(Tape<T>& tape, Var x) {
  Tensor<T> out(1, 1);
  out(0, 0) = tape.value(x).sum();
  return tape.record(std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const auto& X = tp.value(x);
    tp.accumulate(x, Tensor<T>::Constant(X.rows(), X.cols(), g(0, 0)));
  });
}

/// Rows [begin, begin + count).
template <typename T>
Var slice_rows(Tape<T>& tape, Var x, Eigen::Index begin, Eigen::Index count) {
  const auto& X = tape.value(x);
  detail::require(begin >= 0 && count >= 0 && begin + count <= X.rows(), "slice_rows: range out of bounds");
  Tensor<T> out = X.middleRows(begin, count);
  return tape.record(std::move(out), {x}, [x, begin, count](Tape<T>& tp, const Tensor<T>& g) {
    const auto& X = tp.value(x);
    Tensor<T> full = Tensor<T>::Zero(X.rows(), X.cols());
    full.middleRows(begin, count) = g;
    tp.accumulate(x, full);
  });
}

/// Per-row standardization followed by an elementwise affine map.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var shift, T eps = T(1e-5)) {
  const auto& X = tape.value(x);
  const auto& G = tape.value(gain);
  const auto& S = tape.value(shift);
  const Eigen::Index d = X.cols();
  detail::require(d >= 1, "layer_norm: empty rows");
  detail::require(G.rows() == 1 && G.cols() == d && S.rows() == 1 && S.cols() == d,
                  "layer_norm: gain/shift shape mismatch");

  Tensor<T> xhat(X.rows(), d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const T mu = X.row(r).mean();
    const T var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Tensor<T> out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + S.row(0).array();
  return tape.record(std::move(out), {x, gain, shift},
                     [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         Tape<T>& tp, const Tensor<T>& g) {
                       if (tp.requires_grad(gain)) tp.accumulate(gain, (g.array() * xhat.array()).colwise().sum());
                       if (tp.requires_grad(shift)) tp.accumulate(shift, g.colwise().sum());
                       if (!tp.requires_grad(x)) return;
                       const auto& Gv = tp.value(gain);
                       Tensor<T> dxhat = g.array().rowwise() * Gv.row(0).array();
                       const T inv_d = T(1) / static_cast<T>(dxhat.cols());
                       Tensor<T> dx(dxhat.rows(), dxhat.cols());
                       for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                         const T m1 = dxhat.row(r).sum() * inv_d;
                         const T m2 = dxhat.row(r).dot(xhat.row(r)) * inv_d;
                         dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                       }
                       tp.accumulate(x, dx);
                     });
}

/// Scales each row to unit Euclidean length.
template <typename T>
Var l2_normalize_rows(Tape<T>& tape, Var x) {
  const auto& X = tape.value(x);
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = X.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r)
    detail::require(norms(r) >= T(1e-12), "l2_normalize_rows: degenerate (zero-norm) row " + std::to_string(r));
  Tensor<T> out = X.array().colwise() / norms.array();
  Tensor<T> y = out;
  return tape.record(std::move(out), {x}, [x, y = std::move(y), norms = std::move(norms)](
                                              Tape<T>& tp, const Tensor<T>& g) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> proj = (y.array() * g.array()).rowwise().sum();
    Tensor<T> dx = ((g - (y.array().colwise() * proj.array()).matrix()).array().colwise() / norms.array());
    tp.accumulate(x, dx);
  });
}

/// (E E^T + 1) / 2 for row embeddings E.
template <typename T>
Var pairwise_scores(Tape<T>& tape, Var e) {
  const auto& E = tape.value(e);
  Tensor<T> out = (E * E.transpose()).array() * T(0.5) + T(0.5);
  return tape.record(std::move(out), {e}, [e](Tape<T>& tp, const Tensor<T>& g) {
    const auto& E = tp.value(e);
    Tensor<T> sym = (g + g.transpose()) * T(0.5);
    tp.accumulate(e, sym * E);
  });
}

/// Elementwise map with a caller-supplied gradient: out = value, d in = g * dvalue.
template <typename T>
Var custom_scalar(Tape<T>& tape, Var x, T value, Tensor<T> dvalue_dx) {
  Tensor<T> out(1, 1);
  out(0, 0) = value;
  return tape.record(std::move(out), {x}, [x, d = std::move(dvalue_dx)](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(x, d * g(0, 0));
  });
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

struct AttentionVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Logit given to masked key positions.
inline constexpr double kMaskedLogit = -1e9;

/// Optional sink receiving per-(block, head) attention weights, in that order.
template <typename T>
using AttentionSink = std::vector<Tensor<T>>;

/// Scaled dot-product self-attention over independent row blocks of size
/// `block_rows` (one block per batch item). `key_mask[r]` excludes row r as
/// a key. Residual connections are left to the caller.
template <typename T>
Var multi_head_attention(Tape<T>& tape, Var x, const AttentionVars& p, int heads, Eigen::Index block_rows,
                         const std::vector<bool>& key_mask, AttentionSink<T>* sink = nullptr) {
  const auto& X = tape.value(x);
  const Eigen::Index R = X.rows(), d = X.cols();
  detail::require(heads > 0 && d % heads == 0, "multi_head_attention: width not divisible by heads");
  detail::require(block_rows > 0 && R % block_rows == 0, "multi_head_attention: rows not a multiple of block size");
  detail::require(static_cast<Eigen::Index>(key_mask.size()) == R, "multi_head_attention: mask length mismatch");
  const Eigen::Index dk = d / heads;
  const Eigen::Index B = R / block_rows;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  auto project = [&](Var W, Var b) {
    Tensor<T> out = X * tape.value(W);
    out.rowwise() += tape.value(b).row(0);
    return out;
  };
  Tensor<T> Q = project(p.wq, p.bq);
  Tensor<T> K = project(p.wk, p.bk);
  Tensor<T> V = project(p.wv, p.bv);

  const bool need_grad = tape.requires_grad(x) || tape.requires_grad(p.wq) || tape.requires_grad(p.wk) ||
                         tape.requires_grad(p.wv) || tape.requires_grad(p.wo) || tape.requires_grad(p.bq) ||
                         tape.requires_grad(p.bk) || tape.requires_grad(p.bv) || tape.requires_grad(p.bo);

  Tensor<T> O(R, d);
  std::vector<Tensor<T>> probs;
  if (need_grad) probs.reserve(static_cast<std::size_t>(B * heads));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::Index r0 = b * block_rows;
    bool any_key = false;
    for (Eigen::Index j = 0; j < block_rows; ++j) any_key = any_key || !key_mask[static_cast<std::size_t>(r0 + j)];
    detail::require(any_key, "multi_head_attention: every key of a block is masked");
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dk;
      Tensor<T> S = (Q.block(r0, c0, block_rows, dk) * K.block(r0, c0, block_rows, dk).transpose()) * scale;
      for (Eigen::Index j = 0; j < block_rows; ++j)
        if (key_mask[static_cast<std::size_t>(r0 + j)]) S.col(j).setConstant(static_cast<T>(kMaskedLogit));
      for (Eigen::Index i = 0; i < block_rows; ++i) {
        const T m = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - m).exp();
        S.row(i) /= S.row(i).sum();
      }
      O.block(r0, c0, block_rows, dk) = S * V.block(r0, c0, block_rows, dk);
      if (sink) sink->push_back(S);
      if (need_grad) probs.push_back(std::move(S));
    }
  }
  Tensor<T> out = O * tape.value(p.wo);
  out.rowwise() += tape.value(p.bo).row(0);
  detail::check_finite(out, "multi_head_attention");

  return tape.record(
      std::move(out), {x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo},
      [x, p, heads, block_rows, dk, B, scale, Q = std::move(Q), K = std::move(K), V = std::move(V),
       O = std::move(O), probs = std::move(probs)](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(p.wo)) tp.accumulate(p.wo, O.transpose() * g);
        if (tp.requires_grad(p.bo)) tp.accumulate(p.bo, g.colwise().sum());
        const Tensor<T> dO = g * tp.value(p.wo).transpose();
        Tensor<T> dQ(Q.rows(), Q.cols()), dK(K.rows(), K.cols()), dV(V.rows(), V.cols());
        std::size_t k = 0;
        for (Eigen::Index b = 0; b < B; ++b) {
          const Eigen::Index r0 = b * block_rows;
          for (int h = 0; h < heads; ++h, ++k) {
            const Eigen::Index c0 = h * dk;
            const Tensor<T>& P = probs[k];
            const auto dOh = dO.block(r0, c0, block_rows, dk);
            dV.block(r0, c0, block_rows, dk) = P.transpose() * dOh;
            Tensor<T> dP = dOh * V.block(r0, c0, block_rows, dk).transpose();
            Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
            Tensor<T> dS = P.array() * (dP.array().colwise() - rowdot.array());
            dQ.block(r0, c0, block_rows, dk) = (dS * K.block(r0, c0, block_rows, dk)) * scale;
            dK.block(r0, c0, block_rows, dk) = (dS.transpose() * Q.block(r0, c0, block_rows, dk)) * scale;
          }
        }
        const auto& X = tp.value(x);
        auto back_proj = [&](Var W, Var bias, const Tensor<T>& dY) {
          if (tp.requires_grad(W)) tp.accumulate(W, X.transpose() * dY);
          if (tp.requires_grad(bias)) tp.accumulate(bias, dY.colwise().sum());
        };
        back_proj(p.wq, p.bq, dQ);
        back_proj(p.wk, p.bk, dK);
        back_proj(p.wv, p.bv, dV);
        if (tp.requires_grad(x)) {
          Tensor<T> dX = dQ * tp.value(p.wq).transpose();
          dX.noalias() += dK * tp.value(p.wk).transpose();
          dX.noalias() += dV * tp.value(p.wv).transpose();
          tp.accumulate(x, dX);
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Relative error with an absolute floor so vanishing gradients do not
/// amplify round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of a scalar function against central finite
/// differences in every input coordinate; returns the max relative error.
/// `fn(tape, vars)` must build a 1 x 1 output from the given parameter vars.
template <typename Fn>
double grad_check(Fn&& fn, const std::vector<Tensor<double>>& inputs, double h = 1e-6) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.parameter(x));
    return tape.value(fn(tape, vars))(0, 0);
  };

  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  const Var out = fn(tape, vars);
  tape.backward(out);

  double worst = 0;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      double& slot = probe[k].data()[i];
      const double orig = slot;
      slot = orig + h;
      const double fp = evaluate(probe);
      slot = orig - h;
      const double fm = evaluate(probe);
      slot = orig;
      const double numeric = (fp - fm) / (2 * h);
      worst = std::max(worst, relative_error(analytic.data()[i], numeric));
    }
  }
  return worst;
}

}  // namespace bott::ad
