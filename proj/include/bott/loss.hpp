#pragma once

// Link targets, the loss mask, hard-negative mining and the masked,
// positive-weighted binary cross-entropy over linking scores.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "bott/config_json.hpp"
#include "bott/geometry.hpp"
#include "bott/types.hpp"

namespace bott {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct LinkTargets {
  BoolMatrix y;  // same labeled identity
  BoolMatrix M;  // entries that contribute to the loss
};

struct LossConfig {
  double kappa = 4.0;
  double beta = 0.8;  // kappa / (kappa + 1)
  // Max speed (m/s) per class id.
  std::vector<double> class_max_speed;
  double clamp_eps = 1e-7;

  void validate() const {
    if (!(beta > 0 && beta < 1)) throw ConfigError("loss: beta must lie in (0, 1)");
    if (!(kappa >= 1)) throw ConfigError("loss: kappa must be >= 1");
    if (!(clamp_eps > 0 && clamp_eps < 0.5)) throw ConfigError("loss: clamp_eps must lie in (0, 0.5)");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"kappa", c.kappa}, {"beta", c.beta}, {"class_max_speed", c.class_max_speed}, {"clamp_eps", c.clamp_eps}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  check_keys(j, {"kappa", "beta", "class_max_speed", "clamp_eps"}, "loss");
  read_opt(j, "kappa", c.kappa);
  c.beta = c.kappa / (c.kappa + 1.0);
  read_opt(j, "beta", c.beta);
  read_opt(j, "class_max_speed", c.class_max_speed);
  read_opt(j, "clamp_eps", c.clamp_eps);
}

/// y_ij = 1 iff both boxes carry the same ground-truth identity.
inline BoolMatrix build_targets(const SlidingWindow& window) {
  const auto rows = window.rows();
  const auto N = static_cast<Eigen::Index>(rows.size());
  BoolMatrix y = BoolMatrix::Constant(N, N, false);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& gi = rows[static_cast<std::size_t>(i)]->gt_track_id;
    if (!gi) continue;
    for (Eigen::Index j = 0; j < N; ++j) {
      const auto& gj = rows[static_cast<std::size_t>(j)]->gt_track_id;
      y(i, j) = gj && *gi == *gj;
    }
  }
  return y;
}

/// M_ij = 0 for inter-class pairs, same-frame pairs, FP-FP pairs and pairs
/// farther apart than the class max speed allows over their time gap.
inline BoolMatrix build_mask(const SlidingWindow& window, const LossConfig& cfg) {
  const auto rows = window.rows();
  const auto N = static_cast<Eigen::Index>(rows.size());
  std::vector<int> cls(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    cls[i] = rows[i]->class_id();
    if (cls[i] < 0 || static_cast<std::size_t>(cls[i]) >= cfg.class_max_speed.size())
      throw std::domain_error("build_mask: no max speed configured for class " + std::to_string(cls[i]));
  }
  BoolMatrix M = BoolMatrix::Constant(N, N, false);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Box3D& a = *rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const Box3D& b = *rows[static_cast<std::size_t>(j)];
      const int ci = cls[static_cast<std::size_t>(i)];
      bool keep = ci == cls[static_cast<std::size_t>(j)];
      keep = keep && a.frame_idx != b.frame_idx;
      keep = keep && !(a.is_false_positive() && b.is_false_positive());
      keep = keep && center_distance(a, b) <= cfg.class_max_speed[static_cast<std::size_t>(ci)] * std::abs(a.t - b.t);
      M(i, j) = M(j, i) = keep;
    }
  }
  return M;
}

inline LinkTargets build_link_targets(const SlidingWindow& window, const LossConfig& cfg) {
  return {build_targets(window), build_mask(window, cfg)};
}

/// Keeps every unmasked positive and at most kappa * P unmasked negatives
/// with the highest scores (their error against a 0 target). Pairs are
/// counted once on the upper triangle and the selection is mirrored.
template <typename Derived>
BoolMatrix hard_negative_mine(const Eigen::MatrixBase<Derived>& ls, const BoolMatrix& y, const BoolMatrix& M,
                              double kappa) {
  const Eigen::Index N = M.rows();
  if (ls.rows() != N || ls.cols() != N || y.rows() != N || y.cols() != N)
    throw std::domain_error("hard_negative_mine: shape mismatch");
  BoolMatrix out = BoolMatrix::Constant(N, N, false);
  std::vector<std::tuple<double, Eigen::Index, Eigen::Index>> negatives;
  std::size_t P = 0;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = i + 1; j < N; ++j) {
      if (!M(i, j)) continue;
      if (y(i, j)) {
        out(i, j) = out(j, i) = true;
        ++P;
      } else {
        negatives.emplace_back(static_cast<double>(ls(i, j)), i, j);
      }
    }
  const auto budget = static_cast<std::size_t>(std::floor(kappa * static_cast<double>(P)));
  const std::size_t keep = std::min(budget, negatives.size());
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep), negatives.end(),
                    [](const auto& a, const auto& b) {
                      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
                      return std::get<2>(a) < std::get<2>(b);
                    });
  for (std::size_t k = 0; k < keep; ++k) {
    const auto [s, i, j] = negatives[k];
    out(i, j) = out(j, i) = true;
  }
  return out;
}

struct LinkCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Active positive/negative links on the upper triangle of a mask.
inline LinkCounts count_links(const BoolMatrix& y, const BoolMatrix& M) {
  LinkCounts c;
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = i + 1; j < M.cols(); ++j)
      if (M(i, j)) (y(i, j) ? c.positives : c.negatives)++;
  return c;
}

template <typename T>
struct BceResult {
  double loss = 0;        // sum / normalizer
  double sum = 0;         // unnormalized weighted NLL
  std::size_t active = 0; // number of set mask entries
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grad;  // d loss / d LS
};

/// Weighted NLL summed over active entries, divided by `normalizer`
/// (the number of active entries when 0). Scores are clamped to
/// [eps, 1 - eps]; the gradient vanishes where the clamp binds or M = 0.
template <typename Derived>
BceResult<typename Derived::Scalar> masked_bce(const Eigen::MatrixBase<Derived>& ls, const BoolMatrix& y,
                                               const BoolMatrix& M, double beta, double eps,
                                               double normalizer = 0) {
  using T = typename Derived::Scalar;
  const Eigen::Index N = ls.rows();
  if (ls.cols() != N || y.rows() != N || M.rows() != N) throw std::domain_error("masked_bce: shape mismatch");
  BceResult<T> r;
  r.active = static_cast<std::size_t>(M.count());
  if (normalizer <= 0) normalizer = static_cast<double>(r.active);
  if (r.active == 0 || normalizer <= 0) throw std::domain_error("masked_bce: empty loss mask");
  r.grad.setZero(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      if (!M(i, j)) continue;
      const double raw = static_cast<double>(ls(i, j));
      const double p = std::clamp(raw, eps, 1.0 - eps);
      const bool inside = raw > eps && raw < 1.0 - eps;
      if (y(i, j)) {
        r.sum -= beta * std::log(p);
        if (inside) r.grad(i, j) = static_cast<T>(-beta / p / normalizer);
      } else {
        r.sum -= (1.0 - beta) * std::log(1.0 - p);
        if (inside) r.grad(i, j) = static_cast<T>((1.0 - beta) / (1.0 - p) / normalizer);
      }
    }
  r.loss = r.sum / normalizer;
  return r;
}

}  // namespace bott
