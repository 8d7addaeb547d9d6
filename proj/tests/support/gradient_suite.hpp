#pragma once

// Finite-difference checks for every differentiable primitive and the full
// masked loss, in double precision.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bott/autodiff.hpp"
#include "bott/loss.hpp"

namespace bott::testing {

using ad::Tape;
using ad::Var;
using Mat = ad::Tensor<double>;

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Uniform magnitudes in [0.1, 1] with random signs: keeps relu inputs off the kink.
inline Mat off_zero_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sign(rng) ? u(rng) : -u(rng);
  return m;
}

// Projects an output onto a fixed random direction so every output entry
// contributes to the checked scalar.
inline Var project(Tape<double>& tape, Var out, const Mat& dir) {
  const double dot = (tape.value(out).array() * dir.array()).sum();
  return ad::custom_scalar(tape, out, dot, dir);
}

struct GradCase {
  std::string name;
  std::function<double(std::mt19937_64&)> run;
};

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"matmul", [](std::mt19937_64& rng) {
    const Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 4, 5), dir = random_mat(rng, 3, 5);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::matmul(t, v[0], v[1]), dir);
    }, {a, b});
  }});
  cases.push_back({"linear", [](std::mt19937_64& rng) {
    const Mat x = random_mat(rng, 4, 3), w = random_mat(rng, 3, 5), b = random_mat(rng, 1, 5);
    const Mat dir = random_mat(rng, 4, 5);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::linear(t, v[0], v[1], v[2]), dir);
    }, {x, w, b});
  }});
  cases.push_back({"relu", [](std::mt19937_64& rng) {
    const Mat x = off_zero_mat(rng, 4, 6), dir = random_mat(rng, 4, 6);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::relu(t, v[0]), dir);
    }, {x});
  }});
  cases.push_back({"add_scale_sum", [](std::mt19937_64& rng) {
    const Mat a = random_mat(rng, 3, 3), b = off_zero_mat(rng, 3, 3);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return ad::sum(t, ad::scale(t, ad::add(t, v[0], ad::relu(t, v[1])), 1.7));
    }, {a, b});
  }});
  cases.push_back({"slice_rows", [](std::mt19937_64& rng) {
    const Mat x = random_mat(rng, 6, 3), dir = random_mat(rng, 3, 3);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::slice_rows(t, v[0], 2, 3), dir);
    }, {x});
  }});
  cases.push_back({"layer_norm", [](std::mt19937_64& rng) {
    const Mat x = random_mat(rng, 4, 6, -2, 2), g = random_mat(rng, 1, 6, 0.5, 1.5), s = random_mat(rng, 1, 6);
    const Mat dir = random_mat(rng, 4, 6);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::layer_norm(t, v[0], v[1], v[2], 1e-5), dir);
    }, {x, g, s});
  }});
  cases.push_back({"l2_normalize_rows", [](std::mt19937_64& rng) {
    const Mat x = random_mat(rng, 5, 4), dir = random_mat(rng, 5, 4);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::l2_normalize_rows(t, v[0]), dir);
    }, {x});
  }});
  cases.push_back({"pairwise_scores", [](std::mt19937_64& rng) {
    const Mat e = random_mat(rng, 5, 4), dir = random_mat(rng, 5, 5);
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      return project(t, ad::pairwise_scores(t, v[0]), dir);
    }, {e});
  }});
  cases.push_back({"multi_head_attention", [](std::mt19937_64& rng) {
    const Eigen::Index d = 6, block = 4;
    std::vector<Mat> in{random_mat(rng, 2 * block, d)};
    for (int k = 0; k < 4; ++k) {
      in.push_back(random_mat(rng, d, d, -0.5, 0.5));
      in.push_back(random_mat(rng, 1, d, -0.2, 0.2));
    }
    const Mat dir = random_mat(rng, 2 * block, d);
    const std::vector<bool> mask{false, false, false, true, false, false, true, true};
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      const ad::AttentionVars p{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
      return project(t, ad::multi_head_attention(t, v[0], p, 2, block, mask), dir);
    }, in);
  }});
  cases.push_back({"masked_loss", [](std::mt19937_64& rng) {
    const Eigen::Index N = 8;
    const Mat e = random_mat(rng, N, 5);
    BoolMatrix y = BoolMatrix::Constant(N, N, false), M = BoolMatrix::Constant(N, N, false);
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = i + 1; j < N; ++j) {
        y(i, j) = y(j, i) = (i % 3) == (j % 3);
        M(i, j) = M(j, i) = y(i, j) || coin(rng);
      }
    M(0, 3) = M(3, 0) = true;
    return ad::grad_check([&](Tape<double>& t, const std::vector<Var>& v) {
      const Var s = ad::pairwise_scores(t, ad::l2_normalize_rows(t, v[0]));
      const auto r = masked_bce(t.value(s), y, M, 0.8, 1e-7, 13.0);
      return ad::custom_scalar(t, s, r.loss, r.grad);
    }, {e});
  }});
  return cases;
}

}  // namespace bott::testing
