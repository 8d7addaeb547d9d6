#pragma once

// Minimum-cost linear assignment (Kuhn-Munkres with potentials, O(n^3)).

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace bott {

using Assignment = std::vector<std::pair<int, int>>;

/// Cost used for the dummy rows/columns of rectangular problems.
inline constexpr double kAssignmentPadCost = 1e6;

/// Solves min-cost assignment for an R x S cost matrix. Returns min(R, S)
/// (row, col) pairs sorted by row. Rectangular inputs are padded to square
/// with a constant, which leaves the optimum over real pairs unchanged.
template <typename Derived>
Assignment hungarian(const Eigen::MatrixBase<Derived>& cost) {
  const int R = static_cast<int>(cost.rows());
  const int S = static_cast<int>(cost.cols());
  if (R == 0 || S == 0) return {};
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < S; ++j)
      if (!std::isfinite(static_cast<double>(cost(i, j))))
        throw std::domain_error("hungarian: non-finite cost entry");

  const int n = std::max(R, S);
  auto c = [&](int i, int j) -> double {
    return (i < R && j < S) ? static_cast<double>(cost(i, j)) : kAssignmentPadCost;
  };

  // 1-based potentials; p[j] is the row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  constexpr double inf = std::numeric_limits<double>::infinity();

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;

  Assignment out;
  out.reserve(std::min(R, S));
  for (int i = 0; i < R; ++i)
    if (row_to_col[i] >= 0 && row_to_col[i] < S) out.emplace_back(i, row_to_col[i]);
  return out;
}

template <typename Derived>
double assignment_cost(const Eigen::MatrixBase<Derived>& cost, const Assignment& a) {
  double total = 0;
  for (auto [i, j] : a) total += static_cast<double>(cost(i, j));
  return total;
}

}  // namespace bott
