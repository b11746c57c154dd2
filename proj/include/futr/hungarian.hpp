#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "futr/common.hpp"

namespace futr {

struct AssignmentResult {
  std::vector<int> row_to_col;
  double total = 0.0;
};

// Exact linear assignment via shortest augmenting paths with potentials
// (Jonker-Volgenant style), O(n^3) on a square cost matrix.
inline AssignmentResult solve_assignment(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) throw ShapeError("solve_assignment: empty cost matrix");
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != n)
      throw ShapeError("solve_assignment: cost matrix is not square");
    for (double c : row)
      if (!std::isfinite(c))
        throw NumericError("solve_assignment: non-finite cost entry");
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  AssignmentResult res;
  res.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] > 0) res.row_to_col[match[j] - 1] = j - 1;
  for (int i = 0; i < n; ++i) res.total += cost[i][res.row_to_col[i]];
  return res;
}

// Same optimum, but ties broken toward the lexicographically smallest
// permutation: fix rows in order to the lowest column that still attains
// the optimal total.
inline AssignmentResult solve_assignment_lexicographic(
    const std::vector<std::vector<double>>& cost) {
  const AssignmentResult base = solve_assignment(cost);
  const int n = static_cast<int>(cost.size());
  const double tol = 1e-9 * (1.0 + std::abs(base.total));

  std::vector<int> chosen(n, -1);
  std::vector<char> col_used(n, 0);
  double prefix = 0.0;

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_used[j]) continue;
      double rest = 0.0;
      if (i + 1 < n) {
        std::vector<int> rows, cols;
        for (int r = i + 1; r < n; ++r) rows.push_back(r);
        for (int c = 0; c < n; ++c)
          if (!col_used[c] && c != j) cols.push_back(c);
        std::vector<std::vector<double>> sub(rows.size(),
                                             std::vector<double>(cols.size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t c = 0; c < cols.size(); ++c)
            sub[r][c] = cost[rows[r]][cols[c]];
        rest = solve_assignment(sub).total;
      }
      if (prefix + cost[i][j] + rest <= base.total + tol) {
        chosen[i] = j;
        col_used[j] = 1;
        prefix += cost[i][j];
        break;
      }
    }
    if (chosen[i] < 0)
      throw NumericError("solve_assignment_lexicographic: no feasible column");
  }

  AssignmentResult res;
  res.row_to_col = std::move(chosen);
  for (int i = 0; i < n; ++i) res.total += cost[i][res.row_to_col[i]];
  return res;
}

}  // namespace futr
