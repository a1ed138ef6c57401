#ifndef RECLINK_HUNGARIAN_HPP
#define RECLINK_HUNGARIAN_HPP

#include <limits>
#include <stdexcept>
#include <vector>

namespace reclink {

// Exact min-cost assignment (shortest augmenting path with potentials).
// cost is n x m with n <= m; returns for each row the matched column.
// O(n^2 m), handles negative costs.
inline std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) return {};
    const int m = static_cast<int>(cost[0].size());
    if (n > m) throw std::invalid_argument("hungarian: need rows <= cols");
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != m)
            throw std::invalid_argument("hungarian: ragged cost matrix");

    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, INF);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = INF;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Max-weight bipartite matching where leaving a vertex unmatched is free.
// weight[i][j] is the gain for pairing row i with column j; entries set to
// -infinity (or below eligible_min) are never selected. Returns row -> col
// or -1. Solved exactly by padding with zero-gain dummy columns.
inline std::vector<int> max_weight_matching(const std::vector<std::vector<double>>& weight) {
    const int n = static_cast<int>(weight.size());
    if (n == 0) return {};
    const int m = static_cast<int>(weight[0].size());
    // square (n) x (m + n): each row gets its own zero-gain dummy column
    const double FORBID = 1e12;
    std::vector<std::vector<double>> cost(n, std::vector<double>(m + n, FORBID));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double w = weight[i][j];
            cost[i][j] = (w == -std::numeric_limits<double>::infinity()) ? FORBID : -w;
        }
        cost[i][m + i] = 0.0;
    }
    auto match = hungarian_min_cost(cost);
    std::vector<int> out(n, -1);
    for (int i = 0; i < n; ++i) {
        // a pair with nonpositive gain never beats the row's free dummy
        if (match[i] < m && weight[i][match[i]] > 0.0) out[i] = match[i];
    }
    return out;
}

} // namespace reclink

#endif
