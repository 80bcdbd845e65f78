#pragma once

// Exact Wasserstein-2 distances between finitely supported measures.
//
// The general solver is a primal transportation simplex: the basis is kept as
// a spanning tree over the m source and k target nodes (m + k - 1 cells,
// degenerate zero-mass cells allowed), potentials are recomputed from the
// tree each pivot, and the entering cell is the most negative reduced cost.
// Nothing here is approximate beyond floating point rounding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"

namespace cclvq {

inline constexpr std::size_t max_transport_atoms = 512;
inline constexpr double transport_marginal_tolerance = 1e-9;

/// Coupling between a source measure (rows) and a target measure (columns).
class TransportPlan {
public:
    TransportPlan() = default;
    TransportPlan(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), mass_(rows * cols, 0.0) {}

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return mass_[i * cols_ + j]; }
    [[nodiscard]] double& operator()(std::size_t i, std::size_t j) { return mass_[i * cols_ + j]; }
    [[nodiscard]] std::span<const double> mass() const noexcept { return mass_; }

    [[nodiscard]] double total() const noexcept {
        double t = 0.0;
        for (double m : mass_) t += m;
        return t;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> mass_;
};

struct TransportResult {
    double distance = 0.0; ///< W2, the square root of the optimal cost
    double cost = 0.0;     ///< optimal total squared-distance cost
    TransportPlan plan;
};

/// Largest absolute deviation of the plan's marginals from the two measures.
inline double marginal_error(const TransportPlan& plan, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    double worst = 0.0;
    for (std::size_t i = 0; i < plan.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plan.cols(); ++j) s += plan(i, j);
        worst = std::max(worst, std::abs(s - mu[i].weight));
    }
    for (std::size_t j = 0; j < plan.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < plan.rows(); ++i) s += plan(i, j);
        worst = std::max(worst, std::abs(s - nu[j].weight));
    }
    return worst;
}

inline double plan_cost(const TransportPlan& plan, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    double cost = 0.0;
    for (std::size_t i = 0; i < plan.rows(); ++i)
        for (std::size_t j = 0; j < plan.cols(); ++j)
            if (plan(i, j) != 0.0) cost += plan(i, j) * squared_distance(mu[i].point, nu[j].point);
    return cost;
}

namespace detail {

/// Distinct support points of a measure with merged positive weights.
struct MergedSupport {
    std::vector<Point> points;
    std::vector<double> weights;
    std::vector<std::size_t> origin; ///< merged index per original atom, npos for zero weight
};

inline constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

inline MergedSupport merge_support(const DiscreteMeasure& mu) {
    MergedSupport out;
    out.origin.assign(mu.size(), npos);
    std::map<Point, std::size_t> index;
    for (std::size_t a = 0; a < mu.size(); ++a) {
        if (mu[a].weight <= 0.0) continue;
        auto [it, inserted] = index.try_emplace(mu[a].point, out.points.size());
        if (inserted) {
            out.points.push_back(mu[a].point);
            out.weights.push_back(0.0);
        }
        out.weights[it->second] += mu[a].weight;
        out.origin[a] = it->second;
    }
    return out;
}

struct BasicCell {
    std::size_t row;
    std::size_t col;
    double mass;
};

/// Transportation simplex on a dense cost matrix. Supplies and demands are
/// positive and have equal totals up to rounding. Returns the flow matrix.
inline std::vector<double> solve_transportation(const std::vector<double>& supply, const std::vector<double>& demand,
                                                const std::vector<double>& cost) {
    const std::size_t m = supply.size();
    const std::size_t k = demand.size();
    std::vector<double> flow(m * k, 0.0);

    // North-west corner start: exactly m + k - 1 cells forming a spanning tree.
    std::vector<BasicCell> basis;
    basis.reserve(m + k - 1);
    {
        std::vector<double> a = supply;
        std::vector<double> b = demand;
        std::size_t i = 0;
        std::size_t j = 0;
        while (true) {
            const double x = std::min(a[i], b[j]);
            basis.push_back({i, j, x});
            a[i] -= x;
            b[j] -= x;
            if (i == m - 1 && j == k - 1) break;
            if (i == m - 1) {
                ++j;
            } else if (j == k - 1) {
                ++i;
            } else if (a[i] <= b[j]) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    double max_cost = 0.0;
    for (double c : cost) max_cost = std::max(max_cost, c);
    const double price_tol = 1e-13 * std::max(1.0, max_cost);

    // Tree nodes: rows are 0..m-1, columns are m..m+k-1.
    const std::size_t nodes = m + k;
    std::vector<std::vector<std::size_t>> adjacent(nodes);
    std::vector<double> potential(nodes);
    std::vector<char> seen(nodes);
    std::vector<std::size_t> parent_cell(nodes);
    std::vector<std::size_t> queue;
    queue.reserve(nodes);

    const auto rebuild = [&] {
        for (auto& adj : adjacent) adj.clear();
        for (std::size_t c = 0; c < basis.size(); ++c) {
            adjacent[basis[c].row].push_back(c);
            adjacent[m + basis[c].col].push_back(c);
        }
    };
    const auto other_end = [&](std::size_t cell, std::size_t node) {
        const BasicCell& b = basis[cell];
        return node < m ? m + b.col : b.row;
    };

    const std::size_t max_iterations = 50 * (m + k) * (m + k) + 1000;
    for (std::size_t iteration = 0;; ++iteration) {
        detail::require(iteration < max_iterations, ErrorCode::invalid_argument,
                        "transportation simplex failed to converge");
        rebuild();

        // u_i + v_j = c_ij on basic cells, u_0 = 0.
        std::fill(seen.begin(), seen.end(), 0);
        queue.clear();
        queue.push_back(0);
        seen[0] = 1;
        potential[0] = 0.0;
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t node = queue[head];
            for (std::size_t cell : adjacent[node]) {
                const std::size_t next = other_end(cell, node);
                if (seen[next]) continue;
                seen[next] = 1;
                const double c = cost[basis[cell].row * k + basis[cell].col];
                potential[next] = c - potential[node];
                queue.push_back(next);
            }
        }

        double best = -price_tol;
        std::size_t enter_row = npos;
        std::size_t enter_col = npos;
        for (std::size_t i = 0; i < m; ++i) {
            const double u = potential[i];
            const double* row_cost = cost.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) {
                const double reduced = row_cost[j] - u - potential[m + j];
                if (reduced < best) {
                    best = reduced;
                    enter_row = i;
                    enter_col = j;
                }
            }
        }
        if (enter_row == npos) break;

        // Tree path from the entering column back to the entering row.
        std::fill(seen.begin(), seen.end(), 0);
        queue.clear();
        const std::size_t start = m + enter_col;
        const std::size_t target = enter_row;
        queue.push_back(start);
        seen[start] = 1;
        for (std::size_t head = 0; head < queue.size() && !seen[target]; ++head) {
            const std::size_t node = queue[head];
            for (std::size_t cell : adjacent[node]) {
                const std::size_t next = other_end(cell, node);
                if (seen[next]) continue;
                seen[next] = 1;
                parent_cell[next] = cell;
                queue.push_back(next);
            }
        }
        // Walk target -> start; cells alternate +, -, ... counted from the
        // entering cell, so the cell touching the entering column is '-'.
        std::vector<std::size_t> path;
        for (std::size_t node = target; node != start;) {
            const std::size_t cell = parent_cell[node];
            path.push_back(cell);
            node = other_end(cell, node);
        }
        std::reverse(path.begin(), path.end()); // path[0] touches the entering column

        double theta = std::numeric_limits<double>::infinity();
        std::size_t leaving = npos;
        for (std::size_t p = 0; p < path.size(); p += 2) {
            if (basis[path[p]].mass < theta) {
                theta = basis[path[p]].mass;
                leaving = path[p];
            }
        }
        for (std::size_t p = 0; p < path.size(); ++p) {
            double& mass = basis[path[p]].mass;
            mass += (p % 2 == 0) ? -theta : theta;
            if (mass < 0.0) mass = 0.0;
        }
        basis[leaving] = {enter_row, enter_col, theta};
    }

    for (const BasicCell& b : basis) flow[b.row * k + b.col] += b.mass;
    return flow;
}

} // namespace detail

/// Exact W2 between two discrete measures of equal dimension, with an optimal plan.
inline TransportResult w2_discrete(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    detail::require(mu.size() > 0 && nu.size() > 0, ErrorCode::invalid_measure, "empty measure");
    detail::require(mu.dim() == nu.dim(), ErrorCode::dimension_mismatch, "measures differ in dimension");
    detail::require(mu.size() <= max_transport_atoms && nu.size() <= max_transport_atoms,
                    ErrorCode::size_cap_exceeded, "measures are limited to 512 atoms");
    double total_mu = 0.0;
    double total_nu = 0.0;
    for (const Atom& a : mu) total_mu += a.weight;
    for (const Atom& a : nu) total_nu += a.weight;
    detail::require(std::abs(total_mu - 1.0) <= transport_marginal_tolerance &&
                        std::abs(total_nu - 1.0) <= transport_marginal_tolerance,
                    ErrorCode::invalid_measure, "measure weights must sum to 1");

    const detail::MergedSupport src = detail::merge_support(mu);
    const detail::MergedSupport dst = detail::merge_support(nu);
    const std::size_t m = src.points.size();
    const std::size_t k = dst.points.size();

    std::vector<double> cost(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) cost[i * k + j] = squared_distance(src.points[i], dst.points[j]);

    // Rescale the demand side so both totals agree exactly enough for the
    // north-west corner start to terminate with both sides exhausted.
    std::vector<double> demand = dst.weights;
    const double ratio = total_mu / total_nu;
    for (double& w : demand) w *= ratio;

    const std::vector<double> flow = detail::solve_transportation(src.weights, demand, cost);

    // Spread merged flow back over the original atoms proportionally to weight.
    TransportResult result;
    result.plan = TransportPlan(mu.size(), nu.size());
    for (std::size_t a = 0; a < mu.size(); ++a) {
        if (src.origin[a] == detail::npos) continue;
        const double share_a = mu[a].weight / src.weights[src.origin[a]];
        for (std::size_t b = 0; b < nu.size(); ++b) {
            if (dst.origin[b] == detail::npos) continue;
            const double share_b = nu[b].weight / dst.weights[dst.origin[b]];
            result.plan(a, b) = flow[src.origin[a] * k + dst.origin[b]] * share_a * share_b;
        }
    }
    double total_cost = 0.0;
    for (std::size_t i = 0; i < m * k; ++i) total_cost += flow[i] * cost[i];
    result.cost = std::max(0.0, total_cost);
    result.distance = std::sqrt(result.cost);
    return result;
}

/// Closed-form W2 on the real line via the monotone (quantile) coupling.
inline double w2_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    detail::require(mu.dim() == 1 && nu.dim() == 1, ErrorCode::dimension_mismatch, "w2_1d requires dimension 1");
    const auto sorted = [](const DiscreteMeasure& m) {
        std::vector<std::pair<double, double>> v;
        v.reserve(m.size());
        for (const Atom& a : m)
            if (a.weight > 0.0) v.emplace_back(a.point[0], a.weight);
        std::sort(v.begin(), v.end());
        return v;
    };
    auto a = sorted(mu);
    auto b = sorted(nu);
    std::size_t i = 0;
    std::size_t j = 0;
    double remaining_a = a[0].second;
    double remaining_b = b[0].second;
    double cost = 0.0;
    while (i < a.size() && j < b.size()) {
        const double moved = std::min(remaining_a, remaining_b);
        const double diff = a[i].first - b[j].first;
        cost += moved * diff * diff;
        remaining_a -= moved;
        remaining_b -= moved;
        // moved equals one remainder exactly, so at least one side hits zero.
        const bool next_a = remaining_a <= 0.0;
        const bool next_b = remaining_b <= 0.0;
        if (next_a && ++i < a.size()) remaining_a = a[i].second;
        if (next_b && ++j < b.size()) remaining_b = b[j].second;
    }
    return std::sqrt(std::max(0.0, cost));
}

/// W2 between the empirical law of ys and the law of its projection onto the codebook.
inline double w2_to_quantized(std::span<const Point> ys, const Codebook& codebook) {
    return w2_discrete(empirical_measure(ys), quantized_law(ys, codebook)).distance;
}

/// Minimum of W2(empirical(ys), nu) over all weight vectors nu on a fixed support.
///
/// With the target weights free, only the source marginal constrains the
/// coupling, so the optimum sends every sample's mass to its nearest support
/// point.
inline double best_supported_w2(std::span<const Point> ys, std::span<const Point> support) {
    detail::require(!support.empty(), ErrorCode::empty_input, "empty support");
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    double cost = 0.0;
    for (const Point& y : ys) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const Point& s : support) nearest = std::min(nearest, squared_distance(y, s));
        cost += nearest;
    }
    return std::sqrt(cost / static_cast<double>(ys.size()));
}

} // namespace cclvq
