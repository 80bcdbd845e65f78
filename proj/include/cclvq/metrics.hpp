#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "cclvq/ensemble.hpp"
#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/synthetic.hpp"

namespace cclvq {

/// Shannon entropy of a probability vector divided by log n; 0 for n = 1.
inline double normalized_entropy(std::span<const double> probs) {
    if (probs.size() <= 1) return 0.0;
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return std::clamp(h / std::log(static_cast<double>(probs.size())), 0.0, 1.0);
}

/// Normalized entropy of the empirical expert usage frequencies.
inline double usage_entropy(std::span<const std::size_t> counts) {
    detail::require(!counts.empty(), ErrorCode::invalid_argument, "no experts");
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    detail::require(total > 0, ErrorCode::invalid_argument, "usage counts are all zero");
    std::vector<double> freq;
    freq.reserve(counts.size());
    for (std::size_t c : counts) freq.push_back(static_cast<double>(c) / static_cast<double>(total));
    return normalized_entropy(freq);
}

/// Mean over inputs of the normalized entropy of the classifier output.
inline double weight_entropy(const EnsembleState& state, std::span<const Sample> data) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples");
    double total = 0.0;
    for (const Sample& s : data) total += normalized_entropy(classify(state.classifier, s.x));
    return total / static_cast<double>(data.size());
}

/// Fraction of samples whose most probable class is their winning expert.
inline double classifier_accuracy(const EnsembleState& state, std::span<const Sample> data,
                                  std::span<const std::size_t> winners) {
    detail::require(data.size() == winners.size() && !data.empty(), ErrorCode::invalid_argument,
                    "winner labels and samples differ in count");
    std::size_t hits = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        const std::vector<double> p = classify(state.classifier, data[j].x);
        const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        hits += top == winners[j];
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Minimum-cost one-to-one matching for a square cost matrix by
/// enumeration (sizes here are at most a handful). Returns match[row] = col.
inline std::vector<std::size_t> min_cost_matching(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    detail::require(n >= 1 && n <= 9, ErrorCode::size_cap_exceeded, "matching limited to 9 items");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<std::size_t> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t r = 0; r < n; ++r) c += cost[r][perm[r]];
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// expert_of_mode[m] is the expert whose predictions over the grid are
/// closest in mean squared distance to mode m's curve.
inline std::vector<std::size_t> match_experts_to_modes(const EnsembleState& state, const MultimodalSpec& spec,
                                                       std::span<const double> grid) {
    detail::require(state.size() == spec.modes(), ErrorCode::invalid_argument,
                    "expert count differs from mode count");
    detail::require(!grid.empty(), ErrorCode::empty_input, "empty grid");
    std::vector<std::vector<double>> cost(spec.modes(), std::vector<double>(state.size(), 0.0));
    for (double x : grid) {
        const Input in{Features{x}};
        for (std::size_t i = 0; i < state.size(); ++i) {
            const double pred = forward(state.experts[i], in)[0];
            for (std::size_t m = 0; m < spec.modes(); ++m) {
                const double diff = pred - mode_curve(m, x);
                cost[m][i] += diff * diff / static_cast<double>(grid.size());
            }
        }
    }
    return min_cost_matching(cost);
}

/// Mean over the grid of the total-variation distance between the matched
/// classifier weights and the true mode probabilities.
inline double weight_error(const EnsembleState& state, const MultimodalSpec& spec, std::span<const double> grid) {
    const std::vector<std::size_t> expert_of_mode = match_experts_to_modes(state, spec, grid);
    double total = 0.0;
    for (double x : grid) {
        const std::vector<double> h = classify(state.classifier, Input{Features{x}});
        const std::vector<double> p = mode_probs(spec, x);
        double tv = 0.0;
        for (std::size_t m = 0; m < spec.modes(); ++m) tv += std::abs(h[expert_of_mode[m]] - p[m]);
        total += 0.5 * tv;
    }
    return total / static_cast<double>(grid.size());
}

/// Per-mode agreement between a trained ensemble and the generator labels.
struct ModeReport {
    std::vector<std::size_t> expert_of_mode;
    std::vector<double> purity; ///< fraction of mode m's samples won by its matched expert
    std::vector<double> rmse;   ///< matched expert vs noise-free mode curve, over mode m's samples
};

/// Matching on `grid`, then exact winners and errors on the labeled data.
inline ModeReport mode_report(const EnsembleState& state, const LabeledData& data, const MultimodalSpec& spec,
                              std::span<const double> grid) {
    detail::require(data.modes.size() == data.samples.size(), ErrorCode::invalid_argument,
                    "mode labels and samples differ in count");
    ModeReport r;
    r.expert_of_mode = match_experts_to_modes(state, spec, grid);
    const Assignment a = assign_exact(state, data.samples);
    std::vector<std::size_t> total(spec.modes(), 0);
    std::vector<std::size_t> hits(spec.modes(), 0);
    std::vector<double> sq(spec.modes(), 0.0);
    for (std::size_t j = 0; j < data.samples.size(); ++j) {
        const std::size_t m = data.modes[j];
        detail::require(m < spec.modes(), ErrorCode::invalid_argument, "mode label out of range");
        const std::size_t e = r.expert_of_mode[m];
        const double x = std::get<Features>(data.samples[j].x).at(0);
        const double diff = forward(state.experts[e], data.samples[j].x)[0] - mode_curve(m, x);
        ++total[m];
        hits[m] += a.winners[j] == e;
        sq[m] += diff * diff;
    }
    for (std::size_t m = 0; m < spec.modes(); ++m) {
        const double t = static_cast<double>(std::max<std::size_t>(total[m], 1));
        r.purity.push_back(static_cast<double>(hits[m]) / t);
        r.rmse.push_back(std::sqrt(sq[m] / t));
    }
    return r;
}

/// Evenly spaced points lo, ..., hi.
inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
    detail::require(count >= 2, ErrorCode::invalid_argument, "grid needs at least two points");
    std::vector<double> grid(count);
    for (std::size_t i = 0; i < count; ++i)
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return grid;
}

inline constexpr std::size_t brute_force_max_atoms = 8;
inline constexpr std::size_t brute_force_max_cells = 3;

/// Optimal n-point distortion of one finitely supported law, by enumerating
/// every map from atoms to n cells; each nonempty cell sits at its weighted
/// centroid, which is the optimal point for squared loss.
inline double optimal_distortion(std::span<const Atom> atoms, std::size_t n) {
    detail::require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
    detail::require(atoms.size() <= brute_force_max_atoms && n <= brute_force_max_cells,
                    ErrorCode::size_cap_exceeded, "exhaustive search limited to 8 atoms and 3 cells");
    if (atoms.empty()) return 0.0;
    const std::size_t k = atoms.size();
    const std::size_t d = atoms.front().point.dim();
    std::size_t combos = 1;
    for (std::size_t i = 0; i < k; ++i) combos *= n;

    std::vector<std::size_t> cell(k, 0);
    std::vector<double> mass(n);
    std::vector<std::vector<double>> centroid(n, std::vector<double>(d));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t code = 0; code < combos; ++code) {
        std::size_t rest = code;
        for (std::size_t a = 0; a < k; ++a) {
            cell[a] = rest % n;
            rest /= n;
        }
        std::fill(mass.begin(), mass.end(), 0.0);
        for (auto& c : centroid) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t a = 0; a < k; ++a) {
            mass[cell[a]] += atoms[a].weight;
            for (std::size_t q = 0; q < d; ++q) centroid[cell[a]][q] += atoms[a].weight * atoms[a].point[q];
        }
        for (std::size_t c = 0; c < n; ++c)
            if (mass[c] > 0.0)
                for (double& v : centroid[c]) v /= mass[c];
        double cost = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
            double sq = 0.0;
            for (std::size_t q = 0; q < d; ++q) {
                const double diff = atoms[a].point[q] - centroid[cell[a]][q];
                sq += diff * diff;
            }
            cost += atoms[a].weight * sq;
        }
        best = std::min(best, cost);
    }
    return best;
}

/// Optimal Delta_n over all maps f: labels -> (R^d)^n: per-label optimal
/// distortions averaged by label probability.
inline double brute_force_optimal_delta(const FiniteConditionalLaw& law, std::size_t n) {
    detail::require(law.label_probs.size() == law.atoms.size(), ErrorCode::invalid_argument,
                    "label probabilities and atom lists differ in length");
    double total = 0.0;
    for (std::size_t l = 0; l < law.labels(); ++l) {
        if (law.label_probs[l] <= 0.0) continue;
        total += law.label_probs[l] * optimal_distortion(law.atoms[l], n);
    }
    return total;
}

} // namespace cclvq
