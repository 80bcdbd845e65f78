#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/rng.hpp"

namespace cclvq {

enum class Schedule { constant, inverse_decay };

enum class ClvqInit { random_distinct_samples, provided };

struct ClvqConfig {
    std::size_t n = 2;
    double gamma0 = 0.5;
    Schedule schedule = Schedule::inverse_decay;
    double horizon = 0.0; ///< tau of the inverse decay; 0 means steps / 10
    std::size_t steps = 10000;
    std::uint64_t seed = 0;
    ClvqInit init = ClvqInit::random_distinct_samples;
    std::optional<Codebook> initial;

    void validate() const {
        detail::require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
        detail::require(gamma0 > 0.0 && gamma0 <= 1.0, ErrorCode::invalid_argument, "gamma0 must lie in (0, 1]");
        detail::require(steps >= 1, ErrorCode::invalid_argument, "steps must be >= 1");
        detail::require(horizon >= 0.0, ErrorCode::invalid_argument, "horizon must be >= 0");
        if (init == ClvqInit::provided) {
            detail::require(initial.has_value(), ErrorCode::invalid_argument, "provided init without a codebook");
            detail::require(initial->size() == n, ErrorCode::invalid_argument, "initial codebook size differs from n");
        }
    }

    /// Learning rate at step t (0-based).
    [[nodiscard]] double gamma(std::size_t t) const {
        if (schedule == Schedule::constant) return gamma0;
        const double tau = horizon > 0.0 ? horizon : std::max(1.0, static_cast<double>(steps) / 10.0);
        return gamma0 / (1.0 + static_cast<double>(t) / tau);
    }
};

/// One CLVQ move: only the winner steps toward y, by a fraction gamma.
inline Codebook clvq_step(Codebook codebook, const Point& y, double gamma) {
    detail::require(gamma > 0.0 && gamma <= 1.0, ErrorCode::invalid_argument, "gamma must lie in (0, 1]");
    const std::size_t winner = nearest_index(y, codebook);
    Point& a = codebook[winner];
    for (std::size_t k = 0; k < a.dim(); ++k) a[k] += gamma * (y[k] - a[k]);
    return codebook;
}

/// Full-batch averaged CLVQ move: each point with a nonempty cell steps a
/// fraction gamma toward its cell centroid. gamma = 1 is a Lloyd step.
inline Codebook clvq_batch_step(Codebook codebook, std::span<const Point> ys, double gamma) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    const std::size_t n = codebook.size();
    const std::size_t d = codebook.dim();
    std::vector<std::vector<double>> displacement(n, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(n, 0);
    for (const Point& y : ys) {
        const std::size_t i = nearest_index(y, codebook);
        for (std::size_t k = 0; k < d; ++k) displacement[i][k] += codebook[i][k] - y[k];
        ++count[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] == 0) continue;
        for (std::size_t k = 0; k < d; ++k)
            codebook[i][k] -= gamma * displacement[i][k] / static_cast<double>(count[i]);
    }
    return codebook;
}

/// n distinct samples drawn without replacement.
inline Codebook init_distinct_samples(std::span<const Point> ys, std::size_t n, Rng& rng) {
    std::set<Point> distinct(ys.begin(), ys.end());
    if (distinct.size() < n)
        throw Error(ErrorCode::invalid_argument,
                    "need " + std::to_string(n) + " distinct samples, found " + std::to_string(distinct.size()));
    std::vector<Point> pool(distinct.begin(), distinct.end());
    std::vector<Point> chosen;
    chosen.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[pick]);
        chosen.push_back(pool[i]);
    }
    return Codebook(std::move(chosen));
}

struct ClvqResult {
    Codebook codebook;
    std::vector<double> distortion_trace; ///< full-sample distortion after every pass of |ys| steps, and at the end
};

inline ClvqResult train_clvq(std::span<const Point> ys, const ClvqConfig& config) {
    config.validate();
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    Rng rng(config.seed);
    Codebook codebook =
        config.init == ClvqInit::provided ? *config.initial : init_distinct_samples(ys, config.n, rng);
    detail::require(codebook.dim() == ys.front().dim(), ErrorCode::dimension_mismatch,
                    "initial codebook and samples differ in dimension");

    ClvqResult result;
    const std::size_t epoch = ys.size();
    for (std::size_t t = 0; t < config.steps; ++t) {
        const Point& y = ys[rng.index(ys.size())];
        codebook = clvq_step(std::move(codebook), y, config.gamma(t));
        if ((t + 1) % epoch == 0) result.distortion_trace.push_back(distortion(ys, codebook));
    }
    if (config.steps % epoch != 0) result.distortion_trace.push_back(distortion(ys, codebook));
    result.codebook = std::move(codebook);
    return result;
}

inline constexpr double tie_tolerance = 1e-12;

/// Empirical gradient of D_n: block i is 2/N * sum over cell i of (alpha_i - y).
/// Throws TieError when a sample is equidistant from two codebook points,
/// where D_n need not be differentiable.
inline std::vector<Point> grad_distortion(std::span<const Point> ys, const Codebook& codebook) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    const std::size_t n = codebook.size();
    const std::size_t d = codebook.dim();
    std::vector<std::vector<double>> grad(n, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < ys.size(); ++j) {
        const Point& y = ys[j];
        detail::check_codebook_dim(y, codebook);
        std::size_t best = 0;
        std::size_t second = n;
        double best_d = squared_distance(y, codebook[0]);
        double second_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < n; ++i) {
            const double di = squared_distance(y, codebook[i]);
            if (di < best_d) {
                second = best;
                second_d = best_d;
                best = i;
                best_d = di;
            } else if (di < second_d) {
                second = i;
                second_d = di;
            }
        }
        if (second < n && second_d - best_d <= tie_tolerance * std::max(1.0, best_d))
            throw TieError(j, std::min(best, second), std::max(best, second),
                           "sample " + std::to_string(j) + " is equidistant from codebook points " +
                               std::to_string(std::min(best, second)) + " and " +
                               std::to_string(std::max(best, second)) + " (no-tie hypothesis fails)");
        for (std::size_t k = 0; k < d; ++k) grad[best][k] += codebook[best][k] - y[k];
    }
    const double scale = 2.0 / static_cast<double>(ys.size());
    std::vector<Point> out;
    out.reserve(n);
    for (auto& g : grad) {
        for (double& v : g) v *= scale;
        out.emplace_back(std::move(g));
    }
    return out;
}

enum class DeadUnitPolicy { reseed, keep };

/// Assignment-then-centroid update. Empty cells are either kept in place or
/// moved onto the samples with the largest current quantization error.
inline Codebook lloyd_step(std::span<const Point> ys, Codebook codebook,
                           DeadUnitPolicy policy = DeadUnitPolicy::reseed) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    const std::size_t n = codebook.size();
    const std::size_t d = codebook.dim();
    std::vector<std::vector<double>> sum(n, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(n, 0);
    std::vector<double> error(ys.size());
    for (std::size_t j = 0; j < ys.size(); ++j) {
        const std::size_t i = nearest_index(ys[j], codebook);
        error[j] = squared_distance(ys[j], codebook[i]);
        for (std::size_t k = 0; k < d; ++k) sum[i][k] += ys[j][k];
        ++count[i];
    }

    std::vector<std::size_t> worst;
    if (policy == DeadUnitPolicy::reseed) {
        worst.resize(ys.size());
        std::iota(worst.begin(), worst.end(), std::size_t{0});
        std::stable_sort(worst.begin(), worst.end(),
                         [&](std::size_t a, std::size_t b) { return error[a] > error[b]; });
    }
    std::size_t next_worst = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] > 0) {
            for (std::size_t k = 0; k < d; ++k) codebook[i][k] = sum[i][k] / static_cast<double>(count[i]);
        } else if (policy == DeadUnitPolicy::reseed && next_worst < worst.size()) {
            codebook[i] = ys[worst[next_worst++]];
        }
    }
    return codebook;
}

/// Index of the cell with the largest distortion contribution; ties go to
/// the larger cell, then to the smaller index.
inline std::size_t worst_cell(const std::vector<double>& cell_distortion, const std::vector<std::size_t>& cell_count) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cell_distortion.size(); ++i) {
        if (cell_distortion[i] > cell_distortion[best] ||
            (cell_distortion[i] == cell_distortion[best] && cell_count[i] > cell_count[best]))
            best = i;
    }
    return best;
}

/// LBG-style growth: append a perturbed copy of the worst cell's point.
/// With epsilon = 0 the copy only ever ties with its original, which keeps
/// the smaller index, so every assignment and the distortion are unchanged.
inline Codebook split_codebook(const Codebook& codebook, std::span<const Point> ys, double epsilon, Rng& rng) {
    detail::require(epsilon >= 0.0, ErrorCode::invalid_argument, "epsilon must be >= 0");
    const CellStats stats = cell_stats(ys, codebook);
    const std::size_t chosen = worst_cell(stats.distortion, stats.count);
    Point copy = codebook[chosen];
    if (epsilon > 0.0)
        for (std::size_t k = 0; k < copy.dim(); ++k) copy[k] += epsilon * rng.normal();
    std::vector<Point> points = codebook.points();
    points.push_back(std::move(copy));
    return Codebook(std::move(points));
}

} // namespace cclvq
