#pragma once

// Oracle checks on seeded random instances. Every check reports its worst
// residual and, on failure, the offending instance as JSON so that it can be
// replayed with replay_check().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cclvq/clvq.hpp"
#include "cclvq/ensemble.hpp"
#include "cclvq/error.hpp"
#include "cclvq/experiments.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/io.hpp"
#include "cclvq/metrics.hpp"
#include "cclvq/rng.hpp"
#include "cclvq/synthetic.hpp"
#include "cclvq/wasserstein.hpp"
#include "json.hpp"

namespace cclvq {

// Tolerances of the oracle identities.
inline constexpr double w2_identity_tolerance = 1e-9;
inline constexpr double gradient_tolerance = 1e-5; ///< relative, central differences
inline constexpr double gradient_step = 1e-6;
inline constexpr double finite_w2_tolerance = 1e-9;
inline constexpr double finite_optimality_tolerance = 0.01; ///< relative to the brute-force optimum
inline constexpr double w2_1d_tolerance = 1e-9;

struct CheckResult {
    std::string name;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double max_residual = 0.0;
    double tolerance = 0.0;
    std::string message;          ///< first failure, human readable
    nlohmann::json failing;       ///< first failing instance, null if none

    [[nodiscard]] bool passed() const noexcept { return failures == 0; }
};

inline CheckResult make_result(std::string name, double tolerance) {
    CheckResult r;
    r.name = std::move(name);
    r.tolerance = tolerance;
    return r;
}

inline const std::vector<std::string>& check_names() {
    static const std::vector<std::string> names{"w2-identity", "w2-1d", "gradient", "finite-w2", "finite-optimality", "split"};
    return names;
}

namespace detail {

inline nlohmann::json points_to_json(std::span<const Point> ps) {
    nlohmann::json a = nlohmann::json::array();
    for (const Point& p : ps) a.push_back(p.values());
    return a;
}

inline std::vector<Point> points_from_json(const nlohmann::json& a) {
    std::vector<Point> ps;
    for (const auto& v : a) ps.emplace_back(v.get<std::vector<double>>());
    return ps;
}

inline nlohmann::json samples_to_json(std::span<const Sample> data) {
    nlohmann::json a = nlohmann::json::array();
    for (const Sample& s : data) {
        nlohmann::json x;
        if (const Label* l = std::get_if<Label>(&s.x)) x = {{"label", l->value}};
        else x = {{"features", std::get<Features>(s.x)}};
        a.push_back({{"x", x}, {"y", s.y.values()}});
    }
    return a;
}

inline std::vector<Sample> samples_from_json(const nlohmann::json& a) {
    std::vector<Sample> data;
    for (const auto& s : a) {
        const auto& x = s.at("x");
        Input in = x.contains("label") ? Input{Label{x.at("label").get<std::size_t>()}}
                                       : Input{x.at("features").get<Features>()};
        data.push_back({std::move(in), Point(s.at("y").get<std::vector<double>>())});
    }
    return data;
}

inline nlohmann::json law_to_json(const FiniteConditionalLaw& law) {
    nlohmann::json atoms = nlohmann::json::array();
    for (const auto& list : law.atoms) {
        nlohmann::json l = nlohmann::json::array();
        for (const Atom& a : list) l.push_back({{"point", a.point.values()}, {"weight", a.weight}});
        atoms.push_back(l);
    }
    return {{"label_probs", law.label_probs}, {"atoms", atoms}};
}

inline FiniteConditionalLaw law_from_json(const nlohmann::json& j) {
    FiniteConditionalLaw law;
    law.label_probs = j.at("label_probs").get<std::vector<double>>();
    for (const auto& l : j.at("atoms")) {
        std::vector<Atom> list;
        for (const auto& a : l) list.push_back({Point(a.at("point").get<std::vector<double>>()), a.at("weight").get<double>()});
        law.atoms.push_back(std::move(list));
    }
    return law;
}

inline std::vector<Point> random_points(std::size_t count, std::size_t d, Rng& rng, bool on_grid) {
    std::vector<Point> ps;
    for (std::size_t j = 0; j < count; ++j) {
        std::vector<double> c(d);
        // Grid coordinates produce repeated atoms and exact ties in the transport problem.
        for (double& v : c) v = on_grid ? std::round(rng.uniform(-1.0, 1.0) * 4.0) / 4.0 : rng.uniform(-1.0, 1.0);
        ps.emplace_back(std::move(c));
    }
    return ps;
}

/// Residual of one instance; updates the aggregate.
inline void record(CheckResult& r, double residual, const nlohmann::json& instance, const std::string& what) {
    ++r.trials;
    if (!std::isfinite(residual)) residual = std::numeric_limits<double>::infinity();
    r.max_residual = std::max(r.max_residual, residual);
    if (residual > r.tolerance) {
        if (r.failures == 0) {
            r.failing = instance;
            r.message = what;
        }
        ++r.failures;
    }
}

} // namespace detail

// ---- W2 identity: W2^2(empirical, quantized) = D_n = best-supported W2^2.

inline double w2_identity_residual(std::span<const Point> ys, const Codebook& cb) {
    const double dist = distortion(ys, cb);
    const TransportResult t = w2_discrete(empirical_measure(ys), quantized_law(ys, cb));
    const double best = best_supported_w2(ys, cb.points());
    return std::max(std::abs(t.cost - dist), std::abs(best - std::sqrt(dist)));
}

struct QuantizerInstance {
    std::vector<Point> ys;
    std::vector<Point> codebook;

    [[nodiscard]] nlohmann::json to_json(const std::string& check) const {
        return {{"check", check}, {"ys", detail::points_to_json(ys)}, {"codebook", detail::points_to_json(codebook)}};
    }
    static QuantizerInstance from_json(const nlohmann::json& j) {
        return {detail::points_from_json(j.at("ys")), detail::points_from_json(j.at("codebook"))};
    }
};

/// N <= 50 samples, d <= 3, n <= 5; a third of the instances live on a
/// coarse grid so that atoms repeat.
inline QuantizerInstance random_quantizer_instance(Rng& rng) {
    const std::size_t d = 1 + rng.index(3);
    const std::size_t n_samples = 1 + rng.index(50);
    const std::size_t n = 1 + rng.index(5);
    const bool grid = rng.uniform() < 1.0 / 3.0;
    return {detail::random_points(n_samples, d, rng, grid), detail::random_points(n, d, rng, grid)};
}

inline CheckResult check_w2_identity(std::size_t trials, std::uint64_t seed) {
    CheckResult r = make_result("w2-identity", w2_identity_tolerance);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const QuantizerInstance inst = random_quantizer_instance(rng);
        const double res = w2_identity_residual(inst.ys, Codebook(inst.codebook));
        detail::record(r, res, inst.to_json(r.name), "W2 identity residual " + std::to_string(res));
    }
    return r;
}

// ---- One-dimensional cross-check of the transport solver.

inline double w2_1d_residual(std::span<const Point> a, std::span<const Point> b) {
    const DiscreteMeasure mu = empirical_measure(a);
    const DiscreteMeasure nu = empirical_measure(b);
    return std::abs(w2_discrete(mu, nu).distance - w2_1d(mu, nu));
}

inline CheckResult check_w2_1d(std::size_t trials, std::uint64_t seed) {
    CheckResult r = make_result("w2-1d", w2_1d_tolerance);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const bool grid = rng.uniform() < 0.5;
        const std::vector<Point> a = detail::random_points(1 + rng.index(40), 1, rng, grid);
        const std::vector<Point> b = detail::random_points(1 + rng.index(40), 1, rng, grid);
        const double res = w2_1d_residual(a, b);
        const nlohmann::json inst = {{"check", r.name}, {"ys", detail::points_to_json(a)}, {"codebook", detail::points_to_json(b)}};
        detail::record(r, res, inst, "1D W2 mismatch " + std::to_string(res));
    }
    return r;
}

// ---- Gradient of D_n against central finite differences.

/// Max-norm error of grad_distortion against central differences,
/// relative to the max-norm of the gradient (floored at 1e-6).
inline double gradient_residual(std::span<const Point> ys, const Codebook& cb) {
    const std::vector<Point> g = grad_distortion(ys, cb);
    double err = 0.0;
    double scale = 0.0;
    std::vector<Point> pts = cb.points();
    for (std::size_t i = 0; i < cb.size(); ++i) {
        for (std::size_t k = 0; k < cb.dim(); ++k) {
            std::vector<double> up = pts[i].values();
            std::vector<double> down = up;
            up[k] += gradient_step;
            down[k] -= gradient_step;
            std::vector<Point> p_up = pts;
            std::vector<Point> p_down = pts;
            p_up[i] = Point(up);
            p_down[i] = Point(down);
            const double fd = (distortion(ys, Codebook(p_up)) - distortion(ys, Codebook(p_down))) / (2.0 * gradient_step);
            err = std::max(err, std::abs(fd - g[i][k]));
            scale = std::max(scale, std::abs(g[i][k]));
        }
    }
    return err / std::max(scale, 1e-6);
}

/// Smallest gap between the nearest and second-nearest squared distance.
inline double voronoi_margin(std::span<const Point> ys, const Codebook& cb) {
    double margin = std::numeric_limits<double>::infinity();
    if (cb.size() < 2) return margin;
    for (const Point& y : ys) {
        double a = std::numeric_limits<double>::infinity();
        double b = a;
        for (const Point& c : cb.points()) {
            const double dist = squared_distance(y, c);
            if (dist < a) {
                b = a;
                a = dist;
            } else if (dist < b) {
                b = dist;
            }
        }
        margin = std::min(margin, b - a);
    }
    return margin;
}

/// Tie-free instance whose Voronoi margin keeps every finite-difference
/// probe inside the same cells.
inline QuantizerInstance random_gradient_instance(Rng& rng) {
    for (;;) {
        const std::size_t d = 1 + rng.index(3);
        QuantizerInstance inst{detail::random_points(1 + rng.index(50), d, rng, false),
                               detail::random_points(1 + rng.index(5), d, rng, false)};
        if (voronoi_margin(inst.ys, Codebook(inst.codebook)) > 1e-3) return inst;
    }
}

/// With inject_tie the last trial uses a codebook with a repeated point,
/// which violates the no-tie hypothesis and must be reported.
inline CheckResult check_gradient(std::size_t trials, std::uint64_t seed, bool inject_tie = false) {
    CheckResult r = make_result("gradient", gradient_tolerance);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        QuantizerInstance inst = random_gradient_instance(rng);
        if (inject_tie && t + 1 == trials) inst.codebook.push_back(inst.codebook.front());
        try {
            const double res = gradient_residual(inst.ys, Codebook(inst.codebook));
            detail::record(r, res, inst.to_json(r.name), "relative gradient error " + std::to_string(res));
        } catch (const TieError& e) {
            detail::record(r, std::numeric_limits<double>::infinity(), inst.to_json(r.name), e.what());
        }
    }
    return r;
}

// ---- Finite E: per-label distortion = per-label W2^2 and
// the frequency-weighted sum is Delta_n.

struct FiniteInstance {
    std::size_t labels = 1;
    std::vector<Sample> data;
    EnsembleState state;

    [[nodiscard]] nlohmann::json to_json(const std::string& check) const {
        return {{"check", check}, {"labels", labels}, {"data", detail::samples_to_json(data)},
                {"model", model_to_json(state)}};
    }
    static FiniteInstance from_json(const nlohmann::json& j) {
        return {j.at("labels").get<std::size_t>(), detail::samples_from_json(j.at("data")),
                model_from_json(j.at("model"))};
    }
};

inline FiniteInstance random_finite_instance(Rng& rng) {
    FiniteInstance inst;
    inst.labels = 1 + rng.index(4);
    const std::size_t d = 1 + rng.index(3);
    const FiniteConditionalLaw law = random_finite_law(inst.labels, 8, d, rng);
    inst.data = gen_finite_conditional(law, 20 + rng.index(200), rng());
    const ModelShape shape{ModelKind::lookup, inst.labels, d, default_hidden_width};
    inst.state = make_ensemble(shape, shape, 1 + rng.index(5), rng);
    for (ExpertFunction& f : inst.state.experts)
        for (double& p : f.params()) p = rng.uniform(-5.0, 5.0);
    return inst;
}

inline double finite_w2_residual(const FiniteInstance& inst) {
    const Assignment a = assign_exact(inst.state, inst.data);
    std::vector<double> loss(inst.labels, 0.0);
    std::vector<std::size_t> count(inst.labels, 0);
    std::vector<std::vector<Point>> ys(inst.labels);
    for (std::size_t j = 0; j < inst.data.size(); ++j) {
        const std::size_t l = std::get<Label>(inst.data[j].x).value;
        loss[l] += a.losses[j];
        ++count[l];
        ys[l].push_back(inst.data[j].y);
    }
    double residual = 0.0;
    double weighted = 0.0;
    for (std::size_t l = 0; l < inst.labels; ++l) {
        if (count[l] == 0) continue;
        const double per_label = loss[l] / static_cast<double>(count[l]);
        const DiscreteMeasure q = conditional_quantized_law_exact(inst.state, Label{l}, inst.data);
        const double w2sq = w2_discrete(empirical_measure(ys[l]), q).cost;
        residual = std::max(residual, std::abs(per_label - w2sq));
        weighted += static_cast<double>(count[l]) / static_cast<double>(inst.data.size()) * per_label;
    }
    return std::max(residual, std::abs(weighted - conditional_distortion(inst.state, inst.data)));
}

inline CheckResult check_finite_w2(std::size_t trials, std::uint64_t seed) {
    CheckResult r = make_result("finite-w2", finite_w2_tolerance);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const FiniteInstance inst = random_finite_instance(rng);
        const double res = finite_w2_residual(inst);
        detail::record(r, res, inst.to_json(r.name), "conditional W2 identity residual " + std::to_string(res));
    }
    return r;
}

// ---- Finite E, optimality: trained lookup experts reach the brute-force
// optimum of Delta_n.

struct OptimalityInstance {
    FiniteConditionalLaw law;
    std::size_t n = 1;
    std::size_t samples = 1000;

    [[nodiscard]] nlohmann::json to_json(const std::string& check) const {
        return {{"check", check}, {"law", detail::law_to_json(law)}, {"n", n}, {"samples", samples}};
    }
    static OptimalityInstance from_json(const nlohmann::json& j) {
        return {detail::law_from_json(j.at("law")), j.at("n").get<std::size_t>(), j.at("samples").get<std::size_t>()};
    }
};

/// Up to 4 labels, 8 atoms per label, d <= 2, n <= 3.
inline OptimalityInstance random_optimality_instance(Rng& rng) {
    OptimalityInstance inst;
    const std::size_t labels = 1 + rng.index(4);
    const std::size_t d = 1 + rng.index(2);
    inst.n = 1 + rng.index(3);
    inst.law = random_finite_law(labels, 8, d, rng);
    return inst;
}

struct OptimalityOutcome {
    double trained = 0.0;
    double optimum = 0.0;
    double relative_gap = 0.0;
};

/// The dataset enumerates the law exactly; the optimum is computed on its
/// empirical law, which is the law CCLVQ sees.
inline OptimalityOutcome finite_optimality_outcome(const OptimalityInstance& inst) {
    const std::vector<Sample> data = gen_finite_conditional(inst.law, inst.samples, 0, true);
    const std::size_t labels = inst.law.labels();
    const std::size_t d = inst.law.atoms.front().front().point.dim();
    const double optimum = brute_force_optimal_delta(empirical_conditional_law(data, labels), inst.n);
    const EnsembleState state = train_lookup(data, labels, d, inst.n);
    const double trained = conditional_distortion(state, data);
    const double gap = optimum > 0.0 ? (trained - optimum) / optimum : (trained > 1e-12 ? trained : 0.0);
    return {trained, optimum, gap};
}

inline CheckResult check_finite_optimality(std::size_t trials, std::uint64_t seed) {
    CheckResult r = make_result("finite-optimality", finite_optimality_tolerance);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const OptimalityInstance inst = random_optimality_instance(rng);
        const OptimalityOutcome o = finite_optimality_outcome(inst);
        detail::record(r, o.relative_gap, inst.to_json(r.name),
                       "trained Delta " + std::to_string(o.trained) + " vs optimum " + std::to_string(o.optimum));
    }
    return r;
}

// ---- Split with epsilon = 0 changes neither Delta nor any assignment.

struct SplitInstance {
    std::vector<Sample> data;
    EnsembleState state;

    [[nodiscard]] nlohmann::json to_json(const std::string& check) const {
        return {{"check", check}, {"data", detail::samples_to_json(data)}, {"model", model_to_json(state)}};
    }
    static SplitInstance from_json(const nlohmann::json& j) {
        return {detail::samples_from_json(j.at("data")), model_from_json(j.at("model"))};
    }
};

inline SplitInstance random_split_instance(Rng& rng) {
    SplitInstance inst;
    const std::size_t d = 1 + rng.index(3);
    const std::size_t n = 1 + rng.index(4);
    const std::size_t kind = rng.index(3);
    ModelShape shape;
    if (kind == 0) {
        const std::size_t labels = 1 + rng.index(5);
        shape = {ModelKind::lookup, labels, d, default_hidden_width};
        for (std::size_t j = 0, m = 10 + rng.index(60); j < m; ++j) {
            std::vector<double> y(d);
            for (double& v : y) v = rng.normal();
            inst.data.push_back({Label{rng.index(labels)}, Point(std::move(y))});
        }
    } else {
        const std::size_t p = 1 + rng.index(3);
        shape = {kind == 1 ? ModelKind::affine : ModelKind::perceptron, p, d, 1 + rng.index(8)};
        for (std::size_t j = 0, m = 10 + rng.index(60); j < m; ++j) {
            Features x(p);
            for (double& v : x) v = rng.normal();
            std::vector<double> y(d);
            for (double& v : y) v = rng.normal();
            inst.data.push_back({std::move(x), Point(std::move(y))});
        }
    }
    inst.state = make_ensemble(shape, classifier_shape_like(shape, n), n, rng);
    return inst;
}

/// Number of changed assignments plus 1 if Delta differs in any bit.
inline double split_residual(const SplitInstance& inst, std::uint64_t seed) {
    Rng rng(seed);
    const Assignment before = assign_exact(inst.state, inst.data);
    const double delta_before = conditional_distortion(inst.state, inst.data);
    const EnsembleState after = split_expert(inst.state, inst.data, 0.0, rng);
    const Assignment moved = assign_exact(after, inst.data);
    double changed = 0.0;
    for (std::size_t j = 0; j < before.winners.size(); ++j) changed += before.winners[j] != moved.winners[j];
    if (conditional_distortion(after, inst.data) != delta_before) changed += 1.0;
    return changed;
}

inline CheckResult check_split(std::size_t trials, std::uint64_t seed) {
    CheckResult r = make_result("split", 0.0);
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        const SplitInstance inst = random_split_instance(rng);
        const double res = split_residual(inst, seed + t);
        detail::record(r, res, inst.to_json(r.name), "epsilon = 0 split changed " + std::to_string(res) + " outcomes");
    }
    return r;
}

/// Default trial counts per check.
inline std::size_t default_trials(const std::string& check) {
    if (check == "w2-identity") return 200;
    if (check == "gradient") return 100;
    if (check == "finite-w2") return 50;
    if (check == "finite-optimality") return 20;
    return 20;
}

inline CheckResult run_check(const std::string& name, std::size_t trials, std::uint64_t seed, bool inject_tie = false) {
    if (name == "w2-identity") return check_w2_identity(trials, seed);
    if (name == "w2-1d") return check_w2_1d(trials, seed);
    if (name == "gradient") return check_gradient(trials, seed, inject_tie);
    if (name == "finite-w2") return check_finite_w2(trials, seed);
    if (name == "finite-optimality") return check_finite_optimality(trials, seed);
    if (name == "split") return check_split(trials, seed);
    throw Error(ErrorCode::invalid_argument, "unknown check '" + name + "'");
}

/// Re-runs one serialized instance.
inline CheckResult replay_check(const nlohmann::json& instance) {
    const std::string name = instance.at("check").get<std::string>();
    CheckResult r = make_result(name, 0.0);
    if (name == "w2-identity") {
        r.tolerance = w2_identity_tolerance;
        const QuantizerInstance q = QuantizerInstance::from_json(instance);
        detail::record(r, w2_identity_residual(q.ys, Codebook(q.codebook)), instance, "W2 identity residual");
    } else if (name == "w2-1d") {
        r.tolerance = w2_1d_tolerance;
        const QuantizerInstance q = QuantizerInstance::from_json(instance);
        detail::record(r, w2_1d_residual(q.ys, q.codebook), instance, "1D W2 mismatch");
    } else if (name == "gradient") {
        r.tolerance = gradient_tolerance;
        const QuantizerInstance q = QuantizerInstance::from_json(instance);
        try {
            detail::record(r, gradient_residual(q.ys, Codebook(q.codebook)), instance, "relative gradient error");
        } catch (const TieError& e) {
            detail::record(r, std::numeric_limits<double>::infinity(), instance, e.what());
        }
    } else if (name == "finite-w2") {
        r.tolerance = finite_w2_tolerance;
        detail::record(r, finite_w2_residual(FiniteInstance::from_json(instance)), instance, "conditional W2 identity");
    } else if (name == "finite-optimality") {
        r.tolerance = finite_optimality_tolerance;
        const OptimalityOutcome o = finite_optimality_outcome(OptimalityInstance::from_json(instance));
        detail::record(r, o.relative_gap, instance, "trained Delta above the optimum");
    } else if (name == "split") {
        r.tolerance = 0.0;
        detail::record(r, split_residual(SplitInstance::from_json(instance), 0), instance, "epsilon = 0 split changed outcomes");
    } else {
        throw Error(ErrorCode::invalid_argument, "unknown check '" + name + "'");
    }
    return r;
}

} // namespace cclvq
