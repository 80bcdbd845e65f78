#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/rng.hpp"

namespace cclvq {

/// X ~ N(0, 1), I | X ~ Cat(softmax(a X + b)), Y = sin(2 I X) + 10 I + eps,
/// with I counted from 1 and eps ~ N(0, sigma^2).
struct MultimodalSpec {
    std::vector<double> a{-1.0, 0.0, 1.0};
    std::vector<double> b{0.0, 0.0, 0.0};
    double sigma = 0.1;
    std::size_t samples = 8000;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t modes() const noexcept { return a.size(); }

    void validate() const {
        detail::require(!a.empty(), ErrorCode::invalid_argument, "need at least one mode");
        detail::require(a.size() == b.size(), ErrorCode::invalid_argument, "a and b differ in length");
        detail::require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "sigma must be >= 0");
        detail::require(samples >= 1, ErrorCode::invalid_argument, "need at least one sample");
    }
};

/// Ground-truth mode probabilities p(x) (0-based mode index).
inline std::vector<double> mode_probs(const MultimodalSpec& spec, double x) {
    std::vector<double> logits(spec.modes());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        logits[i] = spec.a[i] * x + spec.b[i];
        top = std::max(top, logits[i]);
    }
    double total = 0.0;
    for (double& z : logits) {
        z = std::exp(z - top);
        total += z;
    }
    for (double& z : logits) z /= total;
    return logits;
}

/// Noise-free curve of mode `mode` (0-based): sin(2 (mode+1) x) + 10 (mode+1).
inline double mode_curve(std::size_t mode, double x) {
    const double i = static_cast<double>(mode + 1);
    return std::sin(2.0 * i * x) + 10.0 * i;
}

struct LabeledData {
    std::vector<Sample> samples;
    std::vector<std::size_t> modes; ///< hidden generator labels, oracle use only
};

inline LabeledData gen_multimodal(const MultimodalSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    LabeledData out;
    out.samples.reserve(spec.samples);
    out.modes.reserve(spec.samples);
    for (std::size_t j = 0; j < spec.samples; ++j) {
        const double x = rng.normal();
        const std::size_t mode = rng.categorical(mode_probs(spec, x));
        const double eps = spec.sigma * rng.normal();
        out.samples.push_back({Features{x}, Point{mode_curve(mode, x) + eps}});
        out.modes.push_back(mode);
    }
    return out;
}

/// Y = X + offset or X - offset with probability 1/2 each. The returned
/// modes are 0 for +offset and 1 for -offset.
inline LabeledData gen_two_dirac_labeled(std::size_t samples, double offset = 100.0, std::uint64_t seed = 0) {
    detail::require(samples >= 1, ErrorCode::invalid_argument, "need at least one sample");
    Rng rng(seed);
    LabeledData out;
    out.samples.reserve(samples);
    out.modes.reserve(samples);
    for (std::size_t j = 0; j < samples; ++j) {
        const double x = rng.normal();
        const bool up = rng.uniform() < 0.5;
        out.samples.push_back({Features{x}, Point{up ? x + offset : x - offset}});
        out.modes.push_back(up ? 0 : 1);
    }
    return out;
}

inline std::vector<Sample> gen_two_dirac(std::size_t samples, double offset = 100.0, std::uint64_t seed = 0) {
    return gen_two_dirac_labeled(samples, offset, seed).samples;
}

/// Conditional law over a finite input space {0, ..., k-1}: a label
/// distribution and one finitely supported Y-law per label.
struct FiniteConditionalLaw {
    std::vector<double> label_probs;
    std::vector<std::vector<Atom>> atoms; ///< per label; weights sum to 1

    [[nodiscard]] std::size_t labels() const noexcept { return atoms.size(); }

    void validate() const {
        detail::require(!atoms.empty(), ErrorCode::invalid_argument, "need at least one label");
        detail::require(label_probs.size() == atoms.size(), ErrorCode::invalid_argument,
                        "label probabilities and atom lists differ in length");
        double total = 0.0;
        for (double p : label_probs) {
            detail::require(p >= 0.0 && std::isfinite(p), ErrorCode::invalid_measure, "bad label probability");
            total += p;
        }
        detail::require(std::abs(total - 1.0) <= 1e-9, ErrorCode::invalid_measure, "label probabilities must sum to 1");
        for (const auto& list : atoms) (void)DiscreteMeasure(list, 1e-9);
    }

    /// Uniform label distribution over the given per-label laws.
    static FiniteConditionalLaw uniform_labels(std::vector<std::vector<Atom>> atoms) {
        FiniteConditionalLaw law;
        law.label_probs.assign(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
        law.atoms = std::move(atoms);
        return law;
    }
};

/// Random finite conditional law: `labels` labels, between 1 and max_atoms
/// atoms per label with coordinates uniform in [-scale, scale]^d, and
/// label and atom weights proportional to U(0.1, 1) draws.
inline FiniteConditionalLaw random_finite_law(std::size_t labels, std::size_t max_atoms, std::size_t d, Rng& rng,
                                              double scale = 5.0) {
    detail::require(labels >= 1 && max_atoms >= 1 && d >= 1, ErrorCode::invalid_argument,
                    "labels, atoms and dimension must be >= 1");
    const auto normalized = [&](std::size_t k) {
        std::vector<double> w(k);
        double total = 0.0;
        for (double& v : w) total += (v = rng.uniform(0.1, 1.0));
        for (double& v : w) v /= total;
        return w;
    };
    FiniteConditionalLaw law;
    law.label_probs = normalized(labels);
    for (std::size_t l = 0; l < labels; ++l) {
        const std::size_t k = 1 + rng.index(max_atoms);
        const std::vector<double> w = normalized(k);
        std::vector<Atom> atoms;
        for (std::size_t a = 0; a < k; ++a) {
            std::vector<double> c(d);
            for (double& v : c) v = rng.uniform(-scale, scale);
            atoms.push_back({Point(std::move(c)), w[a]});
        }
        law.atoms.push_back(std::move(atoms));
    }
    return law;
}

/// Largest-remainder apportionment of `total` units over weights.
inline std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    double sum = 0.0;
    for (double w : weights) sum += w;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / sum;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& l, const auto& r) { return l.first > r.first; });
    for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
    return counts;
}

/// Samples with X a label drawn from label_probs and Y from that label's
/// atoms. With exact = true no sampling happens: the law is enumerated with
/// largest-remainder counts so the empirical law is as close to it as N allows.
inline std::vector<Sample> gen_finite_conditional(const FiniteConditionalLaw& law, std::size_t samples,
                                                  std::uint64_t seed, bool exact = false) {
    law.validate();
    detail::require(samples >= 1, ErrorCode::invalid_argument, "need at least one sample");
    std::vector<Sample> out;
    out.reserve(samples);
    if (exact) {
        std::vector<double> joint;
        std::vector<std::pair<std::size_t, std::size_t>> where;
        for (std::size_t l = 0; l < law.labels(); ++l)
            for (std::size_t a = 0; a < law.atoms[l].size(); ++a) {
                joint.push_back(law.label_probs[l] * law.atoms[l][a].weight);
                where.emplace_back(l, a);
            }
        const std::vector<std::size_t> counts = apportion(joint, samples);
        for (std::size_t c = 0; c < counts.size(); ++c)
            for (std::size_t r = 0; r < counts[c]; ++r)
                out.push_back({Label{where[c].first}, law.atoms[where[c].first][where[c].second].point});
        return out;
    }
    Rng rng(seed);
    std::vector<std::vector<double>> atom_probs(law.labels());
    for (std::size_t l = 0; l < law.labels(); ++l)
        for (const Atom& a : law.atoms[l]) atom_probs[l].push_back(a.weight);
    for (std::size_t j = 0; j < samples; ++j) {
        const std::size_t l = rng.categorical(law.label_probs);
        const std::size_t a = rng.categorical(atom_probs[l]);
        out.push_back({Label{l}, law.atoms[l][a].point});
    }
    return out;
}

/// Empirical conditional law of a labeled dataset over `labels` labels.
/// Labels without samples get probability 0 and a placeholder empty list.
inline FiniteConditionalLaw empirical_conditional_law(std::span<const Sample> data, std::size_t labels) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples");
    std::vector<std::map<Point, std::size_t>> counts(labels);
    std::vector<std::size_t> label_count(labels, 0);
    for (const Sample& s : data) {
        const Label* l = std::get_if<Label>(&s.x);
        detail::require(l != nullptr, ErrorCode::invalid_argument, "finite law needs label inputs");
        detail::require(l->value < labels, ErrorCode::unknown_label, "label out of range");
        ++counts[l->value][s.y];
        ++label_count[l->value];
    }
    FiniteConditionalLaw law;
    for (std::size_t l = 0; l < labels; ++l) {
        law.label_probs.push_back(static_cast<double>(label_count[l]) / static_cast<double>(data.size()));
        std::vector<Atom> atoms;
        for (const auto& [point, c] : counts[l])
            atoms.push_back({point, static_cast<double>(c) / static_cast<double>(label_count[l])});
        law.atoms.push_back(std::move(atoms));
    }
    return law;
}

} // namespace cclvq
