#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/models.hpp"
#include "cclvq/rng.hpp"

namespace cclvq {

/// Gradients waiting to be applied when accumulating over several batches.
struct PendingGradients {
    std::vector<std::vector<double>> experts;
    std::vector<double> classifier;
    std::vector<std::size_t> counts; ///< samples won per expert across the batches
    std::size_t batches = 0;

    [[nodiscard]] bool empty() const noexcept { return batches == 0; }
    void clear() {
        experts.clear();
        classifier.clear();
        counts.clear();
        batches = 0;
    }

    bool operator==(const PendingGradients&) const = default;
};

/// First and second moment estimates for one parameter block.
struct AdamMoments {
    std::vector<double> first;
    std::vector<double> second;
    std::size_t steps = 0;

    bool operator==(const AdamMoments&) const = default;
};

/// Adam state per expert and for the classifier; empty under plain SGD.
struct OptimizerState {
    std::vector<AdamMoments> experts;
    AdamMoments classifier;

    bool operator==(const OptimizerState&) const = default;
};

/// n experts f_i: E -> R^d sharing one shape, and a classifier with n classes.
struct EnsembleState {
    std::vector<ExpertFunction> experts;
    WeightClassifier classifier;
    std::size_t step = 0;
    PendingGradients pending;
    OptimizerState optimizer;

    [[nodiscard]] std::size_t size() const noexcept { return experts.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return experts.empty() ? 0 : experts.front().output_dim(); }

    void validate() const {
        detail::require(!experts.empty(), ErrorCode::invalid_argument, "ensemble needs at least one expert");
        for (const ExpertFunction& f : experts)
            detail::require(f.shape() == experts.front().shape(), ErrorCode::invalid_argument,
                            "experts must share one shape");
        if (classifier.classes() != experts.size())
            throw Error(ErrorCode::invalid_argument,
                        "classifier has " + std::to_string(classifier.classes()) + " classes for " +
                            std::to_string(experts.size()) + " experts");
    }

    bool operator==(const EnsembleState&) const = default;
};

/// Fresh ensemble: every expert and the classifier initialized from rng.
/// The classifier shape's output_dim is overridden with n.
inline EnsembleState make_ensemble(const ModelShape& expert_shape, ModelShape classifier_shape, std::size_t n,
                                   Rng& rng) {
    detail::require(n >= 1, ErrorCode::invalid_argument, "need at least one expert");
    EnsembleState state;
    for (std::size_t i = 0; i < n; ++i) {
        ExpertFunction f(expert_shape);
        f.initialize(rng);
        state.experts.push_back(std::move(f));
    }
    classifier_shape.output_dim = n;
    ParametricMap logits(classifier_shape);
    logits.initialize(rng);
    state.classifier = WeightClassifier(std::move(logits));
    return state;
}

namespace detail {

/// Shifts f's output bias so that its mean output over data equals target.
/// Lookup tables are shifted uniformly.
inline void shift_mean_output(ExpertFunction& f, std::span<const Sample> data, std::span<const double> target) {
    const std::size_t d = f.output_dim();
    std::vector<double> mean(d, 0.0);
    for (const Sample& s : data) {
        const std::vector<double> out = f.evaluate(s.x);
        for (std::size_t k = 0; k < d; ++k) mean[k] += out[k] / static_cast<double>(data.size());
    }
    const std::span<double> p = f.params();
    if (f.kind() == ModelKind::lookup) {
        for (std::size_t r = 0; r < p.size(); ++r) p[r] += target[r % d] - mean[r % d];
    } else {
        // The output bias is the last block for every other family.
        for (std::size_t k = 0; k < d; ++k) p[p.size() - d + k] += target[k] - mean[k];
    }
}

} // namespace detail

/// Shifts each expert's output bias so its mean output over data equals
/// the mean target. Without it, gradient steps that must first move the
/// output from 0 to a large target mean tend to saturate the hidden layer.
inline void center_output_bias(EnsembleState& state, std::span<const Sample> data) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples");
    std::vector<double> target(state.dim(), 0.0);
    for (const Sample& s : data)
        for (std::size_t k = 0; k < target.size(); ++k) target[k] += s.y[k] / static_cast<double>(data.size());
    for (ExpertFunction& f : state.experts) detail::shift_mean_output(f, data, target);
}

/// Classifier shape from the same family as the experts, with n outputs.
inline ModelShape classifier_shape_like(const ModelShape& expert_shape, std::size_t n) {
    ModelShape shape = expert_shape;
    shape.output_dim = n;
    return shape;
}

/// Workspace for repeated expert evaluation without reallocation.
struct EnsembleEvaluator {
    explicit EnsembleEvaluator(const EnsembleState& s) : state(&s), outputs(s.size()), hidden(s.size()) {
        for (auto& o : outputs) o.resize(s.dim());
    }

    /// Writes f_i(x) into outputs[i] (and its activations into hidden[i]) for every expert.
    void evaluate(const Input& x) {
        for (std::size_t i = 0; i < state->size(); ++i) state->experts[i].evaluate(x, outputs[i], hidden[i]);
    }

    const EnsembleState* state;
    std::vector<std::vector<double>> outputs;
    std::vector<std::vector<double>> hidden;
};

/// Index of the expert with the smallest loss at (x, y); smallest index wins ties.
inline std::size_t winner(const EnsembleState& state, const Sample& s, LossKind loss = LossKind::squared_euclidean) {
    EnsembleEvaluator eval(state);
    eval.evaluate(s.x);
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < state.size(); ++i) {
        const double l = loss_value(loss, s.y.coords(), eval.outputs[i]);
        if (l < best_loss) {
            best_loss = l;
            best = i;
        }
    }
    return best;
}

/// Deterministic winners with the loss attained by each winner.
struct Assignment {
    std::vector<std::size_t> winners;
    std::vector<double> losses;
};

inline Assignment assign_exact(const EnsembleState& state, std::span<const Sample> data,
                               LossKind loss = LossKind::squared_euclidean) {
    Assignment out;
    out.winners.reserve(data.size());
    out.losses.reserve(data.size());
    EnsembleEvaluator eval(state);
    for (const Sample& s : data) {
        detail::require(s.y.dim() == state.dim(), ErrorCode::dimension_mismatch, "sample and experts differ in dimension");
        eval.evaluate(s.x);
        std::size_t best = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < state.size(); ++i) {
            const double l = loss_value(loss, s.y.coords(), eval.outputs[i]);
            if (l < best_loss) {
                best_loss = l;
                best = i;
            }
        }
        out.winners.push_back(best);
        out.losses.push_back(best_loss);
    }
    return out;
}

/// Empirical Delta_n(f): mean over samples of min_i loss(y, f_i(x)).
inline double conditional_distortion(const EnsembleState& state, std::span<const Sample> data,
                                     LossKind loss = LossKind::squared_euclidean) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples");
    const Assignment a = assign_exact(state, data, loss);
    double total = 0.0;
    for (double l : a.losses) total += l;
    return total / static_cast<double>(data.size());
}

/// The expert values at x as a codebook.
inline Codebook expert_codebook(const EnsembleState& state, const Input& x) {
    std::vector<Point> points;
    points.reserve(state.size());
    for (const ExpertFunction& f : state.experts) points.push_back(forward(f, x));
    return Codebook(std::move(points));
}

/// Quantized conditional law at x: atoms f_i(x) with classifier weights h_i(x).
inline DiscreteMeasure conditional_quantized_law(const EnsembleState& state, const Input& x) {
    state.validate();
    const std::vector<double> weights = classify(state.classifier, x);
    std::vector<Atom> atoms;
    atoms.reserve(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) atoms.push_back({forward(state.experts[i], x), weights[i]});
    return DiscreteMeasure(std::move(atoms), 1e-9);
}

/// Finite-E variant with exact weights: fraction of the samples at label x
/// whose winner is expert i.
inline DiscreteMeasure conditional_quantized_law_exact(const EnsembleState& state, Label x,
                                                       std::span<const Sample> data) {
    std::vector<std::size_t> counts(state.size(), 0);
    std::size_t total = 0;
    for (const Sample& s : data) {
        const Label* l = std::get_if<Label>(&s.x);
        if (l == nullptr || *l != x) continue;
        ++counts[winner(state, s)];
        ++total;
    }
    if (total == 0)
        throw Error(ErrorCode::empty_input, "no samples at label " + std::to_string(x.value));
    std::vector<Atom> atoms;
    for (std::size_t i = 0; i < state.size(); ++i)
        atoms.push_back({forward(state.experts[i], Input{x}),
                         static_cast<double>(counts[i]) / static_cast<double>(total)});
    return DiscreteMeasure(std::move(atoms));
}

} // namespace cclvq
