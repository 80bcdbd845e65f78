#pragma once

// Conditional competitive learning: one batch iteration assigns every sample
// to the expert with the smallest loss, takes a gradient step on each expert
// over its own samples only, and takes a cross-entropy step on the weight
// classifier with the winners as labels.
//
// Expert updates use true gradients of the loss. Under squared loss the
// single-sample CLVQ move  alpha <- alpha - gamma (alpha - y)  on a constant
// expert is obtained with gamma_exp = gamma / 2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <set>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cclvq/clvq.hpp"
#include "cclvq/ensemble.hpp"
#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/metrics.hpp"
#include "cclvq/models.hpp"
#include "cclvq/rng.hpp"

namespace cclvq {

struct SplitEvent {
    std::size_t epoch = 1; ///< 1-based; the split happens before this epoch trains
    double epsilon = 0.0;

    bool operator==(const SplitEvent&) const = default;
};

enum class Optimizer { sgd, adam };

inline const char* to_string(Optimizer o) noexcept { return o == Optimizer::sgd ? "sgd" : "adam"; }

inline Optimizer optimizer_from_string(const std::string& name) {
    if (name == "sgd") return Optimizer::sgd;
    if (name == "adam") return Optimizer::adam;
    throw Error(ErrorCode::invalid_argument, "unknown optimizer '" + name + "'");
}

/// constant keeps both rates fixed. cosine anneals them within each phase
/// between splits, from the configured value at the phase's first epoch
/// towards rate_floor times it at its last.
enum class RateSchedule { constant, cosine };

inline const char* to_string(RateSchedule r) noexcept { return r == RateSchedule::constant ? "constant" : "cosine"; }

inline RateSchedule rate_schedule_from_string(const std::string& name) {
    if (name == "constant") return RateSchedule::constant;
    if (name == "cosine") return RateSchedule::cosine;
    throw Error(ErrorCode::invalid_argument, "unknown rate schedule '" + name + "'");
}

inline constexpr double rate_floor = 0.01;

struct TrainConfig {
    /// sgd is the plain step  theta <- theta - gamma * grad; adam rescales
    /// the same gradients per parameter (beta1 0.9, beta2 0.999, eps 1e-8).
    Optimizer optimizer = Optimizer::sgd;
    double gamma_exp = 1e-3;
    double gamma_cls = 0.1;
    RateSchedule schedule = RateSchedule::constant;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    std::size_t accumulation = 1;
    /// Assignment noise: with noise_relative the std is noise_std times a
    /// running mean of the per-sample winner loss, otherwise noise_std itself.
    /// Either way it decays linearly to 0 at noise_decay_epoch (0 = epochs).
    double noise_std = 0.05;
    bool noise_relative = true;
    std::size_t noise_decay_epoch = 0;
    std::vector<SplitEvent> splits;
    LossKind loss = LossKind::squared_euclidean;
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;

    [[nodiscard]] std::size_t decay_epoch() const noexcept { return noise_decay_epoch == 0 ? epochs : noise_decay_epoch; }

    /// Multiplier on both rates during `epoch` (1-based).
    [[nodiscard]] double rate_factor(std::size_t epoch) const {
        if (schedule == RateSchedule::constant) return 1.0;
        std::size_t first = 1;
        std::size_t last = epochs;
        for (const SplitEvent& e : splits) {
            if (e.epoch <= epoch) first = std::max(first, e.epoch);
            else last = std::min(last, e.epoch - 1);
        }
        const double t = static_cast<double>(epoch - first) / static_cast<double>(last - first + 1);
        return rate_floor + (1.0 - rate_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }

    void validate() const {
        detail::require(gamma_exp >= 0.0 && std::isfinite(gamma_exp), ErrorCode::invalid_argument,
                        "gamma_exp must be >= 0");
        detail::require(gamma_cls >= 0.0 && std::isfinite(gamma_cls), ErrorCode::invalid_argument,
                        "gamma_cls must be >= 0");
        detail::require(epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
        detail::require(batch_size >= 1, ErrorCode::invalid_argument, "batch size must be >= 1");
        detail::require(accumulation >= 1, ErrorCode::invalid_argument, "accumulation factor must be >= 1");
        detail::require(noise_std >= 0.0 && std::isfinite(noise_std), ErrorCode::invalid_argument,
                        "noise std must be >= 0");
        detail::require(noise_decay_epoch <= epochs, ErrorCode::invalid_argument,
                        "noise decay epoch exceeds the epoch count");
        detail::require(heldout_fraction >= 0.0 && heldout_fraction < 1.0, ErrorCode::invalid_argument,
                        "held-out fraction must lie in [0, 1)");
        for (const SplitEvent& e : splits) {
            if (e.epoch < 1 || e.epoch > epochs)
                throw Error(ErrorCode::invalid_argument,
                            "split epoch " + std::to_string(e.epoch) + " outside 1.." + std::to_string(epochs));
            detail::require(e.epsilon >= 0.0 && std::isfinite(e.epsilon), ErrorCode::invalid_argument,
                            "split epsilon must be >= 0");
        }
    }
};

struct AssignmentReport {
    std::vector<std::size_t> winners;
    std::vector<std::size_t> per_expert_counts;
    std::vector<double> per_expert_distortion; ///< noise-free loss summed over each expert's samples
    /// Winner outputs and hidden activations per sample, row-major, as
    /// computed by assign_batch; expert_gradients reuses them when present.
    std::vector<double> winner_outputs;
    std::vector<double> winner_hidden;

    [[nodiscard]] double total_distortion() const {
        return std::accumulate(per_expert_distortion.begin(), per_expert_distortion.end(), 0.0);
    }
};

/// Winner per sample: argmin_i loss(y_j, f_i(x_j)) + e_ij with
/// e_ij ~ N(0, noise_std^2). noise_std = 0 draws nothing from rng and gives
/// the exact rule with smallest-index ties.
inline AssignmentReport assign_batch(const EnsembleState& state, std::span<const Sample> batch, double noise_std,
                                     Rng& rng, LossKind loss = LossKind::squared_euclidean) {
    detail::require(!batch.empty(), ErrorCode::empty_input, "empty batch");
    detail::require(noise_std >= 0.0, ErrorCode::invalid_argument, "noise std must be >= 0");
    const std::size_t n = state.size();
    AssignmentReport report;
    report.winners.reserve(batch.size());
    report.per_expert_counts.assign(n, 0);
    report.per_expert_distortion.assign(n, 0.0);
    EnsembleEvaluator eval(state);
    std::vector<double> losses(n);
    for (const Sample& s : batch) {
        detail::require(s.y.dim() == state.dim(), ErrorCode::dimension_mismatch, "sample and experts differ in dimension");
        eval.evaluate(s.x);
        std::size_t best = 0;
        double best_score = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            losses[i] = loss_value(loss, s.y.coords(), eval.outputs[i]);
            const double score = noise_std > 0.0 ? losses[i] + noise_std * rng.normal() : losses[i];
            if (score < best_score) {
                best_score = score;
                best = i;
            }
        }
        report.winners.push_back(best);
        ++report.per_expert_counts[best];
        report.per_expert_distortion[best] += losses[best];
        report.winner_outputs.insert(report.winner_outputs.end(), eval.outputs[best].begin(), eval.outputs[best].end());
        report.winner_hidden.insert(report.winner_hidden.end(), eval.hidden[best].begin(), eval.hidden[best].end());
    }
    return report;
}

/// Per-expert gradient of sum_{j: winner(j) = i} loss(y_j, f_i(x_j)).
inline std::vector<std::vector<double>> expert_gradients(const EnsembleState& state, std::span<const Sample> batch,
                                                         const AssignmentReport& report,
                                                         LossKind loss = LossKind::squared_euclidean) {
    detail::require(report.winners.size() == batch.size(), ErrorCode::invalid_argument,
                    "report does not match the batch");
    std::vector<std::vector<double>> grads(state.size());
    for (std::size_t i = 0; i < state.size(); ++i) grads[i].assign(state.experts[i].param_count(), 0.0);
    const std::size_t d = state.dim();
    const std::size_t h = state.experts.front().shape().kind == ModelKind::perceptron
                              ? state.experts.front().shape().hidden
                              : 0;
    const bool cached = report.winner_outputs.size() == batch.size() * d &&
                        report.winner_hidden.size() == batch.size() * h;
    std::vector<double> out(d);
    std::vector<double> hidden(h);
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const std::size_t i = report.winners[j];
        detail::require(i < state.size(), ErrorCode::invalid_argument, "winner index out of range");
        const ExpertFunction& f = state.experts[i];
        if (cached) {
            std::copy_n(report.winner_outputs.begin() + static_cast<std::ptrdiff_t>(j * d), d, out.begin());
            std::copy_n(report.winner_hidden.begin() + static_cast<std::ptrdiff_t>(j * h), h, hidden.begin());
        } else {
            f.evaluate(batch[j].x, out, hidden);
        }
        const std::vector<double> upstream = loss_gradient(loss, batch[j].y.coords(), out);
        f.accumulate_gradient(batch[j].x, upstream, hidden, 1.0, grads[i]);
    }
    return grads;
}

/// Classifier diagnostics collected for free during its gradient pass.
struct ClassifierStats {
    std::size_t hits = 0;       ///< samples whose most probable class is their winner
    double entropy_sum = 0.0;   ///< sum of normalized entropies of h(x)
};

/// Gradient of -(1/N) sum_j log h_{winner(j)}(x_j).
inline std::vector<double> classifier_gradient(const EnsembleState& state, std::span<const Sample> batch,
                                               const AssignmentReport& report, ClassifierStats* stats = nullptr) {
    detail::require(report.winners.size() == batch.size() && !batch.empty(), ErrorCode::invalid_argument,
                    "report does not match the batch");
    std::vector<double> grad(state.classifier.params().size(), 0.0);
    std::vector<double> logits;
    std::vector<double> probs;
    std::vector<double> hidden;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        state.classifier.accumulate_cross_entropy_gradient(batch[j].x, report.winners[j], scale, grad, logits, probs,
                                                           hidden);
        if (stats == nullptr) continue;
        const auto top = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        stats->hits += top == report.winners[j];
        stats->entropy_sum += normalized_entropy(probs);
    }
    return grad;
}

namespace detail {

inline void descend(std::span<double> params, std::span<const double> grad, double rate) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= rate * grad[k];
}

inline void adam_step(std::span<double> params, std::span<const double> grad, double rate, AdamMoments& m) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    if (m.first.size() != params.size()) {
        m.first.assign(params.size(), 0.0);
        m.second.assign(params.size(), 0.0);
        m.steps = 0;
    }
    ++m.steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(m.steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(m.steps));
    for (std::size_t k = 0; k < params.size(); ++k) {
        m.first[k] = beta1 * m.first[k] + (1.0 - beta1) * grad[k];
        m.second[k] = beta2 * m.second[k] + (1.0 - beta2) * grad[k] * grad[k];
        params[k] -= rate * (m.first[k] / c1) / (std::sqrt(m.second[k] / c2) + eps);
    }
}

/// Applies one optimizer step per expert with samples, then one on the classifier.
inline void step_parameters(EnsembleState& state, const std::vector<std::vector<double>>& expert_grads,
                            const std::vector<std::size_t>& counts, std::span<const double> cls_grad,
                            double cls_rate, const TrainConfig& config) {
    if (config.optimizer == Optimizer::sgd) {
        for (std::size_t i = 0; i < state.size(); ++i)
            if (counts[i] > 0) descend(state.experts[i].params(), expert_grads[i], config.gamma_exp);
        descend(state.classifier.params(), cls_grad, cls_rate);
        return;
    }
    state.optimizer.experts.resize(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        if (counts[i] > 0)
            adam_step(state.experts[i].params(), expert_grads[i], config.gamma_exp, state.optimizer.experts[i]);
    adam_step(state.classifier.params(), cls_grad, cls_rate, state.optimizer.classifier);
}

} // namespace detail

/// Gradient step on each expert over its assigned samples; experts without
/// samples keep their parameters bit for bit.
inline EnsembleState update_experts(EnsembleState state, std::span<const Sample> batch, const AssignmentReport& report,
                                    double gamma_exp, LossKind loss = LossKind::squared_euclidean) {
    const auto grads = expert_gradients(state, batch, report, loss);
    for (std::size_t i = 0; i < state.size(); ++i)
        if (report.per_expert_counts[i] > 0) detail::descend(state.experts[i].params(), grads[i], gamma_exp);
    return state;
}

inline EnsembleState update_classifier(EnsembleState state, std::span<const Sample> batch,
                                       const AssignmentReport& report, double gamma_cls) {
    const auto grad = classifier_gradient(state, batch, report);
    detail::descend(state.classifier.params(), grad, gamma_cls);
    return state;
}

/// Applies and clears whatever gradients are pending. Expert gradients are
/// sums over all accumulated batches; the classifier gradient is their mean,
/// which equals the gradient of the cross-entropy on the concatenated batch
/// when batches have equal size.
inline void apply_pending(EnsembleState& state, const TrainConfig& config) {
    if (state.pending.empty()) return;
    const double cls_rate = config.gamma_cls / static_cast<double>(state.pending.batches);
    detail::step_parameters(state, state.pending.experts, state.pending.counts, state.pending.classifier, cls_rate,
                            config);
    state.pending.clear();
    ++state.step;
}

struct IterationResult {
    EnsembleState state;
    AssignmentReport report;
    ClassifierStats classifier; ///< measured before this batch's update
};

/// One batch iteration. With accumulation_factor 1 under sgd this equals
/// assign_batch, update_experts, update_classifier in that order (the
/// classifier gradient does not depend on the experts); with factor k the
/// gradients of k consecutive calls are collected and applied once.
inline IterationResult batch_iteration(EnsembleState state, std::span<const Sample> batch, const TrainConfig& config,
                                       Rng& rng, double noise_std = 0.0) {
    state.validate();
    AssignmentReport report = assign_batch(state, batch, noise_std, rng, config.loss);
    auto grads = expert_gradients(state, batch, report, config.loss);
    ClassifierStats stats;
    auto cls = classifier_gradient(state, batch, report, &stats);
    if (config.accumulation == 1) {
        detail::step_parameters(state, grads, report.per_expert_counts, cls, config.gamma_cls, config);
        ++state.step;
        return {std::move(state), std::move(report), stats};
    }
    PendingGradients& pending = state.pending;
    if (pending.empty()) {
        pending.experts = std::move(grads);
        pending.classifier = std::move(cls);
        pending.counts = report.per_expert_counts;
    } else {
        for (std::size_t i = 0; i < state.size(); ++i) {
            for (std::size_t k = 0; k < grads[i].size(); ++k) pending.experts[i][k] += grads[i][k];
            pending.counts[i] += report.per_expert_counts[i];
        }
        for (std::size_t k = 0; k < cls.size(); ++k) pending.classifier[k] += cls[k];
    }
    ++pending.batches;
    if (pending.batches == config.accumulation) apply_pending(state, config);
    return {std::move(state), std::move(report), stats};
}

/// Duplicates the expert contributing most to the distortion on `data`
/// (ties: more samples, then smaller index). The copy goes last and gets
/// N(0, epsilon^2) noise on every parameter; the classifier gains a class
/// and the pair shares the original's mass. Pending gradients are applied
/// first. epsilon = 0 leaves every assignment unchanged.
inline EnsembleState split_expert(EnsembleState state, std::span<const Sample> data, double epsilon, Rng& rng,
                                  const TrainConfig* config = nullptr, LossKind loss = LossKind::squared_euclidean) {
    detail::require(epsilon >= 0.0, ErrorCode::invalid_argument, "epsilon must be >= 0");
    state.validate();
    if (!state.pending.empty()) {
        detail::require(config != nullptr, ErrorCode::invalid_argument, "pending gradients need a config to flush");
        apply_pending(state, *config);
    }
    const Assignment a = assign_exact(state, data, loss);
    std::vector<double> contribution(state.size(), 0.0);
    std::vector<std::size_t> count(state.size(), 0);
    for (std::size_t j = 0; j < a.winners.size(); ++j) {
        contribution[a.winners[j]] += a.losses[j];
        ++count[a.winners[j]];
    }
    const std::size_t chosen = worst_cell(contribution, count);
    ExpertFunction copy = state.experts[chosen];
    if (epsilon > 0.0)
        for (double& p : copy.params()) p += epsilon * rng.normal();
    state.experts.push_back(std::move(copy));
    state.classifier = state.classifier.with_split_class(chosen);
    // The copy inherits the original's moments; the classifier layout
    // changed, so its moments restart.
    if (!state.optimizer.experts.empty()) {
        state.optimizer.experts.resize(state.size() - 1);
        state.optimizer.experts.push_back(state.optimizer.experts[chosen]);
    }
    state.optimizer.classifier = AdamMoments{};
    return state;
}

/// Places expert i's mean output at point i of an n-point quantizer of the
/// Y marginal (LBG: repeated worst-cell splits, each followed by Lloyd
/// steps to a fixed point). The ensemble then starts as the best set of
/// constant experts, up to the variation of each f_i around its mean.
inline void init_from_marginal_quantizer(EnsembleState& state, std::span<const Sample> data, Rng& rng,
                                         std::size_t lloyd_iterations = 100) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples");
    std::vector<Point> ys;
    ys.reserve(data.size());
    for (const Sample& s : data) ys.push_back(s.y);
    std::vector<double> mean(state.dim(), 0.0);
    for (const Point& y : ys)
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += y[k] / static_cast<double>(ys.size());
    Codebook cb({Point(mean)});
    const auto polish = [&] {
        for (std::size_t it = 0; it < lloyd_iterations; ++it) {
            Codebook next = lloyd_step(ys, cb);
            const bool fixed = next.points() == cb.points();
            cb = std::move(next);
            if (fixed) break;
        }
    };
    while (cb.size() < state.size()) {
        cb = split_codebook(cb, ys, 1e-3, rng);
        polish();
    }
    for (std::size_t i = 0; i < state.size(); ++i) detail::shift_mean_output(state.experts[i], data, cb[i].values());
}

/// For lookup experts: row x of expert i is set to a distinct sample y
/// observed at label x, drawn at random (repeating when label x has fewer
/// than n distinct values). This is the usual random-samples start of CLVQ
/// applied label by label.
inline void init_lookup_from_samples(EnsembleState& state, std::span<const Sample> data, Rng& rng) {
    detail::require(!state.experts.empty() && state.experts.front().kind() == ModelKind::lookup,
                    ErrorCode::invalid_argument, "sample init needs lookup experts");
    const std::size_t labels = state.experts.front().shape().input_dim;
    const std::size_t d = state.dim();
    std::vector<std::set<Point>> seen(labels);
    for (const Sample& s : data) {
        const Label* l = std::get_if<Label>(&s.x);
        detail::require(l != nullptr && l->value < labels, ErrorCode::unknown_label, "sample label outside the table");
        seen[l->value].insert(s.y);
    }
    for (std::size_t x = 0; x < labels; ++x) {
        if (seen[x].empty()) continue;
        std::vector<Point> pool(seen[x].begin(), seen[x].end());
        rng.shuffle(pool);
        for (std::size_t i = 0; i < state.size(); ++i) {
            const Point& y = pool[i < pool.size() ? i : rng.index(pool.size())];
            std::copy_n(y.values().begin(), d, state.experts[i].params().begin() + static_cast<std::ptrdiff_t>(x * d));
        }
    }
}

/// Per-epoch metrics. The training-split figures are accumulated over the
/// epoch's batches as they are processed (winner loss without noise,
/// winners under the noisy rule, classifier before each update), the usual
/// running training loss; heldout_delta is exact at the end of the epoch.
struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t n_experts = 0;
    double train_delta = 0.0;
    double heldout_delta = 0.0;
    std::vector<std::size_t> per_expert_counts; ///< batch winners over the epoch
    double usage_entropy = 0.0;
    double weight_entropy = 0.0;
    double classifier_accuracy = 0.0;
    double noise_std = 0.0; ///< effective assignment noise at the end of the epoch
    std::vector<std::size_t> dead_experts; ///< experts that won no sample during the epoch

    bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
    EnsembleState state;
    std::vector<EpochRecord> trace;
};

struct DataSplit {
    std::vector<Sample> train;
    std::vector<Sample> heldout;
};

/// Seeded shuffle, then the first floor(fraction * N) samples are held out.
/// A split that would leave either side empty keeps everything for training
/// and reuses it as the held-out set.
inline DataSplit split_heldout(std::span<const Sample> data, double fraction, Rng& rng) {
    const std::vector<std::size_t> order = rng.permutation(data.size());
    const auto held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size())));
    DataSplit split;
    if (held == 0 || held >= data.size()) {
        for (std::size_t j : order) split.train.push_back(data[j]);
        split.heldout = split.train;
        return split;
    }
    for (std::size_t r = 0; r < order.size(); ++r) (r < held ? split.heldout : split.train).push_back(data[order[r]]);
    return split;
}

/// Exact end-of-epoch metrics of a state: winners, distortion, entropies and
/// accuracy recomputed on train_data with the current parameters.
inline EpochRecord evaluate_epoch(const EnsembleState& state, std::span<const Sample> train_data,
                                  std::span<const Sample> heldout, LossKind loss) {
    EpochRecord rec;
    rec.n_experts = state.size();
    const Assignment a = assign_exact(state, train_data, loss);
    rec.per_expert_counts.assign(state.size(), 0);
    double total = 0.0;
    for (std::size_t j = 0; j < a.winners.size(); ++j) {
        ++rec.per_expert_counts[a.winners[j]];
        total += a.losses[j];
    }
    rec.train_delta = total / static_cast<double>(train_data.size());
    rec.heldout_delta = conditional_distortion(state, heldout, loss);
    rec.usage_entropy = usage_entropy(rec.per_expert_counts);
    // One classifier pass for both weight entropy and accuracy.
    std::vector<double> probs(state.size());
    std::vector<double> logits;
    std::vector<double> hidden;
    double entropy = 0.0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < train_data.size(); ++j) {
        state.classifier.probabilities(train_data[j].x, probs, logits, hidden);
        entropy += normalized_entropy(probs);
        hits += static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin()) == a.winners[j];
    }
    rec.weight_entropy = entropy / static_cast<double>(train_data.size());
    rec.classifier_accuracy = static_cast<double>(hits) / static_cast<double>(train_data.size());
    return rec;
}

using EpochCallback = std::function<void(const EpochRecord&, const EnsembleState&)>;

/// Epoch loop over seeded shuffles of the training split, executing split
/// events at epoch starts. Deterministic given the config seed.
inline TrainResult train(std::span<const Sample> dataset, EnsembleState initial, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
    config.validate();
    initial.validate();
    detail::require(!dataset.empty(), ErrorCode::empty_input, "empty dataset");

    Rng rng(config.seed);
    const DataSplit data = split_heldout(dataset, config.heldout_fraction, rng);
    std::vector<SplitEvent> splits = config.splits;
    std::stable_sort(splits.begin(), splits.end(),
                     [](const SplitEvent& a, const SplitEvent& b) { return a.epoch < b.epoch; });

    TrainResult result;
    EnsembleState state = std::move(initial);
    double running_loss = conditional_distortion(state, data.train, config.loss);
    // Reshuffled in place every epoch, so batches are contiguous views.
    std::vector<Sample> shuffled = data.train;
    std::size_t next_split = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        while (next_split < splits.size() && splits[next_split].epoch == epoch) {
            state = split_expert(std::move(state), data.train, splits[next_split].epsilon, rng, &config, config.loss);
            ++next_split;
        }
        TrainConfig rates = config;
        rates.gamma_exp *= config.rate_factor(epoch);
        rates.gamma_cls *= config.rate_factor(epoch);
        const double decay =
            std::max(0.0, 1.0 - static_cast<double>(epoch) / static_cast<double>(config.decay_epoch()));
        std::vector<std::size_t> won(state.size(), 0);
        double loss_sum = 0.0;
        ClassifierStats cls_stats;
        double noise = 0.0;
        rng.shuffle(shuffled);
        for (std::size_t start = 0; start < shuffled.size(); start += config.batch_size) {
            const std::size_t stop = std::min(shuffled.size(), start + config.batch_size);
            const std::span<const Sample> batch(shuffled.data() + start, stop - start);
            noise = config.noise_std * decay * (config.noise_relative ? running_loss : 1.0);
            IterationResult it = batch_iteration(std::move(state), batch, rates, rng, noise);
            state = std::move(it.state);
            for (std::size_t i = 0; i < it.report.per_expert_counts.size(); ++i)
                won[i] += it.report.per_expert_counts[i];
            const double batch_loss = it.report.total_distortion();
            loss_sum += batch_loss;
            cls_stats.hits += it.classifier.hits;
            cls_stats.entropy_sum += it.classifier.entropy_sum;
            running_loss = 0.9 * running_loss + 0.1 * batch_loss / static_cast<double>(batch.size());
            if (!std::isfinite(running_loss))
                throw Error(ErrorCode::invalid_argument,
                            "training diverged in epoch " + std::to_string(epoch) + "; lower gamma_exp");
        }
        apply_pending(state, rates);

        const auto total = static_cast<double>(shuffled.size());
        EpochRecord rec;
        rec.epoch = epoch;
        rec.n_experts = state.size();
        rec.train_delta = loss_sum / total;
        rec.heldout_delta = conditional_distortion(state, data.heldout, config.loss);
        rec.per_expert_counts = won;
        rec.usage_entropy = usage_entropy(won);
        rec.weight_entropy = cls_stats.entropy_sum / total;
        rec.classifier_accuracy = static_cast<double>(cls_stats.hits) / total;
        rec.noise_std = noise;
        for (std::size_t i = 0; i < won.size(); ++i)
            if (won[i] == 0) rec.dead_experts.push_back(i);
        if (on_epoch) on_epoch(rec, state);
        result.trace.push_back(std::move(rec));
    }
    result.state = std::move(state);
    return result;
}

} // namespace cclvq
