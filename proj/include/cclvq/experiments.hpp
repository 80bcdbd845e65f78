#pragma once

// Calibrated experiment presets shared by the command-line tool and the
// acceptance suite. Each preset fixes the data, the model families, the
// starting ensemble and the training configuration.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cclvq/cclvq.hpp"
#include "cclvq/ensemble.hpp"
#include "cclvq/error.hpp"
#include "cclvq/models.hpp"
#include "cclvq/rng.hpp"
#include "cclvq/synthetic.hpp"

namespace cclvq {

enum class InitKind {
    random,   ///< parameters straight from the family initializer
    centered, ///< plus center_output_bias
    marginal  ///< plus init_from_marginal_quantizer
};

inline const char* to_string(InitKind k) noexcept {
    switch (k) {
    case InitKind::random: return "random";
    case InitKind::centered: return "centered";
    case InitKind::marginal: return "marginal";
    }
    return "unknown";
}

inline InitKind init_kind_from_string(const std::string& name) {
    if (name == "random") return InitKind::random;
    if (name == "centered") return InitKind::centered;
    if (name == "marginal") return InitKind::marginal;
    throw Error(ErrorCode::invalid_argument, "unknown init '" + name + "'");
}

struct Preset {
    std::string name;
    LabeledData data;
    ModelShape expert;
    ModelShape classifier; ///< output_dim is set from the expert count
    std::size_t initial_experts = 1;
    InitKind init = InitKind::marginal;
    std::uint64_t init_seed = 1;
    TrainConfig config;
};

/// Starting ensemble for a preset or any dataset with the given families.
inline EnsembleState initial_state(const ModelShape& expert, const ModelShape& classifier, std::size_t n,
                                   InitKind init, std::uint64_t seed, std::span<const Sample> data) {
    Rng rng(seed);
    EnsembleState state = make_ensemble(expert, classifier, n, rng);
    if (init == InitKind::centered) center_output_bias(state, data);
    if (init == InitKind::marginal) init_from_marginal_quantizer(state, data, rng);
    return state;
}

inline EnsembleState initial_state(const Preset& p) {
    return initial_state(p.expert, p.classifier, p.initial_experts, p.init, p.init_seed, p.data.samples);
}

/// Y = X +- 100 with probability 1/2 each: two affine experts (one split
/// from a single start) and a perceptron classifier.
inline Preset two_dirac_preset(std::size_t samples = 4000, std::uint64_t seed = 1) {
    Preset p;
    p.name = "two-dirac";
    p.data = gen_two_dirac_labeled(samples, 100.0, seed);
    p.expert = {ModelKind::affine, 1, 1, default_hidden_width};
    p.classifier = {ModelKind::perceptron, 1, 2, default_hidden_width};
    p.initial_experts = 1;
    p.init = InitKind::marginal;
    p.init_seed = 3;
    TrainConfig& c = p.config;
    c.optimizer = Optimizer::sgd;
    c.gamma_exp = 0.002;
    c.gamma_cls = 0.1;
    c.schedule = RateSchedule::cosine;
    c.epochs = 60;
    c.batch_size = 64;
    c.noise_std = 0.05;
    // A small epsilon often leaves the two copies' difference changing sign
    // inside the data, and the pair then settles on opposite slopes.
    c.splits = {{20, 3.0}};
    c.seed = 5;
    return p;
}

/// Three-mode regression with n = 3 perceptron experts from the start,
/// seeded from the marginal quantizer of Y.
inline Preset multimodal_preset(std::uint64_t seed = 1) {
    Preset p;
    p.name = "multimodal";
    MultimodalSpec spec;
    spec.seed = seed;
    p.data = gen_multimodal(spec);
    p.expert = {ModelKind::perceptron, 1, 1, default_hidden_width};
    p.classifier = {ModelKind::perceptron, 1, 3, default_hidden_width};
    p.initial_experts = 3;
    p.init = InitKind::marginal;
    p.init_seed = 1;
    TrainConfig& c = p.config;
    c.optimizer = Optimizer::adam;
    c.gamma_exp = 0.005;
    c.gamma_cls = 0.01;
    c.schedule = RateSchedule::cosine;
    c.epochs = 600;
    c.batch_size = 64;
    c.noise_std = 0.3;
    c.seed = 101;
    return p;
}

/// Same data grown 1 -> 2 -> 3 experts by splits.
inline Preset multimodal_split_preset(std::uint64_t seed = 1) {
    Preset p = multimodal_preset(seed);
    p.name = "multimodal-split";
    p.initial_experts = 1;
    TrainConfig& c = p.config;
    c.epochs = 300;
    c.splits = {{101, 0.1}, {201, 0.1}};
    return p;
}

struct FiniteTrainOptions {
    std::size_t restarts = 16;
    std::size_t epochs = 90;
    double gamma_exp = 0.01;
    double noise_std = 0.3;
    std::uint64_t seed = 11;
};

/// CCLVQ with n lookup experts on a labeled dataset: every restart starts
/// from init_lookup_from_samples and trains on the full data; the restart
/// with the lowest training distortion wins.
inline EnsembleState train_lookup(std::span<const Sample> data, std::size_t labels, std::size_t d, std::size_t n,
                                  const FiniteTrainOptions& opt = {}) {
    detail::require(opt.restarts >= 1, ErrorCode::invalid_argument, "need at least one restart");
    const ModelShape shape{ModelKind::lookup, labels, d, default_hidden_width};
    EnsembleState best;
    double best_delta = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < opt.restarts; ++r) {
        Rng rng(opt.seed + 1000 * r);
        EnsembleState state = make_ensemble(shape, shape, n, rng);
        init_lookup_from_samples(state, data, rng);
        TrainConfig c;
        c.gamma_exp = opt.gamma_exp;
        c.gamma_cls = 0.1;
        c.schedule = RateSchedule::cosine;
        c.epochs = opt.epochs;
        c.batch_size = 64;
        c.noise_std = opt.noise_std;
        c.heldout_fraction = 0.0;
        c.seed = opt.seed + 1000 * r + 1;
        TrainResult result = train(data, std::move(state), c);
        const double delta = conditional_distortion(result.state, data);
        if (delta < best_delta) {
            best_delta = delta;
            best = std::move(result.state);
        }
    }
    return best;
}

/// Held-out Delta just before a split and at the end of the phase it opens.
struct SplitGain {
    std::size_t epoch = 0; ///< split epoch
    double before = 0.0;
    double after = 0.0;

    /// Relative drop (before - after) / before.
    [[nodiscard]] double margin() const noexcept { return before > 0.0 ? (before - after) / before : 0.0; }
};

/// One entry per split with epoch >= 2 in the trace of a run with these splits.
inline std::vector<SplitGain> split_gains(std::span<const EpochRecord> trace, std::vector<SplitEvent> splits) {
    std::sort(splits.begin(), splits.end(), [](const SplitEvent& a, const SplitEvent& b) { return a.epoch < b.epoch; });
    std::vector<SplitGain> gains;
    for (std::size_t s = 0; s < splits.size(); ++s) {
        const std::size_t e = splits[s].epoch;
        if (e < 2 || e > trace.size()) continue;
        const std::size_t end = s + 1 < splits.size() ? splits[s + 1].epoch - 1 : trace.size();
        gains.push_back({e, trace[e - 2].heldout_delta, trace[end - 1].heldout_delta});
    }
    return gains;
}

inline Preset preset_by_name(const std::string& name, std::uint64_t seed = 1) {
    if (name == "two-dirac") return two_dirac_preset(4000, seed);
    if (name == "multimodal") return multimodal_preset(seed);
    if (name == "multimodal-split") return multimodal_split_preset(seed);
    throw Error(ErrorCode::invalid_argument, "unknown experiment '" + name + "'");
}

} // namespace cclvq
