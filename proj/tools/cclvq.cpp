// cclvq: dataset generation, training, oracle verification and figure data.
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 I/O, 4 verification failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cclvq/cclvq.hpp"
#include "cclvq/experiments.hpp"
#include "cclvq/io.hpp"
#include "cclvq/metrics.hpp"
#include "cclvq/synthetic.hpp"
#include "cclvq/verify.hpp"
#include "json.hpp"

namespace {

using namespace cclvq;

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_validation = 2;
constexpr int exit_io = 3;
constexpr int exit_verification = 4;

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write '" + path + "'");
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot read '" + path + "'");
    return in;
}

void close_checked(std::ofstream& out, const std::string& path) {
    out.close();
    if (!out) throw Error(ErrorCode::io_failure, "write to '" + path + "' failed");
}

SplitEvent parse_split(const std::string& text) {
    const auto colon = text.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument("no colon");
        std::size_t used = 0;
        const long long epoch = std::stoll(text.substr(0, colon), &used);
        if (used != colon || epoch < 0) throw std::invalid_argument("epoch");
        const std::string eps_text = text.substr(colon + 1);
        const double eps = std::stod(eps_text, &used);
        if (used != eps_text.size()) throw std::invalid_argument("epsilon");
        return {static_cast<std::size_t>(epoch), eps};
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::invalid_argument, "--split-at expects EPOCH:EPSILON, got '" + text + "'");
    }
}

// ---- gen

struct GenArgs {
    std::string experiment = "multimodal";
    std::optional<std::size_t> samples;
    std::uint64_t seed = 0;
    std::string out;
    bool with_modes = false;
    // multimodal
    std::vector<double> a{-1.0, 0.0, 1.0};
    std::vector<double> b{0.0, 0.0, 0.0};
    double sigma = 0.1;
    // two-dirac
    double offset = 100.0;
    // finite
    std::size_t labels = 3;
    std::size_t max_atoms = 4;
    std::size_t dim = 1;
    bool exact = false;
};

int cmd_gen(const GenArgs& g) {
    std::vector<Sample> samples;
    std::vector<std::size_t> modes;
    if (g.experiment == "multimodal") {
        MultimodalSpec spec;
        spec.a = g.a;
        spec.b = g.b;
        spec.sigma = g.sigma;
        spec.samples = g.samples.value_or(8000);
        spec.seed = g.seed;
        LabeledData d = gen_multimodal(spec);
        samples = std::move(d.samples);
        modes = std::move(d.modes);
    } else if (g.experiment == "two-dirac") {
        LabeledData d = gen_two_dirac_labeled(g.samples.value_or(4000), g.offset, g.seed);
        samples = std::move(d.samples);
        modes = std::move(d.modes);
    } else if (g.experiment == "finite") {
        // The law itself is drawn from the seed too, so one seed fixes everything.
        Rng rng(g.seed);
        const FiniteConditionalLaw law = random_finite_law(g.labels, g.max_atoms, g.dim, rng);
        samples = gen_finite_conditional(law, g.samples.value_or(1000), rng(), g.exact);
    } else {
        throw Error(ErrorCode::invalid_argument, "unknown experiment '" + g.experiment + "'");
    }
    std::ofstream out = open_out(g.out);
    write_dataset_csv(out, samples, g.with_modes ? std::span<const std::size_t>(modes) : std::span<const std::size_t>{});
    close_checked(out, g.out);
    return exit_ok;
}

// ---- train

struct TrainArgs {
    std::string experiment;
    std::string data;
    bool labels = false;
    std::uint64_t data_seed = 1;
    std::size_t experts = 1;
    std::string expert_kind = "affine";
    std::string classifier_kind;
    std::size_t hidden = default_hidden_width;
    std::string init = "marginal";
    std::uint64_t init_seed = 1;
    std::string optimizer = "sgd";
    std::string schedule = "constant";
    double gamma_exp = 1e-3;
    double gamma_cls = 0.1;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    std::size_t accumulation = 1;
    double noise_std = 0.05;
    bool noise_absolute = false;
    std::size_t noise_decay_epoch = 0;
    std::vector<std::string> split_at;
    std::string loss = "squared";
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;
    std::string model_out;
    std::string metrics_out;
    bool quiet = false;
};

/// Flags given on the command line override the preset; `given` answers
/// whether a flag was passed.
template <class Given>
Preset resolve_training(const TrainArgs& t, Given given) {
    Preset p;
    if (!t.experiment.empty()) {
        p = preset_by_name(t.experiment, t.data_seed);
    } else {
        std::ifstream in = open_in(t.data);
        DatasetFile file = read_dataset_csv(in, t.labels);
        p.name = t.data;
        p.data.samples = std::move(file.samples);
        p.data.modes = std::move(file.modes);
        const Sample& first = p.data.samples.front();
        p.expert.output_dim = first.y.dim();
        if (t.labels) {
            std::size_t labels = 0;
            for (const Sample& s : p.data.samples) labels = std::max(labels, std::get<Label>(s.x).value + 1);
            p.expert.input_dim = labels;
            p.expert.kind = ModelKind::lookup;
        } else {
            p.expert.input_dim = std::get<Features>(first.x).size();
            p.expert.kind = model_kind_from_string(t.expert_kind);
        }
        p.classifier = p.expert;
        p.initial_experts = t.experts;
        p.init = init_kind_from_string(t.init);
        p.init_seed = t.init_seed;
        TrainConfig& c = p.config;
        c.optimizer = optimizer_from_string(t.optimizer);
        c.schedule = rate_schedule_from_string(t.schedule);
        c.gamma_exp = t.gamma_exp;
        c.gamma_cls = t.gamma_cls;
        c.epochs = t.epochs;
        c.batch_size = t.batch_size;
        c.accumulation = t.accumulation;
        c.noise_std = t.noise_std;
        c.noise_relative = !t.noise_absolute;
        c.noise_decay_epoch = t.noise_decay_epoch;
        c.loss = loss_from_string(t.loss);
        c.seed = t.seed;
        c.heldout_fraction = t.heldout_fraction;
    }
    if (given("--expert-kind")) {
        p.expert.kind = model_kind_from_string(t.expert_kind);
        if (!given("--classifier-kind")) p.classifier.kind = p.expert.kind;
    }
    if (given("--classifier-kind")) p.classifier.kind = model_kind_from_string(t.classifier_kind);
    if (given("--hidden")) p.expert.hidden = p.classifier.hidden = t.hidden;
    if (p.expert.kind == ModelKind::lookup && !t.labels)
        throw Error(ErrorCode::invalid_argument, "lookup experts need a label dataset (--labels)");
    if (given("--experts")) p.initial_experts = t.experts;
    if (given("--init")) p.init = init_kind_from_string(t.init);
    if (given("--init-seed")) p.init_seed = t.init_seed;
    TrainConfig& c = p.config;
    if (given("--optimizer")) c.optimizer = optimizer_from_string(t.optimizer);
    if (given("--schedule")) c.schedule = rate_schedule_from_string(t.schedule);
    if (given("--gamma-exp")) c.gamma_exp = t.gamma_exp;
    if (given("--gamma-cls")) c.gamma_cls = t.gamma_cls;
    if (given("--epochs")) c.epochs = t.epochs;
    if (given("--batch-size")) c.batch_size = t.batch_size;
    if (given("--accumulation")) c.accumulation = t.accumulation;
    if (given("--noise-std")) c.noise_std = t.noise_std;
    if (given("--noise-absolute")) c.noise_relative = false;
    if (given("--noise-decay-epoch")) c.noise_decay_epoch = t.noise_decay_epoch;
    if (given("--loss")) c.loss = loss_from_string(t.loss);
    if (given("--seed")) c.seed = t.seed;
    if (given("--heldout-fraction")) c.heldout_fraction = t.heldout_fraction;
    if (given("--split-at")) {
        c.splits.clear();
        for (const std::string& s : t.split_at) c.splits.push_back(parse_split(s));
    }
    c.validate();
    return p;
}

void report_dead_experts(std::span<const EpochRecord> trace) {
    std::vector<std::size_t> idle;
    for (const EpochRecord& r : trace)
        for (std::size_t i : r.dead_experts) {
            if (idle.size() <= i) idle.resize(i + 1, 0);
            ++idle[i];
        }
    for (std::size_t i = 0; i < idle.size(); ++i)
        if (idle[i] > 0)
            std::cerr << "warning: expert " << i << " won no samples in " << idle[i] << " epoch(s)\n";
}

template <class Given>
int cmd_train(const TrainArgs& t, Given given) {
    const Preset p = resolve_training(t, given);
    const TrainResult r = train(p.data.samples, initial_state(p), p.config);
    if (!t.metrics_out.empty()) {
        std::ofstream out = open_out(t.metrics_out);
        write_metrics_jsonl(out, r.trace);
        close_checked(out, t.metrics_out);
    }
    if (!t.model_out.empty()) {
        std::ofstream out = open_out(t.model_out);
        out << model_to_json(r.state, p.config).dump(2) << '\n';
        close_checked(out, t.model_out);
    }
    report_dead_experts(r.trace);
    if (!t.quiet) std::cout << to_json(r.trace.back()).dump() << '\n';
    return exit_ok;
}

// ---- verify

struct VerifyArgs {
    std::vector<std::string> checks;
    std::optional<std::size_t> trials;
    std::uint64_t seed = 1;
    bool inject_tie = false;
    std::string failure_out;
    std::string replay;
};

void print_result(const CheckResult& r) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " trials=" << r.trials << " failures=" << r.failures
              << " max_residual=" << format_real(r.max_residual) << " tolerance=" << format_real(r.tolerance) << '\n';
    if (!r.passed()) std::cout << "  first failure: " << r.message << '\n';
}

int cmd_verify(const VerifyArgs& v) {
    std::vector<CheckResult> results;
    if (!v.replay.empty()) {
        std::ifstream in = open_in(v.replay);
        nlohmann::json instance;
        try {
            in >> instance;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::io_failure, std::string("cannot parse replay file: ") + e.what());
        }
        try {
            results.push_back(replay_check(instance));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::invalid_argument, std::string("malformed replay instance: ") + e.what());
        }
    } else {
        std::vector<std::string> names = v.checks.empty() ? check_names() : v.checks;
        for (const std::string& n : names)
            if (std::find(check_names().begin(), check_names().end(), n) == check_names().end())
                throw Error(ErrorCode::invalid_argument, "unknown check '" + n + "'");
        if (v.inject_tie && std::find(names.begin(), names.end(), "gradient") == names.end())
            names.push_back("gradient");
        for (const std::string& n : names)
            results.push_back(run_check(n, v.trials.value_or(default_trials(n)), v.seed, v.inject_tie));
    }
    bool ok = true;
    for (const CheckResult& r : results) {
        print_result(r);
        if (r.passed()) continue;
        if (ok) {
            const std::string dump = r.failing.dump();
            if (!v.failure_out.empty()) {
                std::ofstream out = open_out(v.failure_out);
                out << dump << '\n';
                close_checked(out, v.failure_out);
                std::cerr << "failing instance written to " << v.failure_out << '\n';
            } else {
                std::cerr << "failing instance: " << dump << '\n';
            }
        }
        ok = false;
    }
    return ok ? exit_ok : exit_verification;
}

// ---- figures

struct FigureArgs {
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    std::size_t grid_points = 81;
    double grid_lo = -2.0;
    double grid_hi = 2.0;
    std::optional<std::size_t> epochs;
};

/// Shrinks or stretches a preset to `epochs`, keeping split epochs at the
/// same relative position.
void rescale_epochs(TrainConfig& c, std::size_t epochs) {
    for (SplitEvent& s : c.splits)
        s.epoch = 1 + (s.epoch - 1) * epochs / c.epochs;
    c.epochs = epochs;
    if (c.noise_decay_epoch > epochs) c.noise_decay_epoch = epochs;
}

int cmd_figures(const FigureArgs& f) {
    std::filesystem::create_directories(f.out_dir);
    const std::filesystem::path dir(f.out_dir);
    const std::vector<double> grid = linspace(f.grid_lo, f.grid_hi, f.grid_points);
    // Expert/mode matching on the high-density region.
    const std::vector<double> match_grid = linspace(-1.0, 1.0, 41);

    Preset split = multimodal_split_preset(f.seed);
    if (f.epochs) rescale_epochs(split.config, *f.epochs);
    const TrainResult r1 = train(split.data.samples, initial_state(split), split.config);
    {
        const std::string path = (dir / "fig1_loss.csv").string();
        std::ofstream out = open_out(path);
        out << "epoch,train_delta,heldout_delta,n_experts\n";
        for (const EpochRecord& e : r1.trace)
            out << e.epoch << ',' << format_real(e.train_delta) << ',' << format_real(e.heldout_delta) << ','
                << e.n_experts << '\n';
        close_checked(out, path);
    }
    for (const SplitGain& g : split_gains(r1.trace, split.config.splits))
        std::cout << "fig1 split at epoch " << g.epoch << ": heldout " << format_real(g.before) << " -> "
                  << format_real(g.after) << " (drop " << format_real(100.0 * g.margin()) << "%)\n";

    Preset mm = multimodal_preset(f.seed);
    if (f.epochs) rescale_epochs(mm.config, *f.epochs);
    const TrainResult r2 = train(mm.data.samples, initial_state(mm), mm.config);
    MultimodalSpec spec;
    spec.seed = f.seed;
    {
        const std::string path = (dir / "fig2_data.csv").string();
        std::ofstream out = open_out(path);
        out << "x,y\n";
        for (const Sample& s : mm.data.samples)
            out << format_real(std::get<Features>(s.x)[0]) << ',' << format_real(s.y[0]) << '\n';
        close_checked(out, path);
    }
    {
        const std::string path = (dir / "fig2_preds.csv").string();
        std::ofstream out = open_out(path);
        out << "x,expert,y_pred\n";
        for (double x : grid)
            for (std::size_t i = 0; i < r2.state.size(); ++i)
                out << format_real(x) << ',' << i << ',' << format_real(forward(r2.state.experts[i], Features{x})[0])
                    << '\n';
        close_checked(out, path);
    }
    const ModeReport modes = mode_report(r2.state, mm.data, spec, match_grid);
    {
        std::vector<std::size_t> mode_of_expert(r2.state.size());
        for (std::size_t m = 0; m < modes.expert_of_mode.size(); ++m) mode_of_expert[modes.expert_of_mode[m]] = m;
        const std::string path = (dir / "fig3_weights.csv").string();
        std::ofstream out = open_out(path);
        out << "x,expert,weight_pred,weight_true\n";
        for (double x : grid) {
            const std::vector<double> h = classify(r2.state.classifier, Features{x});
            const std::vector<double> truth = mode_probs(spec, x);
            for (std::size_t i = 0; i < r2.state.size(); ++i)
                out << format_real(x) << ',' << i << ',' << format_real(h[i]) << ','
                    << format_real(truth[mode_of_expert[i]]) << '\n';
        }
        close_checked(out, path);
    }
    for (std::size_t m = 0; m < modes.purity.size(); ++m)
        std::cout << "fig2 mode " << m << ": expert " << modes.expert_of_mode[m] << " purity "
                  << format_real(modes.purity[m]) << " rmse " << format_real(modes.rmse[m]) << '\n';
    std::cout << "fig3 weight_error on [-1, 1]: " << format_real(weight_error(r2.state, spec, match_grid)) << '\n';
    return exit_ok;
}

int exit_code_for(const Error& e) {
    return e.code() == ErrorCode::io_failure ? exit_io : exit_validation;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional competitive learning vector quantization"};
    app.require_subcommand(1);

    GenArgs g;
    CLI::App* gen = app.add_subcommand("gen", "Generate a dataset CSV");
    gen->add_option("--experiment", g.experiment, "multimodal, two-dirac or finite")
        ->check(CLI::IsMember({"multimodal", "two-dirac", "finite"}));
    gen->add_option("--n-samples", g.samples, "Sample count (default 8000, 4000 or 1000)");
    gen->add_option("--seed", g.seed, "Generator seed");
    gen->add_option("--out", g.out, "Output CSV")->required();
    gen->add_flag("--with-modes", g.with_modes, "Append the hidden mode column (oracle export)");
    gen->add_option("--a", g.a, "Multimodal logit slopes")->delimiter(',');
    gen->add_option("--b", g.b, "Multimodal logit offsets")->delimiter(',');
    gen->add_option("--sigma", g.sigma, "Multimodal noise std");
    gen->add_option("--offset", g.offset, "Two-Dirac offset");
    gen->add_option("--labels", g.labels, "Finite: label count");
    gen->add_option("--max-atoms", g.max_atoms, "Finite: atoms per label, at most");
    gen->add_option("--dim", g.dim, "Finite: output dimension");
    gen->add_flag("--exact", g.exact, "Finite: enumerate the law instead of sampling");

    TrainArgs t;
    CLI::App* tr = app.add_subcommand("train", "Train an ensemble");
    auto* exp_opt = tr->add_option("--experiment", t.experiment, "Preset: two-dirac, multimodal or multimodal-split")
                        ->check(CLI::IsMember({"two-dirac", "multimodal", "multimodal-split"}));
    auto* data_opt = tr->add_option("--data", t.data, "Dataset CSV");
    exp_opt->excludes(data_opt);
    tr->add_flag("--labels", t.labels, "The dataset's x column holds labels (lookup experts)");
    tr->add_option("--data-seed", t.data_seed, "Preset data seed");
    tr->add_option("--experts", t.experts, "Initial expert count");
    tr->add_option("--expert-kind", t.expert_kind, "constant, lookup, affine or perceptron");
    tr->add_option("--classifier-kind", t.classifier_kind, "Classifier family (default: the experts')");
    tr->add_option("--hidden", t.hidden, "Perceptron hidden width");
    tr->add_option("--init", t.init, "random, centered or marginal");
    tr->add_option("--init-seed", t.init_seed, "Seed of the starting parameters");
    tr->add_option("--optimizer", t.optimizer, "sgd or adam");
    tr->add_option("--schedule", t.schedule, "constant or cosine");
    tr->add_option("--gamma-exp", t.gamma_exp, "Expert learning rate");
    tr->add_option("--gamma-cls", t.gamma_cls, "Classifier learning rate");
    tr->add_option("--epochs", t.epochs, "Epochs");
    tr->add_option("--batch-size", t.batch_size, "Batch size");
    tr->add_option("--accumulation", t.accumulation, "Batches per parameter step");
    tr->add_option("--noise-std", t.noise_std, "Assignment noise std");
    tr->add_flag("--noise-absolute", t.noise_absolute, "Noise std is absolute, not relative to the running loss");
    tr->add_option("--noise-decay-epoch", t.noise_decay_epoch, "Epoch at which the noise reaches 0 (default: last)");
    tr->add_option("--split-at", t.split_at, "EPOCH:EPSILON split event, repeatable");
    tr->add_option("--loss", t.loss, "squared, absolute or huber");
    tr->add_option("--seed", t.seed, "Training seed");
    tr->add_option("--heldout-fraction", t.heldout_fraction, "Held-out fraction");
    tr->add_option("--model-out", t.model_out, "Model JSON");
    tr->add_option("--metrics-out", t.metrics_out, "Metrics JSONL");
    tr->add_flag("--quiet", t.quiet, "Do not print the final record");

    VerifyArgs v;
    CLI::App* ver = app.add_subcommand("verify", "Run the oracle checks");
    ver->add_option("--checks", v.checks, "Comma-separated subset of the checks")->delimiter(',');
    ver->add_option("--trials", v.trials, "Trials per check (default per check)");
    ver->add_option("--seed", v.seed, "Instance seed");
    ver->add_flag("--inject-tie", v.inject_tie, "Add a tied codebook to the gradient check");
    ver->add_option("--failure-out", v.failure_out, "Write the first failing instance here");
    ver->add_option("--replay", v.replay, "Re-run one serialized instance");

    FigureArgs f;
    CLI::App* fig = app.add_subcommand("figures", "Write the figure-data CSVs");
    fig->add_option("--out-dir", f.out_dir, "Output directory");
    fig->add_option("--seed", f.seed, "Data seed");
    fig->add_option("--grid-points", f.grid_points, "Grid size");
    fig->add_option("--grid-lo", f.grid_lo, "Grid lower end");
    fig->add_option("--grid-hi", f.grid_hi, "Grid upper end");
    fig->add_option("--epochs", f.epochs, "Override the preset epoch counts (splits rescaled)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (gen->parsed()) return cmd_gen(g);
        if (tr->parsed()) {
            if (t.experiment.empty() && t.data.empty()) {
                std::cerr << "train: one of --experiment or --data is required\n";
                return exit_usage;
            }
            return cmd_train(t, [tr](const std::string& flag) { return tr->count(flag) > 0; });
        }
        if (ver->parsed()) return cmd_verify(v);
        if (fig->parsed()) return cmd_figures(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    }
    return exit_usage;
}
