// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cclvq/cclvq.hpp"
#include "cclvq/clvq.hpp"
#include "cclvq/experiments.hpp"
#include "cclvq/io.hpp"
#include "cclvq/metrics.hpp"
#include "cclvq/verify.hpp"

using namespace cclvq;

namespace {

// Tolerances.
constexpr double uniform_point_tol = 1e-2;
constexpr double uniform_distortion_rel = 0.05;
constexpr double two_dirac_delta_max = 1e-3;
constexpr double two_dirac_pred_tol = 0.05;
constexpr double two_dirac_weight_tol = 0.05;
constexpr double fig1_min_drop = 0.20;
constexpr double fig2_min_purity = 0.9;
constexpr double fig2_rmse_sigmas = 3.0; // RMSE bound in units of the noise std
constexpr double fig3_max_weight_error = 0.10;

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
    if (!ok) ++failures;
}

std::string num(double v) {
    std::ostringstream ss;
    ss.precision(4);
    ss << v;
    return ss.str();
}

void oracle(const std::string& label, const std::string& check, std::size_t trials) {
    const CheckResult r = run_check(check, trials, 1);
    report(label, r.passed() && r.trials == trials,
           "trials=" + std::to_string(r.trials) + " failures=" + std::to_string(r.failures) +
               " max_residual=" + num(r.max_residual) + " tol=" + num(r.tolerance));
}

void uniform_quantizer() {
    // One uniform draw per stratum [j, j + 1) / 4000. An i.i.d. sample of this
    // size has its own optimal quantizer up to 0.02 away from (2i + 1) / 8,
    // which would swamp the 1e-2 tolerance.
    Rng rng(2024);
    std::vector<Point> ys;
    for (int j = 0; j < 4000; ++j) ys.push_back(Point{(j + rng.uniform()) / 4000.0});
    ClvqConfig c;
    c.n = 4;
    c.gamma0 = 0.5;
    c.steps = 200000;
    c.horizon = 500.0;
    c.seed = 7;
    Codebook cb = train_clvq(ys, c).codebook;
    std::vector<double> pts;
    for (std::size_t i = 0; i < cb.size(); ++i) pts.push_back(cb[i][0]);
    std::sort(pts.begin(), pts.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < 4; ++i) worst = std::max(worst, std::abs(pts[i] - (2.0 * i + 1.0) / 8.0));

    // Distortion under the uniform law itself via a dense midpoint grid.
    std::vector<Point> dense;
    const int m = 200000;
    for (int k = 0; k < m; ++k) dense.push_back(Point{(k + 0.5) / m});
    const double d_law = distortion(dense, cb);
    const double d_emp = distortion(ys, cb);
    const double target = 1.0 / 192.0;
    const double rel = std::max(std::abs(d_law - target), std::abs(d_emp - target)) / target;
    report("clvq-uniform-n4", worst <= uniform_point_tol && rel <= uniform_distortion_rel,
           "max_point_error=" + num(worst) + " (tol " + num(uniform_point_tol) + ") distortion_law=" +
               num(d_law) + " empirical=" + num(d_emp) + " rel_error=" + num(rel) + " (tol " +
               num(uniform_distortion_rel) + ")");
}

void two_dirac() {
    const Preset p = two_dirac_preset();
    const TrainResult r = train(p.data.samples, initial_state(p), p.config);
    const double held = r.trace.back().heldout_delta;
    double pred_err = 0.0;
    double weight_err = 0.0;
    for (double x : linspace(-2.0, 2.0, 81)) {
        const Input in = Features{x};
        std::vector<double> outs;
        for (const ExpertFunction& f : r.state.experts) outs.push_back(forward(f, in)[0]);
        std::sort(outs.begin(), outs.end());
        pred_err = std::max({pred_err, std::abs(outs[0] - (x - 100.0)), std::abs(outs[1] - (x + 100.0))});
        for (double h : classify(r.state.classifier, in)) weight_err = std::max(weight_err, std::abs(h - 0.5));
    }
    report("two-dirac", r.state.size() == 2 && held <= two_dirac_delta_max && pred_err <= two_dirac_pred_tol &&
                            weight_err <= two_dirac_weight_tol,
           "experts=" + std::to_string(r.state.size()) + " heldout_delta=" + num(held) + " (max " +
               num(two_dirac_delta_max) + ") pred_error=" + num(pred_err) + " (tol " + num(two_dirac_pred_tol) +
               ") weight_error=" + num(weight_err) + " (tol " + num(two_dirac_weight_tol) + ")");
}

void fig1() {
    const Preset p = multimodal_split_preset();
    const TrainResult r = train(p.data.samples, initial_state(p), p.config);
    const std::vector<SplitGain> gains = split_gains(r.trace, p.config.splits);
    bool ok = gains.size() == 2 && r.state.size() == 3;
    std::string detail;
    for (const SplitGain& g : gains) {
        ok = ok && g.margin() >= fig1_min_drop;
        detail += "split@" + std::to_string(g.epoch) + " " + num(g.before) + "->" + num(g.after) + " drop=" +
                  num(100.0 * g.margin()) + "% ";
    }
    report("fig1-split-drops", ok, detail + "(min " + num(100.0 * fig1_min_drop) + "%)");
}

void fig2_fig3() {
    const Preset p = multimodal_preset();
    const TrainResult r = train(p.data.samples, initial_state(p), p.config);
    const MultimodalSpec spec;
    const std::vector<double> grid = linspace(-1.0, 1.0, 41);
    const ModeReport m = mode_report(r.state, p.data, spec, grid);
    const double fig2_max_rmse = fig2_rmse_sigmas * spec.sigma;
    bool ok = true;
    std::string detail;
    for (std::size_t k = 0; k < m.purity.size(); ++k) {
        ok = ok && m.purity[k] >= fig2_min_purity && m.rmse[k] <= fig2_max_rmse;
        detail += "mode" + std::to_string(k) + " purity=" + num(m.purity[k]) + " rmse=" + num(m.rmse[k]) + " ";
    }
    report("fig2-modes", ok, detail + "(purity >= " + num(fig2_min_purity) + ", rmse <= " + num(fig2_max_rmse) + ")");
    const double we = weight_error(r.state, spec, grid);
    report("fig3-weights", we <= fig3_max_weight_error,
           "weight_error=" + num(we) + " (max " + num(fig3_max_weight_error) + ")");
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void cli_determinism() {
    const auto dir = std::filesystem::temp_directory_path() / "cclvq_acceptance";
    std::filesystem::create_directories(dir);
    std::vector<std::string> outputs;
    bool ran = true;
    for (const char* tag : {"a", "b"}) {
        const auto out = dir / (std::string(tag) + ".jsonl");
        const std::string cmd = std::string(CCLVQ_CLI_PATH) + " train --experiment two-dirac --quiet --metrics-out " +
                                out.string() + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        ran = ran && WIFEXITED(status) && WEXITSTATUS(status) == 0;
        outputs.push_back(slurp(out));
    }
    std::filesystem::remove_all(dir);
    report("cli-determinism", ran && !outputs[0].empty() && outputs[0] == outputs[1],
           "metrics bytes=" + std::to_string(outputs[0].size()) + (outputs[0] == outputs[1] ? " identical" : " differ"));
}

void timed(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report("exception", false, e.what());
    }
}

} // namespace

int main() {
    const auto start = std::chrono::steady_clock::now();
    timed([] { oracle("w2-identity", "w2-identity", 200); });
    timed([] { oracle("gradient", "gradient", 100); });
    timed(uniform_quantizer);
    timed([] { oracle("finite-w2", "finite-w2", 50); });
    timed([] { oracle("finite-optimality", "finite-optimality", 20); });
    timed(two_dirac);
    timed(fig1);
    timed(fig2_fig3);
    timed([] { oracle("split-invariance", "split", 20); });
    timed(cli_determinism);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in " << num(secs) << " s"
              << std::endl;
    return failures == 0 ? 0 : 1;
}
