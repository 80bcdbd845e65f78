#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cclvq/models.hpp"
#include "cclvq/rng.hpp"

using namespace cclvq;

namespace {

Input random_input(const ModelShape& s, Rng& rng) {
    if (s.kind == ModelKind::lookup) return Label{rng.index(s.input_dim)};
    Features f(s.input_dim);
    for (double& v : f) v = rng.normal();
    return f;
}

ParametricMap random_map(const ModelShape& s, Rng& rng) {
    ParametricMap m(s);
    for (double& p : m.params()) p = rng.normal();
    return m;
}

ModelShape random_shape(ModelKind kind, Rng& rng, std::size_t out = 0) {
    return {kind, 1 + rng.index(4), out ? out : 1 + rng.index(3), 1 + rng.index(8)};
}

/// ||analytic - fd||_inf / max(||analytic||_inf, 1e-6).
template <class F>
double fd_error(std::span<double> params, std::span<const double> analytic, F objective) {
    constexpr double h = 1e-6;
    double err = 0.0;
    double scale = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double keep = params[k];
        params[k] = keep + h;
        const double up = objective();
        params[k] = keep - h;
        const double down = objective();
        params[k] = keep;
        err = std::max(err, std::abs((up - down) / (2.0 * h) - analytic[k]));
        scale = std::max(scale, std::abs(analytic[k]));
    }
    return err / std::max(scale, 1e-6);
}

} // namespace

TEST(Forward, Examples) {
    ParametricMap affine({ModelKind::affine, 2, 1, default_hidden_width}, {0.0, 0.0, 3.5});
    EXPECT_EQ(forward(affine, Features{1.0, -7.0}), Point{3.5});
    ParametricMap table({ModelKind::lookup, 2, 2, default_hidden_width}, {1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(forward(table, Label{1}), (Point{3.0, 4.0}));
    ModelShape mlp{ModelKind::perceptron, 2, 2, 4};
    std::vector<double> p(mlp.param_count(), 0.0);
    p[p.size() - 2] = -1.0;
    p[p.size() - 1] = 2.0;
    EXPECT_EQ(forward(ParametricMap(mlp, p), Features{0.3, 0.7}), (Point{-1.0, 2.0}));
}

TEST(Forward, Errors) {
    ParametricMap table({ModelKind::lookup, 2, 1, default_hidden_width});
    try {
        (void)forward(table, Label{2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::unknown_label);
    }
    ParametricMap affine({ModelKind::affine, 2, 1, default_hidden_width});
    EXPECT_THROW((void)forward(affine, Features{1.0}), Error);
    EXPECT_THROW((void)forward(affine, Label{0}), Error);
    EXPECT_THROW(ParametricMap({ModelKind::affine, 2, 1, default_hidden_width}, {1.0}), Error);
}

TEST(GradParams, Examples) {
    ParametricMap c({ModelKind::constant, 1, 1, default_hidden_width}, {2.5});
    EXPECT_DOUBLE_EQ(grad_params(c, Features{9.0}, Point{1.0})[0], 2.0 * (2.5 - 1.0));
    ParametricMap table({ModelKind::lookup, 3, 2, default_hidden_width}, {1, 1, 2, 2, 3, 3});
    const std::vector<double> g = grad_params(table, Label{1}, Point{0.0, 5.0});
    EXPECT_EQ(g, (std::vector<double>{0, 0, 4, -6, 0, 0}));
}

TEST(ModelsProperty, ExpertGradientsMatchFiniteDifferences) {
    Rng rng(30);
    for (ModelKind kind : {ModelKind::constant, ModelKind::lookup, ModelKind::affine, ModelKind::perceptron}) {
        for (LossKind loss : {LossKind::squared_euclidean, LossKind::huber}) {
            for (int t = 0; t < 100; ++t) {
                const ModelShape s = random_shape(kind, rng);
                ParametricMap f = random_map(s, rng);
                const Input x = random_input(s, rng);
                std::vector<double> y(s.output_dim);
                for (double& v : y) v = 3.0 * rng.normal();
                const Point target(y);
                const std::vector<double> g = grad_params(f, x, target, loss);
                const double err =
                    fd_error(f.params(), g, [&] { return loss_value(loss, target, forward(f, x)); });
                EXPECT_LE(err, 1e-5) << to_string(kind) << " trial " << t;
            }
        }
    }
}

TEST(Classify, Examples) {
    WeightClassifier zero(ParametricMap({ModelKind::affine, 2, 4, default_hidden_width}));
    for (double p : classify(zero, Features{1.0, 2.0})) EXPECT_DOUBLE_EQ(p, 0.25);
    WeightClassifier gap(ParametricMap({ModelKind::constant, 1, 2, default_hidden_width}, {1e6, 0.0}));
    const std::vector<double> p = classify(gap, Features{0.0});
    EXPECT_NEAR(p[0], 1.0, 1e-9);
    EXPECT_NEAR(p[1], 0.0, 1e-9);
    EXPECT_GT(p[1], 0.0);
}

TEST(GradClassifier, UniformResidual) {
    WeightClassifier h(ParametricMap({ModelKind::constant, 1, 3, default_hidden_width}));
    const std::vector<double> g = grad_classifier(h, Features{0.0}, 1);
    EXPECT_NEAR(g[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(g[1], 1.0 / 3.0 - 1.0, 1e-15);
    EXPECT_NEAR(g[2], 1.0 / 3.0, 1e-15);
    EXPECT_THROW((void)grad_classifier(h, Features{0.0}, 3), Error);
}

TEST(ModelsProperty, ClassifierGradientsMatchFiniteDifferences) {
    Rng rng(31);
    for (ModelKind kind : {ModelKind::constant, ModelKind::lookup, ModelKind::affine, ModelKind::perceptron}) {
        for (int t = 0; t < 100; ++t) {
            const std::size_t n = 2 + rng.index(4);
            const ModelShape s = random_shape(kind, rng, n);
            WeightClassifier h(random_map(s, rng));
            const Input x = random_input(s, rng);
            const std::size_t label = rng.index(n);
            const std::vector<double> g = grad_classifier(h, x, label);
            const double err = fd_error(h.params(), g, [&] { return -std::log(classify(h, x)[label]); });
            EXPECT_LE(err, 1e-5) << to_string(kind) << " trial " << t;
        }
    }
}

TEST(ModelsProperty, OutputBiasGradientSumsToZero) {
    Rng rng(32);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + rng.index(4);
        const ModelShape s = random_shape(ModelKind::perceptron, rng, n);
        WeightClassifier h(random_map(s, rng));
        const std::vector<double> g = grad_classifier(h, random_input(s, rng), rng.index(n));
        double total = 0.0;
        for (std::size_t k = g.size() - n; k < g.size(); ++k) total += g[k];
        EXPECT_NEAR(total, 0.0, 1e-12);
    }
}

TEST(ModelsProperty, ProbabilitiesOnTheSimplex) {
    Rng rng(33);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.index(5);
        const ModelShape s = random_shape(ModelKind::affine, rng, n);
        ParametricMap m(s);
        for (double& p : m.params()) p = 50.0 * rng.normal();
        const std::vector<double> p = classify(WeightClassifier(m), random_input(s, rng));
        double total = 0.0;
        for (double v : p) {
            EXPECT_GT(v, 0.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(ModelsProperty, SplitClassHalvesTheMass) {
    Rng rng(34);
    for (ModelKind kind : {ModelKind::constant, ModelKind::lookup, ModelKind::affine, ModelKind::perceptron}) {
        for (int t = 0; t < 30; ++t) {
            const std::size_t n = 1 + rng.index(4);
            const ModelShape s = random_shape(kind, rng, n);
            const WeightClassifier h(random_map(s, rng));
            const std::size_t source = rng.index(n);
            const WeightClassifier g = h.with_split_class(source);
            ASSERT_EQ(g.classes(), n + 1);
            const Input x = random_input(s, rng);
            const std::vector<double> before = classify(h, x);
            const std::vector<double> after = classify(g, x);
            for (std::size_t i = 0; i < n; ++i)
                EXPECT_NEAR(after[i], i == source ? before[i] / 2.0 : before[i], 1e-9);
            EXPECT_NEAR(after[n], before[source] / 2.0, 1e-9);
        }
    }
}

TEST(Initialize, DenseLayersAreBoundedByFanIn) {
    Rng rng(35);
    ModelShape s{ModelKind::perceptron, 4, 2, 9};
    ParametricMap m(s);
    m.initialize(rng);
    // Hidden layer: fan-in 4; output layer: fan-in 9.
    const std::size_t hidden_block = s.hidden * s.input_dim + s.hidden;
    for (std::size_t k = 0; k < m.param_count(); ++k)
        EXPECT_LE(std::abs(m.params()[k]), k < hidden_block ? 0.5 : 1.0 / 3.0);
    ParametricMap table({ModelKind::lookup, 3, 2, default_hidden_width});
    table.initialize(rng);
    for (double p : table.params()) EXPECT_EQ(p, 0.0);
}
