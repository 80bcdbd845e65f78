#include <gtest/gtest.h>

#include <vector>

#include "cclvq/geometry.hpp"
#include "cclvq/rng.hpp"
#include "cclvq/wasserstein.hpp"

using namespace cclvq;

namespace {

DiscreteMeasure dirac(double x) { return DiscreteMeasure({{Point{x}, 1.0}}); }

DiscreteMeasure random_measure(Rng& rng, std::size_t d, std::size_t max_atoms, bool grid) {
    const std::size_t k = 1 + rng.index(max_atoms);
    std::vector<Atom> atoms;
    double total = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        std::vector<double> c(d);
        for (double& v : c) v = grid ? static_cast<double>(rng.index(4)) : rng.normal();
        const double w = rng.uniform(0.1, 1.0);
        total += w;
        atoms.push_back({Point(std::move(c)), w});
    }
    for (Atom& a : atoms) a.weight /= total;
    return DiscreteMeasure(std::move(atoms), 1e-9);
}

} // namespace

TEST(W2Discrete, Examples) {
    EXPECT_NEAR(w2_discrete(dirac(0.0), dirac(1.0)).distance, 1.0, 1e-12);
    const DiscreteMeasure two({{Point{0.0}, 0.5}, {Point{2.0}, 0.5}});
    EXPECT_NEAR(w2_discrete(two, dirac(1.0)).distance, 1.0, 1e-12);
    EXPECT_NEAR(w2_discrete(two, two).distance, 0.0, 1e-12);
}

TEST(W2Discrete, Errors) {
    const DiscreteMeasure flat({{Point{0.0}, 1.0}});
    const DiscreteMeasure plane({{Point{0.0, 0.0}, 1.0}});
    EXPECT_THROW((void)w2_discrete(flat, plane), Error);
    std::vector<Atom> many;
    for (std::size_t i = 0; i <= max_transport_atoms; ++i)
        many.push_back({Point{static_cast<double>(i)}, 1.0 / static_cast<double>(max_transport_atoms + 1)});
    EXPECT_THROW((void)w2_discrete(DiscreteMeasure(many, 1e-9), flat), Error);
}

TEST(W2OneD, Examples) {
    const DiscreteMeasure a({{Point{0.0}, 0.5}, {Point{1.0}, 0.5}});
    const DiscreteMeasure b({{Point{1.0}, 0.5}, {Point{2.0}, 0.5}});
    EXPECT_NEAR(w2_1d(a, b), 1.0, 1e-12);
    EXPECT_NEAR(w2_1d(a, a), 0.0, 1e-12);
    EXPECT_NEAR(w2_1d(dirac(0.0), DiscreteMeasure({{Point{-1.0}, 0.5}, {Point{1.0}, 0.5}})), 1.0, 1e-12);
    EXPECT_THROW((void)w2_1d(DiscreteMeasure({{Point{0.0, 0.0}, 1.0}}), DiscreteMeasure({{Point{0.0, 0.0}, 1.0}})),
                 Error);
}

TEST(W2ToQuantized, Examples) {
    const std::vector<Point> ys{Point{0.0}, Point{1.0}};
    EXPECT_NEAR(w2_to_quantized(ys, Codebook{Point{0.5}}), 0.5, 1e-12);
    EXPECT_NEAR(w2_to_quantized(ys, Codebook{Point{0.0}, Point{1.0}}), 0.0, 1e-12);
    const std::vector<Point> zs{Point{0.0}, Point{2.0}, Point{10.0}};
    EXPECT_NEAR(w2_to_quantized(zs, Codebook{Point{1.0}, Point{10.0}}), std::sqrt(2.0 / 3.0), 1e-12);
}

TEST(BestSupportedW2, Examples) {
    const std::vector<Point> ys{Point{0.0}, Point{1.0}};
    EXPECT_NEAR(best_supported_w2(ys, ys), 0.0, 1e-12);
    EXPECT_NEAR(best_supported_w2(ys, std::vector<Point>{Point{0.5}}), 0.5, 1e-12);
    EXPECT_NEAR(best_supported_w2(std::vector<Point>{Point{0.0}, Point{4.0}},
                                  std::vector<Point>{Point{1.0}, Point{3.0}}),
                1.0, 1e-12);
}

TEST(WassersteinProperty, MetricAxioms) {
    Rng rng(10);
    for (int t = 0; t < 60; ++t) {
        const std::size_t d = 1 + rng.index(3);
        const bool grid = t % 3 == 0;
        const DiscreteMeasure a = random_measure(rng, d, 8, grid);
        const DiscreteMeasure b = random_measure(rng, d, 8, grid);
        const DiscreteMeasure c = random_measure(rng, d, 8, grid);
        const double ab = w2_discrete(a, b).distance;
        EXPECT_NEAR(ab, w2_discrete(b, a).distance, 1e-9);
        EXPECT_LE(w2_discrete(a, a).distance, 1e-9);
        EXPECT_LE(w2_discrete(a, c).distance, ab + w2_discrete(b, c).distance + 1e-9);
    }
}

TEST(WassersteinProperty, PlanIsFeasibleAndPriced) {
    Rng rng(11);
    for (int t = 0; t < 60; ++t) {
        const std::size_t d = 1 + rng.index(3);
        const DiscreteMeasure a = random_measure(rng, d, 12, t % 2 == 0);
        const DiscreteMeasure b = random_measure(rng, d, 12, t % 2 == 0);
        const TransportResult r = w2_discrete(a, b);
        EXPECT_LE(marginal_error(r.plan, a, b), 1e-9);
        EXPECT_NEAR(r.plan.total(), 1.0, 1e-9);
        for (double m : r.plan.mass()) EXPECT_GE(m, -1e-12);
        EXPECT_NEAR(plan_cost(r.plan, a, b), r.cost, 1e-9);
        EXPECT_NEAR(r.distance * r.distance, r.cost, 1e-9);
    }
}

TEST(WassersteinProperty, AgreesWithQuantileCoupling) {
    Rng rng(12);
    for (int t = 0; t < 100; ++t) {
        const DiscreteMeasure a = random_measure(rng, 1, 15, t % 2 == 0);
        const DiscreteMeasure b = random_measure(rng, 1, 15, t % 2 == 0);
        EXPECT_NEAR(w2_discrete(a, b).distance, w2_1d(a, b), 1e-9);
    }
}

TEST(WassersteinProperty, MergesDuplicateAtoms) {
    const DiscreteMeasure split({{Point{0.0}, 0.25}, {Point{0.0}, 0.25}, {Point{3.0}, 0.5}});
    const DiscreteMeasure merged({{Point{0.0}, 0.5}, {Point{3.0}, 0.5}});
    const DiscreteMeasure target({{Point{1.0}, 0.5}, {Point{4.0}, 0.5}});
    const TransportResult r = w2_discrete(split, target);
    EXPECT_NEAR(r.cost, w2_discrete(merged, target).cost, 1e-12);
    EXPECT_LE(marginal_error(r.plan, split, target), 1e-12);
}
