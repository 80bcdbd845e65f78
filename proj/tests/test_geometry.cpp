#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "cclvq/geometry.hpp"
#include "cclvq/rng.hpp"

using namespace cclvq;

namespace {

std::vector<Point> line(std::initializer_list<double> xs) {
    std::vector<Point> ps;
    for (double x : xs) ps.push_back(Point{x});
    return ps;
}

Codebook random_codebook(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<Point> ps;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> c(d);
        for (double& v : c) v = rng.normal();
        ps.emplace_back(std::move(c));
    }
    return Codebook(std::move(ps));
}

} // namespace

TEST(Point, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(Point(std::vector<double>{}), Error);
    EXPECT_THROW((Point{1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
    EXPECT_THROW((Point{std::numeric_limits<double>::infinity()}), Error);
}

TEST(Codebook, RejectsMixedDimensions) {
    EXPECT_THROW((Codebook{Point{0.0}, Point{0.0, 1.0}}), Error);
    EXPECT_THROW(Codebook(std::vector<Point>{}), Error);
}

TEST(NearestIndex, Examples) {
    EXPECT_EQ(nearest_index(Point{0.9}, Codebook{Point{0.0}, Point{1.0}}), 1u);
    EXPECT_EQ(nearest_index(Point{0.5}, Codebook{Point{0.0}, Point{1.0}}), 0u);
    EXPECT_EQ(nearest_index(Point{3.0, 4.0}, Codebook{Point{0.0, 0.0}, Point{3.0, 0.0}, Point{0.0, 4.0}}), 2u);
}

TEST(NearestIndex, DimensionMismatchIsStructured) {
    try {
        (void)nearest_index(Point{1.0, 2.0}, Codebook{Point{0.0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::dimension_mismatch);
    }
}

TEST(Project, Examples) {
    EXPECT_EQ(project(Point{0.9}, Codebook{Point{0.0}, Point{1.0}}), Point{1.0});
    const Codebook cb{Point{0.0, 0.0}, Point{3.0, 3.0}};
    EXPECT_EQ(project(Point{2.0, 2.0}, cb), (Point{3.0, 3.0}));
    for (const Point& a : cb) EXPECT_EQ(project(a, cb), a);
}

TEST(Distortion, Examples) {
    EXPECT_EQ(distortion(line({0, 1}), Codebook{Point{0.0}, Point{1.0}}), 0.0);
    EXPECT_DOUBLE_EQ(distortion(line({0, 1}), Codebook{Point{0.5}}), 0.25);
    EXPECT_DOUBLE_EQ(distortion(line({0, 2, 10}), Codebook{Point{1.0}, Point{10.0}}), 2.0 / 3.0);
    EXPECT_THROW((void)distortion(std::vector<Point>{}, Codebook{Point{0.0}}), Error);
}

TEST(QuantizedLaw, Examples) {
    const DiscreteMeasure a = quantized_law(line({0, 0, 1}), Codebook{Point{0.0}, Point{1.0}});
    ASSERT_EQ(a.size(), 2u);
    EXPECT_DOUBLE_EQ(a[0].weight, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(a[1].weight, 1.0 / 3.0);
    const DiscreteMeasure b = quantized_law(line({5}), Codebook{Point{5.0}});
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0].weight, 1.0);
    const DiscreteMeasure c = quantized_law(line({0.4, 0.6}), Codebook{Point{0.0}, Point{1.0}});
    EXPECT_EQ(c[0].weight, 0.5);
    EXPECT_EQ(c[1].weight, 0.5);
}

TEST(QuantizedLaw, KeepsEmptyCells) {
    const DiscreteMeasure m = quantized_law(line({0, 0.1}), Codebook{Point{0.0}, Point{100.0}});
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[1].weight, 0.0);
}

TEST(DiscreteMeasure, ValidatesWeights) {
    EXPECT_THROW(DiscreteMeasure({{Point{0.0}, 0.5}}), Error);
    EXPECT_THROW(DiscreteMeasure({{Point{0.0}, 1.5}, {Point{1.0}, -0.5}}), Error);
    EXPECT_THROW(DiscreteMeasure({{Point{0.0}, 0.5}, {Point{1.0, 1.0}, 0.5}}), Error);
    EXPECT_NO_THROW(DiscreteMeasure({{Point{0.0}, 0.25}, {Point{1.0}, 0.75}}));
}

TEST(GeometryProperty, ProjectionIsNearest) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng.index(3);
        const Codebook cb = random_codebook(rng, 1 + rng.index(6), d);
        const Point y = random_codebook(rng, 1, d)[0];
        const double best = squared_distance(y, project(y, cb));
        for (const Point& a : cb) EXPECT_LE(best, squared_distance(y, a));
    }
}

TEST(GeometryProperty, DistortionIsMeanProjectionError) {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 1 + rng.index(3);
        const Codebook cb = random_codebook(rng, 1 + rng.index(5), d);
        const std::vector<Point> ys = random_codebook(rng, 1 + rng.index(40), d).points();
        double total = 0.0;
        for (const Point& y : ys) total += squared_distance(y, project(y, cb));
        EXPECT_EQ(distortion(ys, cb), total / static_cast<double>(ys.size()));
    }
}

TEST(GeometryProperty, QuantizedWeightsAreCountFractions) {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const Codebook cb = random_codebook(rng, 1 + rng.index(5), 2);
        const std::vector<Point> ys = random_codebook(rng, 1 + rng.index(40), 2).points();
        const DiscreteMeasure m = quantized_law(ys, cb);
        double total = 0.0;
        for (const Atom& a : m) {
            EXPECT_GE(a.weight, 0.0);
            const double count = a.weight * static_cast<double>(ys.size());
            EXPECT_NEAR(count, std::round(count), 1e-9);
            total += a.weight;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(GeometryProperty, NearestIndexIsPermutationCovariant) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        // Grid coordinates produce ties, which the rule must track through the permutation.
        std::vector<Point> ps;
        const std::size_t n = 1 + rng.index(6);
        for (std::size_t i = 0; i < n; ++i) ps.push_back(Point{static_cast<double>(rng.index(5))});
        const Point y{static_cast<double>(rng.index(5)) + 0.5 * static_cast<double>(rng.index(2))};
        const std::vector<std::size_t> perm = rng.permutation(n);
        std::vector<Point> permuted;
        for (std::size_t i : perm) permuted.push_back(ps[i]);
        const std::size_t got = nearest_index(y, Codebook(permuted));
        // Smallest permuted index among the minimizers of the original codebook.
        double best = std::numeric_limits<double>::infinity();
        for (const Point& p : ps) best = std::min(best, squared_distance(y, p));
        std::size_t expected = n;
        for (std::size_t k = 0; k < n && expected == n; ++k)
            if (squared_distance(y, ps[perm[k]]) == best) expected = k;
        EXPECT_EQ(got, expected);
    }
}

TEST(Loss, ValuesAndGradients) {
    const std::vector<double> y{1.0, -2.0};
    const std::vector<double> p{0.5, 1.0};
    EXPECT_DOUBLE_EQ(loss_value(LossKind::squared_euclidean, y, p), 0.25 + 9.0);
    EXPECT_DOUBLE_EQ(loss_value(LossKind::absolute, y, p), 0.5 + 3.0);
    const std::vector<double> g = loss_gradient(LossKind::squared_euclidean, y, p);
    EXPECT_DOUBLE_EQ(g[0], -1.0);
    EXPECT_DOUBLE_EQ(g[1], 6.0);
    for (LossKind k : {LossKind::squared_euclidean, LossKind::absolute, LossKind::huber})
        EXPECT_EQ(loss_from_string(to_string(k)), k);
    EXPECT_THROW((void)loss_from_string("cubic"), Error);
}
