#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cclvq/error.hpp"

namespace cclvq {

/// A point of R^d, d >= 1, with finite coordinates.
class Point {
public:
    Point() = default;

    explicit Point(std::vector<double> coords) : coords_(std::move(coords)) { check(); }

    Point(std::initializer_list<double> coords) : coords_(coords) { check(); }

    static Point zeros(std::size_t dim) { return Point(std::vector<double>(dim, 0.0)); }

    [[nodiscard]] std::size_t dim() const noexcept { return coords_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return coords_[i]; }
    [[nodiscard]] double& operator[](std::size_t i) { return coords_[i]; }
    [[nodiscard]] std::span<const double> coords() const noexcept { return coords_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return coords_; }

    [[nodiscard]] bool is_finite() const noexcept {
        for (double c : coords_)
            if (!std::isfinite(c)) return false;
        return true;
    }

    bool operator==(const Point&) const = default;
    auto operator<=>(const Point&) const = default;

private:
    void check() const {
        detail::require(!coords_.empty(), ErrorCode::invalid_argument, "point must have dimension >= 1");
        detail::require(is_finite(), ErrorCode::invalid_argument, "point coordinates must be finite");
    }

    std::vector<double> coords_;
};

inline double squared_distance(const Point& a, const Point& b) {
    if (a.dim() != b.dim())
        throw Error(ErrorCode::dimension_mismatch,
                    "points of dimension " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
    double sum = 0.0;
    for (std::size_t k = 0; k < a.dim(); ++k) {
        const double diff = a[k] - b[k];
        sum += diff * diff;
    }
    return sum;
}

inline double distance(const Point& a, const Point& b) { return std::sqrt(squared_distance(a, b)); }

/// Ordered n-point quantizer; index i identifies cell i.
class Codebook {
public:
    Codebook() = default;

    explicit Codebook(std::vector<Point> points) : points_(std::move(points)) {
        detail::require(!points_.empty(), ErrorCode::empty_input, "codebook must contain at least one point");
        const std::size_t d = points_.front().dim();
        detail::require(d >= 1, ErrorCode::invalid_argument, "codebook points must have dimension >= 1");
        for (const Point& p : points_) {
            detail::require(p.dim() == d, ErrorCode::dimension_mismatch, "codebook points differ in dimension");
            detail::require(p.is_finite(), ErrorCode::invalid_argument, "codebook points must be finite");
        }
    }

    Codebook(std::initializer_list<Point> points) : Codebook(std::vector<Point>(points)) {}

    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
    [[nodiscard]] bool empty() const noexcept { return points_.empty(); }
    [[nodiscard]] std::size_t dim() const noexcept { return points_.empty() ? 0 : points_.front().dim(); }
    [[nodiscard]] const Point& operator[](std::size_t i) const { return points_[i]; }
    [[nodiscard]] Point& operator[](std::size_t i) { return points_[i]; }
    [[nodiscard]] const std::vector<Point>& points() const noexcept { return points_; }

    auto begin() const noexcept { return points_.begin(); }
    auto end() const noexcept { return points_.end(); }

    bool operator==(const Codebook&) const = default;

private:
    std::vector<Point> points_;
};

/// Loss between a target y and a prediction. Only squared_euclidean carries
/// the Wasserstein-2 identities; the others are accepted by the trainers
/// for the generalized winner rule and have no W2 guarantee.
enum class LossKind { squared_euclidean, absolute, huber };

inline const char* to_string(LossKind kind) noexcept {
    switch (kind) {
    case LossKind::squared_euclidean: return "squared";
    case LossKind::absolute: return "absolute";
    case LossKind::huber: return "huber";
    }
    return "unknown";
}

inline LossKind loss_from_string(const std::string& name) {
    if (name == "squared" || name == "squared_euclidean") return LossKind::squared_euclidean;
    if (name == "absolute" || name == "l1") return LossKind::absolute;
    if (name == "huber") return LossKind::huber;
    throw Error(ErrorCode::invalid_argument, "unknown loss '" + name + "'");
}

/// Huber transition point.
inline constexpr double huber_delta = 1.0;

inline double loss_value(LossKind kind, std::span<const double> y, std::span<const double> pred) {
    detail::require(y.size() == pred.size(), ErrorCode::dimension_mismatch, "loss arguments differ in dimension");
    double sum = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double r = pred[k] - y[k];
        switch (kind) {
        case LossKind::squared_euclidean: sum += r * r; break;
        case LossKind::absolute: sum += std::abs(r); break;
        case LossKind::huber: {
            const double a = std::abs(r);
            sum += a <= huber_delta ? 0.5 * r * r : huber_delta * (a - 0.5 * huber_delta);
            break;
        }
        }
    }
    return sum;
}

inline double loss_value(LossKind kind, const Point& y, const Point& pred) {
    return loss_value(kind, y.coords(), pred.coords());
}

/// Gradient of the loss with respect to the prediction. The absolute loss
/// uses sign(r) with sign(0) = 0.
inline std::vector<double> loss_gradient(LossKind kind, std::span<const double> y, std::span<const double> pred) {
    detail::require(y.size() == pred.size(), ErrorCode::dimension_mismatch, "loss arguments differ in dimension");
    std::vector<double> grad(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double r = pred[k] - y[k];
        switch (kind) {
        case LossKind::squared_euclidean: grad[k] = 2.0 * r; break;
        case LossKind::absolute: grad[k] = static_cast<double>((r > 0.0) - (r < 0.0)); break;
        case LossKind::huber: grad[k] = std::abs(r) <= huber_delta ? r : huber_delta * ((r > 0.0) - (r < 0.0)); break;
        }
    }
    return grad;
}

struct Atom {
    Point point;
    double weight = 0.0;

    bool operator==(const Atom&) const = default;
};

inline constexpr double measure_weight_tolerance = 1e-12;

/// Finitely supported probability measure on R^d.
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;

    explicit DiscreteMeasure(std::vector<Atom> atoms, double tolerance = measure_weight_tolerance)
        : atoms_(std::move(atoms)) {
        detail::require(!atoms_.empty(), ErrorCode::invalid_measure, "measure must have at least one atom");
        const std::size_t d = atoms_.front().point.dim();
        double total = 0.0;
        for (const Atom& a : atoms_) {
            detail::require(a.point.dim() == d, ErrorCode::dimension_mismatch, "measure atoms differ in dimension");
            detail::require(std::isfinite(a.weight) && a.weight >= 0.0, ErrorCode::invalid_measure,
                            "measure weights must be finite and nonnegative");
            total += a.weight;
        }
        if (std::abs(total - 1.0) > tolerance)
            throw Error(ErrorCode::invalid_measure, "measure weights sum to " + std::to_string(total));
    }

    [[nodiscard]] std::size_t size() const noexcept { return atoms_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return atoms_.empty() ? 0 : atoms_.front().point.dim(); }
    [[nodiscard]] const Atom& operator[](std::size_t i) const { return atoms_[i]; }
    [[nodiscard]] const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    auto begin() const noexcept { return atoms_.begin(); }
    auto end() const noexcept { return atoms_.end(); }

private:
    std::vector<Atom> atoms_;
};

/// Uniform measure on the given samples (duplicates are kept as separate atoms).
inline DiscreteMeasure empirical_measure(std::span<const Point> ys) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "no samples");
    std::vector<Atom> atoms;
    atoms.reserve(ys.size());
    const double w = 1.0 / static_cast<double>(ys.size());
    for (const Point& y : ys) atoms.push_back({y, w});
    return DiscreteMeasure(std::move(atoms));
}

/// Category of a finite input space.
struct Label {
    std::size_t value = 0;

    auto operator<=>(const Label&) const = default;
};

using Features = std::vector<double>;

/// An input x: either a real feature vector or a label of a finite space.
using Input = std::variant<Features, Label>;

struct Sample {
    Input x;
    Point y;
};

namespace detail {

inline void check_codebook_dim(const Point& y, const Codebook& codebook) {
    require(!codebook.empty(), ErrorCode::empty_input, "empty codebook");
    if (y.dim() != codebook.dim())
        throw Error(ErrorCode::dimension_mismatch,
                    "point of dimension " + std::to_string(y.dim()) + " against codebook of dimension " +
                        std::to_string(codebook.dim()));
}

} // namespace detail

/// Index of the closest codebook point; smallest index wins ties.
inline std::size_t nearest_index(const Point& y, const Codebook& codebook,
                                 LossKind loss = LossKind::squared_euclidean) {
    detail::check_codebook_dim(y, codebook);
    std::size_t best = 0;
    double best_loss = loss_value(loss, y, codebook[0]);
    for (std::size_t i = 1; i < codebook.size(); ++i) {
        const double l = loss_value(loss, y, codebook[i]);
        if (l < best_loss) {
            best_loss = l;
            best = i;
        }
    }
    return best;
}

/// Closest-neighbor projection onto the codebook.
inline const Point& project(const Point& y, const Codebook& codebook) {
    return codebook[nearest_index(y, codebook)];
}

inline std::vector<std::size_t> assign(std::span<const Point> ys, const Codebook& codebook,
                                       LossKind loss = LossKind::squared_euclidean) {
    std::vector<std::size_t> cells;
    cells.reserve(ys.size());
    for (const Point& y : ys) cells.push_back(nearest_index(y, codebook, loss));
    return cells;
}

/// Empirical D_n: mean over samples of the squared distance to the nearest point.
inline double distortion(std::span<const Point> ys, const Codebook& codebook) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "distortion of an empty sample");
    double total = 0.0;
    for (const Point& y : ys) total += squared_distance(y, project(y, codebook));
    return total / static_cast<double>(ys.size());
}

/// Per-cell sums of squared distances and counts.
struct CellStats {
    std::vector<double> distortion;
    std::vector<std::size_t> count;
};

inline CellStats cell_stats(std::span<const Point> ys, const Codebook& codebook) {
    CellStats stats{std::vector<double>(codebook.size(), 0.0), std::vector<std::size_t>(codebook.size(), 0)};
    for (const Point& y : ys) {
        const std::size_t i = nearest_index(y, codebook);
        stats.distortion[i] += squared_distance(y, codebook[i]);
        ++stats.count[i];
    }
    return stats;
}

/// Law of the projected sample: atom i is codebook point i with the fraction
/// of samples in cell i. Empty cells are kept with weight zero.
inline DiscreteMeasure quantized_law(std::span<const Point> ys, const Codebook& codebook) {
    detail::require(!ys.empty(), ErrorCode::empty_input, "quantized law of an empty sample");
    std::vector<std::size_t> counts(codebook.size(), 0);
    for (const Point& y : ys) ++counts[nearest_index(y, codebook)];
    std::vector<Atom> atoms;
    atoms.reserve(codebook.size());
    const double n = static_cast<double>(ys.size());
    for (std::size_t i = 0; i < codebook.size(); ++i)
        atoms.push_back({codebook[i], static_cast<double>(counts[i]) / n});
    return DiscreteMeasure(std::move(atoms));
}

} // namespace cclvq
