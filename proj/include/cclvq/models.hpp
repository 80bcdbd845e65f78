#pragma once

// Parametric function families for experts and the weight classifier.
//
// Every family stores its parameters as one flat vector. Layouts
// (layer-major, matrices row-major):
//   constant    [c (out)]
//   lookup      [table (labels x out)], row l is the value at label l
//   affine      [W (out x in), b (out)]
//   perceptron  [W1 (hidden x in), b1 (hidden), W2 (out x hidden), b2 (out)],
//               out = W2 tanh(W1 x + b1) + b2

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/rng.hpp"

namespace cclvq {

enum class ModelKind { constant, lookup, affine, perceptron };

inline const char* to_string(ModelKind kind) noexcept {
    switch (kind) {
    case ModelKind::constant: return "constant";
    case ModelKind::lookup: return "lookup";
    case ModelKind::affine: return "affine";
    case ModelKind::perceptron: return "perceptron";
    }
    return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& name) {
    if (name == "constant") return ModelKind::constant;
    if (name == "lookup") return ModelKind::lookup;
    if (name == "affine") return ModelKind::affine;
    if (name == "perceptron" || name == "mlp") return ModelKind::perceptron;
    throw Error(ErrorCode::invalid_argument, "unknown model kind '" + name + "'");
}

inline constexpr std::size_t default_hidden_width = 20;

struct ModelShape {
    ModelKind kind = ModelKind::affine;
    std::size_t input_dim = 1; ///< feature dimension p, or label count for lookup
    std::size_t output_dim = 1;
    std::size_t hidden = default_hidden_width; ///< perceptron only

    bool operator==(const ModelShape&) const = default;

    [[nodiscard]] std::size_t param_count() const noexcept {
        switch (kind) {
        case ModelKind::constant: return output_dim;
        case ModelKind::lookup: return input_dim * output_dim;
        case ModelKind::affine: return output_dim * input_dim + output_dim;
        case ModelKind::perceptron: return hidden * input_dim + hidden + output_dim * hidden + output_dim;
        }
        return 0;
    }
};

/// A function E -> R^out with flat parameters.
class ParametricMap {
public:
    ParametricMap() = default;

    explicit ParametricMap(ModelShape shape) : shape_(shape), params_(shape.param_count(), 0.0) { check_shape(); }

    ParametricMap(ModelShape shape, std::vector<double> params) : shape_(shape), params_(std::move(params)) {
        check_shape();
        if (params_.size() != shape_.param_count())
            throw Error(ErrorCode::invalid_argument,
                        "expected " + std::to_string(shape_.param_count()) + " parameters, got " +
                            std::to_string(params_.size()));
        for (double v : params_)
            detail::require(std::isfinite(v), ErrorCode::invalid_argument, "parameters must be finite");
    }

    [[nodiscard]] const ModelShape& shape() const noexcept { return shape_; }
    [[nodiscard]] ModelKind kind() const noexcept { return shape_.kind; }
    [[nodiscard]] std::size_t output_dim() const noexcept { return shape_.output_dim; }
    [[nodiscard]] std::size_t param_count() const noexcept { return params_.size(); }
    [[nodiscard]] std::span<const double> params() const noexcept { return params_; }
    [[nodiscard]] std::span<double> params() noexcept { return params_; }

    bool operator==(const ParametricMap&) const = default;

    /// Random dense layers; constant and lookup tables start at zero.
    void initialize(Rng& rng) {
        std::fill(params_.begin(), params_.end(), 0.0);
        // Weights and biases of a dense layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
        // Random biases spread the tanh kinks over the input range, which
        // matters a lot for one-dimensional inputs.
        const auto fill = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
            const double a = 1.0 / std::sqrt(static_cast<double>(cols));
            for (std::size_t i = 0; i < rows * cols + rows; ++i) params_[offset + i] = rng.uniform(-a, a);
        };
        const std::size_t p = shape_.input_dim;
        const std::size_t h = shape_.hidden;
        const std::size_t d = shape_.output_dim;
        if (shape_.kind == ModelKind::affine) fill(0, d, p);
        if (shape_.kind == ModelKind::perceptron) {
            fill(0, h, p);
            fill(h * p + h, d, h);
        }
    }

    /// Evaluate into out (size output_dim). hidden receives the tanh
    /// activations for the perceptron and may be empty otherwise.
    void evaluate(const Input& x, std::span<double> out, std::vector<double>& hidden) const {
        const std::size_t d = shape_.output_dim;
        switch (shape_.kind) {
        case ModelKind::constant:
            std::copy_n(params_.begin(), d, out.begin());
            return;
        case ModelKind::lookup: {
            const std::size_t l = label_of(x);
            std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(l * d), d, out.begin());
            return;
        }
        case ModelKind::affine: {
            const Features& f = features_of(x);
            const std::size_t p = shape_.input_dim;
            const double* w = params_.data();
            const double* b = w + d * p;
            for (std::size_t r = 0; r < d; ++r) {
                double s = b[r];
                for (std::size_t c = 0; c < p; ++c) s += w[r * p + c] * f[c];
                out[r] = s;
            }
            return;
        }
        case ModelKind::perceptron: {
            const Features& f = features_of(x);
            const std::size_t p = shape_.input_dim;
            const std::size_t h = shape_.hidden;
            const double* w1 = params_.data();
            const double* b1 = w1 + h * p;
            const double* w2 = b1 + h;
            const double* b2 = w2 + d * h;
            hidden.resize(h);
            for (std::size_t r = 0; r < h; ++r) {
                double s = b1[r];
                for (std::size_t c = 0; c < p; ++c) s += w1[r * p + c] * f[c];
                hidden[r] = std::tanh(s);
            }
            for (std::size_t r = 0; r < d; ++r) {
                double s = b2[r];
                for (std::size_t c = 0; c < h; ++c) s += w2[r * h + c] * hidden[c];
                out[r] = s;
            }
            return;
        }
        }
    }

    [[nodiscard]] std::vector<double> evaluate(const Input& x) const {
        std::vector<double> out(shape_.output_dim);
        std::vector<double> hidden;
        evaluate(x, out, hidden);
        return out;
    }

    /// grad += scale * d<upstream, f(x)>/d params. hidden must hold the
    /// activations from evaluate() at the same x.
    void accumulate_gradient(const Input& x, std::span<const double> upstream, const std::vector<double>& hidden,
                             double scale, std::span<double> grad) const {
        const std::size_t d = shape_.output_dim;
        switch (shape_.kind) {
        case ModelKind::constant:
            for (std::size_t r = 0; r < d; ++r) grad[r] += scale * upstream[r];
            return;
        case ModelKind::lookup: {
            const std::size_t l = label_of(x);
            for (std::size_t r = 0; r < d; ++r) grad[l * d + r] += scale * upstream[r];
            return;
        }
        case ModelKind::affine: {
            const Features& f = features_of(x);
            const std::size_t p = shape_.input_dim;
            for (std::size_t r = 0; r < d; ++r) {
                const double g = scale * upstream[r];
                for (std::size_t c = 0; c < p; ++c) grad[r * p + c] += g * f[c];
                grad[d * p + r] += g;
            }
            return;
        }
        case ModelKind::perceptron: {
            const Features& f = features_of(x);
            const std::size_t p = shape_.input_dim;
            const std::size_t h = shape_.hidden;
            const std::size_t off_b1 = h * p;
            const std::size_t off_w2 = off_b1 + h;
            const std::size_t off_b2 = off_w2 + d * h;
            const double* w2 = params_.data() + off_w2;
            for (std::size_t r = 0; r < d; ++r) {
                const double g = scale * upstream[r];
                for (std::size_t c = 0; c < h; ++c) grad[off_w2 + r * h + c] += g * hidden[c];
                grad[off_b2 + r] += g;
            }
            for (std::size_t c = 0; c < h; ++c) {
                double back = 0.0;
                for (std::size_t r = 0; r < d; ++r) back += w2[r * h + c] * upstream[r];
                const double pre = scale * back * (1.0 - hidden[c] * hidden[c]);
                for (std::size_t q = 0; q < p; ++q) grad[c * p + q] += pre * f[q];
                grad[off_b1 + c] += pre;
            }
            return;
        }
        }
    }

    /// Copy of this map with one more output: output `source` is duplicated
    /// at the end and `bias_shift` is added to the bias of both copies (for
    /// constant and lookup maps the value itself plays the bias).
    [[nodiscard]] ParametricMap with_duplicated_output(std::size_t source, double bias_shift) const {
        detail::require(source < shape_.output_dim, ErrorCode::invalid_argument, "output index out of range");
        ModelShape grown = shape_;
        grown.output_dim += 1;
        ParametricMap out(grown);
        const std::size_t d = shape_.output_dim;
        const std::size_t nd = grown.output_dim;
        // Copy one R^d-valued block (rows = outputs) into the grown layout.
        const auto copy_rows = [&](std::size_t src_off, std::size_t dst_off, std::size_t width, bool bias) {
            for (std::size_t r = 0; r < nd; ++r) {
                const std::size_t from = r < d ? r : source;
                for (std::size_t c = 0; c < width; ++c) {
                    double v = params_[src_off + from * width + c];
                    if (bias && (from == source)) v += bias_shift;
                    out.params_[dst_off + r * width + c] = v;
                }
            }
        };
        switch (shape_.kind) {
        case ModelKind::constant: copy_rows(0, 0, 1, true); break;
        case ModelKind::lookup:
            for (std::size_t l = 0; l < shape_.input_dim; ++l)
                for (std::size_t r = 0; r < nd; ++r) {
                    const std::size_t from = r < d ? r : source;
                    double v = params_[l * d + from];
                    if (from == source) v += bias_shift;
                    out.params_[l * nd + r] = v;
                }
            break;
        case ModelKind::affine: {
            const std::size_t p = shape_.input_dim;
            copy_rows(0, 0, p, false);
            copy_rows(d * p, nd * p, 1, true);
            break;
        }
        case ModelKind::perceptron: {
            const std::size_t p = shape_.input_dim;
            const std::size_t h = shape_.hidden;
            std::copy_n(params_.begin(), h * p + h, out.params_.begin());
            copy_rows(h * p + h, h * p + h, h, false);
            copy_rows(h * p + h + d * h, h * p + h + nd * h, 1, true);
            break;
        }
        }
        return out;
    }

private:
    void check_shape() const {
        detail::require(shape_.output_dim >= 1, ErrorCode::invalid_argument, "output dimension must be >= 1");
        detail::require(shape_.kind == ModelKind::constant || shape_.input_dim >= 1, ErrorCode::invalid_argument,
                        "input dimension must be >= 1");
        detail::require(shape_.kind != ModelKind::perceptron || shape_.hidden >= 1, ErrorCode::invalid_argument,
                        "hidden width must be >= 1");
    }

    std::size_t label_of(const Input& x) const {
        const Label* l = std::get_if<Label>(&x);
        detail::require(l != nullptr, ErrorCode::invalid_argument, "lookup map needs a label input");
        if (l->value >= shape_.input_dim)
            throw Error(ErrorCode::unknown_label,
                        "label " + std::to_string(l->value) + " outside table of " +
                            std::to_string(shape_.input_dim));
        return l->value;
    }

    const Features& features_of(const Input& x) const {
        const Features* f = std::get_if<Features>(&x);
        detail::require(f != nullptr, ErrorCode::invalid_argument, "map needs a real feature input");
        if (f->size() != shape_.input_dim)
            throw Error(ErrorCode::dimension_mismatch,
                        "feature dimension " + std::to_string(f->size()) + ", expected " +
                            std::to_string(shape_.input_dim));
        return *f;
    }

    ModelShape shape_;
    std::vector<double> params_;
};

/// Expert f_i: E -> R^d.
using ExpertFunction = ParametricMap;

inline Point forward(const ExpertFunction& f, const Input& x) { return Point(f.evaluate(x)); }

/// Gradient of loss(y, f(x)) with respect to the parameters of f.
inline std::vector<double> grad_params(const ExpertFunction& f, const Input& x, const Point& y,
                                       LossKind loss = LossKind::squared_euclidean) {
    std::vector<double> out(f.output_dim());
    std::vector<double> hidden;
    f.evaluate(x, out, hidden);
    detail::require(y.dim() == out.size(), ErrorCode::dimension_mismatch, "target and expert output differ");
    const std::vector<double> upstream = loss_gradient(loss, y.coords(), out);
    std::vector<double> grad(f.param_count(), 0.0);
    f.accumulate_gradient(x, upstream, hidden, 1.0, grad);
    return grad;
}

inline constexpr double logit_cap = 30.0;

/// Softmax of capped logits, written into probs; returns nothing. Logits
/// beyond +-logit_cap are clamped, which keeps exp() finite.
inline void capped_softmax(std::span<const double> logits, std::span<double> probs) {
    double top = -logit_cap;
    for (double z : logits) top = std::max(top, std::clamp(z, -logit_cap, logit_cap));
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(std::clamp(logits[i], -logit_cap, logit_cap) - top);
        total += probs[i];
    }
    for (double& p : probs) p /= total;
}

/// Weight classifier h: E -> simplex over n experts: a parametric map of
/// output n followed by the capped softmax.
class WeightClassifier {
public:
    WeightClassifier() = default;
    explicit WeightClassifier(ParametricMap logits) : logits_(std::move(logits)) {}

    [[nodiscard]] std::size_t classes() const noexcept { return logits_.output_dim(); }
    [[nodiscard]] const ParametricMap& logits() const noexcept { return logits_; }
    [[nodiscard]] ParametricMap& logits() noexcept { return logits_; }
    [[nodiscard]] std::span<const double> params() const noexcept { return logits_.params(); }
    [[nodiscard]] std::span<double> params() noexcept { return logits_.params(); }

    bool operator==(const WeightClassifier&) const = default;

    void probabilities(const Input& x, std::span<double> probs, std::vector<double>& logit_buf,
                       std::vector<double>& hidden) const {
        logit_buf.resize(classes());
        logits_.evaluate(x, logit_buf, hidden);
        capped_softmax(logit_buf, probs);
    }

    /// grad += scale * d(-log h_label(x))/d params. On return probs holds h(x).
    void accumulate_cross_entropy_gradient(const Input& x, std::size_t label, double scale, std::span<double> grad,
                                           std::vector<double>& logit_buf, std::vector<double>& probs,
                                           std::vector<double>& hidden) const {
        if (label >= classes())
            throw Error(ErrorCode::invalid_argument,
                        "label " + std::to_string(label) + " outside " + std::to_string(classes()) + " classes");
        logit_buf.resize(classes());
        probs.resize(classes());
        logits_.evaluate(x, logit_buf, hidden);
        capped_softmax(logit_buf, probs);
        // The residual overwrites the logits; probs is left intact for callers.
        for (std::size_t i = 0; i < classes(); ++i) {
            const double z = logit_buf[i];
            const bool clamped = z > logit_cap || z < -logit_cap;
            logit_buf[i] = clamped ? 0.0 : probs[i] - (i == label ? 1.0 : 0.0);
        }
        logits_.accumulate_gradient(x, logit_buf, hidden, scale, grad);
    }

    /// Adds one class duplicating `source`; both halves get logit - log 2,
    /// so they split the original class mass evenly.
    [[nodiscard]] WeightClassifier with_split_class(std::size_t source) const {
        return WeightClassifier(logits_.with_duplicated_output(source, -std::log(2.0)));
    }

private:
    ParametricMap logits_;
};

inline std::vector<double> classify(const WeightClassifier& h, const Input& x) {
    std::vector<double> probs(h.classes());
    std::vector<double> logit_buf;
    std::vector<double> hidden;
    h.probabilities(x, probs, logit_buf, hidden);
    return probs;
}

/// Gradient of -log h_label(x) with respect to the classifier parameters.
inline std::vector<double> grad_classifier(const WeightClassifier& h, const Input& x, std::size_t label) {
    std::vector<double> grad(h.params().size(), 0.0);
    std::vector<double> logit_buf;
    std::vector<double> probs;
    std::vector<double> hidden;
    h.accumulate_cross_entropy_gradient(x, label, 1.0, grad, logit_buf, probs, hidden);
    return grad;
}

} // namespace cclvq
