#pragma once

// File formats.
//
// Dataset CSV: header x_0..x_{p-1},y_0..y_{d-1}[,mode], one sample per row.
// Label inputs are written as a single integer column x_0. Reals use
// 17 significant digits so values round-trip exactly.
//
// Model JSON (version 1):
//   {"version":1, "expert_kind":..., "n":..., "d":..., "p":..., "hidden":...,
//    "experts":[{"params":[...]}, ...],
//    "classifier":{"kind":..., "input_dim":..., "hidden":..., "params":[...]},
//    "step":..., "config":{...}}
// p is the feature dimension, or the label count for lookup experts.
//
// Metrics JSONL: one object per epoch (see to_json(EpochRecord)).

#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cclvq/cclvq.hpp"
#include "cclvq/error.hpp"
#include "cclvq/geometry.hpp"
#include "cclvq/models.hpp"
#include "json.hpp"

namespace cclvq {

inline constexpr int model_schema_version = 1;

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_dataset_csv(std::ostream& out, std::span<const Sample> data,
                              std::span<const std::size_t> modes = {}) {
    detail::require(!data.empty(), ErrorCode::empty_input, "no samples to write");
    detail::require(modes.empty() || modes.size() == data.size(), ErrorCode::invalid_argument,
                    "mode labels and samples differ in count");
    const Sample& first = data.front();
    const std::size_t p = std::holds_alternative<Label>(first.x) ? 1 : std::get<Features>(first.x).size();
    const std::size_t d = first.y.dim();
    for (std::size_t k = 0; k < p; ++k) out << (k ? "," : "") << "x_" << k;
    for (std::size_t k = 0; k < d; ++k) out << ",y_" << k;
    if (!modes.empty()) out << ",mode";
    out << '\n';
    for (std::size_t j = 0; j < data.size(); ++j) {
        const Sample& s = data[j];
        if (const Label* l = std::get_if<Label>(&s.x)) {
            out << l->value;
        } else {
            const Features& f = std::get<Features>(s.x);
            detail::require(f.size() == p, ErrorCode::dimension_mismatch, "samples differ in input dimension");
            for (std::size_t k = 0; k < p; ++k) out << (k ? "," : "") << format_real(f[k]);
        }
        detail::require(s.y.dim() == d, ErrorCode::dimension_mismatch, "samples differ in output dimension");
        for (std::size_t k = 0; k < d; ++k) out << ',' << format_real(s.y[k]);
        if (!modes.empty()) out << ',' << modes[j];
        out << '\n';
    }
}

struct DatasetFile {
    std::vector<Sample> samples;
    std::vector<std::size_t> modes; ///< empty unless the file has a mode column
};

/// Reads a dataset CSV. With labels = true the single x column holds
/// nonnegative integer labels.
inline DatasetFile read_dataset_csv(std::istream& in, bool labels = false) {
    std::string line;
    detail::require(static_cast<bool>(std::getline(in, line)), ErrorCode::io_failure, "missing CSV header");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::size_t p = 0;
    std::size_t d = 0;
    bool has_mode = false;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "x_" + std::to_string(p) && d == 0) {
            ++p;
        } else if (h == "y_" + std::to_string(d) && p > 0) {
            ++d;
        } else if (h == "mode" && c + 1 == header.size() && d > 0) {
            has_mode = true;
        } else {
            throw Error(ErrorCode::io_failure, "unexpected CSV column '" + h + "'");
        }
    }
    detail::require(p >= 1 && d >= 1, ErrorCode::io_failure, "CSV needs x_ and y_ columns");
    detail::require(!labels || p == 1, ErrorCode::io_failure, "label datasets have exactly one x column");

    DatasetFile file;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                detail::require(used == cell.size(), ErrorCode::io_failure, "trailing characters");
            } catch (const std::logic_error&) {
                throw Error(ErrorCode::io_failure, "bad number '" + cell + "' on CSV row " + std::to_string(row));
            }
        }
        if (values.size() != header.size())
            throw Error(ErrorCode::io_failure,
                        "CSV row " + std::to_string(row) + " has " + std::to_string(values.size()) + " fields");
        Input x;
        if (labels) {
            if (!(values[0] >= 0.0 && values[0] == std::floor(values[0])))
                throw Error(ErrorCode::io_failure,
                            "label on CSV row " + std::to_string(row) + " is not a nonnegative integer");
            x = Label{static_cast<std::size_t>(values[0])};
        } else {
            x = Features(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(p));
        }
        Point y(std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(p),
                                    values.begin() + static_cast<std::ptrdiff_t>(p + d)));
        file.samples.push_back({std::move(x), std::move(y)});
        if (has_mode) file.modes.push_back(static_cast<std::size_t>(values.back()));
    }
    detail::require(!file.samples.empty(), ErrorCode::io_failure, "CSV has no rows");
    return file;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json splits = nlohmann::json::array();
    for (const SplitEvent& e : c.splits) splits.push_back({{"epoch", e.epoch}, {"epsilon", e.epsilon}});
    return {{"optimizer", to_string(c.optimizer)},
            {"gamma_exp", c.gamma_exp},
            {"gamma_cls", c.gamma_cls},
            {"schedule", to_string(c.schedule)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"accumulation", c.accumulation},
            {"noise_std", c.noise_std},
            {"noise_relative", c.noise_relative},
            {"noise_decay_epoch", c.decay_epoch()},
            {"splits", splits},
            {"loss", to_string(c.loss)},
            {"seed", c.seed},
            {"heldout_fraction", c.heldout_fraction}};
}

inline nlohmann::json model_to_json(const EnsembleState& state, const std::optional<TrainConfig>& config = {}) {
    state.validate();
    const ModelShape& shape = state.experts.front().shape();
    nlohmann::json experts = nlohmann::json::array();
    for (const ExpertFunction& f : state.experts)
        experts.push_back({{"params", std::vector<double>(f.params().begin(), f.params().end())}});
    const ModelShape& cls = state.classifier.logits().shape();
    nlohmann::json j = {
        {"version", model_schema_version},
        {"expert_kind", to_string(shape.kind)},
        {"n", state.size()},
        {"d", shape.output_dim},
        {"p", shape.input_dim},
        {"hidden", shape.hidden},
        {"experts", experts},
        {"classifier",
         {{"kind", to_string(cls.kind)},
          {"input_dim", cls.input_dim},
          {"hidden", cls.hidden},
          {"params", std::vector<double>(state.classifier.params().begin(), state.classifier.params().end())}}},
        {"step", state.step},
    };
    j["config"] = config ? to_json(*config) : nlohmann::json::object();
    return j;
}

inline EnsembleState model_from_json(const nlohmann::json& j) {
    try {
        detail::require(j.at("version").get<int>() == model_schema_version, ErrorCode::invalid_argument,
                        "unsupported model schema version");
        ModelShape shape;
        shape.kind = model_kind_from_string(j.at("expert_kind").get<std::string>());
        shape.output_dim = j.at("d").get<std::size_t>();
        shape.input_dim = j.at("p").get<std::size_t>();
        shape.hidden = j.at("hidden").get<std::size_t>();
        const std::size_t n = j.at("n").get<std::size_t>();
        EnsembleState state;
        for (const auto& e : j.at("experts")) state.experts.emplace_back(shape, e.at("params").get<std::vector<double>>());
        detail::require(state.experts.size() == n, ErrorCode::invalid_argument, "expert count differs from n");
        const auto& c = j.at("classifier");
        ModelShape cls;
        cls.kind = model_kind_from_string(c.at("kind").get<std::string>());
        cls.input_dim = c.at("input_dim").get<std::size_t>();
        cls.hidden = c.at("hidden").get<std::size_t>();
        cls.output_dim = n;
        state.classifier = WeightClassifier(ParametricMap(cls, c.at("params").get<std::vector<double>>()));
        state.step = j.value("step", std::size_t{0});
        state.validate();
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("malformed model JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"n_experts", r.n_experts},
            {"train_delta", r.train_delta},
            {"heldout_delta", r.heldout_delta},
            {"per_expert_counts", r.per_expert_counts},
            {"usage_entropy", r.usage_entropy},
            {"weight_entropy", r.weight_entropy},
            {"classifier_accuracy", r.classifier_accuracy},
            {"noise_std", r.noise_std},
            {"dead_experts", r.dead_experts}};
}

inline void write_metrics_jsonl(std::ostream& out, std::span<const EpochRecord> trace) {
    for (const EpochRecord& r : trace) out << to_json(r).dump() << '\n';
}

} // namespace cclvq
