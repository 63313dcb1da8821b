#pragma once

#include "dataset.hpp"
#include "dataset_io.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace coemb {

// Synthetic datasets with planted structure. Every attribute value owns a
// prototype vector; an instance's latent code is the concatenation of its
// value prototypes plus a per-instance jitter, and each image is a fixed
// random linear mixing of that code plus Gaussian noise. Categories only act
// through their preferences over attribute values.
struct SynthConfig {
    std::vector<std::size_t> values_per_attribute{5, 5, 5, 5};
    std::optional<std::size_t> ordered_attribute = 0;
    std::size_t categories = 6;
    std::size_t train_instances = 200;
    std::size_t test_instances = 100;
    std::size_t images_per_instance = 4;
    std::size_t feature_dim = 64;
    std::size_t prototype_dim = 8;
    double noise_std = 0.1;
    double jitter_std = 0.3;
    // Per-image nuisance factors (viewpoint-like variation shared by no
    // label), mixed into the features through their own random directions.
    std::size_t nuisance_dim = 16;
    double nuisance_std = 1.0;
    // Weight of a category's preferred value relative to the others; infinity
    // makes every instance of a category take its preferred values.
    double concentration = 20.0;
    std::uint64_t seed = 0;

    std::size_t attribute_count() const { return values_per_attribute.size(); }
    std::size_t code_dim() const { return attribute_count() * prototype_dim; }

    void validate() const {
        if (values_per_attribute.empty()) throw UsageError("synth needs at least one attribute");
        for (std::size_t v : values_per_attribute)
            if (v < 2) throw UsageError("every synthetic attribute needs at least 2 values");
        if (ordered_attribute && *ordered_attribute >= attribute_count())
            throw UsageError("ordered attribute index out of range");
        if (categories < 1 || train_instances < 1 || test_instances < 1 || images_per_instance < 1 ||
            feature_dim < 1 || prototype_dim < 1)
            throw UsageError("synth counts must be >= 1");
        if (images_per_instance < 2)
            throw UsageError("infeasible split: test instances need >= 2 images (query and gallery)");
        if (!(noise_std >= 0.0) || !(jitter_std >= 0.0) || !(nuisance_std >= 0.0))
            throw UsageError("noise, jitter and nuisance std must be >= 0");
        if (!(concentration >= 0.0)) throw UsageError("concentration must be >= 0");
        if (feature_dim < code_dim() + nuisance_dim)
            throw UsageError("feature_dim must be >= attributes * prototype_dim + nuisance_dim");
    }
};

struct SynthInstanceTruth {
    std::string id;
    std::size_t category = 0;
    std::vector<std::size_t> values; // one value per attribute
    bool train = true;
};

struct SynthTruth {
    std::vector<SynthInstanceTruth> instances;
    std::vector<Matrix> prototypes;                      // per attribute: V_k x prototype_dim
    std::vector<std::vector<std::size_t>> preferred;     // per category, per attribute
    Matrix mixing;                                       // feature_dim x code_dim
    Matrix nuisance_mixing;                              // feature_dim x nuisance_dim
};

struct SynthResult {
    Dataset dataset;
    SynthTruth truth;
};

namespace detail {

inline std::string padded(std::string_view prefix, std::size_t i, int width) {
    std::string digits = std::to_string(i);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return std::string(prefix) + digits;
}

template <typename Rng>
Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = std * normal(rng);
    return m;
}

} // namespace detail

inline SynthResult generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const auto K = cfg.attribute_count();
    const auto pd = static_cast<Eigen::Index>(cfg.prototype_dim);
    SynthResult out;
    SynthTruth& truth = out.truth;

    // Value prototypes. The ordered attribute interpolates between two random
    // endpoints so that nearby ranks get nearby prototypes.
    for (std::size_t k = 0; k < K; ++k) {
        const auto V = static_cast<Eigen::Index>(cfg.values_per_attribute[k]);
        if (cfg.ordered_attribute == k) {
            const Matrix ends = detail::gaussian(2, pd, 1.5, rng);
            Matrix p(V, pd);
            for (Eigen::Index v = 0; v < V; ++v) {
                const double t = static_cast<double>(v) / static_cast<double>(V - 1);
                p.row(v) = (1.0 - t) * ends.row(0) + t * ends.row(1);
            }
            truth.prototypes.push_back(std::move(p));
        } else {
            truth.prototypes.push_back(detail::gaussian(V, pd, 1.0, rng));
        }
    }

    const auto code_dim = static_cast<Eigen::Index>(cfg.code_dim());
    truth.mixing = detail::gaussian(static_cast<Eigen::Index>(cfg.feature_dim), code_dim,
                                    1.0 / std::sqrt(static_cast<double>(code_dim)), rng);
    const auto nuisance_dim = static_cast<Eigen::Index>(cfg.nuisance_dim);
    truth.nuisance_mixing = detail::gaussian(static_cast<Eigen::Index>(cfg.feature_dim), nuisance_dim,
                                             nuisance_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(nuisance_dim)) : 0.0,
                                             rng);

    for (std::size_t y = 0; y < cfg.categories; ++y) {
        std::vector<std::size_t> pref;
        for (std::size_t k = 0; k < K; ++k)
            pref.push_back(std::uniform_int_distribution<std::size_t>(0, cfg.values_per_attribute[k] - 1)(rng));
        truth.preferred.push_back(std::move(pref));
    }

    auto sample_value = [&](std::size_t y, std::size_t k) {
        const std::size_t V = cfg.values_per_attribute[k];
        const std::size_t preferred = truth.preferred[y][k];
        if (std::isinf(cfg.concentration)) return preferred;
        std::vector<double> w(V, 1.0);
        w[preferred] += cfg.concentration;
        return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
    };

    std::vector<AttributeSpec> attrs;
    for (std::size_t k = 0; k < K; ++k) {
        AttributeSpec a;
        a.name = "attr" + std::to_string(k);
        for (std::size_t v = 0; v < cfg.values_per_attribute[k]; ++v)
            a.values.push_back(a.name + "_v" + std::to_string(v));
        if (cfg.ordered_attribute == k) {
            a.ordered = true;
            for (std::size_t v = 0; v < a.values.size(); ++v) a.ranks.push_back(static_cast<double>(v + 1));
        }
        attrs.push_back(std::move(a));
    }
    std::vector<std::string> cats;
    for (std::size_t y = 0; y < cfg.categories; ++y) cats.push_back("cat" + std::to_string(y));

    const std::size_t total = cfg.train_instances + cfg.test_instances;
    std::vector<std::string> inst_ids;
    std::vector<Vector> codes;
    for (std::size_t i = 0; i < total; ++i) {
        const bool train = i < cfg.train_instances;
        const std::size_t local = train ? i : i - cfg.train_instances;
        // The first C instances of each split cover every category once.
        const std::size_t y = local < cfg.categories
                                  ? local
                                  : std::uniform_int_distribution<std::size_t>(0, cfg.categories - 1)(rng);
        SynthInstanceTruth t;
        t.id = detail::padded("inst", i, 5);
        t.category = y;
        t.train = train;
        Vector code(code_dim);
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t v = sample_value(y, k);
            t.values.push_back(v);
            code.segment(static_cast<Eigen::Index>(k) * pd, pd) =
                truth.prototypes[k].row(static_cast<Eigen::Index>(v)).transpose();
        }
        code += detail::gaussian(code_dim, 1, cfg.jitter_std, rng);
        codes.push_back(std::move(code));
        inst_ids.push_back(t.id);
        truth.instances.push_back(std::move(t));
    }

    Dataset& ds = out.dataset;
    ds.labels = LabelSpace(std::move(attrs), std::move(cats), std::move(inst_ids));
    const std::size_t rows = total * cfg.images_per_instance;
    ds.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cfg.feature_dim));
    const std::size_t query_per_instance = cfg.images_per_instance / 2;
    std::size_t row = 0;
    for (std::size_t i = 0; i < total; ++i) {
        const auto& t = truth.instances[i];
        AttributeValues values;
        for (std::size_t k = 0; k < K; ++k) values.emplace(k, t.values[k]);
        for (std::size_t m = 0; m < cfg.images_per_instance; ++m, ++row) {
            Vector f = truth.mixing * codes[i];
            if (nuisance_dim > 0)
                f += truth.nuisance_mixing * detail::gaussian(nuisance_dim, 1, cfg.nuisance_std, rng);
            f += detail::gaussian(static_cast<Eigen::Index>(cfg.feature_dim), 1, cfg.noise_std, rng);
            // Stored features are 32-bit; keep the in-memory copy identical
            // to what a save/load round-trip produces.
            for (Eigen::Index c = 0; c < f.size(); ++c)
                ds.features(static_cast<Eigen::Index>(row), c) = static_cast<double>(static_cast<float>(f(c)));
            Item it;
            it.item_id = detail::padded("img", row, 6);
            it.instance = i;
            it.category = t.category;
            it.attributes = values;
            it.split = t.train ? Split::train : (m < query_per_instance ? Split::query : Split::gallery);
            it.feature_row = row;
            ds.items.push_back(std::move(it));
        }
    }
    ds.validate();
    return out;
}

inline Json synth_truth_to_json(const SynthConfig& cfg, const SynthResult& r) {
    Json j;
    Json c;
    c["values_per_attribute"] = cfg.values_per_attribute;
    c["ordered_attribute"] = cfg.ordered_attribute ? Json(*cfg.ordered_attribute) : Json(nullptr);
    c["categories"] = cfg.categories;
    c["train_instances"] = cfg.train_instances;
    c["test_instances"] = cfg.test_instances;
    c["images_per_instance"] = cfg.images_per_instance;
    c["feature_dim"] = cfg.feature_dim;
    c["prototype_dim"] = cfg.prototype_dim;
    c["noise_std"] = cfg.noise_std;
    c["jitter_std"] = cfg.jitter_std;
    c["nuisance_dim"] = cfg.nuisance_dim;
    c["nuisance_std"] = cfg.nuisance_std;
    c["concentration"] = std::isinf(cfg.concentration) ? Json("inf") : Json(cfg.concentration);
    c["seed"] = cfg.seed;
    j["config"] = std::move(c);
    Json insts = Json::array();
    for (const auto& t : r.truth.instances) {
        Json e;
        e["instance"] = t.id;
        e["category"] = r.dataset.labels.categories[t.category];
        Json a = Json::object();
        for (std::size_t k = 0; k < t.values.size(); ++k)
            a[r.dataset.labels.attributes[k].name] = r.dataset.labels.attributes[k].values[t.values[k]];
        e["attributes"] = std::move(a);
        e["split"] = t.train ? "train" : "test";
        insts.push_back(std::move(e));
    }
    j["instances"] = std::move(insts);
    Json pref = Json::array();
    for (const auto& p : r.truth.preferred) pref.push_back(p);
    j["category_preferred_values"] = std::move(pref);
    Json protos = Json::array();
    for (const Matrix& p : r.truth.prototypes) {
        Json rows = Json::array();
        for (Eigen::Index v = 0; v < p.rows(); ++v) {
            std::vector<double> row(p.row(v).data(), p.row(v).data() + p.cols());
            rows.push_back(row);
        }
        protos.push_back(std::move(rows));
    }
    j["prototypes"] = std::move(protos);
    return j;
}

// Writes manifest.json, features.cefv and ground_truth.json into `dir`.
inline void write_synth(const SynthConfig& cfg, const SynthResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_dataset(r.dataset, dir / "manifest.json", dir / "features.cefv");
    write_json_file(dir / "ground_truth.json", synth_truth_to_json(cfg, r));
}

} // namespace coemb
