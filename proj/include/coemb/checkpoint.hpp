#pragma once

#include "binary_io.hpp"
#include "dataset_io.hpp"
#include "losses.hpp"
#include "proxies.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace coemb {

inline constexpr std::string_view checkpoint_magic = "CECK";
inline constexpr std::uint32_t checkpoint_version = 1;

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    LossWeights weights;
    double sigma = 1.0;

    friend bool operator==(const TrainingMetadata& a, const TrainingMetadata& b) {
        return a.seed == b.seed && a.epochs == b.epochs && a.sigma == b.sigma &&
               a.weights.instance == b.weights.instance &&
               a.weights.attribute == b.weights.attribute &&
               a.weights.category == b.weights.category &&
               a.weights.regularization == b.weights.regularization &&
               a.weights.order == b.weights.order;
    }
};

struct Checkpoint {
    EmbeddingConfig config;
    LabelSpace labels; // train-split label space the proxies are indexed by
    Model model;
    TrainingMetadata metadata;

    void validate() const {
        model.proxies.validate(labels, config);
        if (model.projector.W.rows() != static_cast<Eigen::Index>(config.superspace_dim()) ||
            model.projector.b.size() != model.projector.W.rows())
            throw DataError("projector shape disagrees with embedding config");
    }
};

namespace detail {

inline void write_block(std::ostream& os, const double* data, Eigen::Index count) {
    for (Eigen::Index i = 0; i < count; ++i) binary::write_f64(os, data[i]);
}

inline void read_block(std::istream& is, double* data, Eigen::Index count) {
    for (Eigen::Index i = 0; i < count; ++i) data[i] = binary::read_f64(is, "parameter block");
}

inline Json checkpoint_header(const Checkpoint& c) {
    Json h;
    h["config"] = {{"superspace_dim", c.config.superspace_dim()},
                   {"attribute_count", c.config.attribute_count()},
                   {"subspace_width", c.config.subspace_width()},
                   {"feature_dim", c.model.projector.input_dim()}};
    Json ls;
    ls["attributes"] = attributes_to_json(c.labels.attributes);
    ls["categories"] = c.labels.categories;
    ls["instances"] = c.labels.instances;
    ls["instance_categories"] = c.model.proxies.instance_category;
    h["label_space"] = std::move(ls);
    const auto& w = c.metadata.weights;
    h["metadata"] = {{"seed", c.metadata.seed},
                     {"epochs", c.metadata.epochs},
                     {"sigma", c.metadata.sigma},
                     {"weights",
                      {{"instance", w.instance},
                       {"attribute", w.attribute},
                       {"category", w.category},
                       {"regularization", w.regularization},
                       {"order", w.order}}}};
    return h;
}

} // namespace detail

// "CECK", u32 version, u32 header_len, JSON header, then f64 blocks: W
// (row-major), b, instance proxies (row-major), attribute value proxies per
// attribute in declared order.
inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
    c.validate();
    const std::string header = detail::checkpoint_header(c).dump();
    binary::write_magic(os, checkpoint_magic);
    binary::write_u32(os, checkpoint_version);
    binary::write_u32(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto& p = c.model.projector;
    detail::write_block(os, p.W.data(), p.W.size());
    detail::write_block(os, p.b.data(), p.b.size());
    const auto& s = c.model.proxies;
    detail::write_block(os, s.instance_proxies.data(), s.instance_proxies.size());
    for (const Matrix& a : s.attribute_proxies) detail::write_block(os, a.data(), a.size());
}

inline Checkpoint read_checkpoint(std::istream& is) {
    binary::expect_magic(is, checkpoint_magic);
    if (binary::read_u32(is, "version") != checkpoint_version)
        throw DataError("checkpoint version mismatch");
    const std::uint32_t header_len = binary::read_u32(is, "header length");
    std::string header(header_len, '\0');
    binary::read_exact(is, header.data(), header.size(), "header");

    Checkpoint c;
    std::size_t feature_dim = 0;
    try {
        const Json h = Json::parse(header);
        const auto& cfg = h.at("config");
        c.config = EmbeddingConfig(cfg.at("attribute_count").get<std::size_t>(),
                                   cfg.at("subspace_width").get<std::size_t>());
        if (cfg.at("superspace_dim").get<std::size_t>() != c.config.superspace_dim())
            throw DataError("checkpoint config is inconsistent (N != K * n)");
        feature_dim = cfg.at("feature_dim").get<std::size_t>();
        const auto& ls = h.at("label_space");
        c.labels = LabelSpace(attributes_from_json(ls.at("attributes")),
                              ls.at("categories").get<std::vector<std::string>>(),
                              ls.at("instances").get<std::vector<std::string>>());
        c.model.proxies.instance_category =
            ls.at("instance_categories").get<std::vector<std::size_t>>();
        c.model.proxies.category_count = c.labels.categories.size();
        const auto& md = h.at("metadata");
        c.metadata.seed = md.at("seed").get<std::uint64_t>();
        c.metadata.epochs = md.at("epochs").get<std::size_t>();
        c.metadata.sigma = md.at("sigma").get<double>();
        const auto& w = md.at("weights");
        c.metadata.weights.instance = w.at("instance").get<double>();
        c.metadata.weights.attribute = w.at("attribute").get<double>();
        c.metadata.weights.category = w.at("category").get<double>();
        c.metadata.weights.regularization = w.at("regularization").get<double>();
        c.metadata.weights.order = w.at("order").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (c.labels.attribute_count() != c.config.attribute_count())
        throw DataError("checkpoint label space disagrees with embedding config");
    if (c.model.proxies.instance_category.size() != c.labels.instances.size())
        throw DataError("checkpoint proxy count disagrees with label space instance count");

    const auto N = static_cast<Eigen::Index>(c.config.superspace_dim());
    const auto d = static_cast<Eigen::Index>(feature_dim);
    auto& p = c.model.projector;
    p.W.resize(N, d);
    p.b.resize(N);
    detail::read_block(is, p.W.data(), p.W.size());
    detail::read_block(is, p.b.data(), p.b.size());
    auto& s = c.model.proxies;
    s.instance_proxies.resize(static_cast<Eigen::Index>(c.labels.instances.size()), N);
    detail::read_block(is, s.instance_proxies.data(), s.instance_proxies.size());
    for (const AttributeSpec& a : c.labels.attributes) {
        Matrix m(static_cast<Eigen::Index>(a.values.size()), c.config.width());
        detail::read_block(is, m.data(), m.size());
        s.attribute_proxies.push_back(std::move(m));
    }
    if (!binary::at_eof(is)) throw DataError("checkpoint has trailing bytes");
    c.validate();
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_checkpoint(os, c);
    if (!os) throw DataError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    return read_checkpoint(is);
}

} // namespace coemb
