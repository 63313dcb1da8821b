#pragma once

#include "binary_io.hpp"
#include "dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

namespace coemb {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view feature_magic = "CEFV";
inline constexpr std::uint32_t feature_version = 1;
inline constexpr int manifest_version = 1;

// Feature file: "CEFV", u32 version, u32 rows, u32 dim, rows*dim f32, all
// little-endian and row-major.
inline void write_features(const std::filesystem::path& path, const Matrix& features) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    binary::write_magic(os, feature_magic);
    binary::write_u32(os, feature_version);
    binary::write_u32(os, static_cast<std::uint32_t>(features.rows()));
    binary::write_u32(os, static_cast<std::uint32_t>(features.cols()));
    for (Eigen::Index r = 0; r < features.rows(); ++r)
        for (Eigen::Index c = 0; c < features.cols(); ++c)
            binary::write_f32(os, static_cast<float>(features(r, c)));
    if (!os) throw DataError("failed writing " + path.string());
}

inline Matrix read_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file " + path.string());
    binary::expect_magic(is, feature_magic);
    if (binary::read_u32(is, "version") != feature_version)
        throw DataError("unsupported feature file version");
    const std::uint32_t rows = binary::read_u32(is, "row count");
    const std::uint32_t dim = binary::read_u32(is, "dimension");
    if (dim == 0) throw DataError("feature dimension must be positive");
    Matrix out(rows, dim);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < dim; ++c)
            out(r, c) = static_cast<double>(binary::read_f32(is, "feature values"));
    if (!binary::at_eof(is)) throw DataError("feature file has trailing bytes");
    return out;
}

inline Json attributes_to_json(const std::vector<AttributeSpec>& attrs) {
    Json out = Json::array();
    for (const auto& a : attrs) {
        Json j;
        j["name"] = a.name;
        j["values"] = a.values;
        j["ordered"] = a.ordered;
        if (a.ordered) j["ranks"] = a.ranks;
        out.push_back(std::move(j));
    }
    return out;
}

inline std::vector<AttributeSpec> attributes_from_json(const Json& j) {
    std::vector<AttributeSpec> out;
    for (const auto& a : j) {
        AttributeSpec spec;
        spec.name = a.at("name").get<std::string>();
        spec.values = a.at("values").get<std::vector<std::string>>();
        spec.ordered = a.value("ordered", false);
        if (a.contains("ranks") && !a.at("ranks").is_null())
            spec.ranks = a.at("ranks").get<std::vector<double>>();
        out.push_back(std::move(spec));
    }
    return out;
}

inline Json manifest_to_json(const Dataset& ds) {
    Json m;
    m["version"] = manifest_version;
    m["attributes"] = attributes_to_json(ds.labels.attributes);
    m["categories"] = ds.labels.categories;
    Json items = Json::array();
    for (const Item& it : ds.items) {
        Json j;
        j["item_id"] = it.item_id;
        j["instance"] = ds.labels.instances[it.instance];
        j["category"] = ds.labels.categories[it.category];
        Json attrs = Json::object();
        for (auto [k, v] : it.attributes)
            attrs[ds.labels.attributes[k].name] = ds.labels.attributes[k].values[v];
        j["attributes"] = std::move(attrs);
        j["split"] = std::string(to_string(it.split));
        j["feature_row"] = it.feature_row;
        items.push_back(std::move(j));
    }
    m["items"] = std::move(items);
    return m;
}

// Instances are not declared separately in the manifest; they are collected
// from the items in order of first appearance.
inline Dataset dataset_from_manifest(const Json& m, Matrix features) {
    Dataset ds;
    try {
        if (m.at("version").get<int>() != manifest_version)
            throw DataError("unsupported manifest version");
        std::vector<AttributeSpec> attrs = attributes_from_json(m.at("attributes"));
        auto cats = m.at("categories").get<std::vector<std::string>>();
        std::vector<std::string> insts;
        std::set<std::string> seen;
        for (const auto& j : m.at("items")) {
            auto name = j.at("instance").get<std::string>();
            if (seen.insert(name).second) insts.push_back(name);
        }
        ds.labels = LabelSpace(std::move(attrs), std::move(cats), std::move(insts));
        for (const auto& j : m.at("items")) {
            Item it;
            it.item_id = j.at("item_id").get<std::string>();
            it.instance = *ds.labels.instance_index(j.at("instance").get<std::string>());
            auto cat = ds.labels.category_index(j.at("category").get<std::string>());
            if (!cat) throw DataError("item \"" + it.item_id + "\": unknown category");
            it.category = *cat;
            for (const auto& [name, value] : j.at("attributes").items()) {
                auto k = ds.labels.attribute_index(name);
                if (!k) throw DataError("item \"" + it.item_id + "\": unknown attribute \"" + name + "\"");
                auto v = ds.labels.attributes[*k].value_index(value.get<std::string>());
                if (!v) throw DataError("item \"" + it.item_id + "\": unknown attribute value");
                it.attributes.emplace(*k, *v);
            }
            it.split = parse_split(j.at("split").get<std::string>());
            const auto row = j.at("feature_row").get<std::int64_t>();
            if (row < 0 || row >= features.rows())
                throw DataError("item \"" + it.item_id + "\": feature_row out of range");
            it.feature_row = static_cast<std::size_t>(row);
            ds.items.push_back(std::move(it));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    ds.features = std::move(features);
    ds.validate();
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path,
                            const std::filesystem::path& features_path) {
    std::ifstream is(manifest_path);
    if (!is) throw DataError("cannot open manifest " + manifest_path.string());
    Json m;
    try {
        m = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    return dataset_from_manifest(m, read_features(features_path));
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
    if (!os) throw DataError("failed writing " + path.string());
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path,
                         const std::filesystem::path& features_path) {
    write_json_file(manifest_path, manifest_to_json(ds));
    write_features(features_path, ds.features);
}

} // namespace coemb
