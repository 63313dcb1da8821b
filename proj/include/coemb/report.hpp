#pragma once

#include "dataset_io.hpp"
#include "evaluation.hpp"
#include "navigation.hpp"
#include "trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace coemb {

namespace detail {

inline double finite_metric(double x, std::string_view name) {
    if (!std::isfinite(x)) throw NumericError("non-finite metric: " + std::string(name));
    return x;
}

inline Json optional_metric(const std::optional<double>& x, std::string_view name) {
    if (!x) return nullptr;
    return finite_metric(*x, name);
}

inline std::optional<double> read_optional(const Json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

} // namespace detail

// Key order is fixed by construction (ordered_json), so identical reports
// serialize to identical bytes. Doubles use shortest round-trip formatting.
inline Json to_json(const MetricsReport& r, const Json& config_echo = Json::object()) {
    using detail::finite_metric;
    Json j;
    j["recall_k"] = r.recall_k;
    j["recall_at_k"] = finite_metric(r.recall_at_k, "recall_at_k");
    j["attribute_map"] = detail::optional_metric(r.attribute_map, "attribute_map");
    j["attribute_map_by_attribute"] =
        detail::optional_metric(r.attribute_map_by_attribute, "attribute_map_by_attribute");
    Json per_attr = Json::array();
    for (const auto& a : r.attribute_map_per_attribute)
        per_attr.push_back({{"attribute", a.attribute},
                            {"map", finite_metric(a.map, "attribute map")},
                            {"values", a.values}});
    j["attribute_map_per_attribute"] = std::move(per_attr);
    Json values = Json::array();
    for (const auto& a : r.attribute_value_ap)
        values.push_back({{"attribute", a.attribute},
                          {"value", a.value},
                          {"ap", finite_metric(a.ap, "attribute value ap")}});
    j["attribute_value_ap"] = std::move(values);
    j["category_map"] = detail::optional_metric(r.category_map, "category_map");
    Json cats = Json::array();
    for (const auto& c : r.category_ap)
        cats.push_back({{"category", c.category}, {"ap", finite_metric(c.ap, "category ap")}});
    j["category_ap"] = std::move(cats);
    Json ordered = Json::array();
    for (const auto& o : r.ordered)
        ordered.push_back({{"attribute", o.attribute},
                           {"mae", finite_metric(o.mae, "mae")},
                           {"mrr", finite_metric(o.mrr, "mrr")},
                           {"count", o.count}});
    j["ordered_attributes"] = std::move(ordered);
    j["counts"] = {{"queries", r.query_count},
                   {"gallery", r.gallery_count},
                   {"skipped_terms", r.skipped_terms}};
    j["seed"] = r.seed;
    j["config"] = config_echo;
    return j;
}

inline MetricsReport metrics_from_json(const Json& j) {
    MetricsReport r;
    r.recall_k = j.at("recall_k").get<std::size_t>();
    r.recall_at_k = j.at("recall_at_k").get<double>();
    r.attribute_map = detail::read_optional(j.at("attribute_map"));
    r.attribute_map_by_attribute = detail::read_optional(j.at("attribute_map_by_attribute"));
    for (const auto& a : j.at("attribute_map_per_attribute"))
        r.attribute_map_per_attribute.push_back(
            {a.at("attribute").get<std::string>(), a.at("map").get<double>(), a.at("values").get<std::size_t>()});
    for (const auto& a : j.at("attribute_value_ap"))
        r.attribute_value_ap.push_back(
            {a.at("attribute").get<std::string>(), a.at("value").get<std::string>(), a.at("ap").get<double>()});
    r.category_map = detail::read_optional(j.at("category_map"));
    for (const auto& c : j.at("category_ap"))
        r.category_ap.push_back({c.at("category").get<std::string>(), c.at("ap").get<double>()});
    for (const auto& o : j.at("ordered_attributes"))
        r.ordered.push_back({o.at("attribute").get<std::string>(), o.at("mae").get<double>(),
                             o.at("mrr").get<double>(), o.at("count").get<std::size_t>()});
    const auto& c = j.at("counts");
    r.query_count = c.at("queries").get<std::size_t>();
    r.gallery_count = c.at("gallery").get<std::size_t>();
    r.skipped_terms = c.at("skipped_terms").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

inline Json to_json(const TransitionPath& p) {
    Json j;
    j["path"] = p.item_ids;
    Json hops = Json::array();
    for (double w : p.hop_weights) hops.push_back(detail::finite_metric(w, "hop weight"));
    j["hop_weights"] = std::move(hops);
    j["total_cost"] = detail::finite_metric(p.total_cost, "total cost");
    j["max_edge_index"] = p.max_edge_index ? Json(*p.max_edge_index) : Json(nullptr);
    return j;
}

inline Json to_json(const std::vector<RankedEntry>& ranking) {
    Json arr = Json::array();
    for (const auto& e : ranking)
        arr.push_back({{"item_id", e.item_id}, {"distance", detail::finite_metric(e.distance, "distance")}});
    return arr;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw DataError("failed writing " + path.string());
}

inline void emit_report(const Json& j, const std::filesystem::path& path) { write_text(path, dump(j)); }

// "epoch,step,loss" CSV with shortest round-trip loss values.
inline std::string loss_log_csv(const std::vector<LossLogEntry>& log) {
    std::ostringstream os;
    os << "epoch,step,loss\n";
    for (const auto& e : log) {
        detail::finite_metric(e.loss, "loss");
        os << e.epoch << ',' << e.step << ',' << Json(e.loss).dump() << '\n';
    }
    return os.str();
}

inline void emit_loss_log(const std::vector<LossLogEntry>& log, const std::filesystem::path& path) {
    write_text(path, loss_log_csv(log));
}

} // namespace coemb
