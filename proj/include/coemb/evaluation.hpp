#pragma once

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "embedding.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

namespace coemb {

// Embeddings of one split, normalized per subspace, with their labels. Label
// indices refer to the dataset the index was built from.
struct RetrievalIndex {
    EmbeddingConfig config;
    Split split = Split::gallery;
    std::vector<std::size_t> dataset_items;
    std::vector<std::string> item_ids;
    Matrix embeddings; // normalized, one row per entry
    Matrix raw;        // f(x) before normalization
    std::vector<std::size_t> instances;
    std::vector<std::size_t> categories;
    std::vector<AttributeValues> attributes;

    std::size_t size() const { return item_ids.size(); }

    friend bool operator==(const RetrievalIndex& a, const RetrievalIndex& b) {
        return a.config == b.config && a.split == b.split && a.dataset_items == b.dataset_items &&
               a.item_ids == b.item_ids && a.embeddings == b.embeddings && a.raw == b.raw &&
               a.instances == b.instances && a.categories == b.categories &&
               a.attributes == b.attributes;
    }
};

inline RetrievalIndex build_index(const Checkpoint& ckpt, const Dataset& ds, Split split) {
    if (ds.feature_dim() != ckpt.model.projector.input_dim())
        throw DataError("dataset feature dimension does not match checkpoint");
    RetrievalIndex index;
    index.config = ckpt.config;
    index.split = split;
    index.dataset_items = ds.split_items(split);
    if (index.dataset_items.empty())
        throw DataError("split \"" + std::string(to_string(split)) + "\" is empty");
    Matrix features(static_cast<Eigen::Index>(index.dataset_items.size()), ds.features.cols());
    for (std::size_t r = 0; r < index.dataset_items.size(); ++r) {
        const Item& it = ds.items[index.dataset_items[r]];
        features.row(static_cast<Eigen::Index>(r)) =
            ds.features.row(static_cast<Eigen::Index>(it.feature_row));
        index.item_ids.push_back(it.item_id);
        index.instances.push_back(it.instance);
        index.categories.push_back(it.category);
        index.attributes.push_back(it.attributes);
    }
    index.raw = project_rows(ckpt.model.projector, features);
    index.embeddings = index.raw;
    normalize_rows_per_subspace(index.embeddings, index.config);
    return index;
}

// Squared Euclidean distance, optionally restricted to one subspace block.
// Rankings use squared distances; ties go to the lower entry index.
inline double squared_distance(Eigen::Ref<const Vector> a, Eigen::Ref<const Vector> b) {
    return (a - b).squaredNorm();
}

inline std::vector<double> distances_to(const Matrix& rows, Eigen::Ref<const Vector> query,
                                        const EmbeddingConfig& config,
                                        std::optional<std::size_t> block = std::nullopt) {
    std::vector<double> out(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        if (block) {
            const auto s = config.block_start(*block);
            out[static_cast<std::size_t>(r)] = squared_distance(
                rows.row(r).segment(s, config.width()).transpose(), query.segment(s, config.width()));
        } else {
            out[static_cast<std::size_t>(r)] = squared_distance(rows.row(r).transpose(), query);
        }
    }
    return out;
}

inline std::vector<std::size_t> rank_by_distance(const std::vector<double>& dist) {
    std::vector<std::size_t> order(dist.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    return order;
}

// Fraction of queries with at least one same-instance gallery entry among
// their k nearest neighbours in the superspace.
inline double recall_at_k(const RetrievalIndex& queries, const RetrievalIndex& gallery, std::size_t k,
                          std::size_t threads = 1) {
    if (gallery.size() == 0) throw DataError("empty gallery");
    if (queries.size() == 0) throw DataError("empty query set");
    if (k < 1) throw UsageError("k must be >= 1");
    if (k > gallery.size()) throw UsageError("k exceeds gallery size");
    std::vector<char> hit(queries.size(), 0);
    parallel_for(queries.size(), threads, [&](std::size_t q) {
        const auto dist = distances_to(gallery.embeddings,
                                       queries.embeddings.row(static_cast<Eigen::Index>(q)).transpose(),
                                       gallery.config);
        std::vector<std::size_t> order(dist.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto less = [&](std::size_t a, std::size_t b) {
            return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
        for (std::size_t r = 0; r < k; ++r)
            if (gallery.instances[order[r]] == queries.instances[q]) {
                hit[q] = 1;
                break;
            }
    });
    const auto hits = std::count(hit.begin(), hit.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// Non-interpolated AP: mean over relevant positions j of precision@j. Empty
// when the list has no relevant entry.
template <std::ranges::input_range Range>
std::optional<double> average_precision(const Range& ranked_relevance) {
    std::size_t positives = 0;
    std::size_t j = 0;
    double sum = 0.0;
    for (bool relevant : ranked_relevance) {
        if (relevant) {
            ++positives;
            sum += static_cast<double>(positives) / static_cast<double>(j + 1);
        }
        ++j;
    }
    if (positives == 0) return std::nullopt;
    return sum / static_cast<double>(positives);
}

struct Term {
    enum class Kind { attribute_value, category } kind = Kind::category;
    std::size_t attribute = 0;
    std::size_t value = 0;
    std::size_t category = 0;

    static Term attribute_value(std::size_t k, std::size_t v) {
        return {Kind::attribute_value, k, v, 0};
    }
    static Term category_of(std::size_t y) { return {Kind::category, 0, 0, y}; }

    std::optional<std::size_t> block() const {
        if (kind == Kind::attribute_value) return attribute;
        return std::nullopt;
    }

    bool matches(std::size_t category_label, const AttributeValues& attrs) const {
        if (kind == Kind::category) return category_label == category;
        auto it = attrs.find(attribute);
        return it != attrs.end() && it->second == value;
    }
};

// Mean of the normalized embeddings in `index` exhibiting the term,
// re-normalized per subspace. Attribute-value queries keep only their block.
inline Vector build_term_query(const RetrievalIndex& index, const Term& term) {
    Vector sum = Vector::Zero(index.embeddings.cols());
    std::size_t count = 0;
    for (std::size_t r = 0; r < index.size(); ++r)
        if (term.matches(index.categories[r], index.attributes[r])) {
            sum += index.embeddings.row(static_cast<Eigen::Index>(r)).transpose();
            ++count;
        }
    if (count == 0) throw DataError("term is exhibited by no item");
    Vector query = sum / static_cast<double>(count);
    if (auto k = term.block()) {
        Vector masked = Vector::Zero(query.size());
        const auto s = index.config.block_start(*k);
        masked.segment(s, index.config.width()) = query.segment(s, index.config.width());
        query = std::move(masked);
    }
    normalize_per_subspace_inplace(query, index.config);
    return query;
}

struct TermRetrieval {
    std::vector<std::optional<double>> ap; // per term; empty when no relevant gallery item
    std::optional<double> map;
    std::size_t skipped = 0;
};

inline std::vector<bool> ranked_relevance(const Vector& query, const Term& term,
                                          const RetrievalIndex& gallery) {
    const auto dist = distances_to(gallery.embeddings, query, gallery.config, term.block());
    const auto order = rank_by_distance(dist);
    std::vector<bool> rel(order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
        rel[r] = term.matches(gallery.categories[order[r]], gallery.attributes[order[r]]);
    return rel;
}

// Ranks the whole gallery for each term query (block distance for attribute
// terms, superspace distance for categories) and scores it with AP.
inline TermRetrieval term_retrieval_eval(std::span<const Term> terms, std::span<const Vector> queries,
                                         const RetrievalIndex& gallery, std::size_t threads = 1) {
    if (gallery.size() == 0) throw DataError("empty gallery");
    if (terms.size() != queries.size()) throw UsageError("one query vector per term required");
    TermRetrieval out;
    out.ap.resize(terms.size());
    parallel_for(terms.size(), threads, [&](std::size_t t) {
        const auto rel = ranked_relevance(queries[t], terms[t], gallery);
        out.ap[t] = average_precision(rel);
    });
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& ap : out.ap) {
        if (ap) {
            sum += *ap;
            ++used;
        } else {
            ++out.skipped;
        }
    }
    if (used > 0) out.map = sum / static_cast<double>(used);
    return out;
}

struct OrderedAttributeMetrics {
    double mae = 0.0;
    double mrr = 0.0;
    std::size_t count = 0;
};

// Predicts the ordered attribute k of each exhibiting entry as the nearest
// value proxy to its unnormalized block-k embedding. MAE is in rank units;
// MRR uses the position of the true value among proxies sorted by distance,
// ties going to the earlier declared value.
inline OrderedAttributeMetrics ordered_attribute_eval(const RetrievalIndex& index,
                                                      const Checkpoint& ckpt, std::size_t k) {
    ckpt.config.check_attribute(k);
    const AttributeSpec& spec = ckpt.labels.attributes.at(k);
    if (!spec.ordered) throw UsageError("attribute \"" + spec.name + "\" is not ordered");
    const Matrix& proxies = ckpt.model.proxies.attribute_proxies.at(k);
    const auto s = index.config.block_start(k);
    OrderedAttributeMetrics out;
    double abs_sum = 0.0, rr_sum = 0.0;
    for (std::size_t r = 0; r < index.size(); ++r) {
        auto it = index.attributes[r].find(k);
        if (it == index.attributes[r].end()) continue;
        const Vector block = index.raw.row(static_cast<Eigen::Index>(r)).segment(s, index.config.width()).transpose();
        std::vector<double> dist(static_cast<std::size_t>(proxies.rows()));
        for (Eigen::Index v = 0; v < proxies.rows(); ++v)
            dist[static_cast<std::size_t>(v)] = squared_distance(proxies.row(v).transpose(), block);
        const auto order = rank_by_distance(dist);
        const std::size_t predicted = order.front();
        const std::size_t truth = it->second;
        const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), truth) - order.begin());
        abs_sum += std::abs(spec.ranks[predicted] - spec.ranks[truth]);
        rr_sum += 1.0 / static_cast<double>(pos + 1);
        ++out.count;
    }
    if (out.count == 0) throw DataError("no item exhibits ordered attribute \"" + spec.name + "\"");
    out.mae = abs_sum / static_cast<double>(out.count);
    out.mrr = rr_sum / static_cast<double>(out.count);
    return out;
}

struct AttributeValueAP {
    std::string attribute;
    std::string value;
    double ap = 0.0;
};

struct AttributeMAP {
    std::string attribute;
    double map = 0.0;
    std::size_t values = 0;
};

struct CategoryAP {
    std::string category;
    double ap = 0.0;
};

struct OrderedAttributeReport {
    std::string attribute;
    double mae = 0.0;
    double mrr = 0.0;
    std::size_t count = 0;
};

struct MetricsReport {
    std::size_t recall_k = 1;
    double recall_at_k = 0.0;
    std::vector<AttributeValueAP> attribute_value_ap;
    std::vector<AttributeMAP> attribute_map_per_attribute;
    std::optional<double> attribute_map;              // mean over value terms
    std::optional<double> attribute_map_by_attribute; // mean of per-attribute means
    std::vector<CategoryAP> category_ap;
    std::optional<double> category_map;
    std::vector<OrderedAttributeReport> ordered;
    std::size_t query_count = 0;
    std::size_t gallery_count = 0;
    std::size_t skipped_terms = 0; // terms with no relevant gallery item
    std::uint64_t seed = 0;
};

struct EvalOptions {
    std::size_t recall_k = 1;
    std::size_t threads = 1;
};

// Instance retrieval (query vs gallery), attribute-value and category term
// retrieval (term queries from the train split, ranked over the gallery) and
// ordered-attribute prediction on the query split.
inline MetricsReport evaluate(const Checkpoint& ckpt, const Dataset& ds, const EvalOptions& opt = {}) {
    const RetrievalIndex train = build_index(ckpt, ds, Split::train);
    const RetrievalIndex query = build_index(ckpt, ds, Split::query);
    const RetrievalIndex gallery = build_index(ckpt, ds, Split::gallery);

    MetricsReport rep;
    rep.seed = ckpt.metadata.seed;
    rep.recall_k = opt.recall_k;
    rep.query_count = query.size();
    rep.gallery_count = gallery.size();
    rep.recall_at_k = recall_at_k(query, gallery, opt.recall_k, opt.threads);

    auto exhibited = [&](const Term& t) {
        for (std::size_t r = 0; r < train.size(); ++r)
            if (t.matches(train.categories[r], train.attributes[r])) return true;
        return false;
    };

    std::vector<Term> attr_terms;
    for (std::size_t k = 0; k < ds.labels.attributes.size(); ++k)
        for (std::size_t v = 0; v < ds.labels.attributes[k].values.size(); ++v) {
            Term t = Term::attribute_value(k, v);
            if (exhibited(t)) attr_terms.push_back(t);
        }
    std::vector<Term> cat_terms;
    for (std::size_t y = 0; y < ds.labels.categories.size(); ++y) {
        Term t = Term::category_of(y);
        if (exhibited(t)) cat_terms.push_back(t);
    }
    auto queries_for = [&](const std::vector<Term>& terms) {
        std::vector<Vector> qs;
        for (const Term& t : terms) qs.push_back(build_term_query(train, t));
        return qs;
    };

    const auto attr_q = queries_for(attr_terms);
    const TermRetrieval attr = term_retrieval_eval(attr_terms, attr_q, gallery, opt.threads);
    rep.attribute_map = attr.map;
    std::vector<double> per_attr_sum(ds.labels.attributes.size(), 0.0);
    std::vector<std::size_t> per_attr_count(ds.labels.attributes.size(), 0);
    for (std::size_t t = 0; t < attr_terms.size(); ++t) {
        if (!attr.ap[t]) continue;
        const auto& spec = ds.labels.attributes[attr_terms[t].attribute];
        rep.attribute_value_ap.push_back({spec.name, spec.values[attr_terms[t].value], *attr.ap[t]});
        per_attr_sum[attr_terms[t].attribute] += *attr.ap[t];
        ++per_attr_count[attr_terms[t].attribute];
    }
    double by_attr = 0.0;
    std::size_t attrs_used = 0;
    for (std::size_t k = 0; k < per_attr_sum.size(); ++k) {
        if (per_attr_count[k] == 0) continue;
        const double m = per_attr_sum[k] / static_cast<double>(per_attr_count[k]);
        rep.attribute_map_per_attribute.push_back({ds.labels.attributes[k].name, m, per_attr_count[k]});
        by_attr += m;
        ++attrs_used;
    }
    if (attrs_used > 0) rep.attribute_map_by_attribute = by_attr / static_cast<double>(attrs_used);

    const auto cat_q = queries_for(cat_terms);
    const TermRetrieval cat = term_retrieval_eval(cat_terms, cat_q, gallery, opt.threads);
    rep.category_map = cat.map;
    for (std::size_t t = 0; t < cat_terms.size(); ++t)
        if (cat.ap[t]) rep.category_ap.push_back({ds.labels.categories[cat_terms[t].category], *cat.ap[t]});
    rep.skipped_terms = attr.skipped + cat.skipped;

    for (std::size_t k = 0; k < ckpt.labels.attributes.size(); ++k) {
        if (!ckpt.labels.attributes[k].ordered) continue;
        const bool any = std::any_of(query.attributes.begin(), query.attributes.end(),
                                     [&](const AttributeValues& a) { return a.count(k) > 0; });
        if (!any) continue;
        const auto m = ordered_attribute_eval(query, ckpt, k);
        rep.ordered.push_back({ckpt.labels.attributes[k].name, m.mae, m.mrr, m.count});
    }
    return rep;
}

} // namespace coemb
