#pragma once

#include "errors.hpp"
#include "linalg.hpp"

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace coemb {

enum class Split { train, query, gallery };

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
    }
    return "train";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "query") return Split::query;
    if (s == "gallery") return Split::gallery;
    throw DataError("unknown split \"" + std::string(s) + "\"");
}

struct AttributeSpec {
    std::string name;
    std::vector<std::string> values;
    bool ordered = false;
    // One rank per value, present only for ordered attributes.
    std::vector<double> ranks;

    std::optional<std::size_t> value_index(std::string_view value) const {
        auto it = std::find(values.begin(), values.end(), value);
        if (it == values.end()) return std::nullopt;
        return static_cast<std::size_t>(it - values.begin());
    }

    void validate() const {
        if (values.size() < 2)
            throw DataError("attribute \"" + name + "\" needs at least 2 values");
        std::set<std::string> seen(values.begin(), values.end());
        if (seen.size() != values.size())
            throw DataError("attribute \"" + name + "\" has duplicate values");
        if (ordered != !ranks.empty())
            throw DataError("attribute \"" + name + "\": ranks must be given iff ordered");
        if (ordered) {
            if (ranks.size() != values.size())
                throw DataError("attribute \"" + name + "\": one rank per value required");
            for (std::size_t v = 1; v < ranks.size(); ++v)
                if (!(ranks[v] > ranks[v - 1]))
                    throw DataError("attribute \"" + name + "\": ranks must be strictly increasing");
        }
    }
};

// Attribute index -> value index. An attribute the item does not exhibit has
// no key.
using AttributeValues = std::map<std::size_t, std::size_t>;

class LabelSpace {
public:
    std::vector<AttributeSpec> attributes;
    std::vector<std::string> categories;
    std::vector<std::string> instances;

    LabelSpace() = default;
    LabelSpace(std::vector<AttributeSpec> attrs, std::vector<std::string> cats,
               std::vector<std::string> insts)
        : attributes(std::move(attrs)), categories(std::move(cats)), instances(std::move(insts)) {
        reindex();
    }

    // Rebuilds the name lookups and checks the uniqueness invariants.
    void reindex() {
        attribute_lookup_.clear();
        category_lookup_.clear();
        instance_lookup_.clear();
        for (std::size_t k = 0; k < attributes.size(); ++k) {
            attributes[k].validate();
            if (!attribute_lookup_.emplace(attributes[k].name, k).second)
                throw DataError("duplicate attribute name \"" + attributes[k].name + "\"");
        }
        for (std::size_t y = 0; y < categories.size(); ++y)
            if (!category_lookup_.emplace(categories[y], y).second)
                throw DataError("duplicate category \"" + categories[y] + "\"");
        for (std::size_t i = 0; i < instances.size(); ++i)
            if (!instance_lookup_.emplace(instances[i], i).second)
                throw DataError("duplicate instance \"" + instances[i] + "\"");
    }

    std::size_t attribute_count() const { return attributes.size(); }

    std::optional<std::size_t> attribute_index(const std::string& name) const {
        return lookup(attribute_lookup_, name);
    }
    std::optional<std::size_t> category_index(const std::string& name) const {
        return lookup(category_lookup_, name);
    }
    std::optional<std::size_t> instance_index(const std::string& name) const {
        return lookup(instance_lookup_, name);
    }

    friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
        auto same_attr = [](const AttributeSpec& x, const AttributeSpec& y) {
            return x.name == y.name && x.values == y.values && x.ordered == y.ordered &&
                   x.ranks == y.ranks;
        };
        return a.categories == b.categories && a.instances == b.instances &&
               std::equal(a.attributes.begin(), a.attributes.end(), b.attributes.begin(),
                          b.attributes.end(), same_attr);
    }

private:
    static std::optional<std::size_t>
    lookup(const std::unordered_map<std::string, std::size_t>& m, const std::string& key) {
        auto it = m.find(key);
        if (it == m.end()) return std::nullopt;
        return it->second;
    }

    std::unordered_map<std::string, std::size_t> attribute_lookup_;
    std::unordered_map<std::string, std::size_t> category_lookup_;
    std::unordered_map<std::string, std::size_t> instance_lookup_;
};

struct Item {
    std::string item_id;
    std::size_t instance = 0;
    std::size_t category = 0;
    AttributeValues attributes;
    Split split = Split::train;
    std::size_t feature_row = 0;

    friend bool operator==(const Item&, const Item&) = default;
};

struct Dataset {
    LabelSpace labels;
    std::vector<Item> items;
    // One row per stored feature vector, promoted from 32-bit storage.
    Matrix features;

    std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }

    std::vector<std::size_t> split_items(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < items.size(); ++j)
            if (items[j].split == s) out.push_back(j);
        return out;
    }

    // Checks every cross-reference and the unseen-instance protocol.
    void validate() const {
        if (features.cols() == 0 && !items.empty())
            throw DataError("feature dimension must be positive");
        std::set<std::string> ids;
        std::map<std::size_t, const Item*> first_of_instance;
        std::set<std::size_t> train_instances, test_instances, gallery_instances;
        for (const Item& it : items) {
            if (!ids.insert(it.item_id).second)
                throw DataError("duplicate item_id \"" + it.item_id + "\"");
            if (it.instance >= labels.instances.size())
                throw DataError("item \"" + it.item_id + "\": unknown instance");
            if (it.category >= labels.categories.size())
                throw DataError("item \"" + it.item_id + "\": unknown category");
            if (it.feature_row >= static_cast<std::size_t>(features.rows()))
                throw DataError("item \"" + it.item_id + "\": feature_row out of range");
            for (auto [k, v] : it.attributes) {
                if (k >= labels.attributes.size())
                    throw DataError("item \"" + it.item_id + "\": unknown attribute");
                if (v >= labels.attributes[k].values.size())
                    throw DataError("item \"" + it.item_id + "\": unknown attribute value");
            }
            auto [pos, fresh] = first_of_instance.emplace(it.instance, &it);
            if (!fresh && (pos->second->category != it.category ||
                           pos->second->attributes != it.attributes))
                throw DataError("instance \"" + labels.instances[it.instance] +
                                "\" has inconsistent labels across items");
            if (it.split == Split::train)
                train_instances.insert(it.instance);
            else
                test_instances.insert(it.instance);
            if (it.split == Split::gallery) gallery_instances.insert(it.instance);
        }
        for (std::size_t i : test_instances) {
            if (train_instances.count(i))
                throw DataError("instance \"" + labels.instances[i] +
                                "\" appears in both train and test splits");
            if (!gallery_instances.count(i))
                throw DataError("instance \"" + labels.instances[i] + "\" has no gallery item");
        }
    }
};

// The train split re-indexed onto a label space holding only the instances
// and categories that occur in it. Attributes are kept unchanged so attribute
// and value indices stay valid across both label spaces.
inline Dataset training_subset(const Dataset& ds) {
    std::vector<bool> inst_used(ds.labels.instances.size(), false);
    std::vector<bool> cat_used(ds.labels.categories.size(), false);
    for (const Item& it : ds.items)
        if (it.split == Split::train) {
            inst_used[it.instance] = true;
            cat_used[it.category] = true;
        }
    std::vector<std::size_t> inst_map(inst_used.size()), cat_map(cat_used.size());
    std::vector<std::string> insts, cats;
    for (std::size_t i = 0; i < inst_used.size(); ++i)
        if (inst_used[i]) {
            inst_map[i] = insts.size();
            insts.push_back(ds.labels.instances[i]);
        }
    for (std::size_t y = 0; y < cat_used.size(); ++y)
        if (cat_used[y]) {
            cat_map[y] = cats.size();
            cats.push_back(ds.labels.categories[y]);
        }
    Dataset out;
    out.labels = LabelSpace(ds.labels.attributes, std::move(cats), std::move(insts));
    out.features = ds.features;
    for (const Item& it : ds.items)
        if (it.split == Split::train) {
            Item copy = it;
            copy.instance = inst_map[it.instance];
            copy.category = cat_map[it.category];
            out.items.push_back(std::move(copy));
        }
    return out;
}

} // namespace coemb
