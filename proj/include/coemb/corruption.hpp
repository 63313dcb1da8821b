#pragma once

#include "dataset.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>

namespace coemb {

enum class CorruptionMode { absence, swap, both };

inline CorruptionMode parse_corruption_mode(std::string_view s) {
    if (s == "absence") return CorruptionMode::absence;
    if (s == "swap") return CorruptionMode::swap;
    if (s == "both") return CorruptionMode::both;
    throw UsageError("unknown corruption mode \"" + std::string(s) + "\"");
}

// Number of train instances hit by a corruption at the given fraction, rounded
// to nearest with ties up.
inline std::size_t corrupted_instance_count(double fraction, std::size_t train_instances) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_instances) + 0.5));
}

// Corrupts exactly one attribute of a seeded random subset of train instances.
// Every item of a corrupted instance receives the same corruption; query and
// gallery items are never touched.
inline Dataset corrupt_attributes(const Dataset& ds, double fraction, CorruptionMode mode,
                                  std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw UsageError("corruption fraction must lie in [0, 1]");

    std::vector<std::size_t> train_instances;
    std::vector<const AttributeValues*> labels(ds.labels.instances.size(), nullptr);
    for (const Item& it : ds.items)
        if (it.split == Split::train && labels[it.instance] == nullptr) {
            labels[it.instance] = &it.attributes;
            train_instances.push_back(it.instance);
        }
    std::sort(train_instances.begin(), train_instances.end());

    const std::size_t count = corrupted_instance_count(fraction, train_instances.size());
    Dataset out = ds;
    if (count == 0) return out;

    for (std::size_t i : train_instances)
        if (labels[i]->empty())
            throw DataError("instance \"" + ds.labels.instances[i] + "\" exhibits no attribute");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order = train_instances;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(count);
    std::sort(order.begin(), order.end());

    std::vector<std::optional<AttributeValues>> replacement(ds.labels.instances.size());
    for (std::size_t i : order) {
        AttributeValues attrs = *labels[i];
        std::uniform_int_distribution<std::size_t> pick_attr(0, attrs.size() - 1);
        auto it = std::next(attrs.begin(), static_cast<std::ptrdiff_t>(pick_attr(rng)));
        bool swap = mode == CorruptionMode::swap;
        if (mode == CorruptionMode::both) swap = std::bernoulli_distribution(0.5)(rng);
        if (swap) {
            const std::size_t values = ds.labels.attributes[it->first].values.size();
            if (values < 2)
                throw DataError("cannot swap attribute \"" + ds.labels.attributes[it->first].name +
                                "\" with a single value");
            std::uniform_int_distribution<std::size_t> pick_value(0, values - 2);
            std::size_t v = pick_value(rng);
            if (v >= it->second) ++v;
            it->second = v;
        } else {
            attrs.erase(it);
        }
        replacement[i] = std::move(attrs);
    }
    for (Item& it : out.items)
        if (it.split == Split::train && replacement[it.instance])
            it.attributes = *replacement[it.instance];
    return out;
}

} // namespace coemb
