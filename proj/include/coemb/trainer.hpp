#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "losses.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace coemb {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    double base_lr = 1e-4;
    AdamConfig adam;
    double weight_decay = 5e-5;
    double proxy_lr_multiplier = 10.0;
    LossWeights weights;
    double sigma = 1.0;
    std::uint64_t seed = 0;
    bool learn_instance_proxies = true;
    bool learn_attribute_proxies = true;
    bool renormalize_missing_attributes = false;

    void validate() const {
        if (epochs < 1) throw UsageError("epochs must be >= 1");
        if (batch_size < 1) throw UsageError("batch size must be >= 1");
        for (double r : {base_lr, weight_decay, proxy_lr_multiplier})
            if (!std::isfinite(r) || r < 0.0)
                throw UsageError("learning rates and weight decay must be finite and non-negative");
        if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
            throw UsageError("adam betas must lie in [0, 1)");
        if (!(adam.epsilon > 0.0)) throw UsageError("adam epsilon must be positive");
        if (!(sigma > 0.0)) throw UsageError("sigma must be positive");
        weights.validate();
    }
};

struct AdamState {
    AdamMoments W, b, instance_proxies;
    std::vector<AdamMoments> attribute_proxies;
    std::uint64_t step = 0;

    static AdamState for_model(const Model& m) {
        AdamState s;
        s.W = AdamMoments(m.projector.W.size());
        s.b = AdamMoments(m.projector.b.size());
        s.instance_proxies = AdamMoments(m.proxies.instance_proxies.size());
        for (const Matrix& a : m.proxies.attribute_proxies)
            s.attribute_proxies.emplace_back(a.size());
        return s;
    }
};

// One optimizer step over every learnable tensor. Proxies move at
// base_lr * proxy_lr_multiplier and are skipped entirely when frozen; weight
// decay touches the projector only.
inline void adam_step(Model& model, const ModelGradients& grads, AdamState& state,
                      const TrainConfig& cfg) {
    if (!grads.all_finite()) throw NumericError("non-finite gradient in optimizer step");
    ++state.step;
    const double lr = cfg.base_lr;
    const double proxy_lr = cfg.base_lr * cfg.proxy_lr_multiplier;
    adam_update(model.projector.W, grads.W, state.W, lr, cfg.weight_decay, state.step, cfg.adam);
    adam_update(model.projector.b, grads.b, state.b, lr, cfg.weight_decay, state.step, cfg.adam);
    if (cfg.learn_instance_proxies)
        adam_update(model.proxies.instance_proxies, grads.instance_proxies, state.instance_proxies,
                    proxy_lr, 0.0, state.step, cfg.adam);
    if (cfg.learn_attribute_proxies)
        for (std::size_t k = 0; k < model.proxies.attribute_proxies.size(); ++k)
            adam_update(model.proxies.attribute_proxies[k], grads.attribute_proxies[k],
                        state.attribute_proxies[k], proxy_lr, 0.0, state.step, cfg.adam);
}

// Seeded shuffle of [0, count) cut into consecutive batches; the last batch
// may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                          std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw UsageError("batch size must be >= 1");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t stop = std::min(count, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return batches;
}

struct LossLogEntry {
    std::size_t epoch = 0; // 1-based
    std::size_t step = 0;  // 1-based, global
    double loss = 0.0;

    friend bool operator==(const LossLogEntry&, const LossLogEntry&) = default;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossLogEntry> log;
    std::vector<double> epoch_mean_loss;
};

// Fresh parameters for a training run; consumes the seed's RNG stream in a
// fixed order (projector, instance proxies, attribute proxies).
inline Model initialize_model(const Dataset& train, const EmbeddingConfig& config,
                              std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Model m;
    m.projector = Projector::random(config.superspace_dim(), train.feature_dim(), rng);
    m.proxies = ProxyStore::random(train.labels, instance_categories(train), config, rng);
    return m;
}

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

inline TrainResult train(const Dataset& dataset, const EmbeddingConfig& config,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    const Dataset data = training_subset(dataset);
    if (data.items.empty()) throw DataError("dataset has no train items");
    if (data.labels.attribute_count() != config.attribute_count())
        throw UsageError("embedding config has " + std::to_string(config.attribute_count()) +
                         " subspaces but the dataset declares " +
                         std::to_string(data.labels.attribute_count()) + " attributes");

    Model model = initialize_model(data, config, cfg.seed);
    AdamState state = AdamState::for_model(model);
    const OrderingConfig ordering = OrderingConfig::from_labels(data.labels, cfg.sigma);
    const TotalLossOptions options{cfg.renormalize_missing_attributes};

    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_sum = 0.0;
        const auto batches = make_batches(data.items.size(), cfg.batch_size, cfg.seed, epoch);
        for (const auto& batch : batches) {
            TotalLoss tl = total_loss_and_grad(data, batch, model, cfg.weights, ordering, config, options);
            adam_step(model, tl.grads, state, cfg);
            result.log.push_back({epoch, static_cast<std::size_t>(state.step), tl.loss});
            epoch_sum += tl.loss;
        }
        const double mean = epoch_sum / static_cast<double>(batches.size());
        result.epoch_mean_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }

    result.checkpoint.config = config;
    result.checkpoint.labels = data.labels;
    result.checkpoint.model = std::move(model);
    result.checkpoint.metadata = {cfg.seed, cfg.epochs, cfg.weights, cfg.sigma};
    result.checkpoint.validate();
    return result;
}

} // namespace coemb
