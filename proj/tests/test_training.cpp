#include "support.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace coemb;
using namespace testing_support;

namespace {

SynthConfig small_synth(std::uint64_t seed) {
    SynthConfig sc;
    sc.train_instances = 40;
    sc.test_instances = 16;
    sc.seed = seed;
    return sc;
}

std::string checkpoint_bytes(const Checkpoint& c) {
    std::stringstream ss;
    write_checkpoint(ss, c);
    return ss.str();
}

} // namespace

TEST(Batches, PartitionTheItemsAndDependOnSeedAndEpoch) {
    const auto b = make_batches(10, 4, 3, 1);
    ASSERT_EQ(b.size(), 3u);
    EXPECT_EQ(b[2].size(), 2u);
    std::multiset<std::size_t> all;
    for (const auto& batch : b) all.insert(batch.begin(), batch.end());
    EXPECT_EQ(all, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    EXPECT_EQ(make_batches(10, 4, 3, 1), b);
    EXPECT_NE(make_batches(10, 4, 3, 2), b);
    EXPECT_NE(make_batches(10, 4, 4, 1), b);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalCheckpointsAndLogs) {
    const auto syn = generate(small_synth(1));
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 32;
    tc.seed = 5;
    const EmbeddingConfig config(4, 6);
    const auto a = train(syn.dataset, config, tc);
    const auto b = train(syn.dataset, config, tc);
    EXPECT_EQ(checkpoint_bytes(a.checkpoint), checkpoint_bytes(b.checkpoint));
    EXPECT_EQ(a.log, b.log);
    tc.seed = 6;
    EXPECT_NE(checkpoint_bytes(train(syn.dataset, config, tc).checkpoint), checkpoint_bytes(a.checkpoint));
}

TEST(Trainer, LossDecreases) {
    const auto syn = generate(small_synth(2));
    TrainConfig tc;
    tc.epochs = 15;
    tc.base_lr = 1e-3;
    const auto r = train(syn.dataset, EmbeddingConfig(4, 8), tc);
    ASSERT_EQ(r.epoch_mean_loss.size(), 15u);
    EXPECT_LT(r.epoch_mean_loss.back(), 0.5 * r.epoch_mean_loss.front());
    // 160 train items in batches of 128: two steps per epoch.
    EXPECT_EQ(r.log.size(), 30u);
    EXPECT_EQ(r.log.back().step, 30u);
}

TEST(Trainer, FrozenProxiesStayAtInitialization) {
    const auto syn = generate(small_synth(3));
    const Dataset train_only = training_subset(syn.dataset);
    const EmbeddingConfig config(4, 5);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 8;
    tc.learn_instance_proxies = false;
    tc.learn_attribute_proxies = false;
    const auto r = train(syn.dataset, config, tc);
    const Model init = initialize_model(train_only, config, 8);
    EXPECT_EQ(r.checkpoint.model.proxies.instance_proxies, init.proxies.instance_proxies);
    for (std::size_t k = 0; k < 4; ++k)
        EXPECT_EQ(r.checkpoint.model.proxies.attribute_proxies[k], init.proxies.attribute_proxies[k]);
    EXPECT_NE(r.checkpoint.model.projector.W, init.projector.W);

    tc.learn_instance_proxies = true;
    const auto learned = train(syn.dataset, config, tc);
    EXPECT_NE(learned.checkpoint.model.proxies.instance_proxies, init.proxies.instance_proxies);
    EXPECT_EQ(learned.checkpoint.model.proxies.attribute_proxies[0], init.proxies.attribute_proxies[0]);
}

TEST(Trainer, ZeroLearningRateLeavesProjectorUntouched) {
    const auto syn = generate(small_synth(4));
    const EmbeddingConfig config(4, 5);
    TrainConfig tc;
    tc.epochs = 1;
    tc.base_lr = 0.0;
    const auto r = train(syn.dataset, config, tc);
    const Model init = initialize_model(training_subset(syn.dataset), config, 0);
    EXPECT_EQ(r.checkpoint.model.projector.W, init.projector.W);
}

TEST(Trainer, CheckpointHoldsOnlyTrainInstances) {
    const auto syn = generate(small_synth(5));
    TrainConfig tc;
    tc.epochs = 1;
    const auto r = train(syn.dataset, EmbeddingConfig(4, 3), tc);
    EXPECT_EQ(r.checkpoint.labels.instances.size(), 40u);
    EXPECT_EQ(r.checkpoint.model.proxies.instance_proxies.rows(), 40);
    EXPECT_EQ(r.checkpoint.metadata.epochs, 1u);
}

TEST(Trainer, RejectsBadConfigurations) {
    const auto syn = generate(small_synth(6));
    TrainConfig tc;
    tc.epochs = 0;
    EXPECT_THROW(train(syn.dataset, EmbeddingConfig(4, 3), tc), UsageError);
    tc.epochs = 1;
    EXPECT_THROW(train(syn.dataset, EmbeddingConfig(3, 3), tc), UsageError);
    tc.weights.attribute = -1.0;
    EXPECT_THROW(train(syn.dataset, EmbeddingConfig(4, 3), tc), UsageError);
}

TEST(Synth, CountsAndSplits) {
    SynthConfig sc;
    sc.train_instances = 4;
    sc.test_instances = 2;
    sc.images_per_instance = 2;
    sc.categories = 2;
    const auto r = generate(sc);
    EXPECT_EQ(r.dataset.split_items(Split::train).size(), 8u);
    EXPECT_EQ(r.dataset.split_items(Split::query).size() + r.dataset.split_items(Split::gallery).size(), 4u);
    EXPECT_EQ(r.dataset.split_items(Split::query).size(), 2u);
    sc.images_per_instance = 1;
    try {
        generate(sc);
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("infeasible split"), std::string::npos);
    }
}

TEST(Synth, SameSeedGivesIdenticalBytes) {
    SynthConfig sc = small_synth(7);
    const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
    write_synth(sc, generate(sc), a);
    write_synth(sc, generate(sc), b);
    for (const char* f : {"manifest.json", "features.cefv", "ground_truth.json"})
        EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
    sc.seed = 8;
    const auto c = scratch_dir("synth_c");
    write_synth(sc, generate(sc), c);
    EXPECT_NE(read_bytes(a / "features.cefv"), read_bytes(c / "features.cefv"));
    // The in-memory features already equal their stored 32-bit values.
    const Dataset loaded = load_dataset(a / "manifest.json", a / "features.cefv");
    EXPECT_EQ(loaded.features, generate(small_synth(7)).dataset.features);
}

TEST(Synth, InstancesKeepLabelsAndSplitsAreDisjoint) {
    const auto r = generate(small_synth(9));
    const Dataset& ds = r.dataset;
    std::set<std::size_t> train, test;
    for (const Item& it : ds.items) {
        const auto& truth = r.truth.instances[it.instance];
        EXPECT_EQ(it.category, truth.category);
        for (std::size_t k = 0; k < truth.values.size(); ++k) EXPECT_EQ(it.attributes.at(k), truth.values[k]);
        (it.split == Split::train ? train : test).insert(it.instance);
    }
    for (std::size_t i : test) EXPECT_FALSE(train.count(i));
    EXPECT_EQ(train.size(), 40u);
    EXPECT_EQ(test.size(), 16u);
    EXPECT_NO_THROW(ds.validate());
    EXPECT_TRUE(ds.labels.attributes[0].ordered);
}

TEST(Synth, NoiselessImagesOfAnInstanceAreIdentical) {
    SynthConfig sc = small_synth(10);
    sc.noise_std = 0.0;
    sc.jitter_std = 0.0;
    sc.nuisance_std = 0.0;
    const auto r = generate(sc);
    const Dataset& ds = r.dataset;
    for (std::size_t j = 1; j < ds.items.size(); ++j)
        if (ds.items[j].instance == ds.items[j - 1].instance)
            EXPECT_EQ(ds.features.row(static_cast<Eigen::Index>(j)), ds.features.row(static_cast<Eigen::Index>(j - 1)));
}

TEST(Synth, InfiniteConcentrationFixesValuesPerCategory) {
    SynthConfig sc = small_synth(11);
    sc.concentration = std::numeric_limits<double>::infinity();
    const auto r = generate(sc);
    std::map<std::size_t, std::vector<std::size_t>> seen;
    for (const auto& inst : r.truth.instances) {
        auto [it, fresh] = seen.emplace(inst.category, inst.values);
        if (!fresh) EXPECT_EQ(it->second, inst.values);
    }
    EXPECT_EQ(seen.size(), sc.categories);
}
