#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "i2p/train.hpp"
#include "support.hpp"

namespace i2p {
namespace {

using namespace train;
using testing::Rng;

TEST(Schedule, WarmupThenCosine) {
    EXPECT_DOUBLE_EQ(lr_scale(0, 4, 20), 0.25);
    EXPECT_DOUBLE_EQ(lr_scale(3, 4, 20), 1.0);
    EXPECT_DOUBLE_EQ(lr_scale(4, 4, 20), 1.0);
    EXPECT_NEAR(lr_scale(12, 4, 20), 0.5, 1e-12);
    EXPECT_NEAR(lr_scale(20, 4, 20), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(lr_scale(5, 0, 0), 1.0);
    double prev = 2;
    for (std::size_t s = 4; s <= 20; ++s) {
        EXPECT_LE(lr_scale(s, 4, 20), prev);
        prev = lr_scale(s, 4, 20);
    }
}

TEST(Schedule, RelationRamp) {
    EXPECT_DOUBLE_EQ(relation_scale(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(relation_scale(1, 4), 0.0);
    EXPECT_DOUBLE_EQ(relation_scale(3, 4), 0.5);
    EXPECT_DOUBLE_EQ(relation_scale(5, 4), 1.0);
}

TEST(Batching, TrailingSingletonJoinsPreviousBatch) {
    TrainConfig t;
    t.batch_size = 4;
    EXPECT_EQ(t.batches_per_epoch(8), 2u);
    EXPECT_EQ(t.batches_per_epoch(9), 2u);
    EXPECT_EQ(t.batches_per_epoch(10), 3u);
    EXPECT_EQ(t.batches_per_epoch(1), 1u);
    t.accum_steps = 2;
    EXPECT_EQ(t.steps_per_epoch(10), 2u);
}

TEST(Batching, EpochOrderIsSeededPermutation) {
    auto a = epoch_order(50, 3, 1), b = epoch_order(50, 3, 1), c = epoch_order(50, 3, 2);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    std::sort(c.begin(), c.end());
    std::vector<std::size_t> iota(50);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    EXPECT_EQ(c, iota);
}

TEST(Config, GroupsAndValidation) {
    EXPECT_EQ(group_of("image.block0.qkv.w"), Group::Image);
    EXPECT_EQ(group_of("cloud.tok.l0.w"), Group::Cloud);
    EXPECT_EQ(group_of("agg.cloud.centers"), Group::Aggregator);
    EXPECT_THROW(group_of("other"), ConfigError);
    EXPECT_EQ(parse_optimizer(to_string(OptimizerKind::Sgd)), OptimizerKind::Sgd);
    EXPECT_THROW(parse_optimizer("lion"), ConfigError);
    TrainConfig t;
    t.epochs = 0;
    EXPECT_THROW(t.validate(), ConfigError);
    t = {};
    t.optimizer.lr_cloud = 0;
    EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Config, EveryModelParameterHasAGroup) {
    auto p = model::init_model<float>(testing::toy_model_config());
    for (const auto& [name, t] : model::to_named(p)) EXPECT_NO_THROW(group_of(name)) << name;
}

struct Toy {
    model::ModelConfig cfg = testing::toy_model_config();
    std::vector<model::SampleInput> data;
    explicit Toy(std::size_t n) {
        Rng rng(42);
        for (std::size_t i = 0; i < n; ++i) data.push_back(testing::random_sample(cfg, i, rng));
    }
};

TrainConfig toy_train(OptimizerKind k, std::size_t epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 4;
    t.optimizer.kind = k;
    t.optimizer.lr_image = t.optimizer.lr_cloud = t.optimizer.lr_aggregator = k == OptimizerKind::Sgd ? 0.05 : 2e-3;
    t.optimizer.warmup_epochs = 1;
    t.seed = 5;
    return t;
}

TEST(Trainer, LossDecreasesOnToyData) {
    Toy toy(8);
    for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Sgd}) {
        Trainer tr(toy.cfg, toy_train(kind, 30), model::init_model<float>(toy.cfg));
        const double first = tr.run_epoch(toy.data).loss.total;
        double last = first;
        for (int e = 1; e < 30; ++e) last = tr.run_epoch(toy.data).loss.total;
        EXPECT_LT(last, 0.7 * first) << to_string(kind);
        EXPECT_EQ(tr.epoch(), 30u);
        EXPECT_EQ(tr.step(), 60u);
    }
}

TEST(Trainer, FrozenBlocksDoNotMove) {
    Toy toy(4);
    auto cfg = toy.cfg;
    cfg.encoder.frozen_image_blocks = 1;
    auto init = model::init_model<float>(cfg);
    Trainer tr(cfg, toy_train(OptimizerKind::AdamW, 3), init);
    tr.run_epoch(toy.data);
    auto after = tr.params();
    auto before_named = model::to_named(init), after_named = model::to_named(after);
    bool moved_other = false;
    for (std::size_t i = 0; i < before_named.size(); ++i) {
        const bool same = before_named[i].second.vec() == after_named[i].second.vec();
        if (before_named[i].first.rfind("image.block0", 0) == 0)
            EXPECT_TRUE(same) << before_named[i].first;
        else if (!same)
            moved_other = true;
    }
    EXPECT_TRUE(moved_other);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
    Toy toy(6);
    for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Sgd}) {
        const auto tcfg = toy_train(kind, 4);
        Trainer full(toy.cfg, tcfg, model::init_model<float>(toy.cfg));
        std::vector<EpochLog> logs;
        for (int e = 0; e < 4; ++e) logs.push_back(full.run_epoch(toy.data));

        Trainer half(toy.cfg, tcfg, model::init_model<float>(toy.cfg));
        half.run_epoch(toy.data);
        half.run_epoch(toy.data);
        auto dir = testing::temp_dir("resume");
        io::save_checkpoint(dir / "state.json", half.state());
        auto resumed = Trainer::resume(io::load_checkpoint(dir / "state.json"), toy.cfg, tcfg);
        EXPECT_EQ(resumed.epoch(), 2u);
        auto l3 = resumed.run_epoch(toy.data);
        auto l4 = resumed.run_epoch(toy.data);
        EXPECT_EQ(l3.loss.total, logs[2].loss.total);
        EXPECT_EQ(l4.loss.total, logs[3].loss.total);
        auto a = full.params(), b = resumed.params();
        EXPECT_EQ(model::flatten(a), model::flatten(b));
        EXPECT_THROW(Trainer::resume(full.state(), toy.cfg, tcfg), ConfigError);
        auto other = tcfg;
        other.optimizer.kind = kind == OptimizerKind::Sgd ? OptimizerKind::AdamW : OptimizerKind::Sgd;
        EXPECT_THROW(Trainer::resume(half.state(), toy.cfg, other), ConfigError);
    }
}

TEST(Trainer, NeedsTwoSamples) {
    Toy toy(1);
    Trainer tr(toy.cfg, toy_train(OptimizerKind::AdamW, 2), model::init_model<float>(toy.cfg));
    EXPECT_THROW(tr.run_epoch(toy.data), DataError);
}

TEST(LossCsv, HeaderAndRow) {
    EpochLog e;
    e.epoch = 3;
    e.loss.total = 1.5;
    e.lr_scale = 0.25;
    EXPECT_EQ(loss_csv_header(), "epoch,total,infonce,relation_euc,relation_hyp,fused,lr_scale\n");
    EXPECT_EQ(loss_csv_row(e), "3,1.5,0,0,0,0,0.25\n");
}

}  // namespace
}  // namespace i2p
