#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hfplp/trainer.hpp"

namespace hfplp {
namespace {

namespace fs = std::filesystem;

WorkbenchConfig smoke_config() {
  WorkbenchConfig c;
  c.ppo.num_envs = 12;
  c.ppo.horizon = 8;
  c.actor_hidden = {32, 16};
  c.critic_hidden = {32, 16};
  c.stage2.daac_hidden = {16};
  c.stage2.observer_hidden = {16};
  c.stage2.observer_holdout_envs = 4;
  c.env.episode_length_s = 0.5;
  c.io.checkpoint_every = 2;
  return c;
}

std::vector<Json> read_log(const std::string& path) {
  std::ifstream in(path);
  std::vector<Json> out;
  for (std::string line; std::getline(in, line);) out.push_back(Json::parse(line));
  return out;
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / (std::string("hfplp_train_") +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string out(const std::string& sub) const { return (dir_ / sub).string(); }

  TrainResult run(TrainStage stage, const std::string& sub, int iters,
                  std::optional<std::string> stage1 = std::nullopt) {
    TrainOptions o;
    o.stage = stage;
    o.out_dir = out(sub);
    o.iterations = iters;
    o.stage1_checkpoint = std::move(stage1);
    return train(smoke_config(), o);
  }

  fs::path dir_;
};

TEST_F(TrainerTest, Stage1SmokeWritesLoadableCheckpointAndLog) {
  const TrainResult r = run(TrainStage::kHfplp, "a", 3);
  const Checkpoint ck = load_checkpoint(r.checkpoint_path);
  EXPECT_EQ(ck.info.stage, "hfplp");
  EXPECT_EQ(ck.info.iteration, 3);
  EXPECT_EQ(ck.info.mode, ActionMode::kHybrid);
  EXPECT_FALSE(ck.info.has_stage2);
  const std::vector<Json> log = read_log(r.log_path);
  ASSERT_EQ(log.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(log[i]["iteration"], i + 1);
    EXPECT_TRUE(log[i]["mean_reward"].is_number());
    EXPECT_EQ(log[i]["reward_terms"].size(), 8u);
    EXPECT_LT(log[i]["initial_ratio_error"].get<double>(), 1e-5);
  }
  EXPECT_TRUE(fs::exists(out("a") + "/hfplp.timing.jsonl"));
}

TEST_F(TrainerTest, SameSeedGivesByteIdenticalArtifacts) {
  const TrainResult a = run(TrainStage::kBaselinePosition, "a", 2);
  const TrainResult b = run(TrainStage::kBaselinePosition, "b", 2);
  EXPECT_EQ(read_file(a.log_path), read_file(b.log_path));
  EXPECT_EQ(read_file(a.checkpoint_path), read_file(b.checkpoint_path));
  EXPECT_EQ(inspect_checkpoint(a.checkpoint_path).mode, ActionMode::kPositionOnly);
}

TEST_F(TrainerTest, Stage2KeepsHfplpFrozen) {
  const TrainResult s1 = run(TrainStage::kHfplp, "s1", 2);
  const std::uint64_t before = hfplp_checksum(load_checkpoint(s1.checkpoint_path).stack);
  const TrainResult s2 = run(TrainStage::kDaac, "s2", 3, s1.checkpoint_path);
  const Checkpoint ck = load_checkpoint(s2.checkpoint_path);
  EXPECT_TRUE(ck.info.has_stage2);
  EXPECT_TRUE(ck.info.daac_uses_observer);
  EXPECT_EQ(hfplp_checksum(ck.stack), before);
  const std::vector<Json> log = read_log(s2.log_path);
  ASSERT_EQ(log.size(), 3u);
  for (const auto& rec : log) {
    EXPECT_EQ(rec["hfplp_checksum"], hex64(before));
    EXPECT_TRUE(rec["observer_val_mse"].is_number());
    EXPECT_TRUE(rec["observer_train_mse"].is_number());
  }
}

TEST_F(TrainerTest, NoObserverVariantFeedsZeroForce) {
  const TrainResult s1 = run(TrainStage::kHfplp, "s1", 1);
  const TrainResult s2 = run(TrainStage::kDaacNoObserver, "s2", 1, s1.checkpoint_path);
  const Checkpoint ck = load_checkpoint(s2.checkpoint_path);
  EXPECT_FALSE(ck.stack.daac_uses_observer);
  HistoryVec h = HistoryVec::LinSpaced(obs::kHistoryDim, -1.0, 1.0);
  ObsVec o = h.tail<obs::kDim>();
  const StackActions a = act_deterministic(ck.stack, {&h}, {&o});
  EXPECT_EQ(a.fext_input.rows(), 2);
  EXPECT_EQ(a.fext_input.norm(), 0.0f);
  EXPECT_NE(a.observer_out.bottomRows(2).norm(), 0.0f);
}

TEST_F(TrainerTest, Stage2Preconditions) {
  EXPECT_THROW(run(TrainStage::kDaac, "s2", 1), MissingInput);
  EXPECT_THROW(run(TrainStage::kDaac, "s2", 1, out("nowhere.ckpt")), MissingInput);
  const TrainResult pos = run(TrainStage::kBaselinePosition, "pos", 1);
  EXPECT_THROW(run(TrainStage::kDaac, "s2", 1, pos.checkpoint_path), ConfigError);
}

TEST_F(TrainerTest, ResumeContinuesNumbering) {
  run(TrainStage::kHfplp, "a", 2);
  TrainOptions o;
  o.stage = TrainStage::kHfplp;
  o.out_dir = out("a");
  o.iterations = 4;
  o.resume = out("a") + "/hfplp.ckpt";
  const TrainResult r = train(smoke_config(), o);
  EXPECT_EQ(inspect_checkpoint(r.checkpoint_path).iteration, 4);
  const std::vector<Json> log = read_log(r.log_path);
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[3]["iteration"], 4);

  WorkbenchConfig other = smoke_config();
  other.seed = 99;
  EXPECT_THROW(train(other, o), ConfigError);
  o.stage = TrainStage::kBaselinePosition;
  EXPECT_THROW(train(smoke_config(), o), Error);
}

TEST(TrainStageNames, RoundTrip) {
  for (TrainStage s : {TrainStage::kHfplp, TrainStage::kBaselinePosition, TrainStage::kDaac,
                       TrainStage::kDaacNoObserver})
    EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_THROW(parse_stage("daac2"), ConfigError);
}

}  // namespace
}  // namespace hfplp
