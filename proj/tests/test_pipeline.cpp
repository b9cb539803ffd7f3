#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "aspan/errors.hpp"
#include "aspan/evaluate.hpp"
#include "aspan/model.hpp"
#include "aspan/ops.hpp"
#include "aspan/train.hpp"

namespace aspan {
namespace {

namespace fs = std::filesystem;

ModelConfig tiny_config() {
  ModelConfig c;
  c.gla.dim = 8;
  c.gla.num_blocks = 1;
  c.gla.coarse = {2, 2};
  c.gla.samples = 4;
  c.gla.cell_fine = 2;
  c.train_extent = {32, 32};
  return c;
}

std::vector<SynthPair> tiny_data(std::size_t n, std::uint64_t seed = 1) {
  DatasetManifest m;
  m.seed = seed;
  m.count = n;
  m.extent = {32, 32};
  m.warp.tier = WarpTier::easy;
  return generate_dataset(m);
}

TEST(LearningRate, WarmupThenHalving) {
  TrainConfig c;
  c.lr = 1e-3;
  c.warmup_epochs = 1;
  c.halving_period = 2;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 0.5), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 1.0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 1, 0.0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 2, 0.9), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 3, 0.0), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 5, 0.0), 2.5e-4);
  c.warmup_epochs = 0;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0, 0.0), 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRateAlongSign) {
  const ModelConfig cfg = tiny_config();
  ModelWeights w = init_model(cfg, 3);
  const double tau0 = w.log_match_tau.value()[0];
  const Tensor kernel0 = w.backbone.conv1_kernel.value();
  backward(scale(sum(w.log_match_tau), 3.0));
  Adam opt(0.9, 0.999, 1e-8);
  opt.step(w, 0.01, 0.5);
  EXPECT_NEAR(w.log_match_tau.value()[0], tau0 - 0.01, 1e-8);
  EXPECT_TRUE(w.backbone.conv1_kernel.value() == kernel0);
  EXPECT_FALSE(w.log_match_tau.has_grad());
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig c = tiny_config();
  c.normalized_pe = false;
  c.theta = 0.3;
  EXPECT_EQ(to_json(model_config_from_json(to_json(c))), to_json(c));
  EXPECT_THROW(model_config_from_json({{"unknown", 1}}), ParameterError);
  EXPECT_THROW(model_config_from_json({{"theta", 1.5}}), ParameterError);
  EXPECT_THROW(model_config_from_json({{"window", 4}}), ParameterError);
  TrainConfig t;
  t.batch_size = 2;
  EXPECT_EQ(to_json(train_config_from_json(to_json(t))), to_json(t));
  EXPECT_THROW(train_config_from_json({{"batch_size", 0}}), ParameterError);
}

TEST(Forward, ShapesAndEncodingScale) {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_model(cfg, 4);
  const SynthPair p = tiny_data(1)[0];
  const ForwardOutput out = forward(w, cfg, p.image_a, p.image_b);
  EXPECT_EQ(out.fine_a.grid.shape(), (Shape{16, 16, 4}));
  EXPECT_EQ(out.stack.a.grid.shape(), (Shape{4, 4, 8}));
  EXPECT_EQ(out.scores.rows(), 16u);
  EXPECT_EQ(out.scores.cols(), 16u);
  EXPECT_DOUBLE_EQ(out.pe.alpha, 1.0);
  const SynthPair big = gen_pair(9, {64, 48}, WarpConfig{});
  const ForwardOutput o2 = forward(w, cfg, big.image_a, big.image_b);
  EXPECT_DOUBLE_EQ(o2.pe.alpha, 32.0 / 48.0);
  EXPECT_DOUBLE_EQ(o2.pe.beta, 0.5);
  EXPECT_TRUE(forward(w, cfg, p.image_a, p.image_b).scores.scores() == out.scores.scores());
  EXPECT_THROW(forward(w, cfg, p.image_a, big.image_b), InputError);
}

TEST(Loss, PartsCombineAndReachEveryModule) {
  const ModelConfig cfg = tiny_config();
  ModelWeights w = init_model(cfg, 5);
  const SynthPair p = tiny_data(1, 8)[0];
  const ForwardOutput out = forward(w, cfg, p.image_a, p.image_b);
  const LossParts l = compute_loss(out, make_targets(p), cfg, 0.25);
  ASSERT_FALSE(l.empty);
  EXPECT_TRUE(std::isfinite(l.total.value()[0]));
  EXPECT_NEAR(l.total.value()[0], l.coarse + l.fine + 0.25 * l.flow, 1e-9);
  backward(l.total);
  EXPECT_TRUE(w.backbone.conv1_kernel.has_grad());
  EXPECT_TRUE(w.log_match_tau.has_grad());
  EXPECT_TRUE(w.gla.blocks[0].directions[0].flow_head.layers[0].weight.has_grad());
  EXPECT_TRUE(w.gla.blocks[0].directions[0].fine.query.has_grad());
}

TEST(Weights, SaveLoadRoundTrip) {
  const ModelConfig cfg = tiny_config();
  ModelWeights w = init_model(cfg, 6);
  const fs::path dir = fs::temp_directory_path() / "aspan_test_weights";
  fs::remove_all(dir);
  save_weights(dir, w, cfg);
  auto [cfg2, w2] = load_weights(dir);
  EXPECT_EQ(to_json(cfg2), to_json(cfg));
  EXPECT_EQ(w2.parameter_count(), w.parameter_count());
  const SynthPair p = tiny_data(1)[0];
  EXPECT_TRUE(forward(w, cfg, p.image_a, p.image_b).scores.scores() ==
              forward(w2, cfg2, p.image_a, p.image_b).scores.scores());
  fs::remove(dir / "match.log_tau.aspt");
  EXPECT_THROW(load_weights(dir), Error);
  fs::remove_all(dir);
}

TEST(Evaluate, OraclePredictorIsPerfect) {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_model(cfg, 7);
  const auto data = tiny_data(3, 11);
  const EvalReport r = evaluate(w, cfg, data, [](const SynthPair& p, const ForwardOutput&) {
    MatchSet m;
    for (const auto& [i, j] : gt_coarse_matches(p, 8)) {
      const double xa = grid_to_pixel(i % 4, 8), ya = grid_to_pixel(i / 4, 8);
      const auto [xb, yb] = p.homography.apply(xa, ya);
      m.coarse.push_back({i, j, 1.0});
      m.fine.push_back({xa, ya, xb, yb, 1.0});
    }
    return m;
  });
  ASSERT_GT(r.ground_truth, 0u);
  EXPECT_EQ(r.pairs, 3u);
  EXPECT_DOUBLE_EQ(r.precision_2px, 1.0);
  EXPECT_DOUBLE_EQ(r.recall_5px, 1.0);
  EXPECT_EQ(r.epe_per_block.size(), 1u);
  EXPECT_NO_THROW(to_json(r).dump());
}

TEST(ScoreMatches, CountsThresholdsAndInvisiblePoints) {
  WarpConfig wc;
  wc.pixel_homography = Homography::translation(10, 0);
  wc.occluder_prob = 0.0;
  const SynthPair p = gen_pair(2, {32, 32}, wc);
  MatchSet m;
  m.fine = {{4, 4, 14, 4, 1}, {4, 4, 15.5, 4, 1}, {4, 4, 17, 4, 1}, {30, 4, 40, 4, 1}};
  const MatchCounts c = score_matches(p, m);
  EXPECT_EQ(c.predicted, 4u);
  EXPECT_EQ(c.correct_2px, 2u);
  EXPECT_EQ(c.correct_5px, 3u);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const ModelConfig cfg = tiny_config();
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 2;
  tc.lr = 3e-3;
  const auto data = tiny_data(4, 21);
  ModelWeights w = init_model(cfg, 8);
  ModelWeights w2 = clone(w, cfg);
  std::size_t calls = 0;
  const auto h = train_model(w, cfg, tc, data, [&](const EpochStats&) { ++calls; });
  EXPECT_EQ(calls, 6u);
  EXPECT_LT(h.back().total, h.front().total);
  const auto h2 = train_model(w2, cfg, tc, data);
  EXPECT_EQ(h2.back().total, h.back().total);
}

TEST(Train, ZeroFlowWeightLeavesFlowHeadsUntouched) {
  const ModelConfig cfg = tiny_config();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  tc.alpha = 0.0;
  ModelWeights w = init_model(cfg, 9);
  const Tensor head = w.gla.blocks[0].directions[0].flow_head.layers[0].weight.value();
  const Tensor conv = w.backbone.conv1_kernel.value();
  train_model(w, cfg, tc, tiny_data(2, 30));
  EXPECT_TRUE(w.gla.blocks[0].directions[0].flow_head.layers[0].weight.value() == head);
  EXPECT_FALSE(w.backbone.conv1_kernel.value() == conv);
}

TEST(Train, NonFiniteLossReportsBatch) {
  ModelConfig cfg = tiny_config();
  cfg.gla.mode = AttentionMode::single_level;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  ModelWeights w = init_model(cfg, 10);
  w.backbone.conv3_bias.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto data = tiny_data(2, 40);
  try {
    train_model(w, cfg, tc, data);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch, 0u);
    EXPECT_EQ(e.step, 0u);
    ASSERT_EQ(e.batch_seeds.size(), 1u);
  }
  EXPECT_THROW(train_model(w, cfg, tc, {}), InputError);
}

}  // namespace
}  // namespace aspan
