#include <gtest/gtest.h>

#include <sstream>

#include "splitlimb/splitlimb.hpp"

using namespace splitlimb;

namespace {

TrainConfig small_config(std::uint32_t k) {
  TrainConfig c;
  c.seed = 9;
  c.k = k;
  c.topology = k == 1 ? Topology::Vanilla : Topology::Vertical;
  c.epochs = 3;
  c.batch_size = 8;
  c.image_size = 12;
  c.client_width = 6;
  c.server_width = 5;
  c.lr = 0.05;
  return c;
}

std::vector<LabeledShardSet> shard_sets(const TrainConfig& cfg, std::size_t n) {
  return shard_dataset(synth_dataset(33, n, cfg.image_size), cfg.k, cfg.band_order);
}

struct Parts {
  std::vector<LimbModel> limbs;
  std::vector<ShardSpec> specs;
  ServerModel server;
  HeadModel head;
};

Parts initial_parts(const TrainConfig& cfg) {
  Parts p;
  p.specs = shard_specs(cfg.image_size, cfg.k, cfg.band_order);
  for (std::size_t i = 0; i < cfg.k; ++i) {
    p.limbs.push_back(LimbModel::initial(cfg, i, p.specs[i].band_width() * cfg.image_size));
  }
  p.server = ServerModel::initial(cfg);
  p.head = HeadModel::initial(cfg);
  return p;
}

MonolithicModel assembled(const TrainConfig& cfg, const Parts& p) {
  return assemble(p.limbs, p.specs, cfg.image_size, cfg.image_size, p.server, p.head);
}

TrainTrace toy_trace(std::vector<float> losses) {
  TrainTrace t;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    StepRecord s;
    s.epoch = 0;
    s.batch = static_cast<std::uint32_t>(i);
    s.loss = losses[i];
    s.checksums["hidden"] = 100 + i;
    t.steps.push_back(s);
  }
  t.epochs.push_back(EpochRecord{0, losses.back(), 0.5, losses.back(), 0.5});
  return t;
}

RunResult split_run(const TrainConfig& cfg, const std::vector<LimbData>& data) {
  auto r = run_training(cfg, data);
  if (!r.ok()) std::rethrow_exception(r.error);
  return r;
}

}  // namespace

TEST(Assemble, ExtractIsTheInverse) {
  for (std::uint32_t k : {1u, 2u, 3u, 4u, 5u}) {
    const auto cfg = small_config(k);
    const auto p = initial_parts(cfg);
    const auto m = assembled(cfg, p);
    for (std::size_t i = 0; i < k; ++i) {
      const auto back = m.extract_limb(i);
      EXPECT_EQ(back.layer().weights(), p.limbs[i].layer().weights()) << "k=" << k << " limb " << i;
      EXPECT_EQ(back.layer().bias(), p.limbs[i].layer().bias());
    }
    EXPECT_EQ(m.extract_server().hidden().weights(), p.server.hidden().weights());
    EXPECT_EQ(m.extract_server().part_widths(), p.server.part_widths());
    EXPECT_EQ(m.head().layer().weights(), p.head.layer().weights());
    EXPECT_EQ(m.cross_block_mass(), 0.0);
  }
}

TEST(Assemble, SingleLimbHasNoZeroBlocks) {
  const auto cfg = small_config(1);
  const auto p = initial_parts(cfg);
  const auto m = assembled(cfg, p);
  EXPECT_EQ(m.first().weights(), p.limbs[0].layer().weights());
  for (std::size_t px = 0; px < m.first().in(); ++px) {
    for (std::size_t c = 0; c < m.first().out(); ++c) ASSERT_TRUE(m.in_block(px, c));
  }
}

TEST(Assemble, BlockStructure) {
  const auto cfg = small_config(2);
  const auto m = assembled(cfg, initial_parts(cfg));
  const std::size_t w = cfg.image_size;
  // Pixel (y=3, x=1) belongs to band 0; (y=3, x=w-1) to band 1.
  EXPECT_TRUE(m.in_block(3 * w + 1, 0));
  EXPECT_FALSE(m.in_block(3 * w + 1, cfg.client_width));
  EXPECT_TRUE(m.in_block(3 * w + w - 1, cfg.client_width));
  EXPECT_FALSE(m.in_block(3 * w + w - 1, 0));
}

TEST(Assemble, DimensionInconsistenciesThrow) {
  const auto cfg = small_config(2);
  auto p = initial_parts(cfg);
  EXPECT_THROW(assemble(p.limbs, p.specs, cfg.image_size + 2, cfg.image_size, p.server, p.head), ShapeError);
  std::vector<ShardSpec> one{p.specs[0]};
  EXPECT_THROW(assemble(p.limbs, one, cfg.image_size, cfg.image_size, p.server, p.head), ShapeError);
  const ServerModel wrong = ServerModel::initial(small_config(3));
  EXPECT_THROW(assemble(p.limbs, p.specs, cfg.image_size, cfg.image_size, wrong, p.head), ShapeError);
}

TEST(Assemble, ForwardMatchesTheSplitForwardBitForBit) {
  for (std::uint32_t k : {1u, 2u, 3u, 4u}) {
    const auto cfg = small_config(k);
    const auto p = initial_parts(cfg);
    const auto sets = shard_sets(cfg, 20);
    const auto images = assemble_images(sets);
    std::vector<Tensor> smashed;
    for (std::size_t i = 0; i < k; ++i) smashed.push_back(p.limbs[i].infer(sets[i].features));
    const Tensor split = p.head.infer(p.server.infer(smashed));
    EXPECT_EQ(assembled(cfg, p).infer(images.features), split) << "k=" << k;
  }
}

TEST(Assemble, ImagesAreRebuiltExactly) {
  const auto cfg = small_config(3);
  const auto data = synth_dataset(33, 10, cfg.image_size);
  const auto full = assemble_images(shard_dataset(data, 3));
  for (std::size_t n = 0; n < data.images.size(); ++n) {
    for (std::size_t px = 0; px < full.shard_dim(); ++px) {
      ASSERT_EQ(full.features(n, px), data.images[n].pixels[px]);
    }
  }
  EXPECT_EQ(*full.labels, data.labels);
}

TEST(Assemble, MisalignedSetsRejected) {
  const auto cfg = small_config(2);
  auto sets = shard_sets(cfg, 10);
  sets[1] = sets[1].subset({1, 0, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_THROW(assemble_images(sets), std::invalid_argument);
}

TEST(Monolithic, CrossBlockWeightsStayZeroEveryStep) {
  auto cfg = small_config(3);
  const auto sets = shard_sets(cfg, 40);
  const auto images = assemble_images(sets);
  auto m = assembled(cfg, initial_parts(cfg));
  for (std::size_t step = 0; step < 100; ++step) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < 8; ++r) rows.push_back((step * 8 + r) % images.size());
    (void)m.train_step(gather_rows(images.features, rows), gather_labels(*images.labels, rows), cfg.learning_rate());
    ASSERT_EQ(m.cross_block_mass(), 0.0) << "step " << step;
  }
}

TEST(Monolithic, TrainerKeepsTheMaskOverAHundredSteps) {
  auto cfg = small_config(2);
  cfg.batch_size = 4;
  cfg.epochs = 9;
  const auto run = train_monolithic(cfg, split_limb_sets(shard_sets(cfg, 60), cfg));
  EXPECT_GE(run.trace.steps.size(), 100u);
  EXPECT_EQ(run.model.cross_block_mass(), 0.0);
}

class Equivalence : public ::testing::TestWithParam<std::uint32_t> {};

TEST_P(Equivalence, SplitAndMonolithicAreBitIdentical) {
  const auto cfg = small_config(GetParam());
  const auto data = split_limb_sets(shard_sets(cfg, 50), cfg);
  const auto split = split_run(cfg, data);
  const auto mono = train_monolithic(cfg, data);
  const auto report = compare_traces(split.trace, mono.trace, 0.0);
  EXPECT_TRUE(report.pass) << format_report(report);
  EXPECT_FALSE(report.first_divergence.has_value());
  EXPECT_EQ(report.max_abs_loss_diff, 0.0);
  for (const auto& c : report.checksums) EXPECT_EQ(c.matched, c.compared) << c.component;
  for (std::size_t i = 0; i < cfg.k; ++i) {
    EXPECT_EQ(mono.model.extract_limb(i).layer().weights(), split.limbs[i].layer().weights());
  }
  EXPECT_EQ(mono.model.server().hidden().weights(), split.server.hidden().weights());
  EXPECT_EQ(mono.model.head().layer().weights(), split.head->layer().weights());
}

INSTANTIATE_TEST_SUITE_P(LimbCounts, Equivalence, ::testing::Values(1u, 2u, 3u, 4u));

TEST(Equivalence, UShapedMatchesMonolithic) {
  auto cfg = small_config(2);
  cfg.topology = Topology::UShaped;
  const auto data = split_limb_sets(shard_sets(cfg, 40), cfg);
  EXPECT_TRUE(compare_traces(split_run(cfg, data).trace, train_monolithic(cfg, data).trace, 0.0).pass);
}

TEST(Equivalence, SwappedBandOrderIsBitIdentical) {
  auto cfg = small_config(2);
  cfg.band_order = {1, 0};
  const auto data = split_limb_sets(shard_sets(cfg, 40), cfg);
  const auto split = split_run(cfg, data);
  const auto mono = train_monolithic(cfg, data);
  EXPECT_TRUE(compare_traces(split.trace, mono.trace, 0.0).pass);
  EXPECT_EQ(mono.model.specs()[0].col_start, cfg.image_size / 2);
}

TEST(CompareTraces, TraceAgainstItselfPasses) {
  const auto t = toy_trace({0.7f, 0.6f, 0.5f});
  const auto r = compare_traces(t, t, 0.0);
  EXPECT_TRUE(r.pass);
  EXPECT_FALSE(r.first_divergence);
  EXPECT_EQ(r.steps_compared, 3u);
}

TEST(CompareTraces, DifferentSeedsDivergeAtStepZero) {
  auto a = small_config(2), b = a;
  b.seed = a.seed + 1;
  const auto data = split_limb_sets(shard_sets(a, 30), a);
  const auto r = compare_traces(train_monolithic(a, data).trace, train_monolithic(b, data).trace, 0.0);
  EXPECT_FALSE(r.pass);
  ASSERT_TRUE(r.first_divergence.has_value());
  EXPECT_EQ(*r.first_divergence, 0u);
}

TEST(CompareTraces, ToleranceAndChecksums) {
  const auto a = toy_trace({0.7f, 0.6f, 0.5f});
  auto b = toy_trace({0.7f, 0.6f, 0.5001f});
  const auto strict = compare_traces(a, b, 0.0);
  EXPECT_FALSE(strict.pass);
  EXPECT_EQ(*strict.first_divergence, 2u);
  EXPECT_NEAR(strict.max_abs_loss_diff, 1e-4, 1e-6);
  EXPECT_TRUE(compare_traces(a, b, 1e-3).pass);

  auto c = a;
  c.steps[1].checksums["hidden"] = 0;
  const auto r = compare_traces(a, c, 0.0);
  EXPECT_FALSE(r.pass);
  ASSERT_EQ(r.checksums.size(), 1u);
  EXPECT_EQ(r.checksums[0].matched, 2u);
  EXPECT_EQ(*r.checksums[0].first_mismatch, 1u);
}

TEST(CompareTraces, LengthMismatchIsReportedNotThrown) {
  const auto a = toy_trace({0.7f, 0.6f, 0.5f});
  const auto b = toy_trace({0.7f, 0.6f});
  TraceComparison r;
  EXPECT_NO_THROW(r = compare_traces(a, b, 0.0));
  EXPECT_FALSE(r.pass);
  EXPECT_TRUE(r.length_mismatch());
  EXPECT_EQ(*r.first_divergence, 2u);
  EXPECT_NE(format_report(r).find("length"), std::string::npos);
}

TEST(CompareTraces, ReportFormats) {
  const auto t = toy_trace({0.7f, 0.6f});
  const auto r = compare_traces(t, t, 0.0);
  EXPECT_NE(format_report(r).find("PASS"), std::string::npos);
  const std::string tsv = format_report_tsv(r);
  EXPECT_NE(tsv.find('\t'), std::string::npos);
  EXPECT_NE(tsv.find("hidden"), std::string::npos);
}

TEST(TraceFile, RoundTripsExactly) {
  auto cfg = small_config(2);
  const auto t = train_monolithic(cfg, split_limb_sets(shard_sets(cfg, 30), cfg)).trace;
  std::stringstream ss;
  write_trace(ss, t);
  EXPECT_EQ(read_trace(ss), t);
}
