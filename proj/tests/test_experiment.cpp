#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "splitlimb/experiment.hpp"

using namespace splitlimb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("splitlimb-exp-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

void write_pgm(const fs::path& p, std::size_t w, std::size_t h, std::uint8_t seed) {
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < w * h; ++i) s.push_back(static_cast<char>((i * 7 + seed) & 0xff));
  write_file(p, s);
}

std::string error_of(const auto& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(Snapshot, RoundTripIsBitExact) {
  TrainConfig cfg;
  cfg.image_size = 20;
  cfg.client_width = 8;
  cfg.server_width = 4;
  const auto limb = LimbModel::initial(cfg, 0, 200);
  const auto head = HeadModel::initial(cfg);
  const auto dir = scratch("snap");
  write_snapshot(dir, {{"limb0", &limb.layer()}, {"head", &head.layer()}});
  const auto back = read_snapshot({dir});
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("limb0").checksum(), limb.layer().checksum());
  EXPECT_EQ(back.at("head").checksum(), head.layer().checksum());
  fs::remove_all(dir);
}

TEST(Snapshot, DamageIsDetected) {
  TrainConfig cfg;
  cfg.server_width = 4;
  const auto head = HeadModel::initial(cfg);
  const auto dir = scratch("snapdmg");
  write_snapshot(dir, {{"head", &head.layer()}});
  {
    std::fstream f(dir / "head.weights.f32", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(1);
    f.put('\x55');
  }
  EXPECT_NE(error_of([&] { (void)read_snapshot({dir}); }).find("checksum mismatch"), std::string::npos);
  fs::remove(dir / "head.bias.f32");
  EXPECT_THROW((void)read_snapshot({dir}), DataError);
  fs::remove_all(dir);
}

TEST(Snapshot, ComponentsMergeAcrossDirectories) {
  TrainConfig cfg;
  cfg.server_width = 4;
  const auto a = HeadModel::initial(cfg);
  const auto d1 = scratch("snap1"), d2 = scratch("snap2");
  write_snapshot(d1, {{"head", &a.layer()}});
  write_snapshot(d2, {{"other", &a.layer()}});
  EXPECT_EQ(read_snapshot({d1, d2}).size(), 2u);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(LabeledPgms, ReadsResizesAndOrdersByName) {
  const auto dir = scratch("pgms");
  write_pgm(dir / "b.pgm", 10, 10, 1);
  write_pgm(dir / "a.pgm", 20, 12, 2);
  write_file(dir / "labels.tsv", "file\tlabel\nb.pgm\t1\na.pgm\t0\n");
  const auto data = load_labeled_pgms(dir, dir / "labels.tsv", 10);
  ASSERT_EQ(data.images.size(), 2u);
  EXPECT_EQ(data.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(data.sample_ids, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(data.images[0].width, 10u);
  EXPECT_EQ(data.images[0].height, 10u);
  // Already the target size: pixels exactly as decoded.
  EXPECT_EQ(data.images[1].pixels, load_pgm(read_bytes(dir / "b.pgm")).pixels);
  fs::remove_all(dir);
}

TEST(LabeledPgms, EveryProblemIsNamed) {
  const auto dir = scratch("pgmbad");
  write_pgm(dir / "good.pgm", 4, 4, 0);
  write_pgm(dir / "nolabel.pgm", 4, 4, 0);
  write_file(dir / "broken.pgm", "P5\n4 4\n255\nxy");
  write_file(dir / "labels.tsv", "good.pgm\t1\nbroken.pgm\t0\nghost.pgm\t1\n");
  const auto msg = error_of([&] { (void)load_labeled_pgms(dir, dir / "labels.tsv", 4); });
  EXPECT_NE(msg.find("nolabel.pgm: missing label"), std::string::npos) << msg;
  EXPECT_NE(msg.find("broken.pgm"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ghost.pgm"), std::string::npos) << msg;
  EXPECT_EQ(msg.find("good.pgm"), std::string::npos) << msg;
  write_file(dir / "labels.tsv", "good.pgm\tyes\n");
  EXPECT_THROW((void)load_labeled_pgms(dir, dir / "labels.tsv", 4), DataError);
  fs::remove_all(dir);
}

TEST(ShardSets, SyntheticMatchesDirectSharding) {
  ExperimentConfig cfg;
  cfg.train.image_size = 16;
  cfg.synth_n = 20;
  const auto sets = load_shard_sets(cfg);
  EXPECT_EQ(sets, shard_dataset(synth_dataset(cfg.synth_seed, 20, 16), 2));
}

TEST(ShardSets, ArchivesAreCheckedAgainstTheConfig) {
  const auto dir = scratch("arch");
  const auto sets = shard_dataset(synth_dataset(3, 20, 16), 2);
  for (std::size_t i = 0; i < 2; ++i) write_archive(limb_archive_dir(dir, i), sets[i]);
  const auto other = shard_dataset(synth_dataset(3, 18, 16), 2);
  write_archive(dir / "short1", other[1]);

  ExperimentConfig cfg;
  cfg.train.image_size = 16;
  cfg.data_source = DataSourceKind::Archive;
  cfg.archives = {limb_archive_dir(dir, 0).string(), limb_archive_dir(dir, 1).string()};
  EXPECT_EQ(load_shard_sets(cfg), sets);

  auto swapped = cfg;
  std::swap(swapped.archives[0], swapped.archives[1]);
  EXPECT_THROW((void)load_shard_sets(swapped), ConfigError);

  auto misaligned = cfg;
  misaligned.archives[1] = (dir / "short1").string();
  EXPECT_THROW((void)load_shard_sets(misaligned), ConfigError);

  auto wrong_size = cfg;
  wrong_size.train.image_size = 20;
  EXPECT_THROW((void)load_shard_sets(wrong_size), ConfigError);
  fs::remove_all(dir);
}
