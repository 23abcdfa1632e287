#include <gtest/gtest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "couplenet/config.hpp"
#include "couplenet/io.hpp"

using namespace couplenet;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("couplenet_test_io_" + name);
  std::filesystem::remove_all(p);
  return p;
}

Checkpoint small_checkpoint() {
  Checkpoint ck;
  ck.config.model.backbone_c1 = 3;
  ck.config.model.backbone_c2 = 4;
  ck.config.model.backbone_c3 = 4;
  ck.config.model.reduce_channels = 5;
  ck.config.model.hidden_channels = 6;
  ck.params = init_model_params(ck.config.model, 17);
  ck.params.head.scale_params.global_cls.bias[2] = -0.125;
  return ck;
}

}  // namespace

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.out_dir = "somewhere";
  c.model.coupling = {Normalization::l2, Strategy::max, true, true};
  c.model.use_context = true;
  c.train.iterations = 123;
  c.train.scales = {0.75, 1.0};
  c.detect.proposal_seed = 5;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.model.coupling, c.model.coupling);
  EXPECT_EQ(back.train, c.train);
}

TEST(RunConfig, MissingKeysKeepDefaults) {
  const RunConfig c = run_config_from_json(R"({"version": 1, "train": {"iterations": 7}})");
  EXPECT_EQ(c.train.iterations, 7);
  EXPECT_EQ(c.train.lr_values, TrainConfig{}.lr_values);
  EXPECT_EQ(c.model, ModelConfig{});
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(run_config_from_json("{"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"train": {}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"version": 1, "bogus": 1})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"version": 1, "train": {"iteratoins": 3}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"version": 2})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"version": 1, "train": {"iterations": "many"}})"), ConfigError);
  EXPECT_THROW(run_config_from_json(R"({"version": 1, "coupling": {"strategy": "mean"}})"), ConfigError);
  RunConfig c;
  c.model.coupling = {Normalization::l2, Strategy::prod, false, true};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.model.num_classes = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, BranchSelector) {
  CouplingConfig c;
  apply_branches(c, "local");
  EXPECT_TRUE(c.enable_local && !c.enable_global);
  EXPECT_EQ(branches_to_string(c), "local");
  apply_branches(c, "both");
  EXPECT_EQ(branches_to_string(c), "both");
  EXPECT_THROW(apply_branches(c, "neither"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint ck = small_checkpoint();
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_TRUE(bytes.starts_with("CPLNETCK"));
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.config, ck.config);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto dir = scratch("ck");
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.bin", ck);
  EXPECT_EQ(load_checkpoint(dir / "a.bin").params, ck.params);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string bytes = encode_checkpoint(small_checkpoint());
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), IoError);
  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_THROW(decode_checkpoint(bad_version), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IoError);
  EXPECT_THROW(decode_checkpoint(""), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ck.bin"), IoError);
}

TEST(Checkpoint, ShapeMismatchWithConfigIsDetected) {
  Checkpoint ck = small_checkpoint();
  Checkpoint other = ck;
  other.config.model.hidden_channels = 7;
  // Config says hidden 7, tensors carry hidden 6.
  Checkpoint mixed{other.config, ck.params};
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(mixed)), IoError);
}

TEST(Manifest, RoundTripAndRegeneration) {
  DatasetConfig cfg;
  cfg.seed = 21;
  cfg.train_size = 6;
  cfg.test_size = 3;
  const Dataset d = generate_dataset(cfg);
  const std::string text = manifest_to_json(d);
  const Dataset back = dataset_from_manifest(text);
  EXPECT_EQ(back.config, d.config);
  EXPECT_EQ(back.train, d.train);
  EXPECT_EQ(back.test, d.test);
  EXPECT_TRUE(manifest_matches_regeneration(back));
  EXPECT_EQ(manifest_to_json(back), text);

  auto j = nlohmann::json::parse(text);
  j["scenes"][0]["width"] = j["scenes"][0]["width"].get<int>() + 1;
  EXPECT_FALSE(manifest_matches_regeneration(dataset_from_manifest(j.dump())));
}

TEST(Manifest, RejectsMalformed) {
  EXPECT_THROW(dataset_from_manifest("not json"), IoError);
  DatasetConfig cfg;
  cfg.train_size = 1;
  cfg.test_size = 0;
  auto j = nlohmann::json::parse(manifest_to_json(generate_dataset(cfg)));
  auto bad = j;
  bad["version"] = 9;
  EXPECT_THROW(dataset_from_manifest(bad.dump()), IoError);
  bad = j;
  bad["scenes"][0]["split"] = "val";
  EXPECT_THROW(dataset_from_manifest(bad.dump()), IoError);
  bad = j;
  bad["splits"]["train"] = 2;
  EXPECT_THROW(dataset_from_manifest(bad.dump()), IoError);
}

TEST(Files, ReadWrite) {
  const auto dir = scratch("files");
  std::filesystem::create_directories(dir / "nested");
  write_file(dir / "nested" / "x.txt", "hello\n");
  EXPECT_EQ(read_file(dir / "nested" / "x.txt"), "hello\n");
  EXPECT_THROW(read_file(dir / "missing.txt"), IoError);
  std::filesystem::remove_all(dir);
}
