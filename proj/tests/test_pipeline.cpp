#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "egnmt/checkpoint.hpp"
#include "egnmt/config.hpp"
#include "egnmt/errors.hpp"
#include "egnmt/pipeline.hpp"
#include "fixtures.hpp"

using namespace egnmt;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) { return (fs::path(::testing::TempDir()) / name).string(); }

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<ParallelPair> pairs_of(std::initializer_list<std::pair<const char*, const char*>> rows) {
  std::vector<ParallelPair> out;
  for (const auto& [s, t] : rows) out.push_back({split_words(s), split_words(t)});
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripReproducesLogitsBitwise) {
  const auto c = egnmt::testing::tiny_config(Variant::kFinal);
  const auto p = init_params<float>(c, 4);
  const auto path = temp_path("model.ckpt");
  save_checkpoint(path, c, p, {{"step", 3}});
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.config.to_json(), c.to_json());
  EXPECT_EQ(ck.meta["step"], 3);
  EXPECT_EQ(&ck.params.primary_decoder(), &ck.params.auxiliary_decoder());

  Rng rng(5);
  const auto data = egnmt::testing::random_pairs(rng, c, 2);
  const auto batch = make_batch(data, {0, 1}, c);
  ForwardContext<float> ctx;
  const auto a = forward_joint(p, c, batch.inputs, batch.target_in, &*batch.auxiliary_in, ctx);
  const auto b = forward_joint(ck.params, ck.config, batch.inputs, batch.target_in, &*batch.auxiliary_in, ctx);
  ASSERT_EQ(a.primary.size(), b.primary.size());
  EXPECT_EQ(0, std::memcmp(a.primary.data().data(), b.primary.data().data(), a.primary.size() * sizeof(float)));
  EXPECT_EQ(0, std::memcmp(a.auxiliary.data().data(), b.auxiliary.data().data(), a.auxiliary.size() * sizeof(float)));

  save_checkpoint(path + "2", c, ck.params, {{"step", 3}});
  EXPECT_EQ(read_bytes(path), read_bytes(path + "2"));
}

TEST(Checkpoint, CorruptionAndMissingFilesAreInputErrors) {
  const auto c = egnmt::testing::tiny_config(Variant::kBasic);
  const auto path = temp_path("corrupt.ckpt");
  save_checkpoint(path, c, init_params<float>(c, 1));
  auto bytes = read_bytes(path);
  bytes[bytes.size() / 2] ^= 0x40;
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
  EXPECT_THROW(load_checkpoint(path + ".missing"), InputError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
}

TEST(Manifest, RoundTripAndVersionCheck) {
  ManifestRecord r;
  r.id = 3;
  r.x = "a b";
  r.y = "u v";
  r.xm = "a c";
  r.ym = "u w";
  r.mxm = "a ⟨X⟩";
  r.mym = "u ⟨X⟩";
  r.my = "u ⟨X⟩";
  r.fms = 0.5;
  r.matched_id = 9;
  EXPECT_EQ(ManifestRecord::from_json(r.to_json()), r);
  const auto path = temp_path("m.ndjson");
  save_manifest(path, {r, r});
  EXPECT_EQ(load_manifest(path), (std::vector<ManifestRecord>{r, r}));
  auto j = r.to_json();
  j["version"] = kManifestVersion + 1;
  EXPECT_THROW(ManifestRecord::from_json(j), InputError);
  EXPECT_THROW(load_manifest(path + ".missing"), InputError);
}

TEST(Manifest, PrepareBuildsMaskedFields) {
  const ExampleDatabase db(pairs_of({{"the red house", "das rote haus"},
                                     {"a green tree", "ein gruener baum"},
                                     {"the red tree", "der rote baum"}}));
  const auto corpus = pairs_of({{"the green house", "das gruene haus"}, {"a green tree", "ein gruener baum"}});
  ManifestOptions opt;
  opt.retrieval.topn = 3;
  const auto records = prepare_manifest(corpus, db, opt);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1].matched_id, 1u);
  EXPECT_DOUBLE_EQ(records[1].fms, 1.0);
  EXPECT_EQ(records[1].mym, records[1].ym);
  EXPECT_EQ(records[1].my, records[1].y);
  for (const auto& r : records) {
    EXPECT_EQ(split_words(r.mxm).size(), split_words(r.xm).size());
    EXPECT_EQ(split_words(r.mym).size(), split_words(r.ym).size());
    EXPECT_EQ(split_words(r.my).size(), split_words(r.y).size());
    EXPECT_EQ(r.xm, join_words(db.at(r.matched_id).source));
  }
  EXPECT_NE(records[0].mxm.find("⟨X⟩"), std::string::npos);
}

TEST(Codec, EncodesDecodesAndPersists) {
  ManifestRecord r;
  r.x = "hello world";
  r.y = "hallo welt";
  r.xm = r.x;
  r.ym = "hallo erde";
  r.mxm = r.x;
  r.mym = "hallo ⟨X⟩";
  r.my = "hallo ⟨X⟩";
  const auto merges = bpe_train({split_words("hallo welt erde")}, 3);
  const auto codec = SubwordCodec::build({r}, std::nullopt, merges);
  const auto pair = encode_record(r, codec);
  EXPECT_EQ(pair.source.back(), Vocabulary::kEos);
  EXPECT_EQ(pair.source.size(), 3u);
  EXPECT_EQ(codec.decode_target(codec.encode_target(split_words(r.y))), split_words(r.y));
  // One mask unit per masked word, however many subwords the word had.
  EXPECT_EQ(pair.masked_target.back(), Vocabulary::kMask);
  const auto dir = temp_path("codec");
  fs::create_directories(dir);
  codec.save(dir);
  const auto back = SubwordCodec::load(dir);
  EXPECT_EQ(back.encode_target(split_words(r.ym)), codec.encode_target(split_words(r.ym)));

  auto blind = r;
  blind.y = "totally different words";
  blind.my = "x";
  const auto c = egnmt::testing::tiny_config(Variant::kFinal);
  const auto a = decoding_inputs(r, codec, c), b = decoding_inputs(blind, codec, c);
  EXPECT_EQ(a.source.ids, b.source.ids);
  EXPECT_EQ(a.masked_example->ids, b.masked_example->ids);
}

TEST(Config, OverlayRoundTripAndDottedErrors) {
  const auto cfg = PipelineConfig::from_json(nlohmann::json::parse(
      R"({"seed": 9, "model": {"d_model": 32, "variant": "nme"}, "training": {"steps": 5}, "decode": {"beam": 2}})"));
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.model.d_model, 32u);
  EXPECT_EQ(cfg.model.variant, Variant::kNme);
  EXPECT_EQ(cfg.train.steps, 5u);
  EXPECT_EQ(cfg.decode.beam, 2u);
  EXPECT_EQ(PipelineConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  try {
    PipelineConfig::from_json(nlohmann::json::parse(R"({"training": {"stpes": 5}})"));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("training.stpes"), std::string::npos);
  }
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json::parse(R"({"masking": {"reference_mode": "x"}})")),
               InputError);
}
