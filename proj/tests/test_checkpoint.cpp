#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "muserec/checkpoint.hpp"
#include "muserec/embed.hpp"
#include "muserec/rng.hpp"

using namespace muserec;

namespace {

std::string temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("muserec_ckpt_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

FusionModel make_model(ModelConfig cfg, std::size_t vocab, std::uint64_t seed) {
  SeededRng table_rng(seed + 1000);
  const auto e1 = random_embeddings(vocab, cfg.embed_dim, table_rng);
  EmbeddingMatrix e2, e3, e4;
  if (cfg.use_acoustic) e2 = random_embeddings(vocab, cfg.embed_dim, table_rng);
  if (cfg.use_lyrics) e3 = random_embeddings(vocab, cfg.embed_dim, table_rng);
  if (cfg.use_tags) e4 = random_embeddings(vocab, cfg.embed_dim, table_rng);
  SeededRng rng(seed);
  return init_fusion_model(cfg, vocab, e1, cfg.use_acoustic ? &e2 : nullptr,
                           cfg.use_lyrics ? &e3 : nullptr, cfg.use_tags ? &e4 : nullptr, rng);
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.use_acoustic = true;
  cfg.use_lyrics = true;
  cfg.use_tags = true;
  cfg.embed_dim = 6;
  cfg.gru_hidden = 6;
  cfg.fusion_hidden = 8;
  cfg.dropout = 0.0;
  return cfg;
}

void check_stores_equal(const FusionModel& a, const FusionModel& b) {
  REQUIRE(a.store.params().size() == b.store.params().size());
  for (const auto& [name, tensor] : a.store.params()) {
    REQUIRE(b.store.has(name));
    const Tensor& other = b.store.param(name);
    CHECK(tensor.shape == other.shape);
    CHECK(tensor.data == other.data);  // bit-exact, not approximate
  }
}

}  // namespace

TEST_CASE("parameter shape directory matches what initialization builds") {
  std::vector<ModelConfig> configs;
  configs.push_back(small_config());
  {
    ModelConfig cfg = small_config();
    cfg.use_lyrics = false;
    cfg.use_tags = false;
    configs.push_back(cfg);
  }
  {
    ModelConfig cfg = small_config();
    cfg.use_acoustic = cfg.use_lyrics = cfg.use_tags = false;
    cfg.baseline = BaselineMode::gru4rec;
    configs.push_back(cfg);
  }
  for (const auto& cfg : configs) {
    const auto model = make_model(cfg, 7, 5);
    const auto expected = fusion_param_shapes(cfg, 7);
    REQUIRE(expected.size() == model.store.params().size());
    std::map<std::string, std::vector<std::size_t>> directory(expected.begin(), expected.end());
    REQUIRE(directory.size() == expected.size());  // no duplicate names
    for (const auto& [name, tensor] : model.store.params()) {
      REQUIRE(directory.count(name) == 1);
      CHECK(directory[name] == tensor.shape);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact and keeps metadata") {
  const auto dir = temp_dir("round");
  const std::string path = dir + "/model.ckpt";
  auto model = make_model(small_config(), 9, 17);
  CheckpointMeta meta;
  meta.label = "annw+acoustic+lyrics+tags";
  meta.track_provenance = "cbow";
  meta.vocab_hash = "abc123";
  save_checkpoint(model, meta, path);

  CheckpointMeta loaded_meta;
  auto loaded = load_checkpoint(path, "abc123", &loaded_meta);
  CHECK(loaded_meta.label == meta.label);
  CHECK(loaded_meta.track_provenance == meta.track_provenance);
  CHECK(loaded_meta.vocab_hash == meta.vocab_hash);
  CHECK(loaded.vocab_size == 9);
  CHECK(loaded.config.use_acoustic);
  CHECK(loaded.config.use_lyrics);
  CHECK(loaded.config.use_tags);
  CHECK(loaded.config.embed_dim == 6);
  CHECK(loaded.config.gru_hidden == 6);
  CHECK(loaded.config.fusion_hidden == 8);
  CHECK(loaded.config.baseline == BaselineMode::none);
  check_stores_equal(model, loaded);

  // Same ranking on the reloaded parameters.
  const std::vector<TrackId> prefix = {2, 5, 1};
  CHECK(predict_topk(model, prefix, 9) == predict_topk(loaded, prefix, 9));

  // Saving twice produces identical bytes.
  const std::string path2 = dir + "/model2.ckpt";
  save_checkpoint(model, meta, path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("vocabulary hash mismatch is refused, empty expectation skips the check") {
  const auto dir = temp_dir("hash");
  const std::string path = dir + "/model.ckpt";
  auto model = make_model(small_config(), 5, 3);
  CheckpointMeta meta;
  meta.label = "annw";
  meta.track_provenance = "cbow";
  meta.vocab_hash = "feedbeef";
  save_checkpoint(model, meta, path);

  CHECK_THROWS_WITH_AS(load_checkpoint(path, "deadbeef"), doctest::Contains("hash"), Error);
  CHECK_NOTHROW(load_checkpoint(path, "feedbeef"));
  CHECK_NOTHROW(load_checkpoint(path, ""));
}

TEST_CASE("track-embedding provenance tells otherwise identical variants apart") {
  const auto dir = temp_dir("prov");
  ModelConfig cfg;
  cfg.embed_dim = 5;
  cfg.gru_hidden = 5;
  cfg.fusion_hidden = 6;
  auto model = make_model(cfg, 6, 11);

  CheckpointMeta ann;
  ann.label = "ann";
  ann.track_provenance = "random";
  ann.vocab_hash = "v1";
  CheckpointMeta lsa = ann;
  lsa.label = "ann-lsa";
  lsa.track_provenance = "lsa";
  save_checkpoint(model, ann, dir + "/ann.ckpt");
  save_checkpoint(model, lsa, dir + "/lsa.ckpt");

  CheckpointMeta got_ann, got_lsa;
  auto a = load_checkpoint(dir + "/ann.ckpt", "v1", &got_ann);
  auto b = load_checkpoint(dir + "/lsa.ckpt", "v1", &got_lsa);
  CHECK(got_ann.track_provenance == "random");
  CHECK(got_lsa.track_provenance == "lsa");
  check_stores_equal(a, b);  // only the recorded provenance differs
}

TEST_CASE("gru4rec checkpoints carry the reduced parameter set") {
  const auto dir = temp_dir("gru4rec");
  const std::string path = dir + "/g.ckpt";
  ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.gru_hidden = 4;
  cfg.baseline = BaselineMode::gru4rec;
  auto model = make_model(cfg, 8, 21);
  REQUIRE_FALSE(model.store.has("att.v"));
  REQUIRE_FALSE(model.store.has("gru.bwd.wz"));

  CheckpointMeta meta;
  meta.label = "gru4rec";
  meta.track_provenance = "random";
  meta.vocab_hash = "g";
  save_checkpoint(model, meta, path);
  auto loaded = load_checkpoint(path, "g");
  CHECK(loaded.config.baseline == BaselineMode::gru4rec);
  CHECK_FALSE(loaded.store.has("att.v"));
  CHECK_FALSE(loaded.store.has("gru.bwd.wz"));
  check_stores_equal(model, loaded);
}

TEST_CASE("malformed containers are refused with specific diagnostics") {
  const auto dir = temp_dir("bad");
  const std::string path = dir + "/model.ckpt";
  auto model = make_model(small_config(), 4, 7);
  CheckpointMeta meta;
  meta.label = "annw";
  meta.track_provenance = "cbow";
  meta.vocab_hash = "h";
  save_checkpoint(model, meta, path);
  const std::string good = slurp(path);

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_checkpoint(dir + "/nope.ckpt", "h"), doctest::Contains("cannot open"),
                         Error);
  }
  SUBCASE("unknown container version") {
    const std::string bad = "MUSEREC_CKPT 99" + good.substr(good.find('\n'));
    spit(path, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(path, "h"), doctest::Contains("version"), Error);
  }
  SUBCASE("truncated tensor payload") {
    spit(path, good.substr(0, good.size() - 9));
    CHECK_THROWS_WITH_AS(load_checkpoint(path, "h"), doctest::Contains("truncated"), Error);
  }
  SUBCASE("trailing bytes after the tensors") {
    spit(path, good + "junk");
    CHECK_THROWS_WITH_AS(load_checkpoint(path, "h"), doctest::Contains("trailing"), Error);
  }
  SUBCASE("corrupted header json") {
    std::string bad = good;
    const auto pos = bad.find("\"label\"");
    REQUIRE(pos != std::string::npos);
    bad[pos] = '?';
    spit(path, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(path, "h"), doctest::Contains("header"), Error);
  }
  SUBCASE("config drift invalidates the tensor directory") {
    // Same-length edit so the header length stays valid: claim a different
    // embedding width than the directory was built with.
    std::string bad = good;
    const std::string needle = "\"embed_dim\":6";
    const auto pos = bad.find(needle);
    REQUIRE(pos != std::string::npos);
    bad[pos + needle.size() - 1] = '7';
    spit(path, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(path, "h"), doctest::Contains("directory"), Error);
  }
}
