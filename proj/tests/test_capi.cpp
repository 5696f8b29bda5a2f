// C boundary tests: handle lifecycle, per-thread error reporting, option
// overrides riding the config validation path, the keygen/embed/verify
// round-trip through files, corpus/training entry points, attack dispatch
// prerequisites, and null-argument safety.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <metaseal/common.hpp>
#include <metaseal/inn.hpp>
#include <metaseal/metaseal.h>
#include <metaseal/pipeline.hpp>
#include <metaseal/trainer.hpp>

using metaseal::Rng;
namespace inn = metaseal::inn;
namespace pipeline = metaseal::pipeline;
namespace trainer = metaseal::trainer;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("metaseal_capi_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
  std::string str(const std::string& name) const {
    return (path / name).string();
  }
};

struct Toolkit {
  ms_toolkit* handle = nullptr;
  explicit Toolkit(const char* config_path = nullptr) {
    REQUIRE(ms_toolkit_create(config_path, &handle) == 0);
    REQUIRE(handle != nullptr);
  }
  ~Toolkit() { ms_toolkit_destroy(handle); }
  int set(const std::string& key, const std::string& value) {
    return ms_set_option(handle, key.c_str(), value.c_str());
  }
};

// Zero-initialized two-block checkpoint: embedding is the identity map, so
// C-API round-trips stay cheap and deterministic.
std::string write_identity_checkpoint(const TempDir& dir) {
  Rng rng(7);
  const inn::InnWeights weights = inn::make_weights(2, 12, 2.0f, rng);
  const std::string path = dir.str("identity.ckpt");
  trainer::TrainConfig tc;
  tc.block_count = 2;
  trainer::save_checkpoint(path, weights, trainer::config_hash(tc));
  return path;
}

// Points the toolkit's paths into the temp dir and installs the identity
// checkpoint.
std::string wire_paths(Toolkit& tk, const TempDir& dir) {
  const std::string checkpoint = write_identity_checkpoint(dir);
  REQUIRE(tk.set("paths.checkpoint", checkpoint) == 0);
  REQUIRE(tk.set("paths.registry", dir.str("keys/registry.json")) == 0);
  REQUIRE(tk.set("paths.keys_dir", dir.str("keys")) == 0);
  REQUIRE(tk.set("paths.out_dir", dir.str("out")) == 0);
  return checkpoint;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string take(char* owned) {
  REQUIRE(owned != nullptr);
  std::string out(owned);
  ms_string_free(owned);
  return out;
}

}  // namespace

TEST_CASE("version and error strings are always present") {
  CHECK(std::string(ms_version()) == "1.0.0");
  CHECK(ms_last_error() != nullptr);
}

TEST_CASE("toolkit creation accepts defaults and rejects bad configs") {
  SUBCASE("null and empty config paths mean defaults") {
    ms_toolkit* tk = nullptr;
    CHECK(ms_toolkit_create(nullptr, &tk) == 0);
    CHECK(tk != nullptr);
    ms_toolkit_destroy(tk);
    tk = nullptr;
    CHECK(ms_toolkit_create("", &tk) == 0);
    ms_toolkit_destroy(tk);
  }
  SUBCASE("a valid config file is honored") {
    TempDir dir;
    std::ofstream(dir.str("cfg.json")) << R"({"qr_version": 17})";
    ms_toolkit* tk = nullptr;
    CHECK(ms_toolkit_create(dir.str("cfg.json").c_str(), &tk) == 0);
    ms_toolkit_destroy(tk);
  }
  SUBCASE("missing config file fails with a readable message") {
    ms_toolkit* tk = nullptr;
    CHECK(ms_toolkit_create("/no/such/config.json", &tk) != 0);
    CHECK(tk == nullptr);
    CHECK(std::string(ms_last_error()).find("cannot open") !=
          std::string::npos);
  }
  SUBCASE("unknown keys in the config file fail") {
    TempDir dir;
    std::ofstream(dir.str("cfg.json")) << R"({"qr_verison": 17})";
    ms_toolkit* tk = nullptr;
    CHECK(ms_toolkit_create(dir.str("cfg.json").c_str(), &tk) != 0);
    CHECK(std::string(ms_last_error()).find("unknown config key") !=
          std::string::npos);
  }
  SUBCASE("null out pointer is rejected") {
    CHECK(ms_toolkit_create(nullptr, nullptr) != 0);
  }
}

TEST_CASE("options ride the config validation path") {
  Toolkit tk;
  SUBCASE("scalar, string, and array values are accepted") {
    CHECK(tk.set("train.steps", "0") == 0);
    CHECK(tk.set("qr_version", "17") == 0);
    CHECK(tk.set("paths.checkpoint", "/tmp/some.ckpt") == 0);
    CHECK(tk.set("bench.resolutions", "[256]") == 0);
    CHECK(tk.set("z_policy", "zeros") == 0);
  }
  SUBCASE("unknown keys are rejected with the offending name") {
    CHECK(tk.set("bogus_key", "1") != 0);
    CHECK(std::string(ms_last_error()).find("unknown config key 'bogus_key'") !=
          std::string::npos);
    CHECK(tk.set("train.bogus", "1") != 0);
    CHECK(std::string(ms_last_error()).find("bogus") != std::string::npos);
  }
  SUBCASE("malformed keys and null arguments are rejected") {
    CHECK(ms_set_option(tk.handle, "", "1") != 0);
    CHECK(std::string(ms_last_error()).find("key is empty") !=
          std::string::npos);
    CHECK(ms_set_option(tk.handle, "a..b", "1") != 0);
    CHECK(std::string(ms_last_error()).find("malformed option key") !=
          std::string::npos);
    CHECK(ms_set_option(tk.handle, "train.steps", nullptr) != 0);
    CHECK(std::string(ms_last_error()).find("value is null") !=
          std::string::npos);
  }
  SUBCASE("type violations surface when the value is merged") {
    CHECK(tk.set("image_resolution", "\"tall\"") != 0);
  }
}

TEST_CASE("keygen, embed, and verify round-trip through the C boundary") {
  TempDir dir;
  Toolkit tk;
  wire_paths(tk, dir);

  REQUIRE(ms_keygen(tk.handle, "alice", "Team A") == 0);
  CHECK(fs::exists(dir.str("keys/alice.priv")));
  CHECK(fs::exists(dir.str("keys/alice.pub")));
  CHECK(fs::exists(dir.str("keys/registry.json")));

  // One synthetic cover written through the C API.
  REQUIRE(ms_make_corpus(tk.handle, dir.str("corpus").c_str(), 1, 256, 42) ==
          0);
  const std::string cover = dir.str("corpus/synth_0000.png");
  REQUIRE(fs::exists(cover));

  const std::string watermarked = dir.str("out/wm.png");
  char* embed_json = nullptr;
  REQUIRE(ms_embed(tk.handle, cover.c_str(), "alice", watermarked.c_str(),
                   &embed_json) == 0);
  const json embed_doc = json::parse(take(embed_json));
  CHECK(embed_doc["key_id"] == "alice");
  CHECK(embed_doc["psnr"] == doctest::Approx(99.0));  // identity checkpoint
  CHECK(embed_doc["signature"].get<std::string>().size() == 128);
  CHECK(fs::exists(watermarked));
  CHECK(fs::exists(watermarked + ".embed.json"));
  CHECK(json::parse(slurp(watermarked + ".embed.json")) == embed_doc);

  char* verify_json = nullptr;
  REQUIRE(ms_verify(tk.handle, watermarked.c_str(), "alice", &verify_json) ==
          0);
  const std::string verify_text = take(verify_json);
  const json verify_doc = json::parse(verify_text);
  // The identity checkpoint embeds nothing, so extraction recovers no
  // pattern: verification is gracefully negative, never an error.
  CHECK(verify_doc["signature_valid"] == false);
  CHECK(verify_doc["decode_status"] == "decode_failure");
  CHECK(verify_doc["key_id"] == "alice");

  std::string why;
  const bool schema_ok = pipeline::json_matches_schema(
      verify_text, slurp(std::string(METASEAL_REPO_DIR) +
                         "/schemas/verification_report.schema.json"),
      &why);
  CAPTURE(why);
  CHECK(schema_ok);

  SUBCASE("embedding under an unregistered key fails") {
    CHECK(ms_embed(tk.handle, cover.c_str(), "mallory",
                   dir.str("out/m.png").c_str(), nullptr) == 1);
    CHECK(std::string(ms_last_error()).find("not present in registry") !=
          std::string::npos);
  }
  SUBCASE("verification under an unregistered key fails") {
    CHECK(ms_verify(tk.handle, watermarked.c_str(), "mallory", nullptr) == 1);
    CHECK(std::string(ms_last_error()).find("not present in registry") !=
          std::string::npos);
  }
  SUBCASE("lossy output paths are refused") {
    CHECK(ms_embed(tk.handle, cover.c_str(), "alice",
                   dir.str("out/wm.jpg").c_str(), nullptr) != 0);
    CHECK(std::string(ms_last_error()).find("lossless") != std::string::npos);
  }
}

TEST_CASE("corpus generation and zero-step training through the C API") {
  TempDir dir;
  Toolkit tk;

  REQUIRE(ms_make_corpus(tk.handle, dir.str("corpus").c_str(), 3, 64, 7) == 0);
  CHECK(fs::exists(dir.str("corpus/synth_0000.png")));
  CHECK(fs::exists(dir.str("corpus/synth_0002.png")));

  SUBCASE("training with zero steps saves the initial checkpoint") {
    REQUIRE(tk.set("paths.checkpoint", dir.str("trained.ckpt")) == 0);
    REQUIRE(tk.set("train.steps", "0") == 0);
    REQUIRE(tk.set("train.block_count", "2") == 0);
    REQUIRE(ms_train(tk.handle, dir.str("corpus").c_str(),
                     dir.str("metrics.ndjson").c_str()) == 0);
    REQUIRE(fs::exists(dir.str("trained.ckpt")));
    const inn::InnWeights weights =
        trainer::load_checkpoint(dir.str("trained.ckpt"));
    CHECK(weights.blocks.size() == 2);
  }
  SUBCASE("bad arguments are rejected") {
    CHECK(ms_make_corpus(tk.handle, nullptr, 3, 64, 7) != 0);
    CHECK(ms_make_corpus(tk.handle, dir.str("x").c_str(), 0, 64, 7) != 0);
    CHECK(ms_train(tk.handle, nullptr, nullptr) != 0);
    CHECK(ms_train(tk.handle, dir.str("empty").c_str(), nullptr) != 0);
  }
}

TEST_CASE("attack dispatch checks prerequisites before running") {
  TempDir dir;
  Toolkit tk;
  const std::string checkpoint = wire_paths(tk, dir);
  REQUIRE(ms_keygen(tk.handle, "alice", "Team A") == 0);
  REQUIRE(ms_make_corpus(tk.handle, dir.str("corpus").c_str(), 1, 256, 50) ==
          0);
  const char* corpus = nullptr;
  const std::string corpus_str = dir.str("corpus");
  corpus = corpus_str.c_str();

  SUBCASE("unknown kind names fail") {
    CHECK(ms_attack(tk.handle, corpus, "alice", "meltdown", 1, nullptr,
                    nullptr, nullptr, nullptr) != 0);
    CHECK(std::string(ms_last_error()).find("unknown attack kind") !=
          std::string::npos);
  }
  SUBCASE("pgd without a detector checkpoint is an actionable error") {
    CHECK(ms_attack(tk.handle, corpus, "alice", "pgd", 1, nullptr, nullptr,
                    nullptr, nullptr) != 0);
    CHECK(std::string(ms_last_error()).find("detector checkpoint") !=
          std::string::npos);
  }
  SUBCASE("substitute-dependent kinds demand substitute weights") {
    CHECK(ms_attack(tk.handle, corpus, "alice", "replay", 1, nullptr, nullptr,
                    nullptr, nullptr) != 0);
    CHECK(std::string(ms_last_error()).find("substitute weights") !=
          std::string::npos);
  }
  SUBCASE("replay through an identity substitute never verifies") {
    char* report_json = nullptr;
    REQUIRE(ms_attack(tk.handle, corpus, "alice", "replay", 1,
                      checkpoint.c_str(), nullptr,
                      dir.str("attack_out").c_str(), &report_json) == 0);
    const json doc = json::parse(take(report_json));
    REQUIRE(doc["attacks"].size() == 1);
    CHECK(doc["attacks"][0]["kind"] == "replay");
    CHECK(doc["attacks"][0]["trials"] == 1);
    CHECK(doc["attacks"][0]["forgery_success_rate"] == 0.0);
    CHECK(fs::exists(dir.str("attack_out/attack_report.json")));
    CHECK(fs::exists(dir.str("attack_out/forged_replay_trial00.png")));
    CHECK(json::parse(slurp(dir.str("attack_out/attack_report.json"))) == doc);
  }
}

TEST_CASE("null handles and null strings never crash") {
  ms_toolkit_destroy(nullptr);
  ms_string_free(nullptr);
  CHECK(ms_set_option(nullptr, "a", "b") != 0);
  CHECK(ms_keygen(nullptr, "k", "o") != 0);
  CHECK(ms_embed(nullptr, "a", "b", "c", nullptr) != 0);
  CHECK(ms_verify(nullptr, "a", "b", nullptr) != 0);
  CHECK(ms_make_corpus(nullptr, "d", 1, 64, 0) != 0);
  CHECK(ms_train(nullptr, "d", nullptr) != 0);
  CHECK(ms_bench(nullptr, "d", "k", "o", nullptr) != 0);
  CHECK(ms_attack(nullptr, "d", "k", "all", 1, nullptr, nullptr, nullptr,
                  nullptr) != 0);

  Toolkit tk;
  CHECK(ms_keygen(tk.handle, nullptr, "o") != 0);
  CHECK(ms_keygen(tk.handle, "", "o") != 0);
  CHECK(ms_embed(tk.handle, nullptr, "k", "out.png", nullptr) != 0);
  CHECK(ms_verify(tk.handle, nullptr, "k", nullptr) != 0);
  CHECK(std::string(ms_last_error()).find("required") != std::string::npos);
}
