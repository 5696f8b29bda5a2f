// Pipeline contract tests: configuration precedence and validation, report
// serialization against the published schema, corpus synthesis/ingestion,
// and the embed/verify flows at a zero-initialized checkpoint (identity
// embedding). Trained-model behavior is covered by the acceptance binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaseal/common.hpp"
#include "metaseal/crypto.hpp"
#include "metaseal/image_io.hpp"
#include "metaseal/inn.hpp"
#include "metaseal/pipeline.hpp"
#include "metaseal/qr.hpp"
#include "metaseal/trainer.hpp"

using namespace metaseal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("metaseal_pipeline_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& leaf = "") const {
    return leaf.empty() ? path.string() : (path / leaf).string();
  }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

// Zero-initialized two-block checkpoint: embedding is the identity map.
std::string write_identity_checkpoint(const TempDir& dir) {
  Rng rng(7);
  const inn::InnWeights weights = inn::make_weights(2, 12, 2.0f, rng);
  const std::string path = dir.str("identity.ckpt");
  trainer::TrainConfig tc;
  tc.block_count = 2;
  trainer::save_checkpoint(path, weights, trainer::config_hash(tc));
  return path;
}

pipeline::ToolkitConfig test_config(const TempDir& dir,
                                    const std::string& checkpoint) {
  pipeline::ToolkitConfig config = pipeline::default_config();
  config.paths.checkpoint = checkpoint;
  config.paths.keys_dir = dir.str("keys");
  config.paths.registry = dir.str("keys/registry.json");
  config.paths.out_dir = dir.str();
  return config;
}

std::string schema_text() {
  return slurp(std::string(METASEAL_REPO_DIR) +
               "/schemas/verification_report.schema.json");
}

}  // namespace

TEST_CASE("default config is valid and matches documented values") {
  const pipeline::ToolkitConfig config = pipeline::default_config();
  CHECK(config.image_resolution == 256);
  CHECK(config.qr_version == 9);
  CHECK(config.ecc_level == "auto");
  CHECK(config.z_policy == "zeros");
  CHECK(config.semantic_threshold == doctest::Approx(-1.0));
  CHECK(config.provider_configured == false);
  CHECK(config.bench.resolutions == std::vector<int>{256, 512, 1024});
  CHECK_NOTHROW(pipeline::validate_config(config));
}

TEST_CASE("config JSON overrides fields and rejects unknown keys") {
  pipeline::ToolkitConfig base = pipeline::default_config();
  const std::string text = R"({
    "image_resolution": 512,
    "qr_version": 17,
    "ecc_level": "Q",
    "digest_budget": 64,
    "semantic_threshold": 0.5,
    "z_policy": "seeded_gaussian",
    "z_seed": 11,
    "dump_recovered": true,
    "train": {"steps": 42, "pool": {"p_identity": 1.0, "p_gaussian": 0.0, "p_jpeg": 0.0}},
    "bench": {"resolutions": [256, 512], "images": 3},
    "paths": {"checkpoint": "x.ckpt", "registry": "r.json"}
  })";
  const pipeline::ToolkitConfig config =
      pipeline::config_from_json_text(text, base);
  CHECK(config.image_resolution == 512);
  CHECK(config.qr_version == 17);
  CHECK(config.ecc_level == "Q");
  CHECK(config.digest_budget == 64);
  CHECK(config.semantic_threshold == doctest::Approx(0.5));
  CHECK(config.z_policy == "seeded_gaussian");
  CHECK(config.z_seed == 11);
  CHECK(config.dump_recovered == true);
  CHECK(config.train.steps == 42);
  CHECK(config.train.pool.p_identity == doctest::Approx(1.0));
  CHECK(config.bench.resolutions == std::vector<int>{256, 512});
  CHECK(config.bench.images == 3);
  CHECK(config.paths.checkpoint == "x.ckpt");
  CHECK(config.paths.registry == "r.json");
  // Untouched fields keep their defaults.
  CHECK(config.paths.keys_dir == "keys");
  CHECK(config.train.batch_size == 1);

  CHECK_THROWS_WITH_AS(
      pipeline::config_from_json_text(R"({"imagee_resolution": 1})", base),
      doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(
      pipeline::config_from_json_text(R"({"train": {"stepss": 1}})", base),
      doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(
      pipeline::config_from_json_text(
          R"({"train": {"pool": {"p_id": 1}}})", base),
      doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(
      pipeline::config_from_json_text(R"({"bench": {"rez": []}})", base),
      doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(
      pipeline::config_from_json_text(R"({"paths": {"checkpointt": "x"}})",
                                      base),
      doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_WITH_AS(pipeline::config_from_json_text("not json{", base),
                       doctest::Contains("JSON"), Error);
}

TEST_CASE("provider block flips provider_configured") {
  pipeline::ToolkitConfig base = pipeline::default_config();
  const pipeline::ToolkitConfig config = pipeline::config_from_json_text(
      R"({"provider": {"provider": "fixed_map_stub",
                       "settings": {"fixed_map": {"ab": "a red car"}}}})",
      base);
  CHECK(config.provider_configured == true);
  CHECK(config.provider.provider == "fixed_map_stub");
  CHECK(config.provider.fixed_map.at("ab") == "a red car");
}

TEST_CASE("environment overrides beat config-file values") {
  TempDir dir;
  spit(dir.str("cfg.json"),
       R"({"image_resolution": 512, "paths": {"checkpoint": "file.ckpt"}})");
  ::setenv("METASEAL_RESOLUTION", "256", 1);
  ::setenv("METASEAL_CHECKPOINT", "env.ckpt", 1);
  ::setenv("METASEAL_ECC_LEVEL", "H", 1);
  const pipeline::ToolkitConfig config = pipeline::load_config(dir.str("cfg.json"));
  ::unsetenv("METASEAL_RESOLUTION");
  ::unsetenv("METASEAL_CHECKPOINT");
  ::unsetenv("METASEAL_ECC_LEVEL");
  CHECK(config.image_resolution == 256);
  CHECK(config.paths.checkpoint == "env.ckpt");
  CHECK(config.ecc_level == "H");
  // Non-overridden file value survives.
  CHECK(config.paths.registry == "keys/registry.json");

  ::setenv("METASEAL_RESOLUTION", "twelve", 1);
  CHECK_THROWS_WITH_AS(pipeline::load_config(""),
                       doctest::Contains("not an integer"), Error);
  ::unsetenv("METASEAL_RESOLUTION");

  CHECK_THROWS_WITH_AS(pipeline::load_config(dir.str("missing.json")),
                       doctest::Contains("cannot open"), Error);
}

TEST_CASE("config validation enforces invariants") {
  pipeline::ToolkitConfig config = pipeline::default_config();

  config.image_resolution = 255;
  CHECK_THROWS_WITH_AS(pipeline::validate_config(config),
                       doctest::Contains("even"), Error);

  config.image_resolution = 240;  // below v9 minimum of 244
  CHECK_THROWS_WITH_AS(pipeline::validate_config(config),
                       doctest::Contains("minimum"), Error);

  config.image_resolution = 244;  // exactly the v9 minimum
  CHECK_NOTHROW(pipeline::validate_config(config));

  config = pipeline::default_config();
  config.qr_version = 17;
  config.image_resolution = 256;  // below v17 minimum of 372
  CHECK_THROWS_AS(pipeline::validate_config(config), Error);
  config.image_resolution = 372;
  CHECK_NOTHROW(pipeline::validate_config(config));

  config = pipeline::default_config();
  config.ecc_level = "Z";
  CHECK_THROWS_WITH_AS(pipeline::validate_config(config),
                       doctest::Contains("ecc level"), Error);

  config = pipeline::default_config();
  config.z_policy = "maybe";
  CHECK_THROWS_WITH_AS(pipeline::validate_config(config),
                       doctest::Contains("z policy"), Error);

  config = pipeline::default_config();
  config.digest_budget = 7;
  CHECK_THROWS_AS(pipeline::validate_config(config), Error);
  config.digest_budget = 111;
  CHECK_THROWS_AS(pipeline::validate_config(config), Error);
}

TEST_CASE("enum parsing and minimum resolutions") {
  CHECK(!pipeline::parse_ecc_level("auto").has_value());
  CHECK(pipeline::parse_ecc_level("L") == qr::Ecc::L);
  CHECK(pipeline::parse_ecc_level("M") == qr::Ecc::M);
  CHECK(pipeline::parse_ecc_level("Q") == qr::Ecc::Q);
  CHECK(pipeline::parse_ecc_level("H") == qr::Ecc::H);
  CHECK_THROWS_AS(pipeline::parse_ecc_level("S"), Error);
  CHECK(pipeline::parse_z_policy("zeros") == inn::ZPolicy::kZeros);
  CHECK(pipeline::parse_z_policy("seeded_gaussian") ==
        inn::ZPolicy::kSeededGaussian);
  CHECK_THROWS_AS(pipeline::parse_z_policy("none"), Error);
  // (side + 2 * quiet zone of 4) * minimum scale of 4.
  CHECK(pipeline::min_resolution_for_version(9) == (53 + 8) * 4);
  CHECK(pipeline::min_resolution_for_version(17) == (85 + 8) * 4);
}

TEST_CASE("verification report serializes to schema-valid JSON") {
  pipeline::VerificationReport report;
  report.key_id = "alice";
  report.timings.extract_ms = 12.5;

  SUBCASE("decode-failure report with null optionals") {
    const std::string text = pipeline::report_to_json(report);
    const json doc = json::parse(text);
    CHECK(doc.at("signature_valid") == false);
    CHECK(doc.at("decode_status") == "decode_failure");
    CHECK(doc.at("recovered_digest").is_null());
    CHECK(doc.at("recovered_signature").is_null());
    CHECK(doc.at("semantic_similarity").is_null());
    CHECK(doc.at("timings").at("extract_ms") == doctest::Approx(12.5));
    std::string why;
    CHECK(pipeline::json_matches_schema(text, schema_text(), &why));
    INFO(why);
    CHECK(why.empty());
  }

  SUBCASE("fully populated report") {
    report.signature_valid = true;
    report.decode_status = "ok";
    report.recovered_digest = "a red car";
    report.recovered_signature = Bytes{0xAB, 0xCD};
    report.semantic_similarity = 0.75;
    report.tamper_score = 1.0;
    const std::string text = pipeline::report_to_json(report);
    const json doc = json::parse(text);
    CHECK(doc.at("recovered_digest") == "a red car");
    CHECK(doc.at("recovered_signature") == "abcd");
    CHECK(doc.at("semantic_similarity") == doctest::Approx(0.75));
    CHECK(pipeline::json_matches_schema(text, schema_text(), nullptr));
  }
}

TEST_CASE("embed report serializes round-trippable JSON") {
  pipeline::EmbedReport report;
  report.input_path = "in.png";
  report.output_path = "out.png";
  report.key_id = "alice";
  report.digest = "a scene";
  report.signature = Bytes{0x01, 0xFF};
  report.psnr = 42.5;
  report.ssim = 0.99;
  const json doc = json::parse(pipeline::report_to_json(report));
  CHECK(doc.at("signature") == "01ff");
  CHECK(doc.at("psnr") == doctest::Approx(42.5));
  CHECK(doc.at("input_path") == "in.png");
}

TEST_CASE("schema subset validator catches each violation class") {
  const std::string schema = R"({
    "type": "object",
    "required": ["a", "b"],
    "additionalProperties": false,
    "properties": {
      "a": {"type": "number", "minimum": 0, "maximum": 1},
      "b": {"type": "string", "enum": ["x", "y"]},
      "c": {"type": ["string", "null"]},
      "d": {"type": "array", "items": {"type": "integer"}}
    }
  })";
  std::string why;
  auto check_fails = [&](const std::string& doc, const std::string& needle) {
    why.clear();
    CHECK_FALSE(pipeline::json_matches_schema(doc, schema, &why));
    INFO("doc=" << doc << " why=" << why);
    CHECK(why.find(needle) != std::string::npos);
  };

  CHECK(pipeline::json_matches_schema(
      R"({"a": 0.5, "b": "x", "c": null, "d": [1, 2]})", schema, &why));
  check_fails(R"({"a": 0.5})", "missing required");
  check_fails(R"({"a": "zz", "b": "x"})", "type mismatch");
  check_fails(R"({"a": -0.1, "b": "x"})", "below minimum");
  check_fails(R"({"a": 1.5, "b": "x"})", "above maximum");
  check_fails(R"({"a": 0.5, "b": "z"})", "enum");
  check_fails(R"({"a": 0.5, "b": "x", "zz": 1})", "unexpected field");
  check_fails(R"({"a": 0.5, "b": "x", "d": [1, "two"]})", "type mismatch");
  // Nested failure paths point at the offending element.
  check_fails(R"({"a": 0.5, "b": "x", "d": ["two"]})", "#/d/0");
  CHECK_FALSE(pipeline::json_matches_schema("{]", schema, &why));
  CHECK(why.find("parse failure") != std::string::npos);
}

TEST_CASE("synthesize_cover is deterministic, sized, and in range") {
  const Image a = pipeline::synthesize_cover(64, 9);
  const Image b = pipeline::synthesize_cover(64, 9);
  const Image c = pipeline::synthesize_cover(64, 10);
  CHECK(a.h == 64);
  CHECK(a.w == 64);
  CHECK(a.c == 3);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  float lo = 1e9f, hi = -1e9f;
  for (float v : a.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0f);
  CHECK(hi <= 1.0f);
  // Non-degenerate content: meaningful dynamic range.
  CHECK(hi - lo > 0.2f);
  CHECK_THROWS_AS(pipeline::synthesize_cover(4, 1), Error);
}

TEST_CASE("make_corpus + ingest_corpus round trip") {
  TempDir dir;
  pipeline::make_corpus(dir.str("c"), 3, 64, 5);
  CHECK(fs::exists(dir.str("c/synth_0000.png")));
  CHECK(fs::exists(dir.str("c/synth_0002.png")));

  // Regeneration is byte-identical.
  pipeline::make_corpus(dir.str("c2"), 3, 64, 5);
  CHECK(slurp(dir.str("c/synth_0001.png")) == slurp(dir.str("c2/synth_0001.png")));

  const std::vector<Image> corpus = pipeline::ingest_corpus(dir.str("c"), 32);
  REQUIRE(corpus.size() == 3);
  for (const Image& img : corpus) {
    CHECK(img.h == 32);
    CHECK(img.w == 32);
    CHECK(img.c == 3);
  }
  CHECK_THROWS_AS(pipeline::make_corpus(dir.str("bad"), 0, 64, 1), Error);
}

TEST_CASE("ingest_corpus ordering, skipping, and edge cases") {
  TempDir dir;
  fs::create_directories(dir.str("c"));

  // Distinct constant colors expose the lexicographic ordering.
  Image red(16, 16, 3), blue(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      red.at(0, y, x) = 1.0f;
      blue.at(2, y, x) = 1.0f;
    }
  save_png(dir.str("c/bb_blue.png"), blue);
  save_png(dir.str("c/aa_red.png"), red);
  spit(dir.str("c/zz_not_an_image.png"), "garbage bytes");

  const std::vector<Image> corpus = pipeline::ingest_corpus(dir.str("c"), 16);
  REQUIRE(corpus.size() == 2);  // undecodable file skipped
  CHECK(corpus[0].at(0, 8, 8) == doctest::Approx(1.0f));  // aa_red first
  CHECK(corpus[1].at(2, 8, 8) == doctest::Approx(1.0f));  // bb_blue second

  SUBCASE("center crop keeps the middle of a wide image") {
    Image wide(16, 48, 3);
    for (int y = 0; y < 16; ++y)
      for (int x = 16; x < 32; ++x) wide.at(1, y, x) = 1.0f;  // green middle
    save_png(dir.str("c/aa_red.png"), wide);  // overwrite
    fs::remove(dir.str("c/bb_blue.png"));
    const std::vector<Image> cropped = pipeline::ingest_corpus(dir.str("c"), 16);
    REQUIRE(cropped.size() == 1);
    CHECK(cropped[0].at(1, 8, 8) == doctest::Approx(1.0f));
    CHECK(cropped[0].at(0, 8, 8) == doctest::Approx(0.0f));
  }

  SUBCASE("grayscale inputs are replicated to three channels") {
    Image gray(16, 16, 1);
    std::fill(gray.data.begin(), gray.data.end(), 0.5f);
    save_png(dir.str("c/gray.png"), gray);
    const std::vector<Image> with_gray = pipeline::ingest_corpus(dir.str("c"), 16);
    REQUIRE(with_gray.size() == 3);
    CHECK(with_gray[2].c == 3);  // "gray.png" sorts after bb_blue
    CHECK(with_gray[2].at(0, 4, 4) == doctest::Approx(0.5f).epsilon(0.01));
    CHECK(with_gray[2].at(2, 4, 4) == doctest::Approx(0.5f).epsilon(0.01));
  }

  fs::create_directories(dir.str("empty"));
  CHECK_THROWS_WITH_AS(pipeline::ingest_corpus(dir.str("empty"), 16),
                       doctest::Contains("no decodable images"), Error);
  CHECK_THROWS_WITH_AS(pipeline::ingest_corpus(dir.str("nonexistent"), 16),
                       doctest::Contains("does not exist"), Error);
}

TEST_CASE("keygen writes key files and a registry entry") {
  TempDir dir;
  const pipeline::ToolkitConfig config = test_config(dir, "unused.ckpt");
  const crypto::KeyPair pair = pipeline::keygen(config, "alice", "Team A");
  CHECK(pair.key_id == "alice");
  CHECK(fs::exists(dir.str("keys/alice.priv")));
  CHECK(fs::exists(dir.str("keys/alice.pub")));
  const crypto::RegistryEntry entry =
      crypto::registry_lookup(config.paths.registry, "alice");
  CHECK(entry.owner == "Team A");
  CHECK(entry.public_point == pair.public_point);

  // Second key lands in the same registry.
  pipeline::keygen(config, "bob", "Team B");
  CHECK(crypto::registry_lookup(config.paths.registry, "bob").owner == "Team B");
  CHECK(crypto::registry_lookup(config.paths.registry, "alice").owner == "Team A");
}

TEST_CASE("toolkit embed/verify at a zero-initialized checkpoint") {
  TempDir dir;
  const std::string checkpoint = write_identity_checkpoint(dir);
  pipeline::ToolkitConfig config = test_config(dir, checkpoint);
  pipeline::keygen(config, "alice", "owner");
  const pipeline::Toolkit toolkit(config);

  // Snap the synthetic cover onto the u8 grid, as any file-loaded image
  // would be, so quantization noise cannot mask the identity property.
  const Image cover = quantize_u8(pipeline::synthesize_cover(256, 77));

  SUBCASE("zero-init embedding is the identity on quantized pixels") {
    pipeline::EmbedReport report;
    pattern::VisualPattern truth;
    const Image watermarked = toolkit.embed(cover, "alice", &report, &truth);
    CHECK(watermarked.data == quantize_u8(cover).data);
    CHECK(report.psnr == doctest::Approx(99.0));
    CHECK(report.ssim == doctest::Approx(1.0));
    CHECK(report.key_id == "alice");
    CHECK(!report.digest.empty());
    CHECK(report.signature.size() == 64);
    CHECK(truth.version == 9);
    CHECK(truth.modules.size == 53);

    // The signed digest verifies under the registered public key.
    const Bytes digest_bytes(report.digest.begin(), report.digest.end());
    CHECK(crypto::verify(
        crypto::registry_lookup(config.paths.registry, "alice").public_point,
        digest_bytes, report.signature));
  }

  SUBCASE("verify degrades gracefully and reports are schema-valid") {
    const Image watermarked = toolkit.embed(cover, "alice");
    const pipeline::VerificationReport report =
        toolkit.verify(watermarked, "alice");
    CHECK(report.signature_valid == false);  // zero-init recovers nothing
    CHECK(report.decode_status == "decode_failure");
    CHECK(!report.diagnostics.empty());
    CHECK(report.timings.extract_ms > 0.0);
    std::string why;
    CHECK(pipeline::json_matches_schema(pipeline::report_to_json(report),
                                        schema_text(), &why));
    INFO(why);
    CHECK(why.empty());
  }

  SUBCASE("unknown key aborts, missing checkpoint aborts") {
    CHECK_THROWS_WITH_AS(toolkit.verify(cover, "mallory"),
                         doctest::Contains("registry"), Error);
    pipeline::ToolkitConfig broken = config;
    broken.paths.checkpoint = dir.str("absent.ckpt");
    const pipeline::Toolkit victim(broken);
    CHECK_THROWS_WITH_AS(victim.embed(cover, "alice"),
                         doctest::Contains("checkpoint"), Error);
  }

  SUBCASE("input contract violations") {
    CHECK_THROWS_WITH_AS(toolkit.embed(Image(255, 255, 3), "alice"),
                         doctest::Contains("even"), Error);
    CHECK_THROWS_WITH_AS(toolkit.embed(Image(128, 128, 3), "alice"),
                         doctest::Contains("too small"), Error);
    CHECK_THROWS_WITH_AS(toolkit.embed(Image(256, 256, 1), "alice"),
                         doctest::Contains("3-channel"), Error);
  }

  SUBCASE("file flow writes lossless output plus report, deterministically") {
    save_png(dir.str("cover.png"), cover);
    CHECK_THROWS_WITH_AS(
        toolkit.embed_image(dir.str("cover.png"), "alice", dir.str("o.jpg")),
        doctest::Contains("lossless"), Error);

    toolkit.embed_image(dir.str("cover.png"), "alice", dir.str("wm1.png"));
    toolkit.embed_image(dir.str("cover.png"), "alice", dir.str("wm2.png"));
    CHECK(slurp(dir.str("wm1.png")) == slurp(dir.str("wm2.png")));
    const json report = json::parse(slurp(dir.str("wm1.png.embed.json")));
    CHECK(report.at("key_id") == "alice");
    CHECK(report.at("psnr").get<double>() == doctest::Approx(99.0));

    const pipeline::VerificationReport vr =
        toolkit.verify_image(dir.str("wm1.png"), "alice");
    CHECK(vr.decode_status == "decode_failure");
  }
}

TEST_CASE("acceptance policy combines signature and semantic gate") {
  TempDir dir;
  pipeline::ToolkitConfig config = test_config(dir, "unused.ckpt");
  pipeline::VerificationReport report;

  SUBCASE("gate disabled: signature decides") {
    const pipeline::Toolkit toolkit(config);
    report.signature_valid = false;
    CHECK_FALSE(toolkit.accepted(report));
    report.signature_valid = true;
    CHECK(toolkit.accepted(report));
    report.semantic_similarity = 0.0;  // gate off, similarity ignored
    CHECK(toolkit.accepted(report));
  }

  SUBCASE("gate enabled: similarity must clear the threshold") {
    config.semantic_threshold = 0.5;
    const pipeline::Toolkit toolkit(config);
    report.signature_valid = true;
    report.semantic_similarity = 0.25;
    CHECK_FALSE(toolkit.accepted(report));
    report.semantic_similarity = 0.5;
    CHECK(toolkit.accepted(report));
    report.semantic_similarity.reset();  // no provider -> gate cannot judge
    CHECK(toolkit.accepted(report));
    report.signature_valid = false;
    CHECK_FALSE(toolkit.accepted(report));
  }
}

TEST_CASE("bench produces rows, curves, and artifacts at zero-init") {
  TempDir dir;
  const std::string checkpoint = write_identity_checkpoint(dir);
  pipeline::ToolkitConfig config = test_config(dir, checkpoint);
  config.bench.resolutions = {256};
  config.bench.images = 2;
  config.bench.jpeg_qualities = {90};
  config.bench.noise_sigmas = {0.05};
  config.bench.blur_sigmas = {0.5};
  pipeline::keygen(config, "alice", "owner");
  pipeline::make_corpus(dir.str("corpus"), 2, 256, 21);

  const pipeline::Toolkit toolkit(config);
  std::string table;
  const pipeline::BenchResult result = pipeline::bench(
      toolkit, dir.str("corpus"), "alice", dir.str("bench"), &table);

  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].resolution == 256);
  CHECK(result.rows[0].payload_modules == 53 * 53);
  CHECK(result.rows[0].psnr == doctest::Approx(99.0));
  CHECK(result.rows[0].ver_acc == doctest::Approx(0.0));  // zero-init
  CHECK(result.rows[0].embed_ms > 0.0);
  REQUIRE(result.curve.size() == 3);
  CHECK(result.curve[0].transform == "jpeg");
  CHECK(result.curve[0].parameter == doctest::Approx(90));
  CHECK(result.curve[1].transform == "gaussian_noise");
  CHECK(result.curve[2].transform == "gaussian_blur");

  CHECK(table.find("Payload") != std::string::npos);
  CHECK(table.find("2809") != std::string::npos);

  const json bench_doc = json::parse(slurp(dir.str("bench/bench.json")));
  CHECK(bench_doc.at("rows").size() == 1);
  CHECK(bench_doc.at("rows")[0].at("payload_modules") == 2809);
  CHECK(bench_doc.at("curve").size() == 3);

  const std::string csv = slurp(dir.str("bench/robustness_curve.csv"));
  CHECK(csv.find("transform,parameter,ver_acc") == 0);
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 4);  // header + one row per sweep point
  CHECK(fs::exists(dir.str("bench/bench_table.txt")));
}

TEST_CASE("train_toolkit wires corpus ingestion into the trainer") {
  TempDir dir;
  pipeline::ToolkitConfig config = test_config(dir, dir.str("out/t.ckpt"));
  config.train.steps = 0;  // persist initialization only
  pipeline::make_corpus(dir.str("corpus"), 2, 64, 3);
  const trainer::TrainResult result = pipeline::train_toolkit(
      config, dir.str("corpus"), dir.str("metrics.ndjson"));
  CHECK(result.steps_completed == 0);
  CHECK(fs::exists(dir.str("out/t.ckpt")));
  const inn::InnWeights weights = trainer::load_checkpoint(dir.str("out/t.ckpt"));
  CHECK(weights.blocks.size() == static_cast<std::size_t>(config.train.block_count));
}
