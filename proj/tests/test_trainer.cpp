// Optimizer-layer tests: the combined objective, checkpoint container
// round-trips and rejection of damaged files, bit-exact reproducibility of
// short runs, the divergence-abort contract, and the differentiable JPEG
// surrogate measured against the real codec.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>
#include <unistd.h>

#include <json.hpp>

#include <metaseal/common.hpp>
#include <metaseal/image_io.hpp>
#include <metaseal/inn.hpp>
#include <metaseal/tensor.hpp>
#include <metaseal/trainer.hpp>

using metaseal::Error;
using metaseal::Image;
using metaseal::Rng;
using metaseal::Tensor;
namespace inn = metaseal::inn;
namespace trainer = metaseal::trainer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("metaseal_trainer_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::vector<const std::vector<float>*> param_vectors(
    const inn::InnWeights& weights) {
  std::vector<const std::vector<float>*> out;
  inn::for_each_param<float>(const_cast<inn::InnWeights&>(weights),
                             [&out](std::vector<float>& p) {
                               out.push_back(&p);
                             });
  return out;
}

bool weights_bitwise_equal(const inn::InnWeights& a, const inn::InnWeights& b) {
  const auto pa = param_vectors(a);
  const auto pb = param_vectors(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->size() != pb[i]->size()) return false;
    if (std::memcmp(pa[i]->data(), pb[i]->data(),
                    pa[i]->size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::uint32_t header_length(const std::string& blob) {
  REQUIRE(blob.size() >= 4);
  return static_cast<std::uint32_t>(static_cast<unsigned char>(blob[0])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(blob[1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(blob[2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(blob[3])) << 24);
}

// Rewrites the JSON header of a checkpoint blob, repacking the length prefix.
std::string with_header(const std::string& blob,
                        const std::function<void(nlohmann::json&)>& mutate) {
  const std::uint32_t len = header_length(blob);
  REQUIRE(blob.size() >= 4 + len);
  nlohmann::json header = nlohmann::json::parse(blob.substr(4, len));
  mutate(header);
  const std::string text = header.dump();
  std::string out;
  const std::uint32_t n = static_cast<std::uint32_t>(text.size());
  out.push_back(static_cast<char>(n & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out += text;
  out += blob.substr(4 + len);
  return out;
}

// Smooth low-contrast color field: gentle ramps plus a mild luma wave, so
// chroma subsampling costs almost nothing and codec comparisons are stable.
Image smooth_image(int h, int w) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / (w - 1);
      const double fy = static_cast<double>(y) / (h - 1);
      const double wave = 0.05 * std::sin(2.0 * 3.14159265358979 * fx) *
                          std::cos(2.0 * 3.14159265358979 * fy);
      img.at(0, y, x) = static_cast<float>(0.40 + 0.20 * fx + wave);
      img.at(1, y, x) = static_cast<float>(0.50 + 0.10 * fy + wave);
      img.at(2, y, x) = static_cast<float>(0.45 + 0.15 * 0.5 * (fx + fy) + wave);
    }
  return img;
}

Image textured_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 3);
  for (float& v : img.data)
    v = static_cast<float>(0.25 + 0.5 * rng.uniform());
  return img;
}

double tensor_mse(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - b.v[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.v.size());
}

double tensor_psnr(const Tensor& a, const Tensor& b) {
  const double mse = tensor_mse(a, b);
  return mse == 0.0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

trainer::TrainConfig tiny_config() {
  trainer::TrainConfig config;
  config.steps = 10;
  config.batch_size = 1;
  config.patch_size = 16;
  config.block_count = 2;
  config.render_size = 256;
  config.checkpoint_every = 5;
  config.log_every = 1;
  config.seed = 77;
  return config;
}

std::vector<Image> tiny_corpus() {
  return {textured_image(32, 32, 101), textured_image(32, 32, 202)};
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("combined loss is the weighted sum of the two terms") {
  CHECK(trainer::combined_loss(0.01, 0.02, 5.0, 1.0) ==
        doctest::Approx(0.07).epsilon(1e-12));
  CHECK(trainer::combined_loss(0.0, 0.0, 5.0, 1.0) == 0.0);
  CHECK(trainer::combined_loss(1.0, 0.0, 5.0, 1.0) == doctest::Approx(5.0));
  CHECK(trainer::combined_loss(0.0, 1.0, 5.0, 1.0) == doctest::Approx(1.0));
  // Linearity in each argument.
  CHECK(trainer::combined_loss(0.02, 0.04, 5.0, 1.0) ==
        doctest::Approx(2.0 * trainer::combined_loss(0.01, 0.02, 5.0, 1.0)));
}

TEST_CASE("config hash is stable and sensitive to every field") {
  trainer::TrainConfig base;
  const std::string h0 = trainer::config_hash(base);
  CHECK(h0.size() == 64);
  CHECK(h0.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(trainer::config_hash(base) == h0);

  auto changed = [&](auto mutate) {
    trainer::TrainConfig c;
    mutate(c);
    return trainer::config_hash(c) != h0;
  };
  CHECK(changed([](auto& c) { c.steps += 1; }));
  CHECK(changed([](auto& c) { c.batch_size += 1; }));
  CHECK(changed([](auto& c) { c.patch_size += 16; }));
  CHECK(changed([](auto& c) { c.learning_rate *= 2.0; }));
  CHECK(changed([](auto& c) { c.lambda_emb += 1.0; }));
  CHECK(changed([](auto& c) { c.lambda_rec += 1.0; }));
  CHECK(changed([](auto& c) { c.seed += 1; }));
  CHECK(changed([](auto& c) { c.block_count += 1; }));
  CHECK(changed([](auto& c) { c.clamp_constant += 0.5f; }));
  CHECK(changed([](auto& c) { c.qr_version = 17; }));
  CHECK(changed([](auto& c) { c.render_size += 64; }));
  CHECK(changed([](auto& c) { c.pool.p_identity += 0.1; }));
  CHECK(changed([](auto& c) { c.pool.sigma_max += 0.01; }));
  CHECK(changed([](auto& c) { c.pool.quality_min -= 5; }));
}

TEST_CASE("checkpoint round-trips randomized weights bit for bit") {
  TempDir tmp;
  Rng rng(42);
  inn::InnWeights weights = inn::make_weights<float>(2, inn::kSubbandChannels,
                                                     1.5f, rng);
  inn::randomize_weights<float>(weights, rng, 0.02f);
  const std::string path = tmp.file("w.ckpt");
  trainer::save_checkpoint(path, weights, "hash-under-test");

  trainer::CheckpointInfo info;
  inn::InnWeights loaded = trainer::load_checkpoint(path, &info);
  CHECK(weights_bitwise_equal(weights, loaded));
  CHECK(info.format_version == trainer::kCheckpointFormatVersion);
  CHECK(info.clamp_constant == 1.5f);
  CHECK(info.block_count == 2);
  CHECK(info.channels == inn::kSubbandChannels);
  CHECK(info.training_config_hash == "hash-under-test");

  // Re-saving the loaded weights reproduces the identical file.
  const std::string path2 = tmp.file("w2.ckpt");
  trainer::save_checkpoint(path2, loaded, "hash-under-test");
  CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("damaged checkpoints are rejected with diagnostics") {
  TempDir tmp;
  Rng rng(7);
  inn::InnWeights weights = inn::make_weights<float>(1, inn::kSubbandChannels,
                                                     2.0f, rng);
  const std::string path = tmp.file("base.ckpt");
  trainer::save_checkpoint(path, weights, "h");
  const std::string blob = read_file(path);
  const std::string bad = tmp.file("bad.ckpt");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(trainer::load_checkpoint(tmp.file("absent.ckpt")), Error);
  }
  SUBCASE("unsupported format version") {
    write_file(bad, with_header(blob, [](nlohmann::json& h) {
      h["format_version"] = trainer::kCheckpointFormatVersion + 1;
    }));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("format version"), Error);
  }
  SUBCASE("renamed tensor") {
    write_file(bad, with_header(blob, [](nlohmann::json& h) {
      h["tensors"][0]["name"] = "block00.phi.conv0.weightx";
    }));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("mismatch"), Error);
  }
  SUBCASE("wrong tensor count") {
    write_file(bad, with_header(blob, [](nlohmann::json& h) {
      h["tensors"][0]["count"] =
          h["tensors"][0]["count"].get<std::size_t>() + 1;
    }));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("mismatch"), Error);
  }
  SUBCASE("dropped tensor directory entry") {
    write_file(bad, with_header(blob, [](nlohmann::json& h) {
      h["tensors"].erase(h["tensors"].size() - 1);
    }));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("directory"), Error);
  }
  SUBCASE("truncated payload") {
    write_file(bad, blob.substr(0, blob.size() - 4));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("truncated"), Error);
  }
  SUBCASE("trailing bytes") {
    write_file(bad, blob + std::string(4, '\0'));
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("trailing"), Error);
  }
  SUBCASE("header is not JSON") {
    const std::string text = "definitely not json";
    std::string forged;
    const std::uint32_t n = static_cast<std::uint32_t>(text.size());
    forged.push_back(static_cast<char>(n & 0xFF));
    forged.push_back(static_cast<char>((n >> 8) & 0xFF));
    forged.push_back(static_cast<char>((n >> 16) & 0xFF));
    forged.push_back(static_cast<char>((n >> 24) & 0xFF));
    forged += text;
    write_file(bad, forged);
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("JSON"), Error);
  }
  SUBCASE("implausible header length") {
    std::string forged = blob;
    forged[0] = '\0';
    forged[1] = '\0';
    forged[2] = '\0';
    forged[3] = '\0';
    write_file(bad, forged);
    CHECK_THROWS_WITH_AS(trainer::load_checkpoint(bad),
                         doctest::Contains("implausible"), Error);
  }
}

TEST_CASE("zero-step training persists the untouched initialization") {
  TempDir tmp;
  trainer::TrainConfig config = tiny_config();
  config.steps = 0;
  const std::string ckpt = tmp.file("init.ckpt");
  const std::string log = tmp.file("init.ndjson");
  trainer::TrainResult result =
      trainer::train(config, tiny_corpus(), ckpt, log);
  CHECK(result.steps_completed == 0);

  Rng rng(config.seed);
  inn::InnWeights fresh = inn::make_weights<float>(
      config.block_count, inn::kSubbandChannels, config.clamp_constant, rng);
  CHECK(weights_bitwise_equal(result.weights, fresh));
  CHECK(weights_bitwise_equal(trainer::load_checkpoint(ckpt), fresh));
  CHECK(trainer::parse_metrics_log(log).empty());
}

TEST_CASE("short runs reproduce bit for bit under the same seed") {
  TempDir tmp;
  const trainer::TrainConfig config = tiny_config();
  const std::vector<Image> corpus = tiny_corpus();

  trainer::TrainResult a = trainer::train(config, corpus, tmp.file("a.ckpt"),
                                          tmp.file("a.ndjson"));
  trainer::TrainResult b = trainer::train(config, corpus, tmp.file("b.ckpt"),
                                          tmp.file("b.ndjson"));
  CHECK(a.steps_completed == config.steps);
  CHECK(weights_bitwise_equal(a.weights, b.weights));
  CHECK(read_file(tmp.file("a.ckpt")) == read_file(tmp.file("b.ckpt")));
  CHECK(read_file(tmp.file("a.ndjson")) == read_file(tmp.file("b.ndjson")));

  // The saved checkpoint holds exactly the final weights.
  CHECK(weights_bitwise_equal(trainer::load_checkpoint(tmp.file("a.ckpt")),
                              a.weights));

  // A different seed takes a different trajectory.
  trainer::TrainConfig other = config;
  other.seed += 1;
  trainer::TrainResult c = trainer::train(other, corpus, tmp.file("c.ckpt"),
                                          tmp.file("c.ndjson"));
  CHECK_FALSE(weights_bitwise_equal(a.weights, c.weights));
}

TEST_CASE("metrics log mirrors the optimization trace") {
  TempDir tmp;
  trainer::TrainConfig config = tiny_config();
  config.steps = 6;
  const std::string log = tmp.file("m.ndjson");
  trainer::train(config, tiny_corpus(), tmp.file("m.ckpt"), log);

  const auto entries = trainer::parse_metrics_log(log);
  REQUIRE(entries.size() == 6);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& m = entries[i];
    CHECK(m.step == static_cast<int>(i) + 1);
    CHECK(m.loss_total ==
          doctest::Approx(trainer::combined_loss(
              m.loss_emb, m.loss_rec, config.lambda_emb, config.lambda_rec))
              .epsilon(1e-9));
    CHECK(m.loss_total >= 0.0);
    CHECK(m.psnr > 0.0);
    CHECK(m.psnr <= 99.0);
    CHECK(m.bit_acc >= 0.0);
    CHECK(m.bit_acc <= 1.0);
  }

  SUBCASE("malformed lines are rejected") {
    std::ofstream out(log, std::ios::app);
    out << "{not json\n";
    out.close();
    CHECK_THROWS_WITH_AS(trainer::parse_metrics_log(log),
                         doctest::Contains("malformed"), Error);
  }
  SUBCASE("missing log throws") {
    CHECK_THROWS_AS(trainer::parse_metrics_log(tmp.file("absent.ndjson")),
                    Error);
  }
}

TEST_CASE("exploding learning rate aborts and preserves the last good state") {
  TempDir tmp;
  trainer::TrainConfig config = tiny_config();
  config.steps = 10;
  config.learning_rate = 1e8;  // guarantees overflow within a few steps
  config.checkpoint_every = 1000;  // no periodic save before the abort
  const std::string ckpt = tmp.file("diverged.ckpt");

  bool threw = false;
  try {
    trainer::train(config, tiny_corpus(), ckpt, tmp.file("d.ndjson"));
  } catch (const Error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("diverged at step") != std::string::npos);
    CHECK(msg.find("last good checkpoint") != std::string::npos);
  }
  REQUIRE(threw);

  // The rescue checkpoint is the initialization (nothing stable came later).
  Rng rng(config.seed);
  inn::InnWeights fresh = inn::make_weights<float>(
      config.block_count, inn::kSubbandChannels, config.clamp_constant, rng);
  CHECK(weights_bitwise_equal(trainer::load_checkpoint(ckpt), fresh));
}

TEST_CASE("training input contracts") {
  TempDir tmp;
  const std::string ckpt = tmp.file("v.ckpt");
  const std::string log = tmp.file("v.ndjson");
  trainer::TrainConfig config = tiny_config();

  CHECK_THROWS_WITH_AS(trainer::train(config, {}, ckpt, log),
                       doctest::Contains("empty"), Error);

  trainer::TrainConfig bad = config;
  bad.steps = -1;
  CHECK_THROWS_AS(trainer::train(bad, tiny_corpus(), ckpt, log), Error);
  bad = config;
  bad.batch_size = 0;
  CHECK_THROWS_AS(trainer::train(bad, tiny_corpus(), ckpt, log), Error);
  bad = config;
  bad.patch_size = 15;
  CHECK_THROWS_AS(trainer::train(bad, tiny_corpus(), ckpt, log), Error);
  bad = config;
  bad.patch_size = 24;  // positive but not a multiple of 16
  CHECK_THROWS_AS(trainer::train(bad, tiny_corpus(), ckpt, log), Error);

  // Corpus constraints: channel count and minimum size.
  std::vector<Image> gray = {Image(32, 32, 1)};
  CHECK_THROWS_WITH_AS(trainer::train(config, gray, ckpt, log),
                       doctest::Contains("channels"), Error);
  std::vector<Image> small = {textured_image(8, 8, 5)};
  CHECK_THROWS_WITH_AS(trainer::train(config, small, ckpt, log),
                       doctest::Contains("smaller"), Error);
}

// ---------------------------------------------------------------------------
// Differentiable JPEG surrogate.

TEST_CASE("jpeg surrogate is near-lossless at quality 100") {
  const Image img = smooth_image(64, 64);
  const Tensor x = inn::image_to_tensor(img);
  const Tensor y = trainer::diff_jpeg_forward(x, 100);
  CHECK(y.same_shape(x));
  CHECK(tensor_psnr(x, y) > 35.0);
}

TEST_CASE("jpeg surrogate distortion grows as quality drops") {
  const Tensor x = inn::image_to_tensor(smooth_image(64, 64));
  const double q95 = tensor_psnr(x, trainer::diff_jpeg_forward(x, 95));
  const double q70 = tensor_psnr(x, trainer::diff_jpeg_forward(x, 70));
  const double q40 = tensor_psnr(x, trainer::diff_jpeg_forward(x, 40));
  CHECK(q95 > q70);
  CHECK(q70 > q40);
}

TEST_CASE("jpeg surrogate tracks the real codec") {
  // Same image, same quality, two pipelines: the surrogate must land close
  // to what libjpeg actually produces, or training would optimize against
  // the wrong distortion.
  const Image img = smooth_image(64, 64);
  for (int quality : {90, 75}) {
    const Tensor sur =
        trainer::diff_jpeg_forward(inn::image_to_tensor(img), quality);
    const Image real = metaseal::jpeg_roundtrip(img, quality);
    const Tensor real_t = inn::image_to_tensor(real);
    CHECK(tensor_psnr(sur, real_t) > 25.0);
  }
}

TEST_CASE("jpeg surrogate straight-through gradient is the color adjoint") {
  Tensor ones(1, 3, 16, 16);
  ones.fill(1.0f);
  const Tensor g = trainer::diff_jpeg_backward(ones);
  REQUIRE(g.same_shape(ones));
  // A constant upstream gradient stays spatially constant per channel (the
  // chroma block-average fixes constants) and lands within float rounding of
  // one, because the forward/inverse color matrices are near-exact inverses.
  for (int c = 0; c < 3; ++c) {
    const float first = g.at(0, c, 0, 0);
    CHECK(first == doctest::Approx(1.0f).epsilon(1e-5));
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        CHECK(g.at(0, c, y, x) == first);
  }
}

TEST_CASE("jpeg surrogate input contracts") {
  Tensor ok(1, 3, 32, 32);
  CHECK_NOTHROW(trainer::diff_jpeg_forward(ok, 50));
  Tensor gray(1, 1, 32, 32);
  CHECK_THROWS_AS(trainer::diff_jpeg_forward(gray, 50), Error);
  Tensor odd(1, 3, 24, 32);  // not a multiple of 16
  CHECK_THROWS_AS(trainer::diff_jpeg_forward(odd, 50), Error);
  CHECK_THROWS_AS(trainer::diff_jpeg_forward(ok, 0), Error);
  CHECK_THROWS_AS(trainer::diff_jpeg_forward(ok, 101), Error);
  Tensor odd_grad(1, 3, 3, 4);
  CHECK_THROWS_AS(trainer::diff_jpeg_backward(odd_grad), Error);
}
