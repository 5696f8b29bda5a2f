// Caption-layer tests: digest normalization with UTF-8-safe truncation,
// token-set similarity against hand-counted values, the deterministic stub
// provider, and the HTTP provider exercised against a real in-process server.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <string>
#include <thread>

#include <httplib.h>

#include <metaseal/common.hpp>
#include <metaseal/semantics.hpp>
#include <metaseal/tensor.hpp>

using metaseal::Error;
using metaseal::Image;
using metaseal::Rng;
namespace semantics = metaseal::semantics;

namespace {

Image textured_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

// In-process HTTP endpoint for the external-provider contract.
struct CaptionServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  CaptionServer() {
    server.Post("/caption", [](const httplib::Request& req,
                               httplib::Response& res) {
      const std::string h = req.get_header_value("X-Image-Height");
      const std::string w = req.get_header_value("X-Image-Width");
      const std::string c = req.get_header_value("X-Image-Channels");
      const std::size_t expected = std::stoul(h) * std::stoul(w) * std::stoul(c);
      if (req.body.size() != expected ||
          req.get_header_value("Content-Type") != "application/octet-stream") {
        res.status = 400;
        return;
      }
      res.set_content("a scene of " + h + "x" + w + " pixels", "text/plain");
    });
    server.Post("/fails", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    server.Post("/blank", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("  \n\t ", "text/plain");
    });
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~CaptionServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }

  std::string endpoint(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port) + path;
  }
};

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("digest normalization cleans and preserves word content") {
  CHECK(semantics::make_digest("  a\tred \n car ") == "a red car");
  CHECK(semantics::make_digest("plain") == "plain");
  CHECK(semantics::make_digest("tab\there") == "tab here");
  CHECK(semantics::make_digest(std::string("nul\0byte", 8)) == "nul byte");
  CHECK(semantics::make_digest("many     spaces") == "many spaces");

  SUBCASE("byte budget truncates") {
    const std::string caption(200, 'x');
    CHECK(semantics::make_digest(caption).size() ==
          static_cast<std::size_t>(semantics::kDefaultDigestBudget));
    CHECK(semantics::make_digest(caption, 16) == std::string(16, 'x'));
  }
  SUBCASE("truncation never splits a UTF-8 code point") {
    // "é" is 0xC3 0xA9; a budget landing between the two bytes backs off.
    const std::string accented = std::string(9, 'a') + "\xC3\xA9";
    CHECK(semantics::make_digest(accented, 10) == std::string(9, 'a'));
    CHECK(semantics::make_digest(accented, 11) == accented);
    // Four-byte emoji: every interior cut collapses to the boundary.
    const std::string emoji = std::string(8, 'b') + "\xF0\x9F\x98\x80";
    CHECK(semantics::make_digest(emoji, 9) == std::string(8, 'b'));
    CHECK(semantics::make_digest(emoji, 10) == std::string(8, 'b'));
    CHECK(semantics::make_digest(emoji, 11) == std::string(8, 'b'));
    CHECK(semantics::make_digest(emoji, 12) == emoji);
  }
  SUBCASE("contract violations throw") {
    CHECK_THROWS_AS(semantics::make_digest(""), Error);
    CHECK_THROWS_AS(semantics::make_digest("   \n\t  "), Error);
    CHECK_THROWS_AS(semantics::make_digest("fine", 7), Error);
    CHECK_NOTHROW(semantics::make_digest("fine", 8));
  }
}

TEST_CASE("similarity is token-set jaccard") {
  CHECK(semantics::similarity("a red car", "a blue car") ==
        doctest::Approx(0.5));  // {a, car} over {a, red, blue, car}
  CHECK(semantics::similarity("a red car", "a red car") == doctest::Approx(1.0));
  CHECK(semantics::similarity("A RED Car", "a red car") == doctest::Approx(1.0));
  CHECK(semantics::similarity("red red red car", "car red") ==
        doctest::Approx(1.0));
  CHECK(semantics::similarity("dogs outside", "cats inside") ==
        doctest::Approx(0.0));
  CHECK(semantics::similarity("", "") == doctest::Approx(1.0));
  CHECK(semantics::similarity("word", "") == doctest::Approx(0.0));
  CHECK(semantics::similarity("a b c", "a") == doctest::Approx(1.0 / 3.0));
  // Symmetry.
  CHECK(semantics::similarity("x y", "y z") ==
        semantics::similarity("y z", "x y"));
}

TEST_CASE("pixel hash is a stable content key") {
  const Image img = textured_image(12, 9, 3);
  const std::string h1 = semantics::pixel_hash_hex(img);
  CHECK(h1.size() == 64);
  CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(semantics::pixel_hash_hex(img) == h1);

  Image changed = img;
  changed.at(1, 5, 5) += 1.0f / 255.0f;  // one quantization level
  CHECK(semantics::pixel_hash_hex(changed) != h1);

  // Sub-quantization perturbations do not move the 8-bit key.
  Image tiny = img;
  tiny.at(0, 0, 0) += 1e-5f;
  CHECK(semantics::pixel_hash_hex(tiny) == h1);
}

TEST_CASE("fixed-map provider answers from the map with a derived fallback") {
  const Image img = textured_image(8, 8, 4);
  const std::string hash = semantics::pixel_hash_hex(img);

  semantics::ProviderConfig config;
  config.provider = "fixed_map_stub";
  config.fixed_map[hash] = "a tabby cat on a sofa";
  auto provider = semantics::make_provider(config);
  CHECK(provider->name() == "fixed_map_stub");
  CHECK(provider->caption(img) == "a tabby cat on a sofa");

  const Image other = textured_image(8, 8, 5);
  const std::string other_hash = semantics::pixel_hash_hex(other);
  CHECK(provider->caption(other) == "scene-" + other_hash.substr(0, 12));
  // The fallback is deterministic.
  CHECK(provider->caption(other) == provider->caption(other));

  semantics::ProviderConfig empty_caption;
  empty_caption.fixed_map[hash] = "";
  auto strict = semantics::make_provider(empty_caption);
  CHECK_THROWS_AS(strict->caption(img), Error);
}

TEST_CASE("external provider speaks the octet-stream protocol") {
  CaptionServer server;
  const Image img = textured_image(6, 10, 6);

  semantics::ProviderConfig config;
  config.provider = "external_model";
  config.endpoint = server.endpoint("/caption");
  config.timeout_ms = 2000;
  auto provider = semantics::make_provider(config);
  CHECK(provider->name() == "external_model");
  CHECK(provider->caption(img) == "a scene of 6x10 pixels");

  SUBCASE("http errors surface with the status code") {
    config.endpoint = server.endpoint("/fails");
    auto failing = semantics::make_provider(config);
    CHECK_THROWS_WITH_AS(failing->caption(img), doctest::Contains("HTTP 500"),
                         Error);
  }
  SUBCASE("blank captions are refused") {
    config.endpoint = server.endpoint("/blank");
    auto blank = semantics::make_provider(config);
    CHECK_THROWS_WITH_AS(blank->caption(img), doctest::Contains("empty"),
                         Error);
  }
  SUBCASE("unreachable endpoints report unavailability") {
    semantics::ProviderConfig dead = config;
    dead.endpoint = "http://127.0.0.1:1/caption";
    dead.timeout_ms = 500;
    auto unreachable = semantics::make_provider(dead);
    CHECK_THROWS_WITH_AS(unreachable->caption(img),
                         doctest::Contains("unavailable"), Error);
  }
}

TEST_CASE("provider construction contracts") {
  semantics::ProviderConfig config;
  config.provider = "external_model";
  config.endpoint = "";
  CHECK_THROWS_WITH_AS(semantics::make_provider(config),
                       doctest::Contains("endpoint"), Error);
  config.endpoint = "https://example.test/caption";
  CHECK_THROWS_WITH_AS(semantics::make_provider(config),
                       doctest::Contains("http://"), Error);
  config.provider = "imaginary";
  CHECK_THROWS_WITH_AS(semantics::make_provider(config),
                       doctest::Contains("unknown"), Error);
}

TEST_CASE("provider config parses from JSON") {
  const std::string text = R"({
    "provider": "external_model",
    "settings": {
      "endpoint": "http://127.0.0.1:8089/caption",
      "timeout_ms": 1500,
      "fixed_map": {"abc123": "a harbor at dawn"}
    }
  })";
  const semantics::ProviderConfig config =
      semantics::provider_config_from_json(text);
  CHECK(config.provider == "external_model");
  CHECK(config.endpoint == "http://127.0.0.1:8089/caption");
  CHECK(config.timeout_ms == 1500);
  REQUIRE(config.fixed_map.count("abc123") == 1);
  CHECK(config.fixed_map.at("abc123") == "a harbor at dawn");

  const semantics::ProviderConfig defaults =
      semantics::provider_config_from_json("{}");
  CHECK(defaults.provider == "fixed_map_stub");
  CHECK(defaults.timeout_ms == 5000);
  CHECK(defaults.fixed_map.empty());

  CHECK_THROWS_WITH_AS(semantics::provider_config_from_json("not json"),
                       doctest::Contains("JSON"), Error);
}
