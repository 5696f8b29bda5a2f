#include "metaseal/metaseal.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaseal/attacks.hpp"
#include "metaseal/common.hpp"
#include "metaseal/pipeline.hpp"
#include "metaseal/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

thread_local std::string g_last_error = "no error";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Uniform exception boundary: 1 = domain error, 2 = other failure.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const metaseal::Error& e) {
    g_last_error = e.what();
    return 1;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return 2;
  } catch (...) {
    g_last_error = "unknown failure";
    return 2;
  }
}

int fail(const std::string& message) {
  g_last_error = message;
  return 1;
}

}  // namespace

struct ms_toolkit {
  metaseal::pipeline::ToolkitConfig config;
  std::optional<metaseal::pipeline::Toolkit> instance;

  metaseal::pipeline::Toolkit& materialize() {
    if (!instance) instance.emplace(config);
    return *instance;
  }
};

extern "C" {

const char* ms_last_error(void) { return g_last_error.c_str(); }

const char* ms_version(void) { return "1.0.0"; }

int ms_toolkit_create(const char* config_path, ms_toolkit** out) {
  if (!out) return fail("out handle pointer is null");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<ms_toolkit>();
    handle->config = metaseal::pipeline::load_config(
        config_path ? std::string(config_path) : std::string());
    *out = handle.release();
  });
}

void ms_toolkit_destroy(ms_toolkit* toolkit) { delete toolkit; }

int ms_set_option(ms_toolkit* toolkit, const char* key, const char* value) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!key || !*key) return fail("option key is empty");
  if (!value) return fail("option value is null");
  return guarded([&] {
    // Build {"a":{"b":<value>}} from "a.b" and merge through the same path
    // as the config file, which validates key names and types.
    json leaf;
    try {
      leaf = json::parse(value);
    } catch (const json::exception&) {
      leaf = json(std::string(value));
    }
    std::vector<std::string> parts;
    std::stringstream path(key);
    std::string part;
    while (std::getline(path, part, '.')) {
      if (part.empty()) throw metaseal::Error("capi", "malformed option key");
      parts.push_back(part);
    }
    json doc = leaf;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it)
      doc = json{{*it, doc}};
    toolkit->config = metaseal::pipeline::config_from_json_text(
        doc.dump(), std::move(toolkit->config));
    toolkit->instance.reset();  // next use picks up the override
  });
}

int ms_keygen(ms_toolkit* toolkit, const char* key_id, const char* owner) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!key_id || !*key_id) return fail("key_id is empty");
  return guarded([&] {
    metaseal::pipeline::keygen(toolkit->config, key_id,
                               owner ? owner : "unspecified");
  });
}

int ms_embed(ms_toolkit* toolkit, const char* image_path, const char* key_id,
             const char* out_path, char** report_json) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!image_path || !key_id || !out_path)
    return fail("image_path, key_id, and out_path are required");
  return guarded([&] {
    const metaseal::pipeline::EmbedReport report =
        toolkit->materialize().embed_image(image_path, key_id, out_path);
    if (report_json)
      *report_json = dup_string(metaseal::pipeline::report_to_json(report));
  });
}

int ms_verify(ms_toolkit* toolkit, const char* image_path, const char* key_id,
              char** report_json) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!image_path || !key_id)
    return fail("image_path and key_id are required");
  return guarded([&] {
    const metaseal::pipeline::VerificationReport report =
        toolkit->materialize().verify_image(image_path, key_id);
    if (report_json)
      *report_json = dup_string(metaseal::pipeline::report_to_json(report));
  });
}

int ms_make_corpus(ms_toolkit* toolkit, const char* directory, int count,
                   int resolution, uint64_t seed) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!directory || !*directory) return fail("directory is required");
  return guarded([&] {
    metaseal::pipeline::make_corpus(directory, count, resolution, seed);
  });
}

int ms_train(ms_toolkit* toolkit, const char* corpus_dir,
             const char* metrics_path) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!corpus_dir || !*corpus_dir) return fail("corpus_dir is required");
  return guarded([&] {
    metaseal::pipeline::train_toolkit(
        toolkit->config, corpus_dir,
        metrics_path ? metrics_path : "train_metrics.ndjson");
  });
}

int ms_bench(ms_toolkit* toolkit, const char* corpus_dir, const char* key_id,
             const char* out_dir, char** table_text) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!corpus_dir || !key_id || !out_dir)
    return fail("corpus_dir, key_id, and out_dir are required");
  return guarded([&] {
    std::string table;
    metaseal::pipeline::bench(toolkit->materialize(), corpus_dir, key_id,
                              out_dir, &table);
    if (table_text) *table_text = dup_string(table);
  });
}

int ms_attack(ms_toolkit* toolkit, const char* corpus_dir, const char* key_id,
              const char* kinds, int trials,
              const char* substitute_checkpoint,
              const char* detector_checkpoint, const char* out_dir,
              char** report_json) {
  if (!toolkit) return fail("toolkit handle is null");
  if (!corpus_dir || !key_id) return fail("corpus_dir and key_id are required");
  return guarded([&] {
    namespace attacks = metaseal::attacks;
    namespace pipeline = metaseal::pipeline;

    pipeline::Toolkit& tk = toolkit->materialize();
    const std::vector<metaseal::Image> corpus = pipeline::ingest_corpus(
        corpus_dir, toolkit->config.image_resolution);

    std::vector<attacks::Kind> requested;
    const std::string kinds_str = (kinds && *kinds) ? kinds : "all";
    if (kinds_str == "all") {
      requested = {attacks::Kind::kReplay,        attacks::Kind::kResidualMixup,
                   attacks::Kind::kBlendMixup,    attacks::Kind::kPgd,
                   attacks::Kind::kWeightedMixup, attacks::Kind::kSubstituteInn};
    } else {
      std::stringstream list(kinds_str);
      std::string name;
      while (std::getline(list, name, ','))
        requested.push_back(attacks::kind_from_name(name));
    }

    attacks::AttackEnv env;
    env.qr_version = toolkit->config.qr_version;
    env.z_policy = pipeline::parse_z_policy(toolkit->config.z_policy);
    env.z_seed = toolkit->config.z_seed;
    env.seed = 7;
    env.out_dir = out_dir ? out_dir : "";
    env.embed_legit = [&](const metaseal::Image& cover) {
      return tk.embed(cover, key_id);
    };
    env.verify = [&](const metaseal::Image& image) {
      return tk.verify(image, key_id).signature_valid;
    };

    metaseal::inn::InnWeights substitute;
    bool have_substitute = false;
    if (substitute_checkpoint && *substitute_checkpoint) {
      substitute = metaseal::trainer::load_checkpoint(substitute_checkpoint);
      have_substitute = true;
      env.substitute = &substitute;
    }

    attacks::StrawmanDetector detector;
    bool need_detector = false;
    for (attacks::Kind kind : requested)
      if (kind == attacks::Kind::kPgd) need_detector = true;
    if (need_detector) {
      if (!detector_checkpoint || !*detector_checkpoint)
        throw metaseal::Error(
            "capi",
            "the pgd attack needs a detector checkpoint path; pass one and a "
            "strawman detector will be trained and saved there on first use");
      if (fs::exists(detector_checkpoint)) {
        detector = attacks::load_detector(detector_checkpoint);
      } else {
        // Train the strawman on legitimately watermarked vs clean images.
        std::vector<metaseal::Image> clean(
            corpus.begin(),
            corpus.begin() + std::min<std::size_t>(corpus.size(), 12));
        std::vector<metaseal::Image> watermarked;
        for (const metaseal::Image& img : clean)
          watermarked.push_back(tk.embed(img, key_id));
        detector = attacks::detector_init(99);
        double accuracy = 0.0;
        for (int round = 0; round < 4 && accuracy < 0.95; ++round)
          accuracy = attacks::train_detector(detector, watermarked, clean,
                                             3000, 32, 1e-3, 99 + round);
        if (accuracy < 0.95)
          throw metaseal::Error("capi",
                                "strawman detector failed to reach 95% "
                                "holdout accuracy; cannot run the pgd attack");
        const fs::path parent = fs::path(detector_checkpoint).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        attacks::save_detector(detector_checkpoint, detector);
      }
      env.detector = &detector;
    }

    std::vector<attacks::AttackSpec> specs;
    for (attacks::Kind kind : requested) {
      attacks::AttackSpec spec;
      spec.kind = kind;
      if (trials > 0) spec.trials = trials;
      specs.push_back(spec);
    }
    (void)have_substitute;  // run_attack_suite reports missing-substitute use

    const std::vector<attacks::AttackReport> reports =
        attacks::run_attack_suite(specs, corpus, env);
    const std::string text = attacks::report_to_json(reports);
    if (out_dir && *out_dir) {
      fs::create_directories(out_dir);
      std::ofstream file(fs::path(out_dir) / "attack_report.json",
                         std::ios::trunc);
      if (!file) throw metaseal::Error("capi", "cannot write attack report");
      file << text << '\n';
    }
    if (report_json) *report_json = dup_string(text);
  });
}

void ms_string_free(char* s) { std::free(s); }

}  // extern "C"
