// Command-line front end. Uses only the C API so it exercises the same
// surface as any other embedding application.
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include <metaseal/metaseal.h>

namespace {

struct ToolkitHandle {
  ms_toolkit* tk = nullptr;
  ~ToolkitHandle() { ms_toolkit_destroy(tk); }
};

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { ms_string_free(s); }
};

int die(const std::string& stage) {
  std::fprintf(stderr, "error (%s): %s\n", stage.c_str(), ms_last_error());
  return 1;
}

int make_toolkit(const std::string& config_path,
                 const std::vector<std::pair<std::string, std::string>>& sets,
                 ToolkitHandle& handle) {
  if (ms_toolkit_create(config_path.empty() ? nullptr : config_path.c_str(),
                        &handle.tk) != 0)
    return die("config");
  for (const auto& [key, value] : sets)
    if (ms_set_option(handle.tk, key.c_str(), value.c_str()) != 0)
      return die("--set " + key);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metaseal: cryptographically verifiable image attribution"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file");
  std::vector<std::string> set_args;
  app.add_option("--set", set_args,
                 "config override key=value (repeatable), e.g. "
                 "--set train.steps=500")
      ->take_all();
  std::string checkpoint, registry, keys_dir, out_dir;
  app.add_option("--checkpoint", checkpoint, "model checkpoint path");
  app.add_option("--registry", registry, "key registry path");
  app.add_option("--keys-dir", keys_dir, "private/public key directory");
  app.add_option("--out-dir", out_dir, "artifact output directory");

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a signing key pair");
  std::string key_id, owner = "unspecified";
  keygen->add_option("--key-id", key_id, "key identifier")->required();
  keygen->add_option("--owner", owner, "owner label for the registry");

  // embed
  auto* embed = app.add_subcommand("embed", "watermark an image");
  std::string in_path, out_path;
  embed->add_option("--in", in_path, "cover image (png/jpeg)")->required();
  embed->add_option("--key-id", key_id, "signing key")->required();
  embed->add_option("--out", out_path, "output image (.png)")->required();

  // verify
  auto* verify = app.add_subcommand("verify", "verify a watermarked image");
  std::string report_path;
  verify->add_option("--in", in_path, "image to verify")->required();
  verify->add_option("--key-id", key_id, "expected signer")->required();
  verify->add_option("--report", report_path, "also write the JSON report here");

  // train
  auto* train = app.add_subcommand("train", "train the embedding network");
  std::string corpus_dir, metrics_path = "train_metrics.ndjson";
  train->add_option("--corpus", corpus_dir, "training image directory")
      ->required();
  train->add_option("--metrics", metrics_path, "NDJSON metrics output");

  // make-corpus
  auto* corpus = app.add_subcommand("make-corpus",
                                    "generate synthetic cover images");
  std::string corpus_out;
  int corpus_count = 16, corpus_resolution = 256;
  std::uint64_t corpus_seed = 1;
  corpus->add_option("--dir", corpus_out, "output directory")->required();
  corpus->add_option("--count", corpus_count, "number of images");
  corpus->add_option("--resolution", corpus_resolution, "square size");
  corpus->add_option("--seed", corpus_seed, "generator seed");

  // attack
  auto* attack = app.add_subcommand("attack", "run the forgery suite");
  std::string kinds = "all", substitute_ckpt, detector_ckpt,
              attack_out = "attack_out";
  int trials = 20;
  attack->add_option("--corpus", corpus_dir, "attack corpus directory")
      ->required();
  attack->add_option("--key-id", key_id, "legitimate key under test")
      ->required();
  attack->add_option("--kinds", kinds,
                     "all or comma list: replay,residual_mixup,blend_mixup,"
                     "pgd,weighted_mixup,substitute_inn");
  attack->add_option("--trials", trials, "trials per attack kind");
  attack->add_option("--substitute", substitute_ckpt,
                     "adversary substitute checkpoint");
  attack->add_option("--detector", detector_ckpt,
                     "strawman detector file for pgd (trained + saved there "
                     "when absent)");
  attack->add_option("--out", attack_out, "report/forgery output directory");

  // bench
  auto* bench = app.add_subcommand("bench", "quality/robustness benchmark");
  std::string bench_out = "bench_out";
  bench->add_option("--corpus", corpus_dir, "benchmark corpus directory")
      ->required();
  bench->add_option("--key-id", key_id, "signing key")->required();
  bench->add_option("--out", bench_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, std::string>> sets;
  for (const std::string& kv : set_args) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n",
                   kv.c_str());
      return 1;
    }
    sets.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!checkpoint.empty()) sets.emplace_back("paths.checkpoint", checkpoint);
  if (!registry.empty()) sets.emplace_back("paths.registry", registry);
  if (!keys_dir.empty()) sets.emplace_back("paths.keys_dir", keys_dir);
  if (!out_dir.empty()) sets.emplace_back("paths.out_dir", out_dir);

  ToolkitHandle handle;
  if (int rc = make_toolkit(config_path, sets, handle); rc != 0) return rc;

  if (keygen->parsed()) {
    if (ms_keygen(handle.tk, key_id.c_str(), owner.c_str()) != 0)
      return die("keygen");
    std::printf("generated key '%s' (owner: %s)\n", key_id.c_str(),
                owner.c_str());
    return 0;
  }

  if (embed->parsed()) {
    OwnedString report;
    if (ms_embed(handle.tk, in_path.c_str(), key_id.c_str(), out_path.c_str(),
                 &report.s) != 0)
      return die("embed");
    std::printf("%s\n", report.s);
    return 0;
  }

  if (verify->parsed()) {
    OwnedString report;
    if (ms_verify(handle.tk, in_path.c_str(), key_id.c_str(), &report.s) != 0)
      return die("verify");
    std::printf("%s\n", report.s);
    if (!report_path.empty()) {
      std::FILE* f = std::fopen(report_path.c_str(), "w");
      if (!f) {
        std::fprintf(stderr, "error: cannot write %s\n", report_path.c_str());
        return 1;
      }
      std::fprintf(f, "%s\n", report.s);
      std::fclose(f);
    }
    return 0;
  }

  if (train->parsed()) {
    if (ms_train(handle.tk, corpus_dir.c_str(), metrics_path.c_str()) != 0)
      return die("train");
    std::printf("training complete; metrics at %s\n", metrics_path.c_str());
    return 0;
  }

  if (corpus->parsed()) {
    if (ms_make_corpus(handle.tk, corpus_out.c_str(), corpus_count,
                       corpus_resolution, corpus_seed) != 0)
      return die("make-corpus");
    std::printf("wrote %d covers to %s\n", corpus_count, corpus_out.c_str());
    return 0;
  }

  if (attack->parsed()) {
    OwnedString report;
    if (ms_attack(handle.tk, corpus_dir.c_str(), key_id.c_str(), kinds.c_str(),
                  trials, substitute_ckpt.c_str(), detector_ckpt.c_str(),
                  attack_out.c_str(), &report.s) != 0)
      return die("attack");
    std::printf("%s\n", report.s);
    return 0;
  }

  if (bench->parsed()) {
    OwnedString table;
    if (ms_bench(handle.tk, corpus_dir.c_str(), key_id.c_str(),
                 bench_out.c_str(), &table.s) != 0)
      return die("bench");
    std::printf("%s", table.s);
    return 0;
  }

  return 1;
}
