#include "metaseal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metaseal/common.hpp"
#include "metaseal/crypto.hpp"
#include "metaseal/pattern.hpp"

namespace metaseal::trainer {

namespace {

using inn::InnWeights;

// ---------------------------------------------------------------------------
// Differentiable JPEG tables.

constexpr int kLumaBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr int kChromaBase[64] = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// RGB -> YCbCr (BT.601 full range) linear part; offsets handled separately.
constexpr double kFwdColor[3][3] = {{0.299, 0.587, 0.114},
                                    {-0.168736, -0.331264, 0.5},
                                    {0.5, -0.418688, -0.081312}};
constexpr double kInvColor[3][3] = {{1.0, 0.0, 1.402},
                                    {1.0, -0.344136, -0.714136},
                                    {1.0, 1.772, 0.0}};

const double* dct_matrix() {
  static double c[64];
  static const bool init = [] {
    const double pi = std::acos(-1.0);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        c[i * 8 + j] = (i == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                       std::cos((2 * j + 1) * i * pi / 16.0);
    return true;
  }();
  (void)init;
  return c;
}

void scaled_quant_table(const int* base, int quality, double* out) {
  const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  for (int i = 0; i < 64; ++i) {
    int q = (base[i] * s + 50) / 100;
    out[i] = static_cast<double>(std::clamp(q, 1, 255));
  }
}

// In-place 8x8 quantized DCT round trip on one plane block at (by, bx).
void jpeg_block(std::vector<double>& plane, int w, int by, int bx,
                const double* quant) {
  const double* c = dct_matrix();
  double b[64], t[64], f[64];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      b[y * 8 + x] = plane[static_cast<size_t>(by + y) * w + bx + x] - 128.0;
  // F = C B C^T
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += c[i * 8 + k] * b[k * 8 + j];
      t[i * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += t[i * 8 + k] * c[j * 8 + k];
      const double q = quant[i * 8 + j];
      f[i * 8 + j] = std::round(acc / q) * q;
    }
  // B = C^T F C
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += c[k * 8 + i] * f[k * 8 + j];
      t[i * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += t[i * 8 + k] * c[k * 8 + j];
      plane[static_cast<size_t>(by + i) * w + bx + j] = acc + 128.0;
    }
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing.

std::string tensor_name(int block, const char* net, int layer, const char* kind) {
  std::ostringstream name;
  name << "block" << (block < 10 ? "0" : "") << block << '.' << net << ".conv"
       << layer << '.' << kind;
  return name.str();
}

struct NamedParam {
  std::string name;
  std::vector<float>* data;
};

std::vector<NamedParam> named_params(InnWeights& weights) {
  std::vector<NamedParam> out;
  for (size_t b = 0; b < weights.blocks.size(); ++b) {
    auto& block = weights.blocks[b];
    const std::pair<const char*, inn::DenseBlock<float>*> nets[] = {
        {"phi", &block.phi}, {"rho", &block.rho}, {"eta", &block.eta}};
    for (auto [net_name, net] : nets)
      for (size_t l = 0; l < net->layers.size(); ++l) {
        out.push_back({tensor_name(static_cast<int>(b), net_name,
                                   static_cast<int>(l), "weight"),
                       &net->layers[l].w});
        out.push_back({tensor_name(static_cast<int>(b), net_name,
                                   static_cast<int>(l), "bias"),
                       &net->layers[l].b});
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training helpers.

Tensor zeros_like_tensor(const Tensor& t) {
  Tensor z(t.n, t.c, t.h, t.w);
  return z;
}

double mean_sq(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.v) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(t.v.size());
}

struct ParamViews {
  std::vector<std::vector<float>*> w, g, m, v;
};

void collect(InnWeights& s, std::vector<std::vector<float>*>& into) {
  inn::for_each_param<float>(s, [&into](std::vector<float>& p) {
    into.push_back(&p);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

std::string config_hash(const TrainConfig& c) {
  nlohmann::json doc = {
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"patch_size", c.patch_size},
      {"learning_rate", c.learning_rate},
      {"lambda_emb", c.lambda_emb},
      {"lambda_rec", c.lambda_rec},
      {"seed", c.seed},
      {"block_count", c.block_count},
      {"clamp_constant", c.clamp_constant},
      {"qr_version", c.qr_version},
      {"render_size", c.render_size},
      {"pool",
       {{"p_identity", c.pool.p_identity},
        {"p_gaussian", c.pool.p_gaussian},
        {"p_jpeg", c.pool.p_jpeg},
        {"sigma_min", c.pool.sigma_min},
        {"sigma_max", c.pool.sigma_max},
        {"quality_min", c.pool.quality_min},
        {"quality_max", c.pool.quality_max}}},
  };
  const std::string text = doc.dump();
  return to_hex(crypto::sha256(Bytes(text.begin(), text.end())));
}

double combined_loss(double emb_mse, double rec_mse, double lambda_emb,
                     double lambda_rec) {
  return lambda_emb * emb_mse + lambda_rec * rec_mse;
}

void save_checkpoint(const std::string& path, const InnWeights& weights,
                     const std::string& training_config_hash) {
  // The directory enumeration only reads; for_each_param has no const flavor.
  InnWeights& mutable_weights = const_cast<InnWeights&>(weights);
  const auto params = named_params(mutable_weights);

  nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"clamp_constant", weights.clamp_constant},
      {"block_count", static_cast<int>(weights.blocks.size())},
      {"channels", weights.channels},
      {"training_config_hash", training_config_hash},
  };
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params)
    tensors.push_back({{"name", p.name}, {"count", p.data->size()}});
  header["tensors"] = std::move(tensors);
  const std::string header_text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("trainer", "cannot write checkpoint: " + tmp);
    const uint32_t header_len = static_cast<uint32_t>(header_text.size());
    unsigned char len_bytes[4] = {
        static_cast<unsigned char>(header_len & 0xFF),
        static_cast<unsigned char>((header_len >> 8) & 0xFF),
        static_cast<unsigned char>((header_len >> 16) & 0xFF),
        static_cast<unsigned char>((header_len >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(len_bytes), 4);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& p : params)
      out.write(reinterpret_cast<const char*>(p.data->data()),
                static_cast<std::streamsize>(p.data->size() * sizeof(float)));
    if (!out) throw Error("trainer", "short write on checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

InnWeights load_checkpoint(const std::string& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("trainer", "cannot open checkpoint: " + path);
  unsigned char len_bytes[4];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 4))
    throw Error("trainer", "checkpoint truncated before header length");
  const uint32_t header_len = static_cast<uint32_t>(len_bytes[0]) |
                              (static_cast<uint32_t>(len_bytes[1]) << 8) |
                              (static_cast<uint32_t>(len_bytes[2]) << 16) |
                              (static_cast<uint32_t>(len_bytes[3]) << 24);
  if (header_len == 0 || header_len > (1u << 24))
    throw Error("trainer", "checkpoint header length is implausible");
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), header_len))
    throw Error("trainer", "checkpoint truncated inside header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception&) {
    throw Error("trainer", "checkpoint header is not valid JSON");
  }
  const int version = header.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw Error("trainer", "unsupported checkpoint format version " +
                               std::to_string(version));
  const int block_count = header.at("block_count").get<int>();
  const int channels = header.at("channels").get<int>();
  const float clamp_constant = header.at("clamp_constant").get<float>();

  Rng rng(0);
  InnWeights weights =
      inn::make_weights<float>(block_count, channels, clamp_constant, rng);
  auto params = named_params(weights);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw Error("trainer", "checkpoint tensor directory does not match the architecture");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors.at(i);
    if (entry.at("name").get<std::string>() != params[i].name ||
        entry.at("count").get<size_t>() != params[i].data->size())
      throw Error("trainer", "checkpoint tensor mismatch at " + params[i].name);
    if (!in.read(reinterpret_cast<char*>(params[i].data->data()),
                 static_cast<std::streamsize>(params[i].data->size() * sizeof(float))))
      throw Error("trainer", "checkpoint truncated inside tensor " + params[i].name);
  }
  in.peek();
  if (!in.eof())
    throw Error("trainer", "checkpoint has trailing bytes after the last tensor");

  if (info) {
    info->format_version = version;
    info->clamp_constant = clamp_constant;
    info->block_count = block_count;
    info->channels = channels;
    info->training_config_hash = header.value("training_config_hash", "");
  }
  return weights;
}

std::vector<StepMetrics> parse_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("trainer", "cannot open metrics log: " + path);
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error("trainer", "metrics log holds a malformed line");
    }
    StepMetrics m;
    m.step = doc.at("step").get<int>();
    m.loss_total = doc.at("loss_total").get<double>();
    m.loss_emb = doc.at("loss_emb").get<double>();
    m.loss_rec = doc.at("loss_rec").get<double>();
    m.psnr = doc.at("psnr").get<double>();
    m.bit_acc = doc.at("bit_acc").get<double>();
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor diff_jpeg_forward(const Tensor& x, int quality) {
  if (x.c != 3) throw Error("trainer", "jpeg surrogate expects 3 channels");
  if (x.h % 16 != 0 || x.w % 16 != 0)
    throw Error("trainer", "jpeg surrogate needs dimensions divisible by 16");
  if (quality < 1 || quality > 100)
    throw Error("trainer", "jpeg quality must lie in [1, 100]");
  double luma_q[64], chroma_q[64];
  scaled_quant_table(kLumaBase, quality, luma_q);
  scaled_quant_table(kChromaBase, quality, chroma_q);

  Tensor out(x.n, 3, x.h, x.w);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  const int sh = x.h / 2, sw = x.w / 2;
  std::vector<double> ych(plane), cb(plane), cr(plane);
  std::vector<double> cb_s(static_cast<size_t>(sh) * sw),
      cr_s(static_cast<size_t>(sh) * sw);

  for (int s = 0; s < x.n; ++s) {
    const float* r = &x.v[((static_cast<size_t>(s) * 3 + 0) * plane)];
    const float* g = r + plane;
    const float* b = g + plane;
    for (size_t i = 0; i < plane; ++i) {
      const double rr = r[i] * 255.0, gg = g[i] * 255.0, bb = b[i] * 255.0;
      ych[i] = kFwdColor[0][0] * rr + kFwdColor[0][1] * gg + kFwdColor[0][2] * bb;
      cb[i] = kFwdColor[1][0] * rr + kFwdColor[1][1] * gg + kFwdColor[1][2] * bb + 128.0;
      cr[i] = kFwdColor[2][0] * rr + kFwdColor[2][1] * gg + kFwdColor[2][2] * bb + 128.0;
    }
    for (int yy = 0; yy < sh; ++yy)
      for (int xx = 0; xx < sw; ++xx) {
        const size_t p0 = static_cast<size_t>(2 * yy) * x.w + 2 * xx;
        const size_t p1 = p0 + x.w;
        cb_s[static_cast<size_t>(yy) * sw + xx] =
            0.25 * (cb[p0] + cb[p0 + 1] + cb[p1] + cb[p1 + 1]);
        cr_s[static_cast<size_t>(yy) * sw + xx] =
            0.25 * (cr[p0] + cr[p0 + 1] + cr[p1] + cr[p1 + 1]);
      }
    for (int by = 0; by < x.h; by += 8)
      for (int bx = 0; bx < x.w; bx += 8) jpeg_block(ych, x.w, by, bx, luma_q);
    for (int by = 0; by < sh; by += 8)
      for (int bx = 0; bx < sw; bx += 8) {
        jpeg_block(cb_s, sw, by, bx, chroma_q);
        jpeg_block(cr_s, sw, by, bx, chroma_q);
      }
    float* ro = &out.v[((static_cast<size_t>(s) * 3 + 0) * plane)];
    float* go = ro + plane;
    float* bo = go + plane;
    for (int yy = 0; yy < x.h; ++yy)
      for (int xx = 0; xx < x.w; ++xx) {
        const size_t i = static_cast<size_t>(yy) * x.w + xx;
        const size_t si = static_cast<size_t>(yy / 2) * sw + xx / 2;
        const double yv = ych[i];
        const double cbv = cb_s[si] - 128.0;
        const double crv = cr_s[si] - 128.0;
        ro[i] = clamp01(static_cast<float>(
            (kInvColor[0][0] * yv + kInvColor[0][1] * cbv + kInvColor[0][2] * crv) / 255.0));
        go[i] = clamp01(static_cast<float>(
            (kInvColor[1][0] * yv + kInvColor[1][1] * cbv + kInvColor[1][2] * crv) / 255.0));
        bo[i] = clamp01(static_cast<float>(
            (kInvColor[2][0] * yv + kInvColor[2][1] * cbv + kInvColor[2][2] * crv) / 255.0));
      }
  }
  return out;
}

Tensor diff_jpeg_backward(const Tensor& grad_out) {
  if (grad_out.c != 3) throw Error("trainer", "jpeg surrogate expects 3 channels");
  if (grad_out.h % 2 != 0 || grad_out.w % 2 != 0)
    throw Error("trainer", "jpeg surrogate gradient needs even dimensions");
  Tensor grad_in(grad_out.n, 3, grad_out.h, grad_out.w);
  const size_t plane = static_cast<size_t>(grad_out.h) * grad_out.w;
  std::vector<double> gy(plane), gcb(plane), gcr(plane);
  for (int s = 0; s < grad_out.n; ++s) {
    const float* gr = &grad_out.v[(static_cast<size_t>(s) * 3 + 0) * plane];
    const float* gg = gr + plane;
    const float* gb = gg + plane;
    // Adjoint of the output color transform: columns of kInvColor.
    for (size_t i = 0; i < plane; ++i) {
      gy[i] = kInvColor[0][0] * gr[i] + kInvColor[1][0] * gg[i] + kInvColor[2][0] * gb[i];
      gcb[i] = kInvColor[0][1] * gr[i] + kInvColor[1][1] * gg[i] + kInvColor[2][1] * gb[i];
      gcr[i] = kInvColor[0][2] * gr[i] + kInvColor[1][2] * gg[i] + kInvColor[2][2] * gb[i];
    }
    // Chroma subsample/upsample pair collapses to a 2x2 block average.
    for (int yy = 0; yy < grad_out.h; yy += 2)
      for (int xx = 0; xx < grad_out.w; xx += 2) {
        const size_t p0 = static_cast<size_t>(yy) * grad_out.w + xx;
        const size_t p1 = p0 + grad_out.w;
        const double mb = 0.25 * (gcb[p0] + gcb[p0 + 1] + gcb[p1] + gcb[p1 + 1]);
        const double mr = 0.25 * (gcr[p0] + gcr[p0 + 1] + gcr[p1] + gcr[p1 + 1]);
        gcb[p0] = gcb[p0 + 1] = gcb[p1] = gcb[p1 + 1] = mb;
        gcr[p0] = gcr[p0 + 1] = gcr[p1] = gcr[p1 + 1] = mr;
      }
    float* dr = &grad_in.v[(static_cast<size_t>(s) * 3 + 0) * plane];
    float* dg = dr + plane;
    float* db = dg + plane;
    // Adjoint of the input color transform: columns of kFwdColor.
    for (size_t i = 0; i < plane; ++i) {
      dr[i] = static_cast<float>(kFwdColor[0][0] * gy[i] + kFwdColor[1][0] * gcb[i] +
                                 kFwdColor[2][0] * gcr[i]);
      dg[i] = static_cast<float>(kFwdColor[0][1] * gy[i] + kFwdColor[1][1] * gcb[i] +
                                 kFwdColor[2][1] * gcr[i]);
      db[i] = static_cast<float>(kFwdColor[0][2] * gy[i] + kFwdColor[1][2] * gcb[i] +
                                 kFwdColor[2][2] * gcr[i]);
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------

namespace {

enum class NoiseKind { kIdentity, kGaussian, kJpeg };

struct SampledNoise {
  NoiseKind kind = NoiseKind::kIdentity;
  double sigma = 0.0;
  int quality = 90;
};

SampledNoise sample_noise(const NoisePool& pool, Rng& rng) {
  const double total = pool.p_identity + pool.p_gaussian + pool.p_jpeg;
  if (total <= 0.0) throw Error("trainer", "noise pool probabilities sum to zero");
  const double u = rng.uniform() * total;
  SampledNoise out;
  if (u < pool.p_identity) {
    out.kind = NoiseKind::kIdentity;
  } else if (u < pool.p_identity + pool.p_gaussian) {
    out.kind = NoiseKind::kGaussian;
    out.sigma = rng.uniform(pool.sigma_min, pool.sigma_max);
  } else {
    out.kind = NoiseKind::kJpeg;
    out.quality = pool.quality_min +
                  static_cast<int>(rng.uniform_index(static_cast<uint64_t>(
                      pool.quality_max - pool.quality_min + 1)));
  }
  return out;
}

Tensor crop_to_tensor(const Image& img, int oy, int ox, int size) {
  Tensor t(1, img.c, size, size);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        t.at(0, c, y, x) = img.at(c, oy + y, ox + x);
  return t;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<Image>& corpus,
                  const std::string& checkpoint_path,
                  const std::string& metrics_path) {
  if (corpus.empty()) throw Error("trainer", "training corpus is empty");
  if (config.steps < 0) throw Error("trainer", "step count must be non-negative");
  if (config.batch_size < 1) throw Error("trainer", "batch size must be positive");
  if (config.patch_size < 16 || config.patch_size % 16 != 0)
    throw Error("trainer", "patch size must be a positive multiple of 16");
  for (const Image& img : corpus) {
    if (img.c != 3) throw Error("trainer", "corpus images must have 3 channels");
    if (img.h < config.patch_size || img.w < config.patch_size)
      throw Error("trainer", "corpus image smaller than the patch size");
  }
  const int max_digest = pattern::max_digest_bytes(config.qr_version, qr::Ecc::L);
  if (max_digest < 16)
    throw Error("trainer", "pattern version cannot carry a training payload");

  const std::string hash = config_hash(config);
  Rng rng(config.seed);
  InnWeights weights = inn::make_weights<float>(
      config.block_count, inn::kSubbandChannels, config.clamp_constant, rng);

  TrainResult result;
  if (config.steps == 0) {
    save_checkpoint(checkpoint_path, weights, hash);
    std::ofstream metrics_out(metrics_path, std::ios::trunc);
    if (!metrics_out) throw Error("trainer", "cannot write metrics log: " + metrics_path);
    result.weights = std::move(weights);
    return result;
  }

  InnWeights grads = inn::zero_like(weights);
  InnWeights adam_m = inn::zero_like(weights);
  InnWeights adam_v = inn::zero_like(weights);
  ParamViews views;
  collect(weights, views.w);
  collect(grads, views.g);
  collect(adam_m, views.m);
  collect(adam_v, views.v);

  std::ofstream metrics_out(metrics_path, std::ios::trunc);
  if (!metrics_out) throw Error("trainer", "cannot write metrics log: " + metrics_path);

  InnWeights last_good = weights;
  const int p = config.patch_size;
  const size_t patch_numel = static_cast<size_t>(3) * p * p;
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::vector<inn::BlockCache<float>> caches_fwd, caches_inv;
  for (int step = 1; step <= config.steps; ++step) {
    for (auto* gptr : views.g) std::fill(gptr->begin(), gptr->end(), 0.0f);
    double emb_mse_sum = 0.0, rec_mse_sum = 0.0, psnr_sum = 0.0, bit_sum = 0.0;

    try {
    for (int item = 0; item < config.batch_size; ++item) {
      // Cover patch.
      const Image& src = corpus[rng.uniform_index(corpus.size())];
      const int oy = static_cast<int>(rng.uniform_index(
          static_cast<uint64_t>(src.h - p + 1)));
      const int ox = static_cast<int>(rng.uniform_index(
          static_cast<uint64_t>(src.w - p + 1)));
      Tensor cover = crop_to_tensor(src, oy, ox, p);

      // Fresh payload: random digest bytes plus a random pseudo-signature.
      const int digest_len =
          16 + static_cast<int>(rng.uniform_index(
                   static_cast<uint64_t>(max_digest - 16 + 1)));
      Bytes digest(static_cast<size_t>(digest_len));
      for (auto& byte : digest)
        byte = static_cast<uint8_t>(rng.uniform_index(256));
      Bytes pseudo_sig(pattern::kSignatureLength);
      for (auto& byte : pseudo_sig)
        byte = static_cast<uint8_t>(rng.uniform_index(256));
      pattern::VisualPattern pat =
          pattern::encode_pattern(digest, pseudo_sig, config.qr_version);
      Image rendered =
          pattern::render_pattern(pat, config.render_size, config.render_size);
      const int sy = static_cast<int>(rng.uniform_index(
          static_cast<uint64_t>(rendered.h - p + 1)));
      const int sx = static_cast<int>(rng.uniform_index(
          static_cast<uint64_t>(rendered.w - p + 1)));
      Tensor secret = crop_to_tensor(rendered, sy, sx, p);

      // Embed.
      Tensor I = inn::dwt_forward(cover);
      Tensor V = inn::dwt_forward(secret);
      inn::forward_stack(weights, I, V, &caches_fwd);
      Tensor wm = inn::dwt_inverse(I);

      Tensor emb_diff = wm;
      for (size_t i = 0; i < emb_diff.v.size(); ++i) emb_diff.v[i] -= cover.v[i];
      const double emb_mse = mean_sq(emb_diff);

      // Distort. Clipping uses a straight-through gradient.
      Tensor noisy = wm;
      for (float& val : noisy.v) val = clamp01(val);
      double mse_clamped = 0.0;
      for (size_t i = 0; i < noisy.v.size(); ++i) {
        const double d = static_cast<double>(noisy.v[i]) - cover.v[i];
        mse_clamped += d * d;
      }
      mse_clamped /= static_cast<double>(patch_numel);
      const SampledNoise noise = sample_noise(config.pool, rng);
      if (noise.kind == NoiseKind::kGaussian) {
        for (float& val : noisy.v)
          val = clamp01(static_cast<float>(val + noise.sigma * rng.gaussian()));
      } else if (noise.kind == NoiseKind::kJpeg) {
        noisy = diff_jpeg_forward(noisy, noise.quality);
      }

      // Extract with a zero secret-branch sample.
      Tensor I2 = inn::dwt_forward(noisy);
      Tensor V2(I2.n, I2.c, I2.h, I2.w);
      inn::inverse_stack(weights, I2, V2, &caches_inv);
      Tensor rec = inn::dwt_inverse(V2);

      Tensor rec_diff = rec;
      for (size_t i = 0; i < rec_diff.v.size(); ++i) rec_diff.v[i] -= secret.v[i];
      const double rec_mse = mean_sq(rec_diff);

      const double loss = combined_loss(emb_mse, rec_mse, config.lambda_emb,
                                        config.lambda_rec);
      if (!std::isfinite(loss)) throw Error("trainer", "loss is not finite");

      // Backward: recovery branch through the inverse stack.
      Tensor d_rec = std::move(rec_diff);
      const float rec_scale = static_cast<float>(
          2.0 * config.lambda_rec / static_cast<double>(d_rec.v.size()));
      for (float& val : d_rec.v) val *= rec_scale;
      Tensor dV_out = inn::dwt_forward(d_rec);
      Tensor dI_out = zeros_like_tensor(dV_out);
      inn::inverse_stack_backward(weights, caches_inv, dI_out, dV_out, grads);
      Tensor d_noisy = inn::dwt_inverse(dI_out);

      Tensor d_wm = noise.kind == NoiseKind::kJpeg ? diff_jpeg_backward(d_noisy)
                                                   : std::move(d_noisy);
      const float emb_scale = static_cast<float>(
          2.0 * config.lambda_emb / static_cast<double>(emb_diff.v.size()));
      for (size_t i = 0; i < d_wm.v.size(); ++i)
        d_wm.v[i] += emb_scale * emb_diff.v[i];

      Tensor dI_stack = inn::dwt_forward(d_wm);
      Tensor dV_stack = zeros_like_tensor(dI_stack);
      inn::forward_stack_backward(weights, caches_fwd, dI_stack, dV_stack, grads);

      emb_mse_sum += emb_mse;
      rec_mse_sum += rec_mse;
      psnr_sum += mse_clamped == 0.0
                      ? 99.0
                      : std::min(99.0, 10.0 * std::log10(1.0 / mse_clamped));
      size_t agree = 0;
      for (size_t i = 0; i < rec.v.size(); ++i)
        agree += ((rec.v[i] > 0.5f) == (secret.v[i] > 0.5f)) ? 1 : 0;
      bit_sum += static_cast<double>(agree) / static_cast<double>(rec.v.size());
    }
    } catch (const Error& e) {
      // Exploding updates surface as non-finite losses or as non-finite
      // activations deeper in the network; either way the last stable
      // weights are persisted before the abort propagates.
      save_checkpoint(checkpoint_path, last_good, hash);
      throw Error("trainer",
                  "training diverged at step " + std::to_string(step) + " (" +
                      e.what() + "); last good checkpoint saved to " +
                      checkpoint_path);
    }

    // Adam over mean gradients.
    const double inv_batch = 1.0 / config.batch_size;
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    for (size_t pi = 0; pi < views.w.size(); ++pi) {
      auto& wv = *views.w[pi];
      auto& gv = *views.g[pi];
      auto& mv = *views.m[pi];
      auto& vv = *views.v[pi];
      for (size_t i = 0; i < wv.size(); ++i) {
        const double g = gv[i] * inv_batch;
        mv[i] = static_cast<float>(beta1 * mv[i] + (1.0 - beta1) * g);
        vv[i] = static_cast<float>(beta2 * vv[i] + (1.0 - beta2) * g * g);
        const double mhat = mv[i] / bc1;
        const double vhat = vv[i] / bc2;
        wv[i] -= static_cast<float>(config.learning_rate * mhat /
                                    (std::sqrt(vhat) + adam_eps));
      }
    }

    StepMetrics m;
    m.step = step;
    m.loss_emb = emb_mse_sum / config.batch_size;
    m.loss_rec = rec_mse_sum / config.batch_size;
    m.loss_total = combined_loss(m.loss_emb, m.loss_rec, config.lambda_emb,
                                 config.lambda_rec);
    m.psnr = psnr_sum / config.batch_size;
    m.bit_acc = bit_sum / config.batch_size;
    result.last = m;
    if (step % config.log_every == 0 || step == config.steps) {
      nlohmann::json line = {{"step", m.step},
                             {"loss_total", m.loss_total},
                             {"loss_emb", m.loss_emb},
                             {"loss_rec", m.loss_rec},
                             {"psnr", m.psnr},
                             {"bit_acc", m.bit_acc}};
      metrics_out << line.dump() << '\n';
      metrics_out.flush();
    }
    if (step % config.checkpoint_every == 0 || step == config.steps) {
      save_checkpoint(checkpoint_path, weights, hash);
      last_good = weights;
    }
    result.steps_completed = step;
  }

  result.weights = std::move(weights);
  return result;
}

}  // namespace metaseal::trainer
