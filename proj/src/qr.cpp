#include "metaseal/qr.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <string>

#include "metaseal/gf256.hpp"

namespace metaseal::qr {

namespace {

constexpr int kMinVersion = 1;
constexpr int kMaxVersion = 40;

// Standard code geometry tables, indexed by [ecc][version].
const std::int8_t kEccCodewordsPerBlock[4][41] = {
    // L
    {-1, 7, 10, 15, 20, 26, 18, 20, 24, 30, 18, 20, 24, 26, 30, 22, 24, 28,
     30, 28, 28, 28, 28, 30, 30, 26, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30,
     30, 30, 30, 30, 30},
    // M
    {-1, 10, 16, 26, 18, 24, 16, 18, 22, 22, 26, 30, 22, 22, 24, 24, 28, 28,
     26, 26, 26, 26, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28,
     28, 28, 28, 28, 28},
    // Q
    {-1, 13, 22, 18, 26, 18, 24, 18, 22, 20, 24, 28, 26, 24, 20, 30, 24, 28,
     28, 26, 30, 28, 30, 30, 30, 30, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30,
     30, 30, 30, 30, 30},
    // H
    {-1, 17, 28, 22, 16, 22, 28, 26, 26, 24, 28, 24, 28, 22, 24, 24, 30, 28,
     28, 26, 28, 30, 24, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30,
     30, 30, 30, 30, 30},
};

const std::int8_t kNumEccBlocks[4][41] = {
    // L
    {-1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 4, 4, 4, 4, 4, 6, 6, 6, 6, 7, 8, 8, 9, 9,
     10, 12, 12, 12, 13, 14, 15, 16, 17, 18, 19, 19, 20, 21, 22, 24, 25},
    // M
    {-1, 1, 1, 1, 2, 2, 4, 4, 4, 5, 5, 5, 8, 9, 9, 10, 10, 11, 13, 14, 16, 17,
     17, 18, 20, 21, 23, 25, 26, 28, 29, 31, 33, 35, 37, 38, 40, 43, 45, 47,
     49},
    // Q
    {-1, 1, 1, 2, 2, 4, 4, 6, 6, 8, 8, 8, 10, 12, 16, 12, 17, 16, 18, 21, 20,
     23, 23, 25, 27, 29, 34, 34, 35, 38, 40, 43, 45, 48, 51, 53, 56, 59, 62,
     65, 68},
    // H
    {-1, 1, 1, 2, 4, 4, 4, 5, 6, 8, 8, 11, 11, 16, 16, 18, 16, 19, 21, 25, 25,
     25, 34, 30, 32, 35, 37, 40, 42, 45, 48, 51, 54, 57, 60, 63, 66, 70, 74,
     77, 81},
};

void check_version(int version) {
  if (version < kMinVersion || version > kMaxVersion)
    throw Error("qr", "version out of range");
}

int num_raw_data_modules(int version) {
  int result = (16 * version + 128) * version + 64;
  if (version >= 2) {
    int num_align = version / 7 + 2;
    result -= (25 * num_align - 10) * num_align - 55;
    if (version >= 7) result -= 36;
  }
  return result;
}

std::vector<int> alignment_positions(int version) {
  if (version == 1) return {};
  int num_align = version / 7 + 2;
  int step = (version == 32)
                 ? 26
                 : (version * 4 + num_align * 2 + 1) / (num_align * 2 - 2) * 2;
  std::vector<int> result;
  int pos = side_length(version) - 7;
  for (int i = 0; i < num_align - 1; ++i, pos -= step)
    result.insert(result.begin(), pos);
  result.insert(result.begin(), 6);
  return result;
}

// Function patterns plus the map of reserved (non-data) modules. Format and
// version bit areas are reserved here and stamped with real values later.
struct Skeleton {
  Matrix matrix;
  std::vector<std::uint8_t> is_function;

  bool function_at(int row, int col) const {
    return is_function[static_cast<std::size_t>(row) * matrix.size + col] != 0;
  }
  void put(int row, int col, bool dark) {
    matrix.set(row, col, dark);
    is_function[static_cast<std::size_t>(row) * matrix.size + col] = 1;
  }
};

int format_bits_for(Ecc ecc, int mask) {
  static const int ecc_code[4] = {1, 0, 3, 2};  // L, M, Q, H
  int data = ecc_code[static_cast<int>(ecc)] << 3 | mask;
  int rem = data;
  for (int i = 0; i < 10; ++i) rem = (rem << 1) ^ ((rem >> 9) * 0x537);
  return ((data << 10) | rem) ^ 0x5412;
}

void place_format_bits(Skeleton& sk, int bits) {
  int size = sk.matrix.size;
  auto bit = [bits](int i) { return ((bits >> i) & 1) != 0; };
  // First copy, around the top-left finder.
  for (int i = 0; i <= 5; ++i) sk.put(i, 8, bit(i));
  sk.put(7, 8, bit(6));
  sk.put(8, 8, bit(7));
  sk.put(8, 7, bit(8));
  for (int i = 9; i <= 14; ++i) sk.put(8, 14 - i, bit(i));
  // Second copy, split between the other two finders.
  for (int i = 0; i <= 7; ++i) sk.put(8, size - 1 - i, bit(i));
  for (int i = 8; i <= 14; ++i) sk.put(size - 15 + i, 8, bit(i));
  sk.put(size - 8, 8, true);  // fixed dark module
}

Skeleton build_skeleton(int version) {
  int size = side_length(version);
  Skeleton sk;
  sk.matrix = Matrix(size);
  sk.is_function.assign(static_cast<std::size_t>(size) * size, 0);

  // Timing patterns.
  for (int i = 0; i < size; ++i) {
    sk.put(6, i, i % 2 == 0);
    sk.put(i, 6, i % 2 == 0);
  }
  // Finder patterns with their separators, clipped at the edges.
  auto draw_finder = [&](int row, int col) {
    for (int dy = -4; dy <= 4; ++dy)
      for (int dx = -4; dx <= 4; ++dx) {
        int r = row + dy, c = col + dx;
        if (r < 0 || r >= size || c < 0 || c >= size) continue;
        int dist = std::max(std::abs(dx), std::abs(dy));
        sk.put(r, c, dist != 2 && dist != 4);
      }
  };
  draw_finder(3, 3);
  draw_finder(3, size - 4);
  draw_finder(size - 4, 3);

  // Alignment patterns, skipping the three finder corners.
  std::vector<int> align = alignment_positions(version);
  int num_align = static_cast<int>(align.size());
  for (int i = 0; i < num_align; ++i)
    for (int j = 0; j < num_align; ++j) {
      if ((i == 0 && j == 0) || (i == 0 && j == num_align - 1) ||
          (i == num_align - 1 && j == 0))
        continue;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          sk.put(align[i] + dy, align[j] + dx,
                 std::max(std::abs(dx), std::abs(dy)) != 1);
    }

  // Reserve the format areas so data placement skips them.
  place_format_bits(sk, 0);

  // Version information for version 7 and up.
  if (version >= 7) {
    int rem = version;
    for (int i = 0; i < 12; ++i) rem = (rem << 1) ^ ((rem >> 11) * 0x1f25);
    long bits = static_cast<long>(version) << 12 | rem;
    for (int i = 0; i < 18; ++i) {
      bool bit = ((bits >> i) & 1) != 0;
      int a = size - 11 + i % 3;
      int b = i / 3;
      sk.put(b, a, bit);
      sk.put(a, b, bit);
    }
  }
  return sk;
}

// Visits data module coordinates in placement order.
template <typename Fn>
void for_each_data_module(const Skeleton& sk, Fn&& fn) {
  int size = sk.matrix.size;
  for (int right = size - 1; right >= 1; right -= 2) {
    if (right == 6) right = 5;
    for (int vert = 0; vert < size; ++vert) {
      for (int j = 0; j < 2; ++j) {
        int col = right - j;
        bool upward = ((right + 1) & 2) == 0;
        int row = upward ? size - 1 - vert : vert;
        if (!sk.function_at(row, col)) fn(row, col);
      }
    }
  }
}

bool mask_bit(int mask, int row, int col) {
  switch (mask) {
    case 0: return (col + row) % 2 == 0;
    case 1: return row % 2 == 0;
    case 2: return col % 3 == 0;
    case 3: return (col + row) % 3 == 0;
    case 4: return (col / 3 + row / 2) % 2 == 0;
    case 5: return col * row % 2 + col * row % 3 == 0;
    case 6: return (col * row % 2 + col * row % 3) % 2 == 0;
    case 7: return ((col + row) % 2 + col * row % 3) % 2 == 0;
    default: throw Error("qr", "mask out of range");
  }
}

void apply_mask(const Skeleton& sk, Matrix& m, int mask) {
  int size = m.size;
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col)
      if (!sk.function_at(row, col) && mask_bit(mask, row, col))
        m.set(row, col, !m.get(row, col));
}

long penalty_score(const Matrix& m) {
  constexpr int kN1 = 3, kN2 = 3, kN3 = 40, kN4 = 10;
  int size = m.size;
  long score = 0;

  auto run_penalty = [&](auto get) {
    for (int i = 0; i < size; ++i) {
      int run = 1;
      for (int j = 1; j <= size; ++j) {
        if (j < size && get(i, j) == get(i, j - 1)) {
          ++run;
        } else {
          if (run >= 5) score += kN1 + (run - 5);
          run = 1;
        }
      }
    }
  };
  run_penalty([&](int i, int j) { return m.get(i, j); });
  run_penalty([&](int i, int j) { return m.get(j, i); });

  for (int row = 0; row + 1 < size; ++row)
    for (int col = 0; col + 1 < size; ++col) {
      bool v = m.get(row, col);
      if (v == m.get(row, col + 1) && v == m.get(row + 1, col) &&
          v == m.get(row + 1, col + 1))
        score += kN2;
    }

  // Finder-like sequence with a four-module light margin on one side.
  static const bool kPat1[11] = {false, false, false, false, true, false,
                                 true,  true,  true,  false, true};
  static const bool kPat2[11] = {true,  false, true,  true,  true, false,
                                 true,  false, false, false, false};
  auto finder_penalty = [&](auto get) {
    for (int i = 0; i < size; ++i)
      for (int j = 0; j + 11 <= size; ++j) {
        bool match1 = true, match2 = true;
        for (int t = 0; t < 11; ++t) {
          bool v = get(i, j + t);
          match1 &= v == kPat1[t];
          match2 &= v == kPat2[t];
        }
        if (match1) score += kN3;
        if (match2) score += kN3;
      }
  };
  finder_penalty([&](int i, int j) { return m.get(i, j); });
  finder_penalty([&](int i, int j) { return m.get(j, i); });

  long dark = 0;
  for (std::uint8_t v : m.modules) dark += v;
  long total = static_cast<long>(size) * size;
  long k = (std::abs(dark * 20 - total * 10) + total - 1) / total - 1;
  score += k * kN4;
  return score;
}

struct BlockLayout {
  int num_blocks;
  int num_short_blocks;
  int short_total_len;  // codeword symbols in a short block
  int ecc_len;
  int short_data_len;   // short_total_len - ecc_len
};

BlockLayout block_layout(int version, Ecc ecc) {
  int e = static_cast<int>(ecc);
  BlockLayout bl{};
  bl.num_blocks = kNumEccBlocks[e][version];
  bl.ecc_len = kEccCodewordsPerBlock[e][version];
  int raw = total_codewords(version);
  bl.num_short_blocks = bl.num_blocks - raw % bl.num_blocks;
  bl.short_total_len = raw / bl.num_blocks;
  bl.short_data_len = bl.short_total_len - bl.ecc_len;
  return bl;
}

// The interleaved stream is defined over blocks normalized to a common
// length: short blocks carry one filler slot between data and parity which
// is skipped on emission. Visits (block, slot, emit_order) pairs.
template <typename Fn>
void for_each_stream_slot(const BlockLayout& bl, Fn&& fn) {
  int padded_len = bl.short_total_len + 1;
  for (int i = 0; i < padded_len; ++i)
    for (int j = 0; j < bl.num_blocks; ++j) {
      bool is_short = j < bl.num_short_blocks;
      if (is_short && i == bl.short_data_len) continue;  // filler slot
      if (!is_short || i < padded_len) fn(j, i);
    }
}

}  // namespace

const char* ecc_name(Ecc e) {
  switch (e) {
    case Ecc::L: return "L";
    case Ecc::M: return "M";
    case Ecc::Q: return "Q";
    case Ecc::H: return "H";
  }
  return "?";
}

int side_length(int version) {
  check_version(version);
  return 17 + 4 * version;
}

int total_codewords(int version) {
  check_version(version);
  return num_raw_data_modules(version) / 8;
}

int data_codewords(int version, Ecc ecc) {
  check_version(version);
  int e = static_cast<int>(ecc);
  return total_codewords(version) -
         kEccCodewordsPerBlock[e][version] * kNumEccBlocks[e][version];
}

int byte_capacity(int version, Ecc ecc) {
  // Byte-mode overhead: 4-bit mode indicator plus an 8- or 16-bit length.
  int count_bits = version <= 9 ? 8 : 16;
  int usable_bits = data_codewords(version, ecc) * 8 - 4 - count_bits;
  return usable_bits < 0 ? 0 : usable_bits / 8;
}

Ecc strongest_ecc_fitting(int version, std::size_t payload_len) {
  for (Ecc e : {Ecc::H, Ecc::Q, Ecc::M, Ecc::L}) {
    if (static_cast<int>(payload_len) <= byte_capacity(version, e)) return e;
  }
  throw Error("qr", "payload of " + std::to_string(payload_len) +
                        " bytes does not fit in version " +
                        std::to_string(version) +
                        " at any protection level");
}

std::vector<std::uint8_t> function_module_map(int version) {
  return build_skeleton(version).is_function;
}

EncodeResult encode_bytes(const Bytes& payload, int version, Ecc ecc,
                          int mask) {
  check_version(version);
  if (mask < -1 || mask > 7) throw Error("qr", "mask out of range");
  int capacity = byte_capacity(version, ecc);
  if (static_cast<int>(payload.size()) > capacity)
    throw Error("qr", "payload of " + std::to_string(payload.size()) +
                          " bytes exceeds capacity " +
                          std::to_string(capacity));

  // Byte-mode bit stream: mode, count, payload, terminator, pad pattern.
  std::vector<bool> bits;
  auto append_bits = [&bits](std::uint32_t value, int count) {
    for (int i = count - 1; i >= 0; --i)
      bits.push_back(((value >> i) & 1) != 0);
  };
  append_bits(4, 4);
  append_bits(static_cast<std::uint32_t>(payload.size()),
              version <= 9 ? 8 : 16);
  for (std::uint8_t b : payload) append_bits(b, 8);

  int data_cap_bits = data_codewords(version, ecc) * 8;
  int terminator = std::min(4, data_cap_bits - static_cast<int>(bits.size()));
  append_bits(0, terminator);
  if (bits.size() % 8 != 0)
    append_bits(0, 8 - static_cast<int>(bits.size() % 8));
  for (std::uint8_t pad = 0xec; static_cast<int>(bits.size()) < data_cap_bits;
       pad ^= 0xec ^ 0x11)
    append_bits(pad, 8);

  std::vector<std::uint8_t> data(bits.size() / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) data[i / 8] |= 0x80 >> (i % 8);

  // Split into blocks, append parity, and lay out the normalized blocks.
  BlockLayout bl = block_layout(version, ecc);
  int padded_len = bl.short_total_len + 1;
  std::vector<std::vector<std::uint8_t>> blocks(
      bl.num_blocks, std::vector<std::uint8_t>(padded_len, 0));
  std::size_t k = 0;
  for (int j = 0; j < bl.num_blocks; ++j) {
    int dlen = bl.short_data_len + (j < bl.num_short_blocks ? 0 : 1);
    std::vector<std::uint8_t> dat(data.begin() + k, data.begin() + k + dlen);
    k += dlen;
    gf256::RsCode code(dlen + bl.ecc_len, dlen);
    std::vector<std::uint8_t> cw = code.encode(dat);
    std::copy(cw.begin(), cw.begin() + dlen, blocks[j].begin());
    std::copy(cw.begin() + dlen, cw.end(),
              blocks[j].begin() + (padded_len - bl.ecc_len));
  }
  std::vector<std::uint8_t> stream;
  stream.reserve(total_codewords(version));
  for_each_stream_slot(bl, [&](int j, int i) {
    if (i < static_cast<int>(blocks[j].size())) stream.push_back(blocks[j][i]);
  });

  // Draw, choose mask, stamp final format bits.
  Skeleton sk = build_skeleton(version);
  std::size_t bit_index = 0;
  for_each_data_module(sk, [&](int row, int col) {
    bool dark = false;
    if (bit_index < stream.size() * 8)
      dark = ((stream[bit_index >> 3] >> (7 - (bit_index & 7))) & 1) != 0;
    sk.matrix.set(row, col, dark);
    ++bit_index;
  });

  int chosen = mask;
  if (chosen == -1) {
    long best = -1;
    for (int cand = 0; cand < 8; ++cand) {
      Skeleton trial = sk;
      place_format_bits(trial, format_bits_for(ecc, cand));
      apply_mask(sk, trial.matrix, cand);
      long p = penalty_score(trial.matrix);
      if (best < 0 || p < best) {
        best = p;
        chosen = cand;
      }
    }
  }
  place_format_bits(sk, format_bits_for(ecc, chosen));
  apply_mask(sk, sk.matrix, chosen);

  EncodeResult result;
  result.matrix = std::move(sk.matrix);
  result.version = version;
  result.ecc = ecc;
  result.mask = chosen;
  return result;
}

std::optional<DecodeResult> decode_matrix(const Matrix& m,
                                          std::string* failure_stage) {
  auto fail = [failure_stage](const char* stage) {
    if (failure_stage) *failure_stage = stage;
    return std::nullopt;
  };
  if (m.size < 21 || (m.size - 17) % 4 != 0) return fail("format");
  int version = (m.size - 17) / 4;
  if (version > kMaxVersion) return fail("format");
  int size = m.size;

  // Read both format-information copies and pick the closest valid word.
  auto read_copy1 = [&]() {
    int bits = 0;
    for (int i = 0; i <= 5; ++i) bits |= (m.get(i, 8) ? 1 : 0) << i;
    bits |= (m.get(7, 8) ? 1 : 0) << 6;
    bits |= (m.get(8, 8) ? 1 : 0) << 7;
    bits |= (m.get(8, 7) ? 1 : 0) << 8;
    for (int i = 9; i <= 14; ++i) bits |= (m.get(8, 14 - i) ? 1 : 0) << i;
    return bits;
  };
  auto read_copy2 = [&]() {
    int bits = 0;
    for (int i = 0; i <= 7; ++i) bits |= (m.get(8, size - 1 - i) ? 1 : 0) << i;
    for (int i = 8; i <= 14; ++i)
      bits |= (m.get(size - 15 + i, 8) ? 1 : 0) << i;
    return bits;
  };
  int observed[2] = {read_copy1(), read_copy2()};

  int best_dist = 16, best_data = -1;
  for (int data = 0; data < 32; ++data) {
    int encoded_data = data;
    int rem = data;
    for (int i = 0; i < 10; ++i) rem = (rem << 1) ^ ((rem >> 9) * 0x537);
    int encoded = ((encoded_data << 10) | rem) ^ 0x5412;
    for (int copy = 0; copy < 2; ++copy) {
      int dist = std::popcount(static_cast<unsigned>(encoded ^ observed[copy]));
      if (dist < best_dist) {
        best_dist = dist;
        best_data = data;
      }
    }
  }
  if (best_data < 0 || best_dist > 3) return fail("format");
  static const Ecc ecc_from_code[4] = {Ecc::M, Ecc::L, Ecc::H, Ecc::Q};
  Ecc ecc = ecc_from_code[(best_data >> 3) & 3];
  int mask = best_data & 7;

  // Unmask and collect the raw codeword stream.
  Skeleton sk = build_skeleton(version);
  int raw = total_codewords(version);
  std::vector<std::uint8_t> stream(raw, 0);
  std::size_t bit_index = 0;
  for_each_data_module(sk, [&](int row, int col) {
    if (bit_index < static_cast<std::size_t>(raw) * 8) {
      bool dark = m.get(row, col) ^ mask_bit(mask, row, col);
      if (dark) stream[bit_index >> 3] |= 0x80 >> (bit_index & 7);
    }
    ++bit_index;  // remainder bits beyond raw*8 are ignored
  });

  // De-interleave into normalized blocks, then correct each block.
  BlockLayout bl = block_layout(version, ecc);
  int padded_len = bl.short_total_len + 1;
  std::vector<std::vector<std::uint8_t>> blocks(
      bl.num_blocks, std::vector<std::uint8_t>(padded_len, 0));
  std::size_t pos = 0;
  for_each_stream_slot(bl, [&](int j, int i) {
    if (pos < stream.size()) blocks[j][i] = stream[pos++];
  });
  if (pos != stream.size()) return fail("format");

  std::vector<std::uint8_t> data;
  int corrected = 0;
  for (int j = 0; j < bl.num_blocks; ++j) {
    int dlen = bl.short_data_len + (j < bl.num_short_blocks ? 0 : 1);
    std::vector<std::uint8_t> cw(dlen + bl.ecc_len);
    std::copy(blocks[j].begin(), blocks[j].begin() + dlen, cw.begin());
    std::copy(blocks[j].begin() + (padded_len - bl.ecc_len), blocks[j].end(),
              cw.begin() + dlen);
    gf256::RsCode code(dlen + bl.ecc_len, dlen);
    auto fixed = code.decode(cw);
    if (!fixed) return fail("ecc");
    std::vector<std::uint8_t> reenc = code.encode(*fixed);
    for (int t = 0; t < dlen + bl.ecc_len; ++t)
      if (reenc[t] != cw[t]) ++corrected;
    data.insert(data.end(), fixed->begin(), fixed->end());
  }

  // Parse the byte-mode segment.
  std::size_t bitpos = 0;
  auto read_bits = [&](int count) -> int {
    int value = 0;
    for (int i = 0; i < count; ++i) {
      value = (value << 1) | ((data[bitpos >> 3] >> (7 - (bitpos & 7))) & 1);
      ++bitpos;
    }
    return value;
  };
  if (data.size() < 3) return fail("framing");
  int mode = read_bits(4);
  if (mode != 4) return fail("framing");
  int count = read_bits(version <= 9 ? 8 : 16);
  if (count < 0 ||
      bitpos + static_cast<std::size_t>(count) * 8 > data.size() * 8)
    return fail("framing");
  Bytes payload(count);
  for (int i = 0; i < count; ++i)
    payload[i] = static_cast<std::uint8_t>(read_bits(8));

  DecodeResult result;
  result.payload = std::move(payload);
  result.version = version;
  result.ecc = ecc;
  result.mask = mask;
  result.corrected_symbols = corrected;
  return result;
}

}  // namespace metaseal::qr
