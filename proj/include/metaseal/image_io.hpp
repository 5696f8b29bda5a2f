#pragma once

#include <string>

#include "metaseal/tensor.hpp"

namespace metaseal {

// Decodes PNG or JPEG by sniffing the file signature. Grayscale is expanded
// to three channels; alpha is dropped.
Image load_image(const std::string& path);

void save_png(const std::string& path, const Image& img);

// quality in [1, 100], mapped straight onto the libjpeg scale.
void save_jpeg(const std::string& path, const Image& img, int quality);

// In-memory encode/decode through the real JPEG codec, used by robustness
// evaluation so results reflect actual file round trips.
Image jpeg_roundtrip(const Image& img, int quality);

bool has_extension(const std::string& path, const char* ext);
bool is_lossless_raster_path(const std::string& path);

}  // namespace metaseal
