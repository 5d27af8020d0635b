#pragma once

#include <filesystem>

#include "mtkd/encoder.hpp"

namespace mtkd {

// Checkpoint directory layout:
//   checkpoint.json   {"format": "mtkd-encoder", "version": 1, "config": {...},
//                      "layers": [{"file": "layer_0.bin", "rows": R, "cols": C}, ...]}
//   layer_<i>.bin     R*C weights (row-major, out x in) then R biases,
//                     each an IEEE-754 binary64 in little-endian byte order.
void save_checkpoint(const EncoderParams& params, const std::filesystem::path& dir);
EncoderParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace mtkd
