#pragma once

#include <filesystem>
#include <string>

#include "sgprompt/encoder.hpp"

namespace sgprompt {

// Text checkpoint of EncoderParams:
//
//   sgprompt-encoder v1
//   input_dim <n>
//   hidden_dim <n>
//   layers <L>
//   tensor <layer> <w1|b1|w2|b2> <rows> <cols>
//   <one row per line, values as C99 hexadecimal floats>
//   ...
//   end
//
// Hex floats make the round trip exact and the bytes a pure function of the
// parameter values.
std::string serialize_encoder(const EncoderParams& p);
EncoderParams deserialize_encoder(const std::string& text);

void save_encoder(const std::filesystem::path& path, const EncoderParams& p);
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace sgprompt
