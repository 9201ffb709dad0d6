#pragma once

#include "clens/model/weights.hpp"

#include <filesystem>
#include <iosfwd>

namespace clens {

inline constexpr const char* kCheckpointMagic = "CLENS-CKPT";
inline constexpr int kCheckpointVersion = 1;

// Layout:
//   CLENS-CKPT\n
//   version 1\n
//   config <n>\n  followed by n "key=value" lines (ModelConfig)
//   blocks <m>\n  followed by m blocks, each
//     "block <name> <rank> <dim0> ... \n" then prod(dims) little-endian f64
//     values in row-major order and a terminating "\n".
void write_checkpoint(std::ostream& out, const ModelWeights& weights);
ModelWeights read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace clens
