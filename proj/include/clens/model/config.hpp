#pragma once

#include <map>
#include <string>

namespace clens {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_mlp = 256;
  int vocab_size = 0;       // text vocabulary |V|
  int max_seq_len = 32;     // k
  int n_patches = 16;       // P
  int n_patch_codes = 0;    // patch-object vocabulary size
  double init_scale = 1.0;

  int head_dim() const { return d_model / n_heads; }
  int total_heads() const { return n_layers * n_heads; }

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace clens
