#pragma once

#include "clens/math/tensor.hpp"
#include "clens/model/config.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace clens {

struct LayerWeights {
  MatrixXd attn_gain;  // 1 x d
  MatrixXd w_q;        // d x d
  MatrixXd w_k;
  MatrixXd w_v;
  MatrixXd w_o;        // d x d; rows [h*dh, (h+1)*dh) belong to head h
  MatrixXd b_o;        // 1 x d, shared output bias
  MatrixXd mlp_gain;   // 1 x d
  MatrixXd w_in;       // d x d_mlp
  MatrixXd b_in;       // 1 x d_mlp
  MatrixXd w_out;      // d_mlp x d
  MatrixXd b_out;      // 1 x d
};

struct ModelWeights {
  ModelConfig config;
  MatrixXd token_embed;  // |V| x d
  MatrixXd pos_embed;    // k x d, position within the text segment
  MatrixXd patch_embed;  // n_patch_codes x d
  MatrixXd patch_pos;    // P x d, one per grid cell
  std::vector<LayerWeights> layers;
  MatrixXd final_gain;   // 1 x d
  MatrixXd unembed;      // d x |V|  (W_U)

  static ModelWeights zeros(const ModelConfig& config);
  static ModelWeights random(const ModelConfig& config, std::uint64_t seed);

  // Visits every parameter in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, MatrixXd&)>& fn);
  void for_each(const std::function<void(const std::string&, const MatrixXd&)>& fn) const;

  std::size_t parameter_count() const;

  // Throws std::invalid_argument if any block disagrees with `config`.
  void validate() const;

  friend bool operator==(const ModelWeights& a, const ModelWeights& b);
};

}  // namespace clens
