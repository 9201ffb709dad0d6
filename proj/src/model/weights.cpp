#include "clens/model/weights.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace clens {

ModelWeights ModelWeights::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  ModelWeights w;
  w.config = config;
  w.token_embed = MatrixXd::Zero(config.vocab_size, d);
  w.pos_embed = MatrixXd::Zero(config.max_seq_len, d);
  w.patch_embed = MatrixXd::Zero(config.n_patch_codes, d);
  w.patch_pos = MatrixXd::Zero(std::max(config.n_patches, 1), d);
  w.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (LayerWeights& l : w.layers) {
    l.attn_gain = MatrixXd::Ones(1, d);
    l.w_q = MatrixXd::Zero(d, d);
    l.w_k = MatrixXd::Zero(d, d);
    l.w_v = MatrixXd::Zero(d, d);
    l.w_o = MatrixXd::Zero(d, d);
    l.b_o = MatrixXd::Zero(1, d);
    l.mlp_gain = MatrixXd::Ones(1, d);
    l.w_in = MatrixXd::Zero(d, config.d_mlp);
    l.b_in = MatrixXd::Zero(1, config.d_mlp);
    l.w_out = MatrixXd::Zero(config.d_mlp, d);
    l.b_out = MatrixXd::Zero(1, d);
  }
  w.final_gain = MatrixXd::Ones(1, d);
  w.unembed = MatrixXd::Zero(d, config.vocab_size);
  return w;
}

ModelWeights ModelWeights::random(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights w = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](MatrixXd& m, double stddev) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = stddev * normal(rng);
    }
  };
  // Standard deviations scale as 1/sqrt(fan_in); residual writers are damped by depth.
  const double s = config.init_scale;
  const double proj = s / std::sqrt(static_cast<double>(config.d_model));
  const double down = s / std::sqrt(static_cast<double>(config.d_mlp));
  const double residual = 1.0 / std::sqrt(2.0 * std::max(config.n_layers, 1));
  fill(w.token_embed, s);
  fill(w.pos_embed, s);
  fill(w.patch_embed, s);
  fill(w.patch_pos, s);
  for (LayerWeights& l : w.layers) {
    fill(l.w_q, proj);
    fill(l.w_k, proj);
    fill(l.w_v, proj);
    fill(l.w_o, proj * residual);
    fill(l.w_in, proj);
    fill(l.w_out, down * residual);
  }
  fill(w.unembed, proj);
  return w;
}

void ModelWeights::for_each(const std::function<void(const std::string&, MatrixXd&)>& fn) {
  fn("token_embed", token_embed);
  fn("pos_embed", pos_embed);
  fn("patch_embed", patch_embed);
  fn("patch_pos", patch_pos);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerWeights& l = layers[i];
    fn(p + "attn_gain", l.attn_gain);
    fn(p + "w_q", l.w_q);
    fn(p + "w_k", l.w_k);
    fn(p + "w_v", l.w_v);
    fn(p + "w_o", l.w_o);
    fn(p + "b_o", l.b_o);
    fn(p + "mlp_gain", l.mlp_gain);
    fn(p + "w_in", l.w_in);
    fn(p + "b_in", l.b_in);
    fn(p + "w_out", l.w_out);
    fn(p + "b_out", l.b_out);
  }
  fn("final_gain", final_gain);
  fn("unembed", unembed);
}

void ModelWeights::for_each(const std::function<void(const std::string&, const MatrixXd&)>& fn) const {
  const_cast<ModelWeights*>(this)->for_each(
      [&fn](const std::string& name, MatrixXd& m) { fn(name, static_cast<const MatrixXd&>(m)); });
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void ModelWeights::validate() const {
  config.validate();
  const ModelWeights expected = zeros(config);
  if (layers.size() != expected.layers.size()) throw std::invalid_argument("weights: layer count mismatch");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  expected.for_each([&shapes](const std::string&, const MatrixXd& m) { shapes.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  for_each([&](const std::string& name, const MatrixXd& m) {
    if (m.rows() != shapes[i].first || m.cols() != shapes[i].second) {
      throw std::invalid_argument("weights: block '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + ", expected " + std::to_string(shapes[i].first) + "x" +
                                  std::to_string(shapes[i].second));
    }
    ++i;
  });
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.config == b.config) || a.layers.size() != b.layers.size()) return false;
  std::vector<const MatrixXd*> lhs;
  a.for_each([&lhs](const std::string&, const MatrixXd& m) { lhs.push_back(&m); });
  std::size_t i = 0;
  bool same = true;
  b.for_each([&](const std::string&, const MatrixXd& m) {
    const MatrixXd& o = *lhs[i++];
    same = same && o.rows() == m.rows() && o.cols() == m.cols() && o == m;
  });
  return same;
}

}  // namespace clens
