#pragma once

#include "clens/model/transformer.hpp"
#include "clens/world/dataset.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace clens::test {

inline ModelConfig tiny_config(int layers = 2, int heads = 2, int d = 8) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.d_mlp = 2 * d;
  c.vocab_size = 11;
  c.max_seq_len = 12;
  c.n_patches = 4;
  c.n_patch_codes = 6;
  return c;
}

inline ModelWeights tiny_model(std::uint64_t seed = 3, int layers = 2, int heads = 2, int d = 8) {
  return ModelWeights::random(tiny_config(layers, heads, d), seed);
}

inline TokenSequence random_sequence(const ModelConfig& c, std::mt19937_64& rng, int n_text, bool image = true) {
  TokenSequence s;
  if (image) {
    for (int i = 0; i < c.n_patches; ++i) s.visual.push_back(static_cast<int>(rng() % c.n_patch_codes));
  }
  for (int i = 0; i < n_text; ++i) s.text.push_back(static_cast<int>(rng() % c.vocab_size));
  return s;
}

inline MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Central differences of f at x, one entry at a time.
inline MatrixXd finite_difference(const std::function<double(const MatrixXd&)>& f, MatrixXd x, double h = 1e-5) {
  MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-8});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double max_abs_diff(const MatrixXd& a, const MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Untrained model over a small fact world with labelled candidates.
struct ConflictFixture {
  FactWorld world;
  ModelWeights weights;
  std::vector<ConflictExample> examples;
};

inline ConflictFixture conflict_fixture(int layers, int heads, int n, std::uint64_t seed = 1) {
  WorldConfig wc;
  wc.n_subjects = 8;
  wc.n_attributes = 6;
  ConflictFixture f{FactWorld::generate(wc), {}, {}};
  ModelConfig base = tiny_config(layers, heads, 8);
  base.max_seq_len = 24;
  f.weights = ModelWeights::random(f.world.model_config(base), seed);
  f.examples = make_candidates(f.world, n, seed);
  for (auto& ex : f.examples) {
    ex.t_fact = ex.s_fact[0];
    ex.t_cofa = ex.s_cofa[0];
  }
  return f;
}

}  // namespace clens::test
