#include "clens/lens/lens.hpp"
#include "clens/math/functions.hpp"
#include "clens/util/csv.hpp"

#include "helpers.hpp"

#include <set>
#include <sstream>

using namespace clens;

namespace {

using Fixture = test::ConflictFixture;
Fixture fixture(int layers, int heads, int n, std::uint64_t seed = 1) {
  return test::conflict_fixture(layers, heads, n, seed);
}

// One attention and one MLP block with a chosen number of fact wins.
LensAnalysis synthetic(int n, int attention_wins, int mlp_wins) {
  LensAnalysis a;
  a.config = test::tiny_config(1, 1);
  a.traces.resize(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) {
    a.records.push_back({{ComponentKind::residual, 0, -1}, e, 0, 0});
    a.records.push_back({{ComponentKind::residual, 1, -1}, e, 0, 0});
    a.records.push_back({{ComponentKind::attention, 0, -1}, e, e < attention_wins ? 1.0 : 0.0, 0.5});
    a.records.push_back({{ComponentKind::mlp, 0, -1}, e, e < mlp_wins ? 1.0 : 0.0, 0.5});
    a.records.push_back({{ComponentKind::head, 0, 0}, e, 0, 0});
  }
  return a;
}

}  // namespace

TEST_CASE("final residual lens reproduces the model logits") {
  const Fixture f = fixture(3, 2, 20);
  for (const ConflictExample& ex : f.examples) {
    const ForwardTrace t = forward(f.weights, ex.prompt);
    const VectorXd lens = lens_project(f.weights, t, {ComponentKind::residual, 3, -1});
    CHECK((lens - t.final_logits()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("attention lens matches a manual recomposition in a one-layer model") {
  const Fixture f = fixture(1, 2, 5);
  const LayerWeights& lw = f.weights.layers[0];
  const int dh = f.weights.config.head_dim();
  for (const ConflictExample& ex : f.examples) {
    const ForwardTrace t = forward(f.weights, ex.prompt);
    const MatrixXd v = layer_norm_rows(t.residual[0], lw.attn_gain) * lw.w_v;
    VectorXd a = lw.b_o.transpose();
    for (int h = 0; h < 2; ++h) {
      const MatrixXd& probs = t.attention[0][static_cast<std::size_t>(h)];
      const MatrixXd mixed = probs.bottomRows(1) * v.middleCols(h * dh, dh);
      a += (mixed * lw.w_o.middleRows(h * dh, dh)).transpose();
    }
    const VectorXd expected = (layer_norm_rows(a.transpose(), f.weights.final_gain) * f.weights.unembed).transpose();
    CHECK((lens_project(f.weights, t, {ComponentKind::attention, 0, -1}) - expected).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("lens without the final norm is a plain unembedding") {
  const Fixture f = fixture(2, 2, 1);
  const ForwardTrace t = forward(f.weights, f.examples[0].prompt);
  const VectorXd raw = lens_project(f.weights, t, {ComponentKind::mlp, 1, -1}, LensOptions{false});
  const VectorXd expected = (t.mlp_out[1].bottomRows(1) * f.weights.unembed).transpose();
  CHECK((raw - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("out-of-range components are rejected") {
  const Fixture f = fixture(2, 2, 1);
  const ForwardTrace t = forward(f.weights, f.examples[0].prompt);
  CHECK_THROWS_AS(lens_project(f.weights, t, {ComponentKind::residual, 3, -1}), std::out_of_range);
  CHECK_THROWS_AS(lens_project(f.weights, t, {ComponentKind::attention, 2, -1}), std::out_of_range);
  CHECK_THROWS_AS(lens_project(f.weights, t, {ComponentKind::head, 0, 2}), std::out_of_range);
  CHECK_THROWS_AS(lens_project(f.weights, t, {ComponentKind::mlp, -1, -1}), std::out_of_range);
}

TEST_CASE("one record per component and example") {
  const Fixture f = fixture(2, 4, 7);
  const LensAnalysis a = analyze(f.weights, f.examples);
  const std::size_t per_example = 3 + 2 * (2 + 4);
  CHECK(a.records.size() == 7 * per_example);
  CHECK(a.traces.size() == 7);
  for (std::size_t e = 0; e < 7; ++e) {
    for (std::size_t c = 0; c < per_example; ++c) CHECK(a.records[e * per_example + c].example_id == f.examples[e].id);
  }
}

TEST_CASE("block preference extremes") {
  CHECK(block_preference_profile(synthetic(10, 10, 5))[0].attention == 0.5);
  CHECK(block_preference_profile(synthetic(10, 10, 5))[0].mlp == 0.0);
  CHECK(block_preference_profile(synthetic(10, 0, 5))[0].attention == -0.5);
  LensRecord tie{{ComponentKind::head, 0, 0}, 0, 1.0, 1.0};
  CHECK(!tie.fact_wins());
}

TEST_CASE("preference strength is near zero on shuffled labels") {
  Fixture f = fixture(2, 2, 256, 4);
  std::mt19937_64 rng(9);
  for (auto& ex : f.examples) {
    if (rng() % 2) std::swap(ex.t_fact, ex.t_cofa);
  }
  const LensAnalysis a = analyze(f.weights, f.examples);
  double mean = 0.0;
  const auto profile = block_preference_profile(a);
  for (const BlockPreference& b : profile) {
    CHECK(std::abs(b.attention) <= 0.15);
    CHECK(std::abs(b.mlp) <= 0.15);
    mean += b.attention + b.mlp;
  }
  CHECK(std::abs(mean / (2.0 * static_cast<double>(profile.size()))) <= 0.05);
  const MatrixXd acc = head_accuracy(a);
  CHECK(acc.minCoeff() >= 0.0);
  CHECK(acc.maxCoeff() <= 1.0);
}

TEST_CASE("head ranking") {
  MatrixXd acc(2, 3);
  acc << 0.5, 0.9, 0.1,
         0.9, 0.5, 0.1;
  const HeadRanking r = rank_heads(acc, 2);
  CHECK(r.fact_heads == std::vector<HeadId>{{0, 1}, {1, 0}});
  CHECK(r.cofa_heads == std::vector<HeadId>{{0, 2}, {1, 2}});
  CHECK(r.mean_accuracy(r.fact_heads) == doctest::Approx(0.9));
  CHECK(r.preference({0, 2}) == doctest::Approx(-0.4));

  const HeadRanking ties = rank_heads(MatrixXd::Constant(2, 2, 0.5), 1);
  CHECK(ties.fact_heads == std::vector<HeadId>{{0, 0}});
  CHECK(ties.cofa_heads == std::vector<HeadId>{{0, 1}});

  CHECK(rank_heads(acc, 0).fact_heads.empty());
  CHECK(rank_heads(acc, 0).cofa_heads.empty());
  CHECK_THROWS_AS(rank_heads(acc, 4), std::invalid_argument);
  CHECK_THROWS_AS(rank_heads(acc, -1), std::invalid_argument);
}

TEST_CASE("ranked sets are disjoint") {
  const Fixture f = fixture(2, 4, 30, 2);
  const HeadRanking r = rank_heads(f.weights, f.examples, 4);
  CHECK(r.fact_heads.size() == 4);
  CHECK(r.cofa_heads.size() == 4);
  CHECK(r.mean_accuracy(r.fact_heads) >= r.mean_accuracy(r.cofa_heads));
  for (const HeadId& h : r.fact_heads) {
    CHECK(std::find(r.cofa_heads.begin(), r.cofa_heads.end(), h) == r.cofa_heads.end());
  }
  const HeadRanking flat = rank_heads(MatrixXd::Constant(2, 4, 0.25), 4);
  std::set<HeadId> all(flat.fact_heads.begin(), flat.fact_heads.end());
  all.insert(flat.cofa_heads.begin(), flat.cofa_heads.end());
  CHECK(all.size() == 8);
}

TEST_CASE("head ranking is invariant to dataset order") {
  Fixture f = fixture(2, 4, 40, 3);
  const HeadRanking a = rank_heads(f.weights, f.examples, 2);
  std::mt19937_64 rng(1);
  std::shuffle(f.examples.begin(), f.examples.end(), rng);
  const HeadRanking b = rank_heads(f.weights, f.examples, 2);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.fact_heads == b.fact_heads);
  CHECK(a.cofa_heads == b.cofa_heads);
}

TEST_CASE("image attention fraction") {
  const Fixture f = fixture(2, 2, 12);
  std::vector<ForwardTrace> traces;
  for (const auto& ex : f.examples) traces.push_back(forward(f.weights, ex.prompt));
  const auto heads = all_heads(f.weights.config);
  CHECK(heads.size() == 4);

  // Direct summation oracle.
  double total = 0.0;
  for (const ForwardTrace& t : traces) {
    for (const HeadId& h : heads) {
      const MatrixXd& a = t.attention[static_cast<std::size_t>(h.layer)][static_cast<std::size_t>(h.head)];
      for (int j = 0; j < t.n_visual; ++j) total += a(a.rows() - 1, j);
    }
  }
  const double fraction = image_attention_fraction(traces, heads);
  CHECK(fraction == doctest::Approx(total / (traces.size() * heads.size())).epsilon(1e-14));
  CHECK(fraction >= 0.0);
  CHECK(fraction <= 1.0);

  const ForwardTrace text_only = forward(f.weights, f.examples[0].text_prompt());
  CHECK(image_attention_fraction({text_only}, heads) == 0.0);
  CHECK_THROWS_AS(image_attention_fraction(traces, {}), std::invalid_argument);

  ForwardTrace uniform;
  uniform.n_visual = 4;
  uniform.attention = {{MatrixXd::Constant(10, 10, 0.1)}};
  CHECK(image_attention(uniform, {0, 0}) == doctest::Approx(4.0 / 10.0));
}

TEST_CASE("lens csv layout") {
  const Fixture f = fixture(2, 2, 6);
  std::stringstream out;
  write_lens_csv(out, analyze(f.weights, f.examples));
  std::string line;
  std::getline(out, line);
  CHECK(line == "component,layer,head,fact_acc,pref_strength,image_attn");
  int rows = 0, heads = 0;
  while (std::getline(out, line)) {
    const auto cells = split_csv_line(line);
    REQUIRE(cells.size() == 6);
    const double acc = std::stod(cells[3]), pref = std::stod(cells[4]);
    CHECK(pref == doctest::Approx(acc - 0.5));
    CHECK(pref >= -0.5);
    CHECK(pref <= 0.5);
    if (cells[0] == "head") {
      ++heads;
      CHECK(!cells[2].empty());
      CHECK(!cells[5].empty());
    } else {
      CHECK(cells[2].empty());
    }
    if (cells[0] == "residual" || cells[0] == "mlp") CHECK(cells[5].empty());
    ++rows;
  }
  CHECK(rows == 3 + 2 * 4);
  CHECK(heads == 4);
}
