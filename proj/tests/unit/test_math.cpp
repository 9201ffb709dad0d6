#include "clens/math/autodiff.hpp"
#include "clens/math/functions.hpp"

#include "helpers.hpp"

using namespace clens;
using clens::test::finite_difference;
using clens::test::random_matrix;
using clens::test::relative_error;

namespace {

MatrixXd triple_loop(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out = MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

// Checks d/dx sum(R .* op(x)) against central differences.
void check_unary(const std::function<ad::Var(ad::Var)>& op, const MatrixXd& x, std::mt19937_64& rng,
                 double tol = 1e-4) {
  MatrixXd r;
  auto f = [&](const MatrixXd& input) {
    ad::Tape t;
    const ad::Var y = op(t.constant(input));
    if (r.size() == 0) r = random_matrix(y.rows(), y.cols(), rng);
    return y.value().cwiseProduct(r).sum();
  };
  f(x);
  ad::Tape t;
  const ad::Var leaf = t.leaf(x);
  t.backward(ad::sum(ad::mul_const(op(leaf), r)));
  CHECK(relative_error(leaf.grad(), finite_difference(f, x)) <= tol);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  std::mt19937_64 rng(1);
  const MatrixXd m = random_matrix(3, 4, rng);
  CHECK(matmul(MatrixXd::Identity(3, 3), m) == m);
  MatrixXd a(2, 2), b(2, 1), expected(2, 1);
  a << 1, 2, 3, 4;
  b << 0, 1;
  expected << 2, 4;
  CHECK(matmul(a, b) == expected);
  CHECK_THROWS_AS(matmul(a, MatrixXd::Zero(3, 1)), std::invalid_argument);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  std::mt19937_64 rng(2);
  const MatrixXd a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
  CHECK(test::max_abs_diff(matmul(a, b), triple_loop(a, b)) <= 1e-12);
}

TEST_CASE("matmul associativity against the oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng() % 6), k = static_cast<Eigen::Index>(1 + rng() % 6),
               m = static_cast<Eigen::Index>(1 + rng() % 6), p = static_cast<Eigen::Index>(1 + rng() % 6);
    const MatrixXd a = random_matrix(n, k, rng), b = random_matrix(k, m, rng), c = random_matrix(m, p, rng);
    const MatrixXd oracle = triple_loop(triple_loop(a, b), c);
    CHECK(test::max_abs_diff(matmul(a, matmul(b, c)), oracle) <= 1e-10);
    CHECK(test::max_abs_diff(matmul(matmul(a, b), c), oracle) <= 1e-10);
  }
}

TEST_CASE("softmax examples") {
  MatrixXd zeros = MatrixXd::Zero(1, 3);
  const MatrixXd s = softmax_rows(zeros);
  for (int i = 0; i < 3; ++i) CHECK(s(0, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  MatrixXd big(1, 3);
  big << 1000, 0, 0;
  const MatrixXd b = softmax_rows(big);
  CHECK(b.allFinite());
  CHECK(b(0, 0) == doctest::Approx(1.0));
  CHECK(b(0, 1) < 1e-300);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd x(3, 1 + rng() % 9);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    const MatrixXd p = softmax_rows(x);
    for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax along either axis of a tensor") {
  std::mt19937_64 rng(5);
  const MatrixXd m = random_matrix(3, 4, rng);
  const Tensor<double> t = Tensor<double>::from_matrix(m);
  const MatrixXd by_col = softmax(t, 0).matrix();
  const MatrixXd by_row = softmax(t, 1).matrix();
  CHECK((by_col.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK((by_row.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(softmax(t, 2), std::invalid_argument);
}

TEST_CASE("tensor layout and shape invariant") {
  MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Tensor<double> t = Tensor<double>::from_matrix(m);
  CHECK(t.shape() == Shape{2, 3});
  CHECK(t.data()(1) == 2.0);  // row-major
  CHECK(t.matrix() == m);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, VectorXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>({4}).matrix(), std::invalid_argument);
}

TEST_CASE("layer norm gives zero mean and unit variance at unit gain") {
  std::mt19937_64 rng(6);
  const MatrixXd x = random_matrix(5, 16, rng, 3.0);
  const MatrixXd y = layer_norm_rows(x, MatrixXd::Ones(1, 16));
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    CHECK(std::abs(y.row(r).mean()) <= 1e-12);
    CHECK(y.row(r).squaredNorm() / 16.0 == doctest::Approx(1.0).epsilon(1e-5));
  }
  MatrixXd gain = MatrixXd::Constant(1, 16, 2.0);
  CHECK(test::max_abs_diff(layer_norm_rows(x, gain), 2.0 * y) <= 1e-12);
}

TEST_CASE("gelu values and derivative") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(10.0) == doctest::Approx(10.0));
  CHECK(std::abs(gelu(-10.0)) < 1e-12);
  for (double x : {-2.5, -0.3, 0.0, 0.7, 3.1}) {
    const double fd = (gelu(x + 1e-5) - gelu(x - 1e-5)) / 2e-5;
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("kl divergence") {
  VectorXd p(3), q(3);
  p << 0.5, 0.5, 0.0;
  q << 0.25, 0.25, 0.5;
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("backward of x*x at 3 is 6") {
  ad::Tape t;
  const ad::Var x = t.leaf(MatrixXd::Constant(1, 1, 3.0));
  t.backward(ad::sum(ad::mul(x, x)));
  CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("softmax gradient matches finite differences to 1e-6") {
  std::mt19937_64 rng(7);
  const MatrixXd x = random_matrix(1, 5, rng);
  auto f = [](const MatrixXd& v) { return softmax_rows(v)(0, 0); };
  ad::Tape t;
  const ad::Var leaf = t.leaf(x);
  t.backward(ad::pick(ad::softmax_rows(leaf), 0, 0));
  CHECK(relative_error(leaf.grad(), finite_difference(f, x, 1e-5)) <= 1e-6);
}

TEST_CASE("backward errors and disconnected leaves") {
  ad::Tape t;
  const ad::Var x = t.leaf(MatrixXd::Ones(2, 2));
  const ad::Var unused = t.leaf(MatrixXd::Ones(3, 1));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
  t.backward(ad::sum(x));
  CHECK(unused.grad() == MatrixXd::Zero(3, 1));
  CHECK(x.grad() == MatrixXd::Ones(2, 2));
}

TEST_CASE("backward visits each reachable node once") {
  ad::Tape t;
  const ad::Var x = t.leaf(MatrixXd::Constant(1, 1, 2.0));
  const ad::Var y = ad::mul(x, x);
  const ad::Var z = ad::add(y, y);
  t.backward(ad::sum(z));
  CHECK(t.backward_visits() == 4);
  CHECK(x.grad()(0, 0) == 8.0);
}

TEST_CASE("borrowed leaves behave like copied leaves") {
  std::mt19937_64 rng(8);
  const MatrixXd w = random_matrix(3, 3, rng);
  ad::Tape a, b;
  const ad::Var la = a.leaf(w), lb = b.borrow(w);
  a.backward(ad::sum(ad::gelu(ad::matmul(la, la))));
  b.backward(ad::sum(ad::gelu(ad::matmul(lb, lb))));
  CHECK(la.grad() == lb.grad());
  CHECK(&lb.value() == &w);
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 6; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng() % 8), m = static_cast<Eigen::Index>(2 + rng() % 8);
    const MatrixXd x = random_matrix(n, m, rng);
    const MatrixXd other = random_matrix(n, m, rng);
    const MatrixXd right = random_matrix(m, 1 + rng() % 8, rng);
    const MatrixXd row = random_matrix(1, m, rng);
    const MatrixXd gain = random_matrix(1, m, rng);

    CAPTURE(n);
    CAPTURE(m);
    check_unary([&](ad::Var v) { return ad::matmul(v, v.tape->constant(right)); }, x, rng);
    check_unary([&](ad::Var v) { return ad::matmul(v.tape->constant(right.transpose()), ad::transpose(v)); }, x, rng);
    check_unary([&](ad::Var v) { return ad::add(v, v.tape->constant(other)); }, x, rng);
    check_unary([&](ad::Var v) { return ad::sub(v.tape->constant(other), v); }, x, rng);
    check_unary([&](ad::Var v) { return ad::add_row(v, v.tape->constant(row)); }, x, rng);
    check_unary([&](ad::Var v) { return ad::add_row(v.tape->constant(other), ad::slice_rows(v, 0, 1)); }, x, rng);
    check_unary([&](ad::Var v) { return ad::scale(v, -1.7); }, x, rng);
    check_unary([&](ad::Var v) { return ad::mul(v, v); }, x, rng);
    check_unary([&](ad::Var v) { return ad::mul_const(v, other); }, x, rng);
    check_unary([&](ad::Var v) { return ad::gelu(v); }, x, rng);
    check_unary([&](ad::Var v) { return ad::layer_norm(v, v.tape->constant(gain), kLayerNormEps); }, x, rng);
    check_unary([&](ad::Var v) { return ad::layer_norm(v.tape->constant(other), ad::slice_rows(v, 0, 1), 1e-5); }, x,
                rng);
    check_unary([&](ad::Var v) { return ad::softmax_rows(v); }, x, rng);
    check_unary([&](ad::Var v) { return ad::transpose(v); }, x, rng);
    check_unary([&](ad::Var v) { return ad::slice_cols(v, 1, m - 1); }, x, rng);
    check_unary([&](ad::Var v) { return ad::slice_rows(v, n - 1, 1); }, x, rng);
    check_unary(
        [&](ad::Var v) {
          const std::vector<int> ids{0, static_cast<int>(n - 1), 0};
          return ad::gather_rows(v, ids);
        },
        x, rng);
    check_unary(
        [&](ad::Var v) {
          const std::vector<ad::Var> parts{v, ad::scale(v, 2.0), v.tape->constant(other)};
          return ad::vstack(parts);
        },
        x, rng);
    check_unary([&](ad::Var v) { return ad::pick(v, n - 1, 0); }, x, rng);
    std::vector<int> targets(static_cast<std::size_t>(n));
    for (auto& t : targets) t = static_cast<int>(rng() % m);
    if (n > 1) targets[0] = -1;
    check_unary([&](ad::Var v) { return ad::cross_entropy(v, targets); }, x, rng);
  }
}

TEST_CASE("causal attention matches finite differences with and without last-row scaling") {
  std::mt19937_64 rng(10);
  ad::AttentionLayout layout;
  layout.batch = 2;
  layout.seq_len = 4;
  layout.n_heads = 2;
  layout.n_visual = 2;
  const Eigen::Index rows = layout.batch * layout.seq_len, d = 6;
  const MatrixXd q = random_matrix(rows, d, rng), k = random_matrix(rows, d, rng), v = random_matrix(rows, d, rng);
  ad::LastRowScale scale{{1.0, 2.5}, {-1.0, 1.0}};
  for (const ad::LastRowScale* s : std::vector<const ad::LastRowScale*>{nullptr, &scale}) {
    check_unary([&](ad::Var x) { return ad::causal_attention(x, x.tape->constant(k), x.tape->constant(v), layout, s).mixed; },
                q, rng);
    check_unary([&](ad::Var x) { return ad::causal_attention(x.tape->constant(q), x, x.tape->constant(v), layout, s).mixed; },
                k, rng);
    check_unary([&](ad::Var x) { return ad::causal_attention(x.tape->constant(q), x.tape->constant(k), x, layout, s).mixed; },
                v, rng);
  }
}

TEST_CASE("causal attention probabilities are causal and normalised") {
  std::mt19937_64 rng(11);
  ad::AttentionLayout layout{1, 5, 1, 0};
  ad::Tape t;
  const auto out = ad::causal_attention(t.constant(random_matrix(5, 4, rng)), t.constant(random_matrix(5, 4, rng)),
                                        t.constant(random_matrix(5, 4, rng)), layout, nullptr, true);
  REQUIRE(out.probabilities.size() == 1);
  const MatrixXd& p = out.probabilities[0];
  for (Eigen::Index r = 0; r < 5; ++r) {
    CHECK(std::abs(p.row(r).sum() - 1.0) <= 1e-12);
    for (Eigen::Index c = r + 1; c < 5; ++c) CHECK(p(r, c) == 0.0);
  }
}
