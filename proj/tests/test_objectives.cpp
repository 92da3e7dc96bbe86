#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sparsehead/errors.hpp"
#include "sparsehead/models.hpp"
#include "sparsehead/objectives.hpp"
#include "sparsehead/rng.hpp"

using namespace sparsehead;
using oracles::tensor_2d;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::vector<double> r(t.cols());
    for (std::size_t j = 0; j < t.cols(); ++j) r[j] = t.at(i, j);
    rows.push_back(std::move(r));
  }
  return rows;
}

Tensor random_batch(std::size_t n_pairs, std::size_t m, Rng& rng, bool rg = false) {
  std::vector<double> v(2 * n_pairs * m);
  for (auto& x : v) x = rng.gaussian();
  return Tensor::from_data({2 * n_pairs, m}, std::move(v), rg);
}

// random orthogonal matrix via Gram-Schmidt on a gaussian matrix
Tensor random_orthogonal(std::size_t m, Rng& rng) {
  std::vector<std::vector<double>> q;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> v(m);
    for (auto& x : v) x = rng.gaussian();
    for (const auto& u : q) {
      double d = 0.0;
      for (std::size_t j = 0; j < m; ++j) d += v[j] * u[j];
      for (std::size_t j = 0; j < m; ++j) v[j] -= d * u[j];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    q.push_back(std::move(v));
  }
  std::vector<double> flat;
  for (const auto& r : q) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from_data({m, m}, std::move(flat));
}

double infonce_value(const Tensor& z, double tau) {
  Tape tape;
  ContrastiveBatch b{z, tau};
  return infonce(tape, b).value();
}

}  // namespace

TEST_CASE("infonce hand value for orthogonal pairs") {
  // pairs {(1,0),(1,0)} and {(0,1),(0,1)}, tau = 0.5:
  // each anchor contributes -log(e^2 / (e^2 + 2)), total 0.958179064887538
  Tensor z = tensor_2d(4, 2, {1, 0, 1, 0, 0, 1, 0, 1});
  const double got = infonce_value(z, 0.5);
  const double exact = 4.0 * -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(got == doctest::Approx(exact).epsilon(1e-12));
  CHECK(std::abs(got - 0.95823) < 1e-4);
}

TEST_CASE("infonce with all embeddings identical") {
  for (std::size_t n_pairs : {2, 3, 5}) {
    std::vector<double> v;
    for (std::size_t i = 0; i < 2 * n_pairs; ++i) {
      v.push_back(0.3);
      v.push_back(-0.7);
      v.push_back(0.2);
    }
    Tensor z = Tensor::from_data({2 * n_pairs, 3}, v);
    const double want = 2.0 * n_pairs * std::log(2.0 * n_pairs - 1.0);
    CHECK(infonce_value(z, 0.5) == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("infonce matches brute-force oracle on random batches") {
  Rng rng(2024);
  for (std::size_t n_pairs : {2, 4, 8}) {
    for (int rep = 0; rep < 4; ++rep) {
      Tensor z = random_batch(n_pairs, 5, rng);
      const double tau = 0.2 + 0.6 * rng.uniform();
      const double got = infonce_value(z, tau);
      const double want = oracles::brute_infonce(rows_of(z), tau);
      CHECK(std::abs(got - want) < 1e-9);
    }
  }
}

TEST_CASE("infonce gradient matches finite differences") {
  Rng rng(11);
  Tensor z0 = random_batch(3, 4, rng);
  auto f = [&](const std::vector<double>& v) {
    Tensor z = Tensor::from_data({6, 4}, v);
    return infonce_value(z, 0.5);
  };
  Tape tape;
  Tensor z = Tensor::from_data({6, 4}, z0.data(), true);
  ContrastiveBatch batch{z, 0.5};
  backward(infonce(tape, batch), tape);
  for (int k = 0; k < 12; ++k) {
    const std::size_t i = rng.integer(z.numel());
    const double fd = oracles::finite_difference(f, z0.data(), i);
    CHECK(oracles::rel_err(z.grad()[i], fd, 1e-7) < 1e-5);
  }
}

TEST_CASE("infonce invariants") {
  Rng rng(31);
  SUBCASE("upper bound") {
    for (int rep = 0; rep < 10; ++rep) {
      const std::size_t n_pairs = 2 + rng.integer(4);
      const double tau = 0.3 + rng.uniform();
      Tensor z = random_batch(n_pairs, 6, rng);
      const double bound =
          2.0 * n_pairs * std::log(2.0 * n_pairs - 1.0) + 2.0 * n_pairs * (2.0 / tau);
      CHECK(infonce_value(z, tau) <= bound);
    }
  }
  SUBCASE("decreases as positives align, all else fixed") {
    // pairs in orthogonal planes: cross-pair cosines stay zero while the
    // within-pair angle shrinks
    auto batch_at = [](double angle) {
      const double c = std::cos(angle), s = std::sin(angle);
      return tensor_2d(4, 4, {c, s, 0, 0, c, -s, 0, 0, 0, 0, c, s, 0, 0, c, -s});
    };
    double prev = infonce_value(batch_at(1.2), 0.5);
    for (double angle : {0.9, 0.6, 0.3, 0.05}) {
      const double cur = infonce_value(batch_at(angle), 0.5);
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("invariant to a global orthogonal rotation") {
    for (int rep = 0; rep < 5; ++rep) {
      Tensor z = random_batch(3, 5, rng);
      Tensor q = random_orthogonal(5, rng);
      Tape tape;
      Tensor zq = matmul(tape, z, q);
      CHECK(std::abs(infonce_value(z, 0.5) - infonce_value(zq, 0.5)) < 1e-9);
    }
  }
  SUBCASE("invariant to positive rescaling of one row") {
    Tensor z = random_batch(4, 5, rng);
    Tensor scaled = z.clone();
    for (std::size_t j = 0; j < 5; ++j) scaled.at(2, j) *= 3.0;
    CHECK(std::abs(infonce_value(z, 0.5) - infonce_value(scaled, 0.5)) < 1e-9);
  }
}

TEST_CASE("infonce rejects degenerate inputs") {
  Tape tape;
  Tensor z = tensor_2d(4, 2, {1, 0, 0, 0, 0, 1, 0, 1});
  ContrastiveBatch batch{z, 0.5};
  CHECK_THROWS_AS(infonce(tape, batch), DegenerateInputError);
  Tensor odd = tensor_2d(3, 2, {1, 0, 0, 1, 1, 1});
  ContrastiveBatch bad_rows{odd, 0.5};
  CHECK_THROWS_AS(infonce(tape, bad_rows), ContractError);
  ContrastiveBatch bad_tau{tensor_2d(4, 2, {1, 0, 1, 0, 0, 1, 0, 1}), 0.0};
  CHECK_THROWS_AS(infonce(tape, bad_tau), ConfigError);
}

TEST_CASE("l21 norm values") {
  Tape tape;
  CHECK(l21_norm(tape, Tensor::zeros({3, 4})).value() == 0.0);
  CHECK(l21_norm(tape, tensor_2d(2, 2, {3, 0, 4, 0})).value() == doctest::Approx(5.0));
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  CHECK(l21_norm(tape, eye).value() == doctest::Approx(4.0));
}

TEST_CASE("l21 norm properties") {
  Rng rng(5);
  SUBCASE("positive homogeneity") {
    for (int rep = 0; rep < 8; ++rep) {
      std::vector<double> v(12);
      for (auto& x : v) x = rng.gaussian();
      const double c = rng.uniform(-3.0, 3.0);
      Tensor w = tensor_2d(3, 4, v);
      std::vector<double> cv = v;
      for (auto& x : cv) x *= c;
      Tape tape;
      CHECK(l21_norm(tape, tensor_2d(3, 4, cv)).value() ==
            doctest::Approx(std::abs(c) * l21_norm(tape, w).value()).epsilon(1e-12));
    }
  }
  SUBCASE("equals frobenius norm for a single nonzero column") {
    Tensor w = Tensor::zeros({3, 4});
    double fro = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      w.at(i, 2) = rng.gaussian();
      fro += w.at(i, 2) * w.at(i, 2);
    }
    Tape tape;
    CHECK(l21_norm(tape, w).value() == doctest::Approx(std::sqrt(fro)).epsilon(1e-12));
  }
  SUBCASE("gradient matches finite differences away from zero columns") {
    std::vector<double> v(12);
    for (auto& x : v) x = rng.gaussian() + (x >= 0 ? 0.5 : -0.5);
    Tape tape;
    Tensor w = tensor_2d(3, 4, v, true);
    backward(l21_norm(tape, w), tape);
    auto f = [](const std::vector<double>& p) {
      Tape t;
      return l21_norm(t, oracles::tensor_2d(3, 4, p)).value();
    };
    for (std::size_t i = 0; i < 12; ++i) {
      const double fd = oracles::finite_difference(f, v, i);
      CHECK(oracles::rel_err(w.grad()[i], fd, 1e-7) < 1e-5);
    }
  }
}

TEST_CASE("column support") {
  CHECK(column_support(Tensor::zeros({3, 4}), 1e-8).empty());
  CHECK(column_support(tensor_2d(2, 2, {3, 0, 4, 0}), 1e-8) == std::vector<std::size_t>{0});
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  CHECK(column_support(eye, 1e-8).size() == 4);
}

namespace {

ModelState linear_head_model(std::size_t d, std::size_t m, std::uint64_t seed) {
  EncoderSpec e;
  e.input_dim = d;
  e.output_dim = d;
  HeadSpec h;
  h.kind = HeadKind::linear;
  h.input_dim = d;
  h.output_dim = m;
  return ModelState::init(e, h, seed);
}

}  // namespace

TEST_CASE("total loss composition") {
  ModelState model = linear_head_model(2, 2, 3);
  model.regularized_matrix().data() = {3, 0, 4, 0};

  Rng rng(77);
  std::vector<double> zv(8);
  for (auto& x : zv) x = rng.gaussian();
  Tensor z = tensor_2d(4, 2, zv);
  ContrastiveBatch batch{z, 0.5};

  SUBCASE("lambda 0 equals infonce exactly") {
    Tape t1, t2;
    SparsityConfig cfg{0.0, SparsityMode::penalty, 1e-8};
    CHECK(total_loss(t1, batch, model, cfg).value() == infonce(t2, batch).value());
  }
  SUBCASE("lambda 1 adds the l21 value") {
    Tape t1, t2;
    SparsityConfig cfg{1.0, SparsityMode::penalty, 1e-8};
    CHECK(total_loss(t1, batch, model, cfg).value() ==
          doctest::Approx(infonce(t2, batch).value() + 5.0).epsilon(1e-12));
  }
  SUBCASE("identity head with positive lambda is a config error") {
    EncoderSpec e;
    e.input_dim = 2;
    e.output_dim = 2;
    HeadSpec h;
    h.kind = HeadKind::identity;
    h.input_dim = 2;
    h.output_dim = 2;
    ModelState ident = ModelState::init(e, h, 0);
    Tape tape;
    SparsityConfig cfg{0.1, SparsityMode::penalty, 1e-8};
    CHECK_THROWS_AS(total_loss(tape, batch, ident, cfg), ConfigError);
  }
  SUBCASE("proximal mode is rejected here") {
    Tape tape;
    SparsityConfig cfg{0.1, SparsityMode::proximal, 1e-8};
    CHECK_THROWS_AS(total_loss(tape, batch, model, cfg), ConfigError);
  }
}

TEST_CASE("total loss gradient w.r.t. head matrix matches finite differences") {
  Rng rng(99);
  std::vector<double> rv(4 * 3);
  for (auto& x : rv) x = rng.gaussian();
  Tensor reps = tensor_2d(4, 3, rv);

  std::vector<double> w0(2 * 3);
  for (auto& x : w0) x = rng.gaussian() + 0.5;

  auto loss_at = [&](const std::vector<double>& wv) {
    ModelState model = linear_head_model(3, 2, 1);
    model.regularized_matrix().data() = wv;
    Tape tape;
    Tensor z = model.project(tape, reps);
    ContrastiveBatch batch{z, 0.5};
    SparsityConfig cfg{0.3, SparsityMode::penalty, 1e-8};
    return total_loss(tape, batch, model, cfg).value();
  };

  ModelState model = linear_head_model(3, 2, 1);
  model.regularized_matrix().data() = w0;
  Tape tape;
  Tensor z = model.project(tape, reps);
  ContrastiveBatch batch{z, 0.5};
  SparsityConfig cfg{0.3, SparsityMode::penalty, 1e-8};
  backward(total_loss(tape, batch, model, cfg), tape);

  const Tensor w = model.regularized_matrix();
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const double fd = oracles::finite_difference(loss_at, w0, i);
    CHECK(oracles::rel_err(w.grad()[i], fd, 1e-7) < 1e-4);
  }
}
