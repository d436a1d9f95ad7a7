#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <random>

#include "mres/autodiff.hpp"

using namespace mres;
namespace ad = mres::ad;

namespace {

using MatD = ad::Mat<double>;

MatD random_mat(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  MatD m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

/// Checks d(scalar f)/d(inputs) against central finite differences for every
/// entry of every input.
void check_gradients(std::vector<MatD> inputs,
                     const std::function<ad::Var<double>(ad::Tape<double>&,
                                                         std::vector<ad::Var<double>>&)>& f,
                     double eps = 1e-5, double tol = 1e-6) {
  std::vector<MatD> grads(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    grads[i] = MatD::Zero(inputs[i].rows(), inputs[i].cols());

  {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], &grads[i]));
    auto rooted = f(tape, vars);
    REQUIRE(rooted.value().size() == 1);
    tape.backward(rooted);
  }

  auto eval = [&](const std::vector<MatD>& xs) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    auto mutable_vars = vars;
    return f(tape, mutable_vars).value()(0, 0);
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int r = 0; r < inputs[i].rows(); ++r)
      for (int c = 0; c < inputs[i].cols(); ++c) {
        auto plus = inputs;
        auto minus = inputs;
        plus[i](r, c) += eps;
        minus[i](r, c) -= eps;
        const double fd = (eval(plus) - eval(minus)) / (2 * eps);
        const double an = grads[i](r, c);
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
        CHECK(err < tol);
      }
  }
}

}  // namespace

TEST_CASE("matmul family gradients") {
  std::mt19937_64 rng(1);
  auto A = random_mat(rng, 3, 4);
  auto B = random_mat(rng, 4, 2);
  check_gradients({A, B}, [](ad::Tape<double>& t, auto& v) {
    (void)t;
    return ad::sum(ad::matmul(v[0], v[1]));
  });

  auto C = random_mat(rng, 3, 4);
  auto D = random_mat(rng, 5, 4);
  check_gradients({C, D}, [](ad::Tape<double>& t, auto& v) {
    (void)t;
    return ad::sum(ad::matmul_nt(v[0], v[1]));
  });
}

TEST_CASE("elementwise op gradients") {
  std::mt19937_64 rng(2);
  auto X = random_mat(rng, 3, 3);
  auto Y = random_mat(rng, 3, 3);
  check_gradients({X, Y}, [](ad::Tape<double>&, auto& v) {
    return ad::sum(ad::cmul(ad::add(v[0], v[1]), ad::sub(v[0], v[1])));
  });
  check_gradients({X}, [](ad::Tape<double>&, auto& v) {
    return ad::mean(ad::gelu(ad::scale(v[0], 1.7)));
  });
  check_gradients({X}, [](ad::Tape<double>&, auto& v) {
    return ad::sum(ad::sigmoid(ad::add_scalar(v[0], 0.3)));
  });
  auto P = (random_mat(rng, 2, 5).array().abs() + 0.2).matrix().eval();
  check_gradients({P}, [](ad::Tape<double>&, auto& v) {
    return ad::sum(ad::log(ad::clamp_min(v[0], 1e-12)));
  });
  check_gradients({P}, [](ad::Tape<double>&, auto& v) {
    return ad::sum(ad::reciprocal(v[0]));
  });
  check_gradients({X}, [](ad::Tape<double>&, auto& v) {
    // clamp boundary sits away from the sampled points
    return ad::sum(ad::cmul(ad::clamp_min(v[0], 0.05), v[0]));
  });
  MatD mask = (random_mat(rng, 3, 3).array() > 0).cast<double>().matrix();
  check_gradients({X}, [mask](ad::Tape<double>&, auto& v) {
    return ad::sum(ad::cmul_const(v[0], mask));
  });
}

TEST_CASE("shape op gradients") {
  std::mt19937_64 rng(3);
  auto A = random_mat(rng, 4, 3);
  auto B = random_mat(rng, 2, 3);
  check_gradients({A, B}, [](ad::Tape<double>&, auto& v) {
    auto cat = ad::concat_rows(v[0], v[1]);
    return ad::sum(ad::cmul(cat, cat));
  });
  check_gradients({A}, [](ad::Tape<double>&, auto& v) {
    auto mid = ad::rows(v[0], 1, 2);
    return ad::sum(ad::cmul(mid, mid));
  });
  check_gradients({A}, [](ad::Tape<double>&, auto& v) {
    auto right = ad::cols(v[0], 1, 2);
    return ad::sum(ad::cmul(right, right));
  });
  check_gradients({A, B}, [](ad::Tape<double>&, auto& v) {
    auto cat = ad::concat_cols(std::vector<ad::Var<double>>{ad::transpose(v[0]),
                                                            ad::transpose(ad::cmul(v[1], v[1]))});
    return ad::sum(ad::cmul(cat, cat));
  });
  check_gradients({A}, [](ad::Tape<double>&, auto& v) {
    auto r = ad::reshape_rowmajor(v[0], 2, 6);
    return ad::sum(ad::cmul(r, r));
  });
}

TEST_CASE("row gather and gating gradients") {
  std::mt19937_64 rng(4);
  auto T = random_mat(rng, 6, 3);
  const std::vector<int> idx{0, 2, 2, 5};
  check_gradients({T}, [idx](ad::Tape<double>&, auto& v) {
    auto g = ad::gather_rows(v[0], idx);
    return ad::sum(ad::cmul(g, g));
  });

  auto V = random_mat(rng, 4, 3);
  auto a = random_mat(rng, 4, 1);
  check_gradients({V, a}, [](ad::Tape<double>&, auto& v) {
    auto s = ad::scale_rows(v[0], v[1]);
    return ad::sum(ad::cmul(s, s));
  });

  auto X = random_mat(rng, 4, 3);
  auto b = random_mat(rng, 1, 3);
  check_gradients({X, b}, [](ad::Tape<double>&, auto& v) {
    auto s = ad::add_rowvec(v[0], v[1]);
    return ad::sum(ad::cmul(s, s));
  });
}

TEST_CASE("softmax and layer norm gradients") {
  std::mt19937_64 rng(5);
  auto X = random_mat(rng, 4, 5);
  check_gradients({X}, [](ad::Tape<double>&, auto& v) {
    auto y = ad::softmax_rows(v[0]);
    return ad::sum(ad::cmul(y, y));
  });

  Eigen::Matrix<double, 1, Eigen::Dynamic> mask(5);
  mask << 0, 0, 0, -1e9, -1e9;
  check_gradients({X}, [mask](ad::Tape<double>&, auto& v) {
    auto y = ad::softmax_rows(v[0], &mask);
    return ad::sum(ad::cmul(y, y));
  });

  auto G = random_mat(rng, 1, 5, 0.5);
  G.array() += 1.0;
  auto Bv = random_mat(rng, 1, 5, 0.5);
  check_gradients({X, G, Bv}, [](ad::Tape<double>&, auto& v) {
    auto y = ad::layer_norm_rows(v[0], v[1], v[2]);
    return ad::sum(ad::cmul(y, y));
  });
}

TEST_CASE("softmax rows are stochastic, also under masking") {
  std::mt19937_64 rng(6);
  ad::Tape<double> tape;
  auto x = tape.constant(random_mat(rng, 7, 9, 3.0));
  Eigen::Matrix<double, 1, Eigen::Dynamic> mask(9);
  mask.setZero();
  mask.rightCols(4).setConstant(-1e9);
  auto y = ad::softmax_rows(x, &mask);
  for (int r = 0; r < 7; ++r) {
    CHECK(y.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (int c = 5; c < 9; ++c) CHECK(y.value()(r, c) < 1e-30);  // masked keys get no weight
  }
}

TEST_CASE("upsample gradients and parameter sinks") {
  std::mt19937_64 rng(7);
  auto X = random_mat(rng, 3, 3);
  check_gradients({X}, [](ad::Tape<double>&, auto& v) {
    auto up = ad::upsample_bilinear(v[0], 7, 5);
    return ad::sum(ad::cmul(up, up));
  });

  // gradients accumulate across backward passes through the same sink
  MatD value = random_mat(rng, 2, 2);
  MatD sink = MatD::Zero(2, 2);
  for (int pass = 0; pass < 2; ++pass) {
    ad::Tape<double> tape;
    auto v = tape.leaf(value, &sink);
    tape.backward(ad::sum(v));
  }
  CHECK((sink.array() == 2.0).all());
}
