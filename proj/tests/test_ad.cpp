#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lsf/ad.hpp"
#include "lsf/rng.hpp"

using lsf::Rng;
using lsf::RngKey;
using lsf::test::check_gradients;
using lsf::test::DMat;
namespace ad = lsf::ad;
using AVar = ad::Var<double>;
using ATape = ad::Tape<double>;

namespace {

DMat random_mat(Eigen::Index n, Eigen::Index m, uint64_t seed, double lo = -1,
                double hi = 1) {
  Rng rng(RngKey{}.fold(seed));
  DMat x(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = rng.uniform(lo, hi);
  return x;
}

// Reduce any matrix-valued output to a scalar with fixed random weights so
// every output entry influences the root.
AVar weighted_sum(ATape& t, AVar y, uint64_t seed = 999) {
  DMat w = random_mat(y.rows(), y.cols(), seed);
  AVar wv = t.input(w, false);
  return ad::sum_all(ad::mul(y, wv));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("rng determinism and stream independence") {
  Rng a(RngKey{}.fold(42));
  Rng b(RngKey{}.fold(42));
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(RngKey{}.fold(42).fold("other"));
  bool all_same = true;
  Rng a2(RngKey{}.fold(42));
  for (int i = 0; i < 10; ++i) all_same = all_same && (a2.next_u64() == c.next_u64());
  CHECK_FALSE(all_same);
  Rng d(RngKey{}.fold(7));
  double mean = 0;
  int n = 20000;
  for (int i = 0; i < n; ++i) mean += d.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
}

TEST_CASE("elementwise binary ops") {
  auto a = random_mat(3, 4, 1);
  auto b = random_mat(3, 4, 2, 0.5, 2.0);
  for (auto op : {0, 1, 2, 3}) {
    auto rep = check_gradients(
        [op](ATape& t, std::vector<AVar>& v) {
          AVar y;
          switch (op) {
            case 0: y = ad::add(v[0], v[1]); break;
            case 1: y = ad::sub(v[0], v[1]); break;
            case 2: y = ad::mul(v[0], v[1]); break;
            default: y = ad::div(v[0], v[1]); break;
          }
          return weighted_sum(t, y);
        },
        {a, b});
    INFO("op ", op, " ", rep.where);
    CHECK(rep.ok(kTol));
  }
}

TEST_CASE("scale, add_const, neg") {
  auto a = random_mat(2, 5, 3);
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(
            t, ad::neg(ad::add_const(ad::scale(v[0], 2.5), -0.7)));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("transpose") {
  auto a = random_mat(3, 5, 9);
  {
    ATape t;
    CHECK(ad::transpose(t.input(a)).val() == DMat(a.transpose()));
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::transpose(v[0]));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("reshape") {
  auto a = random_mat(4, 6, 91);
  {
    ATape t;
    DMat y = ad::reshape(t.input(a), 3, 8).val();
    for (int f = 0; f < 24; ++f)
      CHECK(y(f / 8, f % 8) == a(f / 6, f % 6));
    CHECK_THROWS(ad::reshape(t.input(a), 5, 5));
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::reshape(v[0], 8, 3));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("matmul all transpose combinations") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      DMat A = ta ? random_mat(4, 3, 10) : random_mat(3, 4, 10);
      DMat B = tb ? random_mat(5, 4, 11) : random_mat(4, 5, 11);
      auto rep = check_gradients(
          [ta, tb](ATape& t, std::vector<AVar>& v) {
            return weighted_sum(t, ad::matmul(v[0], v[1], ta, tb));
          },
          {A, B});
      INFO("ta=", ta, " tb=", tb, " ", rep.where);
      CHECK(rep.ok(kTol));
    }
  }
}

TEST_CASE("reductions") {
  auto a = random_mat(4, 3, 20);
  for (int op = 0; op < 4; ++op) {
    auto rep = check_gradients(
        [op](ATape& t, std::vector<AVar>& v) {
          AVar y;
          switch (op) {
            case 0: y = ad::sum_all(v[0]); break;
            case 1: y = ad::mean_all(v[0]); break;
            case 2: y = ad::rowsum(v[0]); break;
            default: y = ad::colmean(ad::colsum(v[0])); break;
          }
          return weighted_sum(t, y);
        },
        {a});
    INFO("op ", op, " ", rep.where);
    CHECK(rep.ok(kTol));
  }
}

TEST_CASE("broadcast ops") {
  auto a = random_mat(4, 3, 30);
  auto r = random_mat(1, 3, 31, 0.5, 1.5);
  auto c = random_mat(4, 1, 32, 0.5, 1.5);
  auto rep1 = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::mul_rowvec(ad::add_rowvec(v[0], v[1]), v[1]));
      },
      {a, r});
  INFO(rep1.where);
  CHECK(rep1.ok(kTol));
  auto rep2 = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        auto y = ad::add_colvec(v[0], v[1]);
        y = ad::mul_colvec(y, v[1]);
        y = ad::div_colvec(y, v[1]);
        return weighted_sum(t, y);
      },
      {a, c});
  INFO(rep2.where);
  CHECK(rep2.ok(kTol));
  auto rep3 = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::broadcast_rows(v[0], 5));
      },
      {r});
  INFO(rep3.where);
  CHECK(rep3.ok(kTol));
}

TEST_CASE("unary ops") {
  // Positive inputs for log/sqrt; generic for the rest. relu/clamp use inputs
  // bounded away from their kinks.
  auto pos = random_mat(3, 3, 40, 0.3, 2.0);
  auto gen = random_mat(3, 3, 41, -2.0, 2.0);
  auto away = random_mat(3, 3, 42, 0.2, 2.0);
  DMat mixed = away;
  mixed.row(1) *= -1;

  auto check1 = [&](auto opfn, const DMat& in) {
    auto rep = check_gradients(
        [opfn](ATape& t, std::vector<AVar>& v) {
          return weighted_sum(t, opfn(v[0]));
        },
        {in});
    INFO(rep.where);
    CHECK(rep.ok(kTol));
  };
  check1([](AVar x) { return ad::exp(x); }, gen);
  check1([](AVar x) { return ad::log(x); }, pos);
  check1([](AVar x) { return ad::sqrt(x); }, pos);
  check1([](AVar x) { return ad::sin(x); }, gen);
  check1([](AVar x) { return ad::cos(x); }, gen);
  check1([](AVar x) { return ad::tanh(x); }, gen);
  check1([](AVar x) { return ad::sigmoid(x); }, gen);
  check1([](AVar x) { return ad::relu(x); }, mixed);
  check1([](AVar x) { return ad::gelu(x); }, gen);
  check1([](AVar x) { return ad::swish(x); }, gen);
  check1([](AVar x) { return ad::softplus(x); }, gen);
  check1([](AVar x) { return ad::clamp_min(x, 0.0); }, mixed);
  check1([](AVar x) { return ad::square(x); }, gen);
}

TEST_CASE("softplus extremes stay finite") {
  ATape t;
  DMat x(1, 3);
  x << -500.0, 0.0, 500.0;
  auto y = ad::softplus(t.input(x, true));
  CHECK(y.val()(0, 0) == doctest::Approx(0.0));
  CHECK(y.val()(0, 2) == doctest::Approx(500.0));
  t.backward(ad::sum_all(y));
}

TEST_CASE("concat and slicing") {
  auto a = random_mat(3, 2, 50);
  auto b = random_mat(3, 4, 51);
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        auto cc = ad::concat_cols<double>({v[0], v[1]});
        auto s = ad::slice_cols(cc, 1, 3);
        return weighted_sum(t, s);
      },
      {a, b});
  INFO(rep.where);
  CHECK(rep.ok(kTol));

  auto c = random_mat(2, 3, 52);
  auto d = random_mat(4, 3, 53);
  auto rep2 = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        auto cr = ad::concat_rows<double>({v[0], v[1]});
        auto s = ad::slice_rows(cr, 1, 4);
        return weighted_sum(t, s);
      },
      {c, d});
  INFO(rep2.where);
  CHECK(rep2.ok(kTol));
}

TEST_CASE("gather_rows with repeated indices") {
  auto a = random_mat(5, 3, 60);
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::gather_rows(v[0], {0, 2, 2, 4, 0}));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("interleave_rows values and gradients") {
  auto a = random_mat(3, 2, 61);
  auto b = random_mat(3, 2, 62);
  {
    ATape t;
    auto y = ad::interleave_rows<double>({t.input(a), t.input(b)});
    CHECK(y.val().row(0) == a.row(0));
    CHECK(y.val().row(1) == b.row(0));
    CHECK(y.val().row(4) == a.row(2));
    CHECK(y.val().row(5) == b.row(2));
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::interleave_rows<double>({v[0], v[1]}));
      },
      {a, b});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("softmax rows: values and gradients") {
  auto a = random_mat(4, 5, 70, -3, 3);
  {
    ATape t;
    auto y = ad::softmax_rows(t.input(a));
    for (int i = 0; i < 4; ++i) {
      CHECK(y.val().row(i).sum() == doctest::Approx(1.0));
      double naive = std::exp(a(i, 0)) /
                     (a.row(i).array().exp().sum());
      CHECK(y.val()(i, 0) == doctest::Approx(naive));
    }
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::softmax_rows(v[0]));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("layernorm rows") {
  auto a = random_mat(3, 6, 80, -2, 2);
  {
    ATape t;
    auto y = ad::layernorm_rows(t.input(a));
    for (int i = 0; i < 3; ++i) {
      CHECK(y.val().row(i).mean() == doctest::Approx(0.0).epsilon(1e-10));
      double var = (y.val().row(i).array() -
                    y.val().row(i).mean()).square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::layernorm_rows(v[0]));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("groupnorm") {
  auto a = random_mat(6, 8, 81, -2, 2);
  {
    ATape t;
    auto y = ad::groupnorm(t.input(a), 4);
    for (int g = 0; g < 4; ++g) {
      double mu = y.val().middleCols(g * 2, 2).mean();
      CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
    }
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::groupnorm(v[0], 4));
      },
      {a});
  INFO(rep.where);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("attention shared keys: naive forward agreement") {
  int P = 5, M = 4, d = 6, heads = 2;
  auto Q = random_mat(P, d, 90);
  auto K = random_mat(M, d, 91);
  auto V = random_mat(M, d, 92);
  ATape t;
  auto y = ad::attention(t.input(Q), t.input(K), t.input(V), heads, false);
  int dh = d / heads;
  for (int h = 0; h < heads; ++h) {
    for (int p = 0; p < P; ++p) {
      Eigen::VectorXd logits(M);
      for (int m = 0; m < M; ++m)
        logits(m) = Q.row(p).segment(h * dh, dh)
                        .dot(K.row(m).segment(h * dh, dh)) /
                    std::sqrt(double(dh));
      Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
      w /= w.sum();
      Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(dh);
      for (int m = 0; m < M; ++m) out += w(m) * V.row(m).segment(h * dh, dh);
      for (int c = 0; c < dh; ++c)
        CHECK(y.val()(p, h * dh + c) == doctest::Approx(out(c)).epsilon(1e-10));
    }
  }
}

TEST_CASE("attention gradients: shared, grouped, masked") {
  int P = 3, d = 4, heads = 2;
  auto Q = random_mat(P, d, 100);

  SUBCASE("shared") {
    auto K = random_mat(5, d, 101);
    auto V = random_mat(5, d, 102);
    auto rep = check_gradients(
        [heads](ATape& t, std::vector<AVar>& v) {
          return weighted_sum(t, ad::attention(v[0], v[1], v[2], heads, false));
        },
        {Q, K, V});
    INFO(rep.where);
    CHECK(rep.ok(kTol));
  }
  SUBCASE("grouped") {
    int G = 3;
    auto K = random_mat(P * G, d, 103);
    auto V = random_mat(P * G, d, 104);
    auto rep = check_gradients(
        [heads](ATape& t, std::vector<AVar>& v) {
          return weighted_sum(t, ad::attention(v[0], v[1], v[2], heads, true));
        },
        {Q, K, V});
    INFO(rep.where);
    CHECK(rep.ok(kTol));
  }
  SUBCASE("masked") {
    int G = 3;
    auto K = random_mat(P * G, d, 105);
    auto V = random_mat(P * G, d, 106);
    DMat mask = DMat::Zero(P, G);
    mask(0, 1) = 1;
    mask(2, 0) = 1;
    mask(2, 2) = 1;
    auto rep = check_gradients(
        [heads, mask](ATape& t, std::vector<AVar>& v) {
          return weighted_sum(
              t, ad::attention(v[0], v[1], v[2], heads, true, &mask));
        },
        {Q, K, V});
    INFO(rep.where);
    CHECK(rep.ok(kTol));
  }
  SUBCASE("fully masked row raises") {
    auto K = random_mat(4, d, 107);
    auto V = random_mat(4, d, 108);
    DMat mask = DMat::Zero(P, 4);
    mask.row(1).setOnes();
    ATape t;
    CHECK_THROWS_AS(
        ad::attention(t.input(Q), t.input(K), t.input(V), heads, false, &mask),
        lsf::NumericError);
  }
}

TEST_CASE("masked attention matches attention over the unmasked subset") {
  int d = 4, heads = 2, M = 5;
  auto Q = random_mat(1, d, 110);
  auto K = random_mat(M, d, 111);
  auto V = random_mat(M, d, 112);
  DMat mask = DMat::Zero(1, M);
  mask(0, 1) = 1;
  mask(0, 3) = 1;
  ATape t;
  auto full = ad::attention(t.input(Q), t.input(K), t.input(V), heads, false,
                            &mask);
  DMat Ks(3, d), Vs(3, d);
  Ks << K.row(0), K.row(2), K.row(4);
  Vs << V.row(0), V.row(2), V.row(4);
  auto sub = ad::attention(t.input(Q), t.input(Ks), t.input(Vs), heads, false);
  CHECK((full.val() - sub.val()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cumsum exclusive rows") {
  DMat a(2, 4);
  a << 1, 2, 3, 4, 10, 20, 30, 40;
  {
    ATape t;
    auto y = ad::cumsum_exclusive_rows(t.input(a));
    DMat want(2, 4);
    want << 0, 1, 3, 6, 0, 10, 30, 60;
    CHECK((y.val() - want).cwiseAbs().maxCoeff() == 0.0);
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::cumsum_exclusive_rows(v[0]));
      },
      {random_mat(3, 5, 120)});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

namespace {
// Direct 3x3 convolution for value cross-checking.
DMat conv3x3_naive(const DMat& x, int H, int W, const DMat& w, int stride) {
  int Cin = static_cast<int>(x.cols());
  int Cout = static_cast<int>(w.cols());
  int Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  DMat y = DMat::Zero(Ho * Wo, Cout);
  for (int yo = 0; yo < Ho; ++yo)
    for (int xo = 0; xo < Wo; ++xo)
      for (int co = 0; co < Cout; ++co) {
        double acc = 0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            int yi = yo * stride + ky - 1, xi = xo * stride + kx - 1;
            if (yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
            for (int ci = 0; ci < Cin; ++ci)
              acc += x(yi * W + xi, ci) * w((ky * 3 + kx) * Cin + ci, co);
          }
        y(yo * Wo + xo, co) = acc;
      }
  return y;
}
}  // namespace

TEST_CASE("conv3x3 values match naive, gradients check") {
  int H = 5, W = 4, Cin = 3, Cout = 2;
  auto x = random_mat(H * W, Cin, 130);
  auto w = random_mat(9 * Cin, Cout, 131);
  for (int stride : {1, 2}) {
    {
      ATape t;
      auto y = ad::conv3x3(t.input(x), H, W, t.input(w), stride);
      DMat want = conv3x3_naive(x, H, W, w, stride);
      CHECK((y.val() - want).cwiseAbs().maxCoeff() < 1e-12);
    }
    auto rep = check_gradients(
        [H, W, stride](ATape& t, std::vector<AVar>& v) {
          return weighted_sum(t, ad::conv3x3(v[0], H, W, v[1], stride));
        },
        {x, w});
    INFO("stride ", stride, " ", rep.where);
    CHECK(rep.ok(kTol));
  }
}

TEST_CASE("bilinear_resize identity and gradients") {
  int H = 4, W = 3;
  auto x = random_mat(H * W, 2, 140);
  {
    ATape t;
    auto y = ad::bilinear_resize(t.input(x), H, W, H, W);
    CHECK((y.val() - x).cwiseAbs().maxCoeff() < 1e-12);
  }
  auto rep = check_gradients(
      [H, W](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::bilinear_resize(v[0], H, W, 8, 6));
      },
      {x});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("bilinear_gather values and gradients in map and uv") {
  int H = 5, W = 5;
  auto f = random_mat(H * W, 3, 150);
  DMat uv(4, 2);
  // Interior, non-integer sample points (away from cell boundaries).
  uv << 1.3, 2.6, 3.7, 1.2, 2.2, 3.4, 0.8, 0.9;
  {
    ATape t;
    // At an exact cell center the sample equals the cell value.
    DMat center(1, 2);
    center << 2.5, 3.5;
    auto y = ad::bilinear_gather(t.input(f), H, W, t.input(center));
    CHECK((y.val().row(0) - f.row(3 * W + 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
  auto rep = check_gradients(
      [H, W](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::bilinear_gather(v[0], H, W, v[1]));
      },
      {f, uv});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("logabsdet value, gradient, and singular error") {
  auto a = random_mat(4, 4, 160);
  a += 3.0 * DMat::Identity(4, 4);
  {
    ATape t;
    auto y = ad::logabsdet(t.input(a));
    CHECK(y.val()(0, 0) ==
          doctest::Approx(std::log(std::abs(a.determinant()))).epsilon(1e-10));
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) { return ad::logabsdet(v[0]); }, {a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
  {
    ATape t;
    DMat sing = DMat::Zero(3, 3);
    sing(0, 0) = 1;
    sing(1, 1) = 1;
    CHECK_THROWS_AS(ad::logabsdet(t.input(sing)), lsf::NumericError);
  }
}

TEST_CASE("solve_right inverts right-multiplication") {
  auto a = random_mat(3, 3, 170);
  a += 2.5 * DMat::Identity(3, 3);
  auto x = random_mat(4, 3, 171);
  {
    ATape t;
    auto y = ad::solve_right(t.input(x), t.input(a));
    CHECK((y.val() * a - x).cwiseAbs().maxCoeff() < 1e-10);
  }
  auto rep = check_gradients(
      [](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::solve_right(v[0], v[1]));
      },
      {x, a});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("circular_encode layout, values, gradients") {
  DMat x(2, 2);
  x << 0.3, -0.2, 1.7, 0.05;
  int lmin = -1, lmax = 2;
  {
    ATape t;
    auto y = ad::circular_encode(t.input(x), lmin, lmax);
    int nf = lmax - lmin + 1;
    CHECK(y.cols() == 2 * 2 * nf);
    for (int c = 0; c < 2; ++c)
      for (int l = 0; l < nf; ++l) {
        double f = std::pow(2.0, lmin + l) * 3.14159265358979323846;
        CHECK(y.val()(1, c * 2 * nf + 2 * l) ==
              doctest::Approx(std::sin(f * x(1, c))).epsilon(1e-12));
        CHECK(y.val()(1, c * 2 * nf + 2 * l + 1) ==
              doctest::Approx(std::cos(f * x(1, c))).epsilon(1e-12));
      }
  }
  auto rep = check_gradients(
      [lmin, lmax](ATape& t, std::vector<AVar>& v) {
        return weighted_sum(t, ad::circular_encode(v[0], lmin, lmax));
      },
      {x});
  INFO(rep.where);
  CHECK(rep.ok(kTol));
}

TEST_CASE("reused node accumulates gradient from all uses") {
  DMat a(1, 1);
  a << 0.7;
  ATape t;
  auto x = t.input(a, true);
  auto y = ad::add(ad::mul(x, x), x);  // x^2 + x, d/dx = 2x + 1
  t.backward(ad::sum_all(y));
  CHECK(t.grad(x)(0, 0) == doctest::Approx(2 * 0.7 + 1).epsilon(1e-12));
}

TEST_CASE("gradients do not flow into non-grad inputs") {
  ATape t;
  auto x = t.input(random_mat(2, 2, 180), true);
  auto c = t.input(random_mat(2, 2, 181), false);
  t.backward(ad::sum_all(ad::mul(x, c)));
  CHECK(t.grad(x).cwiseAbs().maxCoeff() > 0);
  CHECK(t.grad(c).cwiseAbs().maxCoeff() == 0.0);
}
