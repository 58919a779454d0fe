#include <gtest/gtest.h>

#include <vector>

#include "clearir/nn.hpp"
#include "helpers.hpp"

using namespace clearir;
using testing_util::gradient_rel_error;
using testing_util::random_tensor;

namespace {

using TD = Tensor<double>;

std::vector<double> random_vec(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

TD naive_conv(const TD& x, const std::vector<double>& w, const std::vector<double>& b, int cout, int k) {
  TD y(x.n(), cout, x.h(), x.w());
  const int pad = k / 2;
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) {
          double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
          for (int c = 0; c < x.c(); ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int yy = i + ky - pad, xx = j + kx - pad;
                if (yy < 0 || xx < 0 || yy >= x.h() || xx >= x.w()) continue;
                acc += w[static_cast<std::size_t>(((o * x.c() + c) * k + ky) * k + kx)] * x(n, c, yy, xx);
              }
          y(n, o, i, j) = acc;
        }
  return y;
}

double weighted_sum(const TD& t, const TD& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t.values()[i] * c.values()[i];
  return s;
}

double max_diff(const TD& a, const TD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

TD as_tensor(const std::vector<double>& v) {
  TD t(1, 1, 1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

}  // namespace

TEST(Conv2d, MatchesNaiveOracle) {
  for (int k : {1, 3}) {
    const TD x = random_tensor(1, 2, 3, 7, 9);
    const auto w = random_vec(2, static_cast<std::size_t>(4 * 3 * k * k));
    const auto b = random_vec(3, 4);
    EXPECT_LT(max_diff(nn::conv2d<double>(x, w, b, 4, k), naive_conv(x, w, b, 4, k)), 1e-12);
  }
}

TEST(Conv2d, BandedMatchesUnbanded) {
  // Wide enough that the column buffer is split into row bands.
  const TD x = random_tensor(4, 1, 64, 80, 128);
  const auto w = random_vec(5, static_cast<std::size_t>(2 * 64 * 9));
  ASSERT_LT(nn::detail::band_rows(64, 3, 80, 128), 80);
  EXPECT_LT(max_diff(nn::conv2d<double>(x, w, {}, 2, 3), naive_conv(x, w, {}, 2, 3)), 1e-10);
}

TEST(Conv2d, WeightSizeMismatch) {
  const TD x = random_tensor(1, 1, 2, 4, 4);
  EXPECT_THROW(nn::conv2d<double>(x, std::vector<double>(5), {}, 1, 3), DimensionError);
}

TEST(Conv2d, Gradients) {
  for (int k : {1, 3}) {
    const TD x = random_tensor(6, 2, 3, 5, 6);
    auto w = random_vec(7, static_cast<std::size_t>(2 * 3 * k * k));
    auto b = random_vec(8, 2);
    const TD c = random_tensor(9, 2, 2, 5, 6, -1.0, 1.0);
    const TD y = nn::conv2d<double>(x, w, b, 2, k);
    std::vector<double> dw(w.size()), db(b.size());
    const TD dx = nn::conv2d_backward<double>(x, w, 2, k, c, dw, db);
    EXPECT_LT(gradient_rel_error([&](const TD& p) { return weighted_sum(nn::conv2d<double>(p, w, b, 2, k), c); },
                                 x, dx),
              1e-6);
    EXPECT_LT(gradient_rel_error(
                  [&](const TD& p) {
                    const std::vector<double> pw(p.data(), p.data() + p.size());
                    return weighted_sum(nn::conv2d<double>(x, pw, b, 2, k), c);
                  },
                  as_tensor(w), as_tensor(dw)),
              1e-6);
    EXPECT_LT(gradient_rel_error(
                  [&](const TD& p) {
                    const std::vector<double> pb(p.data(), p.data() + p.size());
                    return weighted_sum(nn::conv2d<double>(x, w, pb, 2, k), c);
                  },
                  as_tensor(b), as_tensor(db)),
              1e-6);
    (void)y;
  }
}

TEST(ConvTranspose, MatchesScatterOracle) {
  const TD x = random_tensor(10, 2, 3, 4, 5);
  const auto w = random_vec(11, 2 * 4 * 3);
  const auto b = random_vec(12, 2);
  const TD y = nn::conv_transpose2x2<double>(x, w, b, 2);
  ASSERT_EQ(y.h(), 8);
  ASSERT_EQ(y.w(), 10);
  TD ref(2, 2, 8, 10);
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 2; ++o)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j)
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              double acc = b[static_cast<std::size_t>(o)];
              for (int c = 0; c < 3; ++c) acc += w[static_cast<std::size_t>(((o * 2 + a) * 2 + bb) * 3 + c)] * x(n, c, i, j);
              ref(n, o, 2 * i + a, 2 * j + bb) = acc;
            }
  EXPECT_LT(max_diff(y, ref), 1e-12);
}

TEST(ConvTranspose, Gradients) {
  const TD x = random_tensor(13, 2, 3, 3, 4);
  const auto w = random_vec(14, 2 * 4 * 3);
  const auto b = random_vec(15, 2);
  const TD c = random_tensor(16, 2, 2, 6, 8, -1.0, 1.0);
  std::vector<double> dw(w.size()), db(b.size());
  const TD dx = nn::conv_transpose2x2_backward<double>(x, w, 2, c, dw, db);
  EXPECT_LT(gradient_rel_error([&](const TD& p) { return weighted_sum(nn::conv_transpose2x2<double>(p, w, b, 2), c); },
                               x, dx),
            1e-6);
  EXPECT_LT(gradient_rel_error(
                [&](const TD& p) {
                  const std::vector<double> pw(p.data(), p.data() + p.size());
                  return weighted_sum(nn::conv_transpose2x2<double>(x, pw, b, 2), c);
                },
                as_tensor(w), as_tensor(dw)),
            1e-6);
  EXPECT_LT(gradient_rel_error(
                [&](const TD& p) {
                  const std::vector<double> pb(p.data(), p.data() + p.size());
                  return weighted_sum(nn::conv_transpose2x2<double>(x, w, pb, 2), c);
                },
                as_tensor(b), as_tensor(db)),
            1e-6);
}

TEST(BatchNorm, NormalizesAndTracksRunningStats) {
  const TD x = random_tensor(17, 3, 2, 4, 4, 2.0, 5.0);
  std::vector<double> gamma{1.0, 1.0}, beta{0.0, 0.0}, rm{0.0, 0.0}, rv{1.0, 1.0};
  nn::BatchNormCache<double> cache;
  const TD y = nn::batchnorm_train<double>(x, gamma, beta, rm, rv, 0.1, 1e-5, cache);
  for (int ch = 0; ch < 2; ++ch) {
    double s = 0.0, s2 = 0.0, xs = 0.0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 16; ++i) {
        s += y.channel(n, ch)[i];
        s2 += y.channel(n, ch)[i] * y.channel(n, ch)[i];
        xs += x.channel(n, ch)[i];
      }
    EXPECT_NEAR(s / 48, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 48, 1.0, 1e-3);
    EXPECT_NEAR(rm[static_cast<std::size_t>(ch)], 0.1 * xs / 48, 1e-12);
  }
}

TEST(BatchNorm, Gradients) {
  const TD x = random_tensor(18, 2, 2, 3, 3, -1.0, 2.0);
  const std::vector<double> gamma{1.3, 0.7}, beta{0.2, -0.1};
  const TD c = random_tensor(19, 2, 2, 3, 3, -1.0, 1.0);
  auto fwd = [&](const TD& p, const std::vector<double>& g, const std::vector<double>& b) {
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    nn::BatchNormCache<double> cache;
    return weighted_sum(nn::batchnorm_train<double>(p, g, b, rm, rv, 0.1, 1e-5, cache), c);
  };
  std::vector<double> rm(2, 0.0), rv(2, 1.0), dg(2), dbeta(2);
  nn::BatchNormCache<double> cache;
  nn::batchnorm_train<double>(x, gamma, beta, rm, rv, 0.1, 1e-5, cache);
  const TD dx = nn::batchnorm_backward<double>(c, gamma, cache, dg, dbeta);
  EXPECT_LT(gradient_rel_error([&](const TD& p) { return fwd(p, gamma, beta); }, x, dx), 1e-5);
  EXPECT_LT(gradient_rel_error(
                [&](const TD& p) { return fwd(x, std::vector<double>(p.data(), p.data() + 2), beta); },
                as_tensor(gamma), as_tensor(dg)),
            1e-6);
  EXPECT_LT(gradient_rel_error(
                [&](const TD& p) { return fwd(x, gamma, std::vector<double>(p.data(), p.data() + 2)); },
                as_tensor(beta), as_tensor(dbeta)),
            1e-6);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  const TD x = random_tensor(20, 1, 1, 2, 2);
  const std::vector<double> gamma{2.0}, beta{0.5}, rm{0.25}, rv{4.0};
  const TD y = nn::batchnorm_eval<double>(x, gamma, beta, rm, rv, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.values()[i], 2.0 * (x.values()[i] - 0.25) / 2.0 + 0.5, 1e-12);
}

TEST(MaxPool, ForwardBackward) {
  TD x(1, 1, 2, 4);
  const double vals[] = {1, 5, 2, 0, 3, 4, 9, 1};
  std::copy(vals, vals + 8, x.data());
  std::vector<std::uint8_t> arg;
  const TD y = nn::maxpool2(x, arg);
  EXPECT_EQ(y(0, 0, 0, 0), 5);
  EXPECT_EQ(y(0, 0, 0, 1), 9);
  TD g(1, 1, 1, 2);
  g(0, 0, 0, 0) = 1.5;
  g(0, 0, 0, 1) = -2.0;
  const TD dx = nn::maxpool2_backward(g, arg);
  EXPECT_EQ(dx(0, 0, 0, 1), 1.5);
  EXPECT_EQ(dx(0, 0, 1, 2), -2.0);
  EXPECT_EQ(dx(0, 0, 0, 0), 0.0);
  TD odd(1, 1, 3, 4);
  EXPECT_THROW(nn::maxpool2(odd, arg), DimensionError);
}

TEST(Channels, ConcatSplitRoundTrip) {
  const TD a = random_tensor(21, 2, 2, 3, 3), b = random_tensor(22, 2, 3, 3, 3);
  const TD ab = nn::concat_channels(a, b);
  ASSERT_EQ(ab.c(), 5);
  TD ra, rb;
  nn::split_channels(ab, 2, ra, rb);
  EXPECT_TRUE(ra == a);
  EXPECT_TRUE(rb == b);
  EXPECT_THROW(nn::concat_channels(a, random_tensor(1, 2, 1, 4, 3)), DimensionError);
}

TEST(Activations, ReluAndSigmoid) {
  TD x(1, 1, 1, 3);
  x(0, 0, 0, 0) = -1;
  x(0, 0, 0, 1) = 0;
  x(0, 0, 0, 2) = 2;
  TD r = x;
  nn::relu_inplace(r);
  EXPECT_EQ(r(0, 0, 0, 0), 0);
  EXPECT_EQ(r(0, 0, 0, 2), 2);
  TD g(1, 1, 1, 3, 1.0);
  nn::relu_backward_inplace(r, g);
  EXPECT_EQ(g(0, 0, 0, 0), 0);
  EXPECT_EQ(g(0, 0, 0, 1), 0);
  EXPECT_EQ(g(0, 0, 0, 2), 1);
  nn::sigmoid_inplace(x);
  EXPECT_NEAR(x(0, 0, 0, 1), 0.5, 1e-15);
}
