#include <doctest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"
#include "tracktention/error.hpp"
#include "tracktention/ops.hpp"
#include "tracktention/parallel.hpp"
#include "tracktention/rng.hpp"
#include "tracktention/ten1.hpp"

using namespace tracktention;
using tt_test::bitwise_equal;
using tt_test::max_abs_diff;

namespace {

// Independent reference: plain triple loop in long double.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a(i, p)) * b(p, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

}  // namespace

TEST_CASE("tensor construction enforces extents") {
  CHECK_THROWS_AS(Tensor<float>(Shape{}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), DimensionError);
  const Tensor<float> t({2, 3, 4}, 1.5f);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t(1, 2, 3) == 1.5f);
  CHECK_THROWS_AS(t.dim(3), DimensionError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
  CHECK(t.reshaped({6, 4}).shape() == Shape{6, 4});
}

TEST_CASE("matmul hand cases") {
  Rng rng(1);
  const Tensor<double> x = rng_normal<double>(rng, {3, 3});
  CHECK(matmul(Tensor<double>::identity(3), x) == x);

  const auto a = Tensor<double>::from_rows({{1, 2}, {3, 4}});
  const auto b = Tensor<double>::from_rows({{0}, {1}});
  CHECK(matmul(a, b) == Tensor<double>::from_rows({{2}, {4}}));

  CHECK_THROWS_AS(matmul(a, Tensor<double>({3, 1})), DimensionError);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = rng_normal<double>(rng, {8, 8});
    const auto b = rng_normal<double>(rng, {8, 8});
    CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-6);
  }
  const auto a = rng_normal<double>(rng, {5, 7});
  const auto b = rng_normal<double>(rng, {7, 3});
  CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
  const auto af = a.cast<float>(), bf = b.cast<float>();
  CHECK(max_abs_diff(matmul(af, bf).cast<double>(), matmul_oracle(a, b)) < 1e-5);
}

TEST_CASE("matmul is associative on 4x4 chains") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = rng_normal<float>(rng, {4, 4});
    const auto b = rng_normal<float>(rng, {4, 4});
    const auto c = rng_normal<float>(rng, {4, 4});
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-5);
  }
}

TEST_CASE("transpose and linear") {
  const auto a = Tensor<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(transpose(a) == Tensor<double>::from_rows({{1, 4}, {2, 5}, {3, 6}}));
  Rng rng(4);
  const auto x = rng_normal<double>(rng, {2, 3, 4});
  const auto w = rng_normal<double>(rng, {4, 5});
  const auto y = linear(x, w);
  CHECK(y.shape() == Shape{2, 3, 5});
  CHECK(max_abs_diff(y.reshaped({6, 5}), matmul_oracle(x.reshaped({6, 4}), w)) < 1e-12);
  CHECK_THROWS_AS(linear(x, Tensor<double>({3, 5})), DimensionError);
}

TEST_CASE("softmax examples") {
  const auto zeros = softmax_rows(Tensor<double>({1, 4}));
  for (std::size_t j = 0; j < 4; ++j) CHECK(zeros(0, j) == doctest::Approx(0.25).epsilon(1e-15));

  const auto two = softmax_rows(Tensor<double>::from_rows({{0, std::log(3.0)}}));
  CHECK(two(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(two(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  const auto spike = softmax_rows(Tensor<float>::from_rows({{0, 1e4f, 0, 0}}));
  CHECK(std::abs(spike(0, 1) - 1.0f) < 1e-6);
  CHECK(spike(0, 0) < 1e-6);

  const double inf = std::numeric_limits<double>::infinity();
  const auto masked = softmax_rows(Tensor<double>::from_rows({{-inf, 0.0}}));
  CHECK(masked(0, 0) == 0.0);
  CHECK(masked(0, 1) == 1.0);
}

TEST_CASE("softmax rejects non-finite input") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax_rows(Tensor<double>::from_rows({{0, nan}})), NumericError);
  CHECK_THROWS_AS(softmax_rows(Tensor<double>::from_rows({{0, inf}})), NumericError);
  CHECK_THROWS_AS(softmax_rows(Tensor<double>::from_rows({{-inf, -inf}})), NumericError);
}

TEST_CASE("softmax rows sum to one for random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = rng_normal<float>(rng, {7, 13}, 10.0);
    const auto s = softmax_rows(x);
    for (std::size_t i = 0; i < 7; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 13; ++j) {
        CHECK(s(i, j) >= 0);
        sum += s(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer norm examples") {
  const Tensor<double> ones({1}, 1.0), zero({1}, 0.0);
  const auto constant = layer_norm(Tensor<double>({1, 5}, 3.0), Tensor<double>({5}, 1.0),
                                   Tensor<double>({5}, 0.0), 1e-5);
  for (double v : constant.data()) CHECK(v == 0.0);

  const auto pm = layer_norm(Tensor<double>::from_rows({{1, -1}}), Tensor<double>({2}, 1.0),
                             Tensor<double>({2}, 0.0), 1e-12);
  CHECK(pm(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pm(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

  Rng rng(6);
  const auto x = rng_normal<double>(rng, {1, 16}, 3.0);
  const auto y = layer_norm(x, Tensor<double>({16}, 1.0), Tensor<double>({16}, 0.0), 1e-5);
  double mean = 0, var = 0;
  for (double v : y.data()) mean += v;
  mean /= 16;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  var /= 16;
  CHECK(std::abs(mean) <= 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-4);

  // gain and bias apply after normalization
  const auto g = rng_normal<double>(rng, {16});
  const auto b = rng_normal<double>(rng, {16});
  const auto z = layer_norm(x, g, b, 1e-5);
  for (std::size_t c = 0; c < 16; ++c) CHECK(z(0, c) == doctest::Approx(y(0, c) * g[c] + b[c]).epsilon(1e-12));

  CHECK_THROWS_AS(layer_norm(x, Tensor<double>({15}, 1.0), Tensor<double>({16}, 0.0), 1e-5), DimensionError);
}

TEST_CASE("gelu uses the erf form") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(gelu(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
  for (double z : {-3.0, -0.7, 0.2, 2.5}) CHECK(gelu(z) - gelu(-z) == doctest::Approx(z).epsilon(1e-14));
}

TEST_CASE("rng determinism and statistics") {
  Rng a(42), b(42), c(43);
  CHECK(bitwise_equal(rng_normal<float>(a, {10, 10}), rng_normal<float>(b, {10, 10})));
  Rng a2(42);
  CHECK(!(rng_normal<float>(a2, {10, 10}) == rng_normal<float>(c, {10, 10})));

  Rng s(7);
  const Rng s1 = s.stream(1), s2 = s.stream(2), s1b = s.stream(1);
  Rng x = s1, y = s2, z = s1b;
  CHECK(x.next_u64() == z.next_u64());
  CHECK(x.next_u64() != y.next_u64());

  Rng u(9);
  const auto uni = rng_uniform<double>(u, {100000});
  double mean = 0;
  for (double v : uni.data()) {
    CHECK_FALSE((v < 0 || v >= 1));
    mean += v;
  }
  CHECK(std::abs(mean / 1e5 - 0.5) < 0.01);

  const auto uf = rng_uniform<float>(u, {100000});
  for (float v : uf.data()) CHECK_FALSE((v < 0 || v >= 1));

  Rng n(10);
  const auto nor = rng_normal<double>(n, {100000}, 1.0);
  double m = 0, sq = 0;
  for (double v : nor.data()) m += v;
  m /= 1e5;
  for (double v : nor.data()) sq += (v - m) * (v - m);
  CHECK(std::abs(m) < 0.02);
  CHECK(std::abs(std::sqrt(sq / 1e5) - 1.0) < 0.02);
}

TEST_CASE("kernels are pure and thread-count independent") {
  Rng rng(11);
  const auto a = rng_normal<float>(rng, {33, 17});
  const auto b = rng_normal<float>(rng, {17, 29});
  set_num_threads(1);
  const auto c1 = matmul(a, b);
  const auto s1 = softmax_rows(c1);
  CHECK(bitwise_equal(c1, matmul(a, b)));
  set_num_threads(4);
  CHECK(bitwise_equal(c1, matmul(a, b)));
  CHECK(bitwise_equal(s1, softmax_rows(c1)));
  set_num_threads(1);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  set_num_threads(3);
  std::vector<int> hits(100, 0);
  parallel_for(100, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw NumericError("boom");
                  }),
                  NumericError);
  set_num_threads(1);
}

TEST_CASE("TEN1 round trip") {
  Rng rng(12);
  const auto f = rng_normal<float>(rng, {2, 3, 4});
  const auto d = rng_normal<double>(rng, {5});
  CHECK(bitwise_equal(decode_ten1<float>(encode_ten1(f)), f));
  CHECK(bitwise_equal(decode_ten1<double>(encode_ten1(d)), d));
  CHECK(ten1_dtype(encode_ten1(f)) == Ten1Dtype::f32);
  CHECK(ten1_dtype(encode_ten1(d)) == Ten1Dtype::f64);
  // stored f32 widens exactly
  CHECK(decode_ten1<double>(encode_ten1(f)) == f.cast<double>());

  tt_test::ScratchDir dir("ten1");
  write_ten1(dir / "x.ten1", f);
  CHECK(bitwise_equal(read_ten1<float>(dir / "x.ten1"), f));

  // header layout
  const auto bytes = encode_ten1(Tensor<float>({2, 1}, 1.0f));
  REQUIRE(bytes.size() == 4 + 2 + 16 + 8);
  CHECK(static_cast<char>(bytes[0]) == 'T');
  CHECK(static_cast<int>(bytes[4]) == 0);
  CHECK(static_cast<int>(bytes[5]) == 2);
  CHECK(static_cast<int>(bytes[6]) == 2);  // little-endian extent
  CHECK(static_cast<int>(bytes[13]) == 0);
}

TEST_CASE("TEN1 malformed inputs raise ParseError with offsets") {
  const auto good = encode_ten1(Tensor<float>({2, 2}, 0.5f));
  auto expect_offset = [](std::vector<std::byte> bytes, std::uint64_t offset) {
    try {
      (void)decode_ten1<float>(bytes);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(e.offset().has_value());
      CHECK(*e.offset() == offset);
    }
  };
  auto bad_magic = good;
  bad_magic[1] = std::byte{'X'};
  expect_offset(bad_magic, 0);

  auto bad_dtype = good;
  bad_dtype[4] = std::byte{7};
  expect_offset(bad_dtype, 4);

  auto rank0 = good;
  rank0[5] = std::byte{0};
  expect_offset(rank0, 5);
  auto rank9 = good;
  rank9[5] = std::byte{9};
  expect_offset(rank9, 5);

  auto zero_extent = good;
  std::fill_n(zero_extent.begin() + 14, 8, std::byte{0});
  expect_offset(zero_extent, 14);

  CHECK_THROWS_AS(decode_ten1<float>(std::vector<std::byte>(good.begin(), good.end() - 1)), ParseError);
  auto extra = good;
  extra.push_back(std::byte{0});
  CHECK_THROWS_AS(decode_ten1<float>(extra), ParseError);
  expect_offset(std::vector<std::byte>(good.begin(), good.begin() + 3), 3);

  tt_test::ScratchDir dir("ten1bad");
  {
    std::ofstream out(dir / "t.ten1", std::ios::binary);
    out.write(reinterpret_cast<const char*>(good.data()), 10);
  }
  CHECK_THROWS_AS(read_ten1<float>(dir / "t.ten1"), ParseError);
  CHECK_THROWS_AS(read_ten1<float>(dir / "missing.ten1"), ParseError);
}
