#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mlhg/matrix.hpp"
#include "mlhg/rng.hpp"

using mlhg::Matrix;
using mlhg::Rng;

TEST_CASE("matmul against hand computation") {
  Matrix a(2, 3);
  a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
  a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
  Matrix b(3, 2);
  b(0, 0) = 7; b(0, 1) = 8;
  b(1, 0) = 9; b(1, 1) = 10;
  b(2, 0) = 11; b(2, 1) = 12;

  const Matrix c = mlhg::matmul(a, b);
  CHECK(c(0, 0) == 58);
  CHECK(c(0, 1) == 64);
  CHECK(c(1, 0) == 139);
  CHECK(c(1, 1) == 154);

  const Matrix atb = mlhg::matmul_at_b(a, a);  // 3x3 gram
  CHECK(atb(0, 0) == 17);
  CHECK(atb(2, 2) == 45);

  const Matrix abt = mlhg::matmul_a_bt(a, a);  // 2x2 gram
  CHECK(abt(0, 0) == 14);
  CHECK(abt(0, 1) == 32);
}

TEST_CASE("matmul shape errors") {
  Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_AS(mlhg::matmul(a, b), std::invalid_argument);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const long r = u.range(3, 9);
    CHECK(r >= 3);
    CHECK(r <= 9);
  }
}

TEST_CASE("rng gaussian moments") {
  Rng rng(123);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.gaussian(0.0, 0.1);
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 0.01) < 0.002);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v(20);
  for (int i = 0; i < 20; ++i) v[static_cast<std::size_t>(i)] = i;
  auto w = v;
  Rng r1(5), r2(5);
  r1.shuffle(v);
  r2.shuffle(w);
  CHECK(v == w);
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 20; ++i) CHECK(v[static_cast<std::size_t>(i)] == i);
}
