#include <doctest.h>

#include "compinfer/tensor.hpp"

using namespace compinfer;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape and indexing round-trip") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.nd == 3);
  double c = 0.0;
  for (long i = 0; i < 2; ++i)
    for (long j = 0; j < 3; ++j)
      for (long k = 0; k < 4; ++k) t(i, j, k) = c++;
  CHECK(t(1, 2, 3) == doctest::Approx(23.0));
  CHECK(t.v[23] == doctest::Approx(23.0));
  CHECK(t(0, 1, 0) == doctest::Approx(4.0));
  CHECK(t.shape_str() == "(2,3,4)");
}

TEST_CASE("rank limits enforced") {
  CHECK_THROWS_AS(Tensor(std::vector<long>{}), shape_error);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), shape_error);
  CHECK_THROWS_AS(Tensor({0, 2}), shape_error);
  CHECK_THROWS_AS(Tensor({2, -1}), shape_error);
}

TEST_CASE("reshape preserves data, rejects bad sizes") {
  Tensor t({2, 6});
  for (long i = 0; i < 12; ++i) t.v[i] = static_cast<double>(i);
  Tensor r = t.reshaped({3, 4});
  CHECK(r(2, 3) == doctest::Approx(11.0));
  CHECK_THROWS_AS(t.reshaped({5, 3}), shape_error);
}

TEST_CASE("eigen views write through") {
  Tensor t({2, 2}, 0.0);
  t.mat(2, 2) << 1.0, 2.0, 3.0, 4.0;
  CHECK(t(1, 0) == doctest::Approx(3.0));
  Tensor b({2, 2, 2}, 0.0);
  b.slab(1, 2, 2) << 5.0, 6.0, 7.0, 8.0;
  CHECK(b(1, 0, 1) == doctest::Approx(6.0));
  CHECK(b(0, 0, 0) == doctest::Approx(0.0));
}

TEST_SUITE_END();
