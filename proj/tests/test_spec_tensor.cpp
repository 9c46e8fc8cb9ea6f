#include "support.hpp"

#include <catch_amalgamated.hpp>

using namespace difftse;
using Catch::Matchers::WithinAbs;

TEST_CASE("split_seed gives distinct reproducible streams") {
  CHECK(split_seed(1, 0) == split_seed(1, 0));
  CHECK(split_seed(1, 0) != split_seed(1, 1));
  CHECK(split_seed(1, 0) != split_seed(2, 0));
}

TEST_CASE("real_view exposes interleaved re/im pairs") {
  SpecTensor s(2, 1);
  s(0, 0) = {1.0, 2.0};
  s(1, 0) = {3.0, 4.0};
  auto v = s.real_view();
  REQUIRE(v.size() == 4);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 2.0);
  CHECK(v[3] == 4.0);
}

TEST_CASE("arithmetic requires equal shapes") {
  SpecTensor a(2, 3);
  SpecTensor b(3, 2);
  CHECK_THROWS_AS(a += b, ContractError);
  CHECK_THROWS_AS(require_same_shape(a, b, "test"), ContractError);
}

TEST_CASE("stacked layout round trips") {
  const SpecTensor s = testing::random_spec(4, 5, 1.0, 3);
  const auto stacked = to_stacked(s);
  REQUIRE(stacked.rows() == 8);
  CHECK(stacked(1, 2) == s(1, 2).real());
  CHECK(stacked(5, 2) == s(1, 2).imag());
  CHECK(from_stacked(stacked) == s);
}

TEST_CASE("complex_normal has unit complex variance split evenly") {
  Rng rng(11);
  const SpecTensor z = complex_normal(100, 200, rng);
  const double n = static_cast<double>(z.size());
  CHECK_THAT(z.squared_norm() / n, WithinAbs(1.0, 0.02));
  const double re = z.values().real().squaredNorm() / n;
  CHECK_THAT(re, WithinAbs(0.5, 0.015));
}
