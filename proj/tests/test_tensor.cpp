#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/errors.hpp"
#include "unipool/ops.hpp"
#include "unipool/tape.hpp"
#include "unipool/tensor.hpp"

using namespace unipool;

TEST_SUITE("tensor") {

TEST_CASE("construction and extents") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.extent(0) == 2);
  CHECK(t.extent(2) == 4);
  for (auto v : t.data()) CHECK(v == 0.0);

  auto f = Tensor<double>::full({3}, 1.5);
  for (auto v : f.data()) CHECK(v == 1.5);
  CHECK(Tensor<double>::scalar(2.0).item() == 2.0);
}

TEST_CASE("numel and shape_str helpers") {
  CHECK(numel({2, 3, 4}) == 24);
  CHECK(numel({}) == 1);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK(same_shape({2, 3}, {2, 3}));
  CHECK(!same_shape({2, 3}, {3, 2}));
}

TEST_CASE("copies are shared handles, clones are not") {
  Tensor<double> a({4});
  Tensor<double> b = a;
  CHECK(a.storage_id() == b.storage_id());
  b.mut()[0] = 5.0;
  CHECK(a.at(0) == 5.0);

  Tensor<double> c = a.clone();
  CHECK(c.storage_id() != a.storage_id());
  c.mut()[0] = 9.0;
  CHECK(a.at(0) == 5.0);
}

TEST_CASE("reshape shares storage and checks the element count") {
  Tensor<double> a({2, 6});
  Tensor<double> b = a.reshape({3, 4});
  CHECK(b.storage_id() == a.storage_id());
  CHECK(b.extent(0) == 3);
  CHECK_THROWS_AS(a.reshape({5, 2}), ShapeError);
}

TEST_CASE("item wants exactly one element") {
  CHECK_THROWS_AS(Tensor<double>({2}).item(), ShapeError);
}

TEST_CASE("row-major at4 indexing") {
  Tensor<double> t({2, 3, 4, 5});
  t.mut()[((1 * 3 + 2) * 4 + 3) * 5 + 4] = 7.0;
  CHECK(t.at4(1, 2, 3, 4) == 7.0);
}

TEST_CASE("grad buffer lifecycle") {
  Tensor<double> t({3});
  CHECK(!t.has_grad());
  t.set_requires_grad(true);
  CHECK(t.requires_grad());
  auto g = t.grad_mut();
  CHECK(t.has_grad());
  for (auto v : g) CHECK(v == 0.0);
  g[1] = 2.0;
  t.zero_grad();
  // zero_grad releases the buffer; grad_mut reallocates it zero-filled.
  CHECK(!t.has_grad());
  CHECK(t.grad_mut()[1] == 0.0);
}

TEST_CASE("ensure_finite flags bad values") {
  Tensor<double> ok({2});
  CHECK_NOTHROW(ensure_finite("t", ok));
  Tensor<double> bad({2});
  bad.mut()[1] = std::nan("");
  CHECK_THROWS_AS(ensure_finite("t", bad), NumericError);
  bad.mut()[1] = 1.0 / 0.0;
  CHECK_THROWS_AS(ensure_finite("t", bad), NumericError);
}

TEST_CASE("tape backward through a product") {
  // z = sum(x * y): dz/dx = y, dz/dy = x.
  Tensor<double> x({3}, {1.0, 2.0, 3.0});
  Tensor<double> y({3}, {4.0, 5.0, 6.0});
  x.set_requires_grad(true);
  y.set_requires_grad(true);

  Tape<double> tape;
  Tensor<double> z;
  {
    TapeScope<double> scope(tape);
    z = sum(mul(x, y));
  }
  CHECK(z.item() == doctest::Approx(32.0));
  tape.backward(z);
  for (int i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(y.at(i)));
    CHECK(y.grad()[i] == doctest::Approx(x.at(i)));
  }
}

TEST_CASE("backward accumulates across reuse") {
  // z = sum(x * x): dz/dx = 2x via two accumulations into the same buffer.
  Tensor<double> x({2}, {3.0, -1.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> z;
  {
    TapeScope<double> scope(tape);
    z = sum(mul(x, x));
  }
  tape.backward(z);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward wants a scalar loss") {
  Tensor<double> x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    y = mul(x, x);
  }
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("no recording without a scope") {
  Tensor<double> x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = mul(x, x);  // outside any scope
  CHECK(tape.size() == 0);
  CHECK(!y.needs_grad());
}

TEST_CASE("stale grads do not leak into a fresh pass") {
  Tensor<double> x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    Tensor<double> z;
    {
      TapeScope<double> scope(tape);
      z = sum(mul(x, x));
    }
    tape.backward(z);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    x.zero_grad();
  }
}

}  // TEST_SUITE
