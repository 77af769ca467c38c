#include <doctest.h>

#include <stdexcept>

#include "gradcheck.hpp"
#include "stylediff/autograd.hpp"

using namespace stylediff;

TEST_CASE("every op's input gradient matches central differences") {
  for (const auto& check : testing::op_checks(31)) {
    INFO(check.name << ": " << check.worst);
    CHECK(check.checked > 0);
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("relative error is scale-free and absolute near zero") {
  CHECK(testing::relative_error(1.0, 1.0) == 0.0);
  CHECK(testing::relative_error(1e3, 1e3 * (1 + 1e-6)) < 1e-6);
  CHECK(testing::relative_error(1e-12, -1e-12) < 1e-5);
  CHECK(testing::relative_error(1.0, -1.0) == doctest::Approx(1.0));
}

TEST_CASE("a parameter used twice accumulates both gradient paths") {
  Parameter<double> p;
  p.value = Tensor<double>({1, 2}, {2.0, -3.0});
  Tape<double> tape;
  const Var<double> a = tape.param(p);
  const Var<double> b = tape.param(p);
  CHECK(a.id == b.id);
  tape.backward(ag::sum(ag::mul(a, b)));  // sum p^2
  CHECK(p.grad[0] == doctest::Approx(4.0));
  CHECK(p.grad[1] == doctest::Approx(-6.0));
}

TEST_CASE("frozen parameters never receive gradients") {
  Parameter<double> p;
  p.value = Tensor<double>({1, 2}, {1.0, 1.0});
  Tape<double> tape;
  const Var<double> x = tape.input(Tensor<double>({1, 2}, {3.0, 4.0}));
  const Var<double> frozen = tape.param(p, false);
  tape.backward(ag::sum(ag::mul(x, frozen)));
  CHECK(p.grad.empty());
  CHECK(tape.grad(x)[0] == doctest::Approx(1.0));

  Parameter<double> fixed;
  fixed.value = Tensor<double>({1}, {2.0});
  fixed.trainable = false;
  Tape<double> t2;
  const Var<double> y = t2.input(Tensor<double>({1}, {5.0}));
  t2.backward(ag::sum(ag::mul(y, t2.param(fixed))));
  CHECK(fixed.grad.empty());
}

TEST_CASE("tape rejects malformed use") {
  Tape<double> tape;
  const Var<double> v = tape.input(Tensor<double>({2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
  Tape<double> other;
  const Var<double> w = other.input(Tensor<double>({2, 2}, 1.0));
  CHECK_THROWS_AS(ag::add(v, w), std::invalid_argument);
  Tape<double> no_grad(false);
  const Var<double> c = no_grad.input(Tensor<double>({1}, 1.0));
  CHECK_THROWS_AS(no_grad.backward(c), std::logic_error);
  CHECK_THROWS_AS(ag::matmul(tape.input(Tensor<double>({2, 3})), tape.input(Tensor<double>({2, 3}))),
                  std::invalid_argument);
}

TEST_CASE("row cosine stays within [-1, 1] for parallel rows") {
  Tape<double> tape(false);
  const Tensor<double> a({1, 3}, {1e-3, 2e-3, 3e-3});
  const Var<double> c = ag::row_cosine(tape.constant(a), tape.constant(a), 1e-8);
  CHECK(c.value()[0] <= 1.0);
  CHECK(c.value()[0] == doctest::Approx(1.0));
}
