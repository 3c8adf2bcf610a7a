#include <doctest.h>

#include <cmath>

#include "lyapnet/model.hpp"
#include "lyapnet/scenarios.hpp"

using namespace lyapnet;

namespace {

StateSpec table_state(double prob, std::vector<ActionRecord> recs) {
  return StateSpec{prob, ActionTable::from_records(recs)};
}

ActionRecord rec1(double cost, double a, double b) {
  return ActionRecord{cost, Vector::Constant(1, a), Vector::Constant(1, b)};
}

}  // namespace

TEST_CASE("queue_update follows max[u - mu, 0] + a") {
  CHECK(queue_update(Vector::Constant(1, 5.0), Vector::Constant(1, 3.0), Vector::Constant(1, 2.0))(0) == 4.0);
  CHECK(queue_update(Vector::Constant(1, 1.0), Vector::Constant(1, 3.0), Vector::Constant(1, 2.0))(0) == 2.0);
  const Vector z = queue_update(Vector::Zero(2), Vector::Ones(2), Vector::Zero(2));
  CHECK(z.isZero());
}

TEST_CASE("queue_update preserves nonnegativity and moves at most B") {
  Rng rng(11);
  const double dmax = 2.0;
  for (int k = 0; k < 2000; ++k) {
    Vector u(3), mu(3), a(3);
    for (int j = 0; j < 3; ++j) {
      u(j) = 10.0 * rng.uniform();
      mu(j) = dmax * rng.uniform();
      a(j) = dmax * rng.uniform();
    }
    const Vector next = queue_update(u, mu, a);
    CHECK((next.array() >= 0.0).all());
    CHECK((next - u).norm() <= std::sqrt(3.0) * dmax + 1e-12);
  }
}

TEST_CASE("one-step distance bound") {
  const double B = 2.0;
  const Vector t = Vector::Constant(1, 3.0);
  CHECK(one_step_distance_contract_check(t, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0), t, B));
  CHECK(one_step_distance_contract_check(Vector::Constant(1, 10.0), Vector::Zero(1), Vector::Constant(1, 2.0),
                                         Vector::Zero(1), B));
  Rng rng(5);
  const double dmax = 1.5;
  const double B3 = std::sqrt(3.0) * dmax;
  for (int k = 0; k < 1000; ++k) {
    Vector u(3), mu(3), a(3), target(3);
    for (int j = 0; j < 3; ++j) {
      u(j) = 20.0 * rng.uniform();
      mu(j) = dmax * rng.uniform();
      a(j) = dmax * rng.uniform();
      target(j) = 20.0 * rng.uniform();
    }
    CHECK(one_step_distance_contract_check(u, mu, a, target, B3));
  }
  // Without the 2B^2 slack the bound is false in general.
  CHECK_FALSE(one_step_distance_contract_check(Vector::Constant(1, 5.0), Vector::Zero(1), Vector::Constant(1, 2.0),
                                               Vector::Constant(1, 5.0), 0.0));
}

TEST_CASE("NetworkSpec derives B and validates its tables") {
  const NetworkSpec ok("s", 1, 2.0, {table_state(1.0, {rec1(0.0, 1.0, 2.0)})});
  CHECK(ok.bound_B() == 2.0);
  CHECK(five_queue_chain().spec.bound_B() == doctest::Approx(2.0 * std::sqrt(5.0)).epsilon(1e-15));

  SUBCASE("probabilities must sum to one") {
    try {
      NetworkSpec("bad", 1, 2.0, {table_state(0.5, {rec1(0, 0, 0)}), table_state(0.4, {rec1(0, 0, 0)})});
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.path() == "states[*].prob");
    }
  }
  SUBCASE("negative service is rejected with its path") {
    try {
      NetworkSpec("bad", 1, 2.0, {table_state(1.0, {rec1(0, 0, 1), rec1(0, 0, -1)})});
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.path() == "states[0].actions[1].services[0]");
    }
  }
  SUBCASE("arrival above delta_max is rejected") {
    CHECK_THROWS_AS(NetworkSpec("bad", 1, 1.0, {table_state(1.0, {rec1(0, 3, 0)})}), ValidationError);
  }
  SUBCASE("empty action set") {
    ActionTable empty;
    empty.arrivals.resize(1, 0);
    empty.services.resize(1, 0);
    CHECK_THROWS_AS(NetworkSpec("bad", 1, 1.0, {StateSpec{1.0, empty}}), ValidationError);
  }
  SUBCASE("continuous family needs lo <= hi and r = 1") {
    CHECK_THROWS_AS(NetworkSpec("bad", 1, 2.0, {StateSpec{1.0, ExpRateFamily{1.0, 0.5, 0.0}}}), ValidationError);
    CHECK_THROWS_AS(NetworkSpec("bad", 2, 2.0, {StateSpec{1.0, ExpRateFamily{0.0, 1.0, 0.0}}}), ValidationError);
  }
}

TEST_CASE("sample_state") {
  SUBCASE("degenerate distribution") {
    const NetworkSpec one("one", 1, 1.0, {table_state(1.0, {rec1(0, 0, 0)})});
    Rng rng(3);
    for (int k = 0; k < 100; ++k) CHECK(sample_state(one, rng) == 0);
  }
  SUBCASE("reproducible draws") {
    const NetworkSpec two("two", 1, 1.0, {table_state(0.5, {rec1(0, 0, 0)}), table_state(0.5, {rec1(0, 0, 0)})});
    Rng a(42), b(42);
    for (int k = 0; k < 5; ++k) CHECK(sample_state(two, a) == sample_state(two, b));
  }
  SUBCASE("five-queue arrival frequency") {
    const auto spec = five_queue_chain().spec;
    Rng rng(2024);
    int busy = 0;
    const int n = 1000000;
    for (int k = 0; k < n; ++k) busy += spec.state(sample_state(spec, rng)).table().arrivals(0, 0) == 2.0;
    CHECK(std::abs(busy / double(n) - 5.0 / 8.0) < 0.002);
  }
}

TEST_CASE("Rng streams") {
  Rng a(7, 0), b(7, 1);
  CHECK(a.next() != b.next());
  const Rng base(7, 0);
  Rng s1 = base.substream(3), s2 = base.substream(3), s3 = base.substream(4);
  const auto x = s1.next();
  CHECK(x == s2.next());
  CHECK(x != s3.next());
  Rng u(9);
  for (int k = 0; k < 1000; ++k) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}
