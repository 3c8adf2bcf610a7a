#include <doctest.h>

#include <cmath>

#include "lyapnet/dual.hpp"
#include "lyapnet/scenarios.hpp"
#include "lyapnet/sched.hpp"
#include "oracles.hpp"

using namespace lyapnet;

namespace {

Vector random_u(Rng& rng, int r, double scale) {
  Vector u(r);
  for (int j = 0; j < r; ++j) u(j) = scale * rng.uniform();
  return u;
}

NetworkSpec single_state(std::vector<ActionRecord> recs, int r = 1) {
  std::vector<StateSpec> st{StateSpec{1.0, ActionTable::from_records(recs)}};
  return NetworkSpec("single", r, 2.0, std::move(st));
}

const double kDiscreteUnit = 2.0 * (std::exp(0.75) - std::exp(0.25));

}  // namespace

TEST_CASE("five-queue dual matches the brute-force oracle") {
  const auto spec = five_queue_chain().spec;
  Vector u(5);
  u << 5, 4, 3, 2, 1;
  CHECK(evaluate_dual(spec, 1.0, u).value == doctest::Approx(3.75).epsilon(1e-12));
  Rng rng(1);
  const auto states = oracle::five_queue_states();
  for (int k = 0; k < 200; ++k) {
    const double V = 1.0 + 99.0 * rng.uniform();
    const Vector x = random_u(rng, 5, 8.0 * V);
    const auto ev = evaluate_dual(spec, V, x);
    CHECK(ev.value == doctest::Approx(oracle::five_queue_dual(V, x)).epsilon(1e-12));
    // The argmin indices follow the power-mask encoding, so they match the oracle exactly.
    for (std::size_t i = 0; i < states.size(); ++i) {
      CHECK(ev.argmin_actions[i].index == oracle::five_queue_argmin(states[i], V, x));
    }
    CHECK(ev.subgradient.norm() <= spec.bound_B() + 1e-12);
  }
}

TEST_CASE("DualEval value is consistent with its argmin actions") {
  const auto spec = five_queue_chain().spec;
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const Vector u = random_u(rng, 5, 500.0);
    const auto ev = evaluate_dual(spec, 100.0, u);
    double sum = 0.0;
    for (int i = 0; i < spec.num_states(); ++i) {
      sum += spec.state(i).prob * lagrangian_term(spec.state(i), 100.0, u, ev.argmin_actions[i]);
    }
    CHECK(sum == doctest::Approx(ev.value).epsilon(1e-12));
    CHECK(dual_value(spec, 100.0, u) == doctest::Approx(ev.value).epsilon(1e-12));
  }
}

TEST_CASE("zero multiplier selects zero power") {
  for (const auto& name : builtin_names()) {
    const auto h = builtin(name);
    const auto ev = evaluate_dual(h.spec, 7.0, Vector::Zero(h.spec.r()));
    CHECK(ev.value == doctest::Approx(0.0));
    for (int i = 0; i < h.spec.num_states(); ++i) {
      CHECK(realize(h.spec.state(i), h.spec.r(), ev.argmin_actions[i]).cost == 0.0);
    }
  }
}

TEST_CASE("continuous single queue at U*_V") {
  const auto spec = single_queue_continuous().spec;
  const double V = 1000.0;
  const auto ev = evaluate_dual(spec, V, Vector::Constant(1, V * std::exp(0.5)));
  for (const auto& c : ev.argmin_actions) CHECK(c.x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ev.value == doctest::Approx(V * (std::exp(0.5) - 1.0)).epsilon(1e-12));
  // Dense-grid oracle for the continuous minimization.
  const auto grid = oracle::dense_rates(0.0, 2.0, 200001);
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const double u = 10.0 * V * rng.uniform();
    CHECK(dual_value(spec, V, Vector::Constant(1, u)) ==
          doctest::Approx(oracle::single_queue_dual(V, u, grid)).epsilon(1e-6));
  }
}

TEST_CASE("evaluate_dual rejects bad multipliers") {
  const auto spec = five_queue_chain().spec;
  CHECK_THROWS_AS(evaluate_dual(spec, 1.0, Vector::Constant(5, -1.0)), DomainError);
  CHECK_THROWS_AS(evaluate_dual(spec, 1.0, Vector::Zero(3)), ContractError);
}

TEST_CASE("per-state dual") {
  const auto spec = single_queue_discrete().spec;
  CHECK_THROWS_AS(per_state_dual(five_queue_chain().spec, 1.0, 0, 1.0), ContractError);
  // u = 0 picks the cheapest action.
  CHECK(per_state_dual(spec, 3.0, 1, 0.0).second.index == 0);
  // Breakpoint scan agrees with a fine-grid maximization of each per-state dual.
  const double V = 100.0;
  for (int i = 0; i < 2; ++i) {
    const double opt = per_state_optimum(spec, V, i);
    double best_u = 0.0;
    double best_q = -1e300;
    for (int g = 0; g <= 400000; ++g) {
      const double u = g * 1e-3;
      const double q = per_state_dual(spec, V, i, u).first;
      if (q > best_q + 1e-9) {
        best_q = q;
        best_u = u;
      }
    }
    CHECK(opt == doctest::Approx(best_u).epsilon(1e-4));
  }
  CHECK(per_state_optimum(spec, V, 0) == 0.0);
  CHECK(per_state_optimum(spec, V, 1) == doctest::Approx(4.0 * V * (std::exp(1.0) - std::exp(0.75))));
  // g = b for every action: value is V min f whatever u is.
  const auto flat = single_state({{1.0, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)},
                                  {0.5, Vector::Constant(1, 0.5), Vector::Constant(1, 0.5)}});
  CHECK(per_state_dual(flat, 2.0, 0, 17.0).first == doctest::Approx(1.0));
}

TEST_CASE("OSM and RISM steps") {
  const auto spec = five_queue_chain().spec;
  Rng rng(4);
  SUBCASE("zero subgradient leaves u unchanged") {
    const auto flat = single_state({{0.0, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)}});
    CHECK(osm_step(flat, 1.0, Vector::Constant(1, 3.0))(0) == 3.0);
    CHECK(rism_step(flat, 1.0, Vector::Constant(1, 3.0), 0)(0) == 3.0);
  }
  SUBCASE("alpha = 0") {
    const Vector u = random_u(rng, 5, 100.0);
    CHECK(rism_step(spec, 10.0, u, 5, 0.0) == u);
    CHECK(osm_step(spec, 10.0, u, 0.0) == u);
  }
  SUBCASE("OSM from zero moves along the positive subgradient") {
    const Vector next = osm_step(spec, 1.0, Vector::Zero(5));
    CHECK(next(0) == doctest::Approx(1.25));
    CHECK(next.tail(4).isZero());
  }
  SUBCASE("RISM with alpha = 1 is a QLA slot") {
    for (int k = 0; k < 1000; ++k) {
      const double V = 1.0 + 200.0 * rng.uniform();
      const Vector u = random_u(rng, 5, 6.0 * V);
      const int s = sample_state(spec, rng);
      const Decision d = qla_decide(spec, V, s, u);
      const Vector expect = queue_update(u, d.services, d.arrivals);
      CHECK(rism_step(spec, V, u, s) == expect);
      CHECK(best_action(spec.state(s), V, u) == d.choice);
    }
  }
}

TEST_CASE("OSM iterates are absorbed near U*_V") {
  const auto h = five_queue_chain();
  const double V = 20.0;
  const Vector star = h.closed_form(V);
  Rng geo(5);
  const auto g = estimate_geometry(h.spec, h.closed_form(1.0), 0.2, 64, geo);
  const auto c = theorem2_constants(h.spec.bound_B(), g.L);
  const double radius = c.D1 + h.spec.bound_B();
  Rng rng(6);
  for (int start = 0; start < 10; ++start) {
    Vector dir(5);
    for (int j = 0; j < 5; ++j) dir(j) = 2.0 * rng.uniform() - 1.0;
    Vector u = (star + 10.0 * V * rng.uniform() * dir.normalized()).cwiseMax(0.0);
    bool entered = false;
    bool left = false;
    for (int t = 0; t < 20000; ++t) {
      u = osm_step(h.spec, V, u);
      const bool inside = (u - star).norm() <= radius;
      if (entered && !inside) left = true;
      entered = entered || inside;
    }
    CHECK(entered);
    CHECK_FALSE(left);
  }
}

TEST_CASE("optimal multiplier search") {
  SUBCASE("five-queue numeric search is exact") {
    const auto spec = five_queue_chain().spec;
    for (double V : {1.0, 50.0, 100.0}) {
      const auto m = find_optimal_multiplier(spec, V);
      CHECK(m.method == MultiplierResult::Method::NumericSearch);
      for (int j = 0; j < 5; ++j) CHECK(m.u_star(j) == V * (5 - j));
      CHECK(m.q_star == doctest::Approx(3.75 * V));
      CHECK_FALSE(m.warning.empty());
    }
  }
  SUBCASE("two-queue numeric search matches the registered closed form") {
    const auto h = two_queue();
    const auto m = find_optimal_multiplier(h.spec, 30.0);
    CHECK((m.u_star - h.closed_form(30.0)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
  SUBCASE("continuous single queue") {
    const auto m = find_optimal_multiplier(single_queue_continuous().spec, 100.0);
    CHECK(m.u_star(0) == doctest::Approx(100.0 * std::exp(0.5)).epsilon(1e-9));
  }
  SUBCASE("discrete single queue") {
    const auto m = find_optimal_multiplier(single_queue_discrete().spec, 1.0);
    CHECK(m.u_star(0) == doctest::Approx(kDiscreteUnit).epsilon(1e-12));
    CHECK(m.u_star(0) == doctest::Approx(1.6661).epsilon(1e-4));
  }
  SUBCASE("closed forms are returned as such") {
    const auto h = five_queue_chain();
    const auto m = h.multiplier(50.0);
    CHECK(m.method == MultiplierResult::Method::ClosedForm);
    CHECK(m.u_star(0) == 250.0);
  }
  SUBCASE("a network that cannot be stabilized") {
    const auto bad = single_state({{0.0, Vector::Constant(1, 1.0), Vector::Zero(1)}});
    CHECK_THROWS_AS(find_optimal_multiplier(bad, 1.0), ConvergenceError);
  }
}

TEST_CASE("scaling of U*_V with V") {
  const std::vector<double> Vs{50.0, 100.0};
  const auto rep = check_scaling(five_queue_chain().spec, Vs);
  CHECK(rep.passed);
  for (double res : rep.residual) CHECK(res == 0.0);
  const std::vector<double> one{1.0};
  CHECK(check_scaling(two_queue().spec, one).passed);
  const std::vector<double> cont{10.0, 100.0};
  const auto rc = check_scaling(single_queue_continuous().spec, cont, {}, 1e-6);
  CHECK(rc.passed);
}

TEST_CASE("dual function audits") {
  const auto spec = five_queue_chain().spec;
  Rng rng(8);
  const double B = spec.bound_B();
  for (int k = 0; k < 500; ++k) {
    const double V = 1.0 + 50.0 * rng.uniform();
    const Vector a = random_u(rng, 5, 8.0 * V);
    const Vector b = random_u(rng, 5, 8.0 * V);
    const double lam = rng.uniform();
    const double qa = dual_value(spec, V, a);
    const double qb = dual_value(spec, V, b);
    // Concavity and the B-Lipschitz bound.
    CHECK(dual_value(spec, V, lam * a + (1 - lam) * b) >= lam * qa + (1 - lam) * qb - 1e-9 * (1 + std::abs(qa)));
    CHECK(qb - qa <= B * (b - a).norm() + 1e-9);
    CHECK(check_subgradient_inequality(spec, V, a, b));
    CHECK(check_subgradient_inequality(spec, V, a, a));
    // q_V(U) = V q_1(U / V).
    CHECK(qa == doctest::Approx(V * dual_value(spec, 1.0, a / V)).epsilon(1e-9));
  }
  Vector star(5);
  star << 250, 200, 150, 100, 50;
  for (int k = 0; k < 100; ++k) CHECK(check_subgradient_inequality(spec, 50.0, star, random_u(rng, 5, 400.0)));
}

TEST_CASE("slackness") {
  // Each stage adds at most 0.25 of spare capacity, spread over five queues.
  const auto five = check_slackness(five_queue_chain().spec, 0.04);
  CHECK(five.feasible);
  CHECK((five.drift.array() <= -0.04 + 1e-9).all());
  CHECK_FALSE(check_slackness(five_queue_chain().spec, 0.06).feasible);
  CHECK(five.witness.size() == 64);
  for (const auto& w : five.witness) CHECK(w.sum() == doctest::Approx(1.0));
  CHECK(check_slackness(five_queue_chain().spec, 0.0).feasible);
  const auto flat = single_state({{0.0, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)},
                                  {1.0, Vector::Constant(1, 2.0), Vector::Constant(1, 2.0)}});
  CHECK_FALSE(check_slackness(flat, 0.05).feasible);
  CHECK_THROWS_AS(check_slackness(single_queue_continuous().spec, 0.1), ContractError);
}

TEST_CASE("local geometry") {
  Rng rng(9);
  const auto five = five_queue_chain();
  const auto g = estimate_geometry(five.spec, five.closed_form(1.0), 0.2, 64, rng);
  CHECK(g.kind == Geometry::Polyhedral);
  CHECK(g.L > 0.0);
  // Dense-direction oracle: the minimum ratio over many more directions is no larger.
  Rng dense(10);
  const double q0 = dual_value(five.spec, 1.0, five.closed_form(1.0));
  double min_ratio = 1e300;
  for (int k = 0; k < 4000; ++k) {
    Vector d(5);
    for (int j = 0; j < 5; ++j) d(j) = 2.0 * dense.uniform() - 1.0;
    const Vector u = five.closed_form(1.0) + 0.1 * d.normalized();
    min_ratio = std::min(min_ratio, (q0 - dual_value(five.spec, 1.0, u)) / 0.1);
  }
  CHECK(min_ratio > 0.0);
  CHECK(min_ratio <= g.L + 1e-9);

  const auto cont = single_queue_continuous();
  const auto gc = estimate_geometry(cont.spec, cont.closed_form(1.0), 0.2, 16, rng);
  CHECK(gc.kind == Geometry::Smooth);
  CHECK_THROWS_AS(estimate_geometry(cont.spec, cont.closed_form(1.0), 0.0, 16, rng), ContractError);
}

TEST_CASE("attraction constants") {
  const auto c = theorem2_constants(2.0, 1.0);
  CHECK(c.D1 == doctest::Approx(8.25));
  CHECK(c.beta_star == doctest::Approx(1.0 / c.K1));
  const double B = 3.0;
  CHECK(theorem2_constants(B, B).K1 == doctest::Approx(7.0 * B / 3.0));
  CHECK(theorem2_constants(2.0, 1.0, 100.0).D_smooth.value() ==
        doctest::Approx((10.0 + std::sqrt(100.0 + 1600.0)) / 2.0));
  CHECK_FALSE(c.D_smooth.has_value());
  CHECK_THROWS_AS(theorem2_constants(1.0, 0.0), ContractError);
  CHECK_THROWS_AS(theorem2_constants(1.0, 2.0), ContractError);
}
