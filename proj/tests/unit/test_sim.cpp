#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "lyapnet/scenarios.hpp"
#include "lyapnet/sim.hpp"

using namespace lyapnet;

namespace {

RunConfig qla_config(double V, std::uint64_t slots, std::uint64_t seed = 1) {
  RunConfig c;
  c.V = V;
  c.slots = slots;
  c.seed = seed;
  return c;
}

DeviationCurve synthetic_curve(const std::vector<double>& probs, std::uint64_t total) {
  DeviationCurve c;
  c.total = total;
  c.prob = probs;
  for (double p : probs) c.exceed_count.push_back(static_cast<std::uint64_t>(std::llround(p * total)));
  return c;
}

}  // namespace

TEST_CASE("run is reproducible and honours its configuration") {
  const auto h = five_queue_chain();
  RunConfig c = qla_config(50.0, 30000, 9);
  c.deviation_reference = h.closed_form(50.0);
  const auto a = run(h.spec, c).report;
  const auto b = run(h.spec, c).report;
  CHECK(a.avg_cost == b.avg_cost);
  CHECK(a.avg_backlog == b.avg_backlog);
  CHECK(a.deviation_samples == b.deviation_samples);
  CHECK(a.burn_in == 3000);  // min(100 V, slots / 10)
  const auto hist_total = std::accumulate(a.deviation_hist.begin(), a.deviation_hist.end(), std::uint64_t{0});
  CHECK(hist_total == c.slots - a.burn_in);
  CHECK(a.invariant_checks == c.slots);

  RunConfig other = c;
  other.seed = 10;
  CHECK(run(h.spec, other).report.avg_cost != a.avg_cost);

  RunConfig bad = c;
  bad.burn_in = c.slots;
  CHECK_THROWS_AS(run(h.spec, bad), ContractError);
  RunConfig ideal = qla_config(50.0, 100);
  ideal.algorithm = Algorithm::FqlaIdeal;
  CHECK_THROWS_AS(run(h.spec, ideal), ContractError);
  CHECK(parse_algorithm("fqla-general") == Algorithm::FqlaGeneral);
  CHECK_THROWS_AS(parse_algorithm("tqla"), ContractError);
}

TEST_CASE("zero-arrival network stays empty") {
  std::vector<ActionRecord> recs{{0.0, Vector::Zero(2), Vector::Zero(2)}, {1.0, Vector::Zero(2), Vector::Ones(2)}};
  const NetworkSpec idle("idle", 2, 1.0, {StateSpec{1.0, ActionTable::from_records(recs)}});
  for (auto alg : {Algorithm::Qla, Algorithm::FqlaIdeal}) {
    RunConfig c = qla_config(10.0, 5000);
    c.algorithm = alg;
    c.deviation_reference = Vector::Zero(2);
    const auto rep = run(idle, c).report;
    CHECK(rep.avg_cost == 0.0);
    CHECK(rep.avg_total_backlog == 0.0);
    CHECK(rep.drop_fraction == 0.0);
  }
}

TEST_CASE("five-queue QLA: cost and backlog trend in V") {
  const auto h = five_queue_chain();
  std::vector<double> gap;
  for (double V : {50.0, 100.0, 200.0}) {
    const auto rep = run(h.spec, qla_config(V, 400000, 4)).report;
    CHECK(rep.avg_cost == doctest::Approx(3.75).epsilon(0.02));
    CHECK(rep.avg_total_backlog / (15.0 * V) >= 0.8);
    CHECK(rep.avg_total_backlog / (15.0 * V) <= 1.2);
    gap.push_back(std::abs(rep.avg_cost - 3.75));
  }
  CHECK(gap[1] <= gap[0] + 0.005 * 3.75);
  CHECK(gap[2] <= gap[1] + 0.005 * 3.75);
}

TEST_CASE("FQLA-Ideal keeps W_1 above its place-holder") {
  const auto h = five_queue_chain();
  RunConfig c = qla_config(1000.0, 300000, 2);
  c.algorithm = Algorithm::FqlaIdeal;
  c.deviation_reference = h.closed_form(1000.0);
  const auto rep = run(h.spec, c).report;
  CHECK(rep.placeholders(0) == doctest::Approx(4952.28).epsilon(1e-4));
  CHECK(rep.min_virtual_backlog(0) >= 4952.0);
  CHECK(rep.drop_fraction >= 0.0);
  CHECK(rep.drop_fraction <= 1.0);
}

TEST_CASE("deviation statistics") {
  const auto h = five_queue_chain();
  const double V = 100.0;
  RunConfig c = qla_config(V, 200000, 5);
  c.deviation_reference = h.closed_form(V);
  const auto rep = run(h.spec, c).report;
  const auto curve = deviation_statistics(rep, 0.0);
  CHECK(curve.total == c.slots - rep.burn_in);
  for (std::size_t m = 1; m < curve.prob.size(); ++m) CHECK(curve.prob[m] <= curve.prob[m - 1]);
  CHECK(curve.prob.back() == 0.0);
  const auto exact = static_cast<std::size_t>(
      std::count(rep.deviation_samples.begin(), rep.deviation_samples.end(), 0.0));
  CHECK(curve.prob[0] == doctest::Approx(1.0 - double(exact) / curve.total));

  // The attraction bound at m = ln(V) K1, with constants from the estimated geometry.
  Rng rng(1);
  const auto geo = estimate_geometry(h.spec, h.closed_form(1.0), 0.2, 64, rng);
  const auto k = theorem2_constants(h.spec.bound_B(), geo.L);
  const auto at_d1 = deviation_statistics(rep, k.D1);
  const auto m = static_cast<std::size_t>(std::ceil(std::log(V) * k.K1));
  const double p = m < at_d1.prob.size() ? at_d1.prob[m] : 0.0;
  CHECK(p <= 10.0 * k.c1_star / V);

  const auto per = deviation_statistics(rep, 0.0, DeviationKind::PerCoordinate);
  CHECK(per.prob[0] <= 1.0);

  const std::vector<double> pinned(100, 0.0);
  const auto zero = deviation_statistics(pinned, 0.0);
  CHECK(zero.prob == std::vector<double>{0.0});

  RunConfig bare = qla_config(V, 1000);
  CHECK_THROWS_AS(deviation_statistics(run(h.spec, bare).report, 0.0), ContractError);
}

TEST_CASE("tail fit") {
  std::vector<double> probs;
  for (int m = 0; m < 30; ++m) probs.push_back(0.5 * std::exp(-0.3 * m));
  const auto fit = fit_tail(synthetic_curve(probs, 1000000000000ULL));
  CHECK(fit.beta_hat == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(fit.c_hat == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK(fit.exponential);

  const auto flat = fit_tail(synthetic_curve(std::vector<double>(10, 0.4), 100000));
  CHECK(std::abs(flat.beta_hat) < 1e-12);
  CHECK_FALSE(flat.exponential);

  CHECK_THROWS_AS(fit_tail(synthetic_curve({0.4, 0.3, 0.2}, 100000)), InsufficientTailMass);
  // Bins with fewer than 30 exceedances do not count.
  CHECK_THROWS_AS(fit_tail(synthetic_curve({0.4, 0.3, 0.2, 0.1, 0.05}, 100)), InsufficientTailMass);
}

TEST_CASE("absorption into the per-state interval") {
  const auto h = single_queue_discrete();
  const double V = 100.0;
  RunConfig c = qla_config(V, 100000, 3);
  c.record_trace = true;
  const auto res = run(h.spec, c);
  const Matrix& u = res.trace->u;
  const std::vector<double> series(u.data(), u.data() + u.size());
  const auto rep = absorption_check(h.spec, V, series);
  CHECK(rep.lo == doctest::Approx(-1.0));
  CHECK(rep.hi == doctest::Approx(4.0 * V * (std::exp(1.0) - std::exp(0.75)) + 1.0));
  CHECK(rep.entered);
  CHECK(rep.t0 == 0);
  CHECK_FALSE(rep.violation.has_value());

  std::vector<ActionRecord> recs{{0.0, Vector::Constant(1, 1.0), Vector::Zero(1)},
                                 {1.0, Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)}};
  const NetworkSpec one("one", 1, 2.0, {StateSpec{1.0, ActionTable::from_records(recs)}});
  const auto single = absorption_check(one, 10.0, std::vector<double>{100.0, 12.0, 3.0, 50.0});
  CHECK(single.per_state_optima.size() == 1);
  CHECK(single.lo == doctest::Approx(single.per_state_optima[0] - 2.0));
  CHECK(single.hi == doctest::Approx(single.per_state_optima[0] + 2.0));
  CHECK(single.per_state_optima[0] == doctest::Approx(5.0));
  CHECK(single.t0 == 2);
  CHECK(single.violation.value() == 3);

  CHECK_THROWS_AS(absorption_check(five_queue_chain().spec, V, series), ContractError);
}

TEST_CASE("sandwich audit and trace CSV") {
  const auto h = five_queue_chain();
  RunConfig c = qla_config(100.0, 20000, 6);
  c.algorithm = Algorithm::FqlaIdeal;
  c.deviation_reference = h.closed_form(100.0);
  c.record_trace = true;
  std::ostringstream csv;
  write_trace_header(csv, 5);
  const auto res = run(h.spec, c, [&](const SlotRecord& rec) { write_trace_row(csv, rec, 5); });
  const Trace& tr = *res.trace;
  CHECK(count_sandwich_violations(tr, res.report.placeholders, h.spec.delta_max()) == 0);
  Trace tampered = tr;
  tampered.u(2, 500) += 10.0;
  CHECK(count_sandwich_violations(tampered, res.report.placeholders, h.spec.delta_max()) == 1);

  std::istringstream in(csv.str());
  const Trace back = read_trace_csv(in);
  CHECK(back.r == 5);
  CHECK(back.has_virtual);
  CHECK(back.size() == tr.size());
  CHECK((back.u - tr.u).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((back.w - tr.w).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(back.state == tr.state);

  RunConfig q = qla_config(10.0, 50);
  std::ostringstream qcsv;
  write_trace_header(qcsv, 5);
  run(h.spec, q, [&](const SlotRecord& rec) { write_trace_row(qcsv, rec, 5); });
  std::istringstream qin(qcsv.str());
  const Trace qt = read_trace_csv(qin);
  CHECK_FALSE(qt.has_virtual);
  CHECK(qt.size() == 50);

  std::istringstream junk("a,b,c\n1,2,3\n");
  CHECK_THROWS_AS(read_trace_csv(junk), ValidationError);
}

TEST_CASE("report CSV is stable") {
  const auto h = two_queue();
  RunConfig c = qla_config(20.0, 5000);
  std::ostringstream a, b;
  write_report_header(a, 2);
  write_report_row(a, run(h.spec, c).report, h.name, 2);
  write_report_header(b, 2);
  write_report_row(b, run(h.spec, c).report, h.name, 2);
  CHECK(a.str() == b.str());
  CHECK(format_number(1.0 / 3.0) == "0.333333333333");
}
