#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <doctest.h>

#include "core/error.hpp"
#include "core/random.hpp"
#include "sim/handover_sim.hpp"
#include "support/oracles.hpp"

using namespace handover;

namespace {

const ControllerParams kInitial{2.75, 275, 450, 275, 2.5, 200, 600};

RolloutTrace roll(const ControllerParams& p, double s, const SimConfig& cfg = {}, std::uint64_t seed = 1) {
  auto rng = seeded_rng(seed);
  return simulate_handover(p, Context(s), cfg, rng);
}

// Largest excursion past the target for a unit step on one axis.
double discrete_overshoot(double stiffness, double mass) {
  SimConfig cfg;
  cfg.ee_mass = mass;
  ControllerParams p = kInitial;
  p.trans_stiffness_y = stiffness;
  ArmState s;
  s.pos(1) = 1.0;
  double worst = 0.0;
  const int steps = static_cast<int>(20.0 * std::sqrt(mass / stiffness) / cfg.dt) + 2000;
  for (int k = 0; k < steps; ++k) {
    s = impedance_step(s, ArmTarget{}, p, cfg).next;
    worst = std::max(worst, -s.pos(1));
  }
  return worst;
}

double release_load_fraction(double slope) {
  ControllerParams p = kInitial;
  p.finger_slope = slope;
  const auto tr = roll(p, 0.3);
  REQUIRE(tr.release_time.has_value());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (std::abs(tr.time[k] - *tr.release_time) < 1e-9) return tr.load[k] / SimConfig{}.object_weight;
  }
  FAIL("release step not found");
  return 0.0;
}

}  // namespace

TEST_SUITE("reference") {
  TEST_CASE("hold beyond d_max, track from d_max inward, predict below d_min") {
    CHECK(tracking_mode(0.700, 0.200, 0.600) == TrackingMode::Hold);
    CHECK(tracking_mode(0.600, 0.200, 0.600) == TrackingMode::Track);
    CHECK(tracking_mode(0.300, 0.200, 0.600) == TrackingMode::Track);
    CHECK(tracking_mode(0.200, 0.200, 0.600) == TrackingMode::Predict);
  }

  TEST_CASE("the generator holds, follows, then extrapolates at the frozen velocity") {
    const Eigen::Vector3d hold(0.05, 0.0, 0.0);
    ReferenceGenerator g(0.2, 0.6, 1.0, hold);
    const Eigen::Vector3d ee = Eigen::Vector3d::Zero();
    const double s = 0.4;
    const Eigen::Vector3d v(s, 0.0, 0.0);

    CHECK(g.target(Eigen::Vector3d(-0.7, 0, 0), v, ee, 0.0) == hold);
    CHECK(g.mode() == TrackingMode::Hold);
    const Eigen::Vector3d at_max(-0.6, 0, 0);
    CHECK(g.target(at_max, v, ee, 0.25) == at_max);
    CHECK(g.mode() == TrackingMode::Track);

    const Eigen::Vector3d inside(-0.19, 0, 0);
    const Eigen::Vector3d t0 = g.target(inside, v, ee, 1.0);
    CHECK(g.mode() == TrackingMode::Predict);
    // Later hand observations are ignored; the target advances at s.
    const Eigen::Vector3d t1 = g.target(Eigen::Vector3d(5, 5, 5), Eigen::Vector3d::Zero(), ee, 1.5);
    CHECK((t1 - t0).norm() == doctest::Approx(0.5 * s).epsilon(1e-12));
    CHECK((t1 - t0).normalized().isApprox(v.normalized()));
    // Extrapolation stops at the prediction window.
    const Eigen::Vector3d t2 = g.target(inside, v, ee, 5.0);
    CHECK((t2 - t0).norm() == doctest::Approx(1.0 * s).epsilon(1e-12));
  }

  TEST_CASE("d_min must lie below d_max") {
    CHECK_THROWS_AS(ReferenceGenerator(0.6, 0.6, 1.0, Eigen::Vector3d::Zero()), Error);
  }
}

TEST_SUITE("impedance") {
  TEST_CASE("no deviation, no force") {
    const auto out = impedance_step(ArmState{}, ArmTarget{}, kInitial, SimConfig{});
    CHECK(out.control_force.norm() == 0.0);
    CHECK(out.control_torque == 0.0);
    CHECK(out.next.pos.norm() == 0.0);
  }

  TEST_CASE("Hooke law at rest") {
    ArmState s;
    s.pos(0) = 0.010;
    const auto out = impedance_step(s, ArmTarget{}, kInitial, SimConfig{});
    CHECK(out.control_force(0) == doctest::Approx(-2.75).epsilon(1e-12));
  }

  TEST_CASE("damping is critical per axis") {
    CHECK(critical_damping(450.0, 2.0) == doctest::Approx(60.0).epsilon(1e-12));
    ArmState s;
    s.vel(1) = 1.0;
    SimConfig cfg;
    cfg.ee_mass = 2.0;
    const auto out = impedance_step(s, ArmTarget{}, kInitial, cfg);
    CHECK(out.control_force(1) == doctest::Approx(-60.0).epsilon(1e-12));
  }

  TEST_CASE("step response at P = 450 N/m, 2 kg does not overshoot") {
    CHECK(discrete_overshoot(450.0, 2.0) < 0.01);
    CHECK(oracle::continuous_overshoot(450.0, critical_damping(450.0, 2.0), 2.0, 2.0) < 1e-6);
  }

  TEST_CASE("mechanical energy never grows without external force") {
    SimConfig cfg;
    ControllerParams p = kInitial;
    ArmState s;
    s.pos = Eigen::Vector3d(0.05, -0.03, 0.02);
    s.vel = Eigen::Vector3d(-0.2, 0.4, 0.0);
    const Eigen::Vector3d k = translational_stiffness(p);
    auto energy = [&](const ArmState& a) {
      return 0.5 * cfg.ee_mass * a.vel.squaredNorm() + 0.5 * (k.array() * a.pos.array().square()).sum();
    };
    double prev = energy(s);
    for (int i = 0; i < 3000; ++i) {
      s = impedance_step(s, ArmTarget{}, p, cfg).next;
      const double e = energy(s);
      CHECK(e <= prev * (1 + 1e-12) + 1e-15);
      prev = e;
    }
  }
}

TEST_SUITE("grip") {
  TEST_CASE("release fractions meet the three anchors") {
    CHECK(std::abs(release_fraction(2.5) - 0.5) <= 0.1);
    CHECK(std::abs(release_fraction(3.63) - 0.8) <= 0.1);
    CHECK(std::abs(release_fraction(5.0) - 1.2) <= 0.1 + 1e-12);
  }

  TEST_CASE("k = 2.5 with a 20 N object releases near 10 N") {
    SimConfig cfg;
    ControllerParams p = kInitial;
    GripState g{cfg.finger_closed, false};
    double load = 0.0;
    while (!g.released) {
      load += 0.01;
      g = grip_step(load, p, cfg, g);
    }
    CHECK(std::abs(load - 10.0) <= 2.0);
    CHECK(g.aperture == cfg.finger_open);
  }

  TEST_CASE("zero slope releases on any pull and release latches") {
    SimConfig cfg;
    ControllerParams p = kInitial;
    p.finger_slope = 0.0;
    GripState g{cfg.finger_closed, false};
    g = grip_step(0.0, p, cfg, g);
    CHECK_FALSE(g.released);
    g = grip_step(1e-6, p, cfg, g);
    CHECK(g.released);
    g = grip_step(0.0, p, cfg, g);
    CHECK(g.released);
  }

  TEST_CASE("negative load is rejected") {
    CHECK_THROWS(grip_step(-1.0, kInitial, SimConfig{}, GripState{}));
  }
}

TEST_SUITE("rollout") {
  TEST_CASE("no pull means no release") {
    SimConfig cfg;
    cfg.human.pull_ramp_rate = 0.0;
    const auto tr = roll(kInitial, 0.3, cfg);
    CHECK_FALSE(tr.success);
    CHECK_FALSE(tr.release_time.has_value());
    CHECK(tr.duration == cfg.horizon);
  }

  TEST_CASE("initial policy mean at s = 0.3 hands over") {
    const auto tr = roll(kInitial, 0.3);
    CHECK(tr.success);
    CHECK(tr.duration >= 0.3);
    CHECK(tr.duration <= 2.0);
    CHECK(tr.duration <= tr.horizon);
    CHECK(tr.time.size() == tr.force.size());
    CHECK(tr.aperture.size() == tr.load.size());
  }

  TEST_CASE("faster hands give higher peak force and jerk") {
    double prev_f = 0.0, prev_j = 0.0;
    for (double s = 0.1; s <= 1.0 + 1e-9; s += 0.1) {
      const auto tr = roll(kInitial, s);
      CHECK(tr.peak_force >= prev_f);
      CHECK(tr.peak_jerk >= prev_j);
      prev_f = tr.peak_force;
      prev_j = tr.peak_jerk;
    }
  }

  TEST_CASE("rollouts are bit-identical for identical inputs") {
    const auto a = roll(kInitial, 0.55, {}, 9);
    const auto b = roll(kInitial, 0.55, {}, 9);
    REQUIRE(a.size() == b.size());
    CHECK(a.force == b.force);
    CHECK(a.ee_pos == b.ee_pos);
    CHECK(a.peak_jerk == b.peak_jerk);
    const auto c = roll(kInitial, 0.55, {}, 10);
    CHECK(c.release_time != a.release_time);
  }

  TEST_CASE("release time falls with pull rate and rises with finger slope") {
    double prev = 1e9;
    for (double rate : {10.0, 20.0, 29.0, 45.0, 80.0}) {
      SimConfig cfg;
      cfg.human.pull_ramp_rate = rate;
      const auto tr = roll(kInitial, 0.4, cfg);
      REQUIRE(tr.release_time.has_value());
      CHECK(tr.duration <= prev);
      prev = tr.duration;
    }
    prev = 0.0;
    for (double k : {0.0, 1.0, 2.5, 3.63, 5.0}) {
      ControllerParams p = kInitial;
      p.finger_slope = k;
      const auto tr = roll(p, 0.4);
      REQUIRE(tr.release_time.has_value());
      CHECK(tr.duration >= prev);
      prev = tr.duration;
    }
  }

  TEST_CASE("simulated release load matches the anchors") {
    CHECK(std::abs(release_load_fraction(2.5) - 0.5) <= 0.1);
    CHECK(std::abs(release_load_fraction(3.63) - 0.8) <= 0.1);
    CHECK(std::abs(release_load_fraction(5.0) - 1.2) <= 0.1);
  }

  TEST_CASE("invalid configs name their field") {
    SimConfig cfg;
    cfg.dt = 0.02;
    try {
      cfg.validate();
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "sim.dt");
    }
    cfg = SimConfig{};
    cfg.horizon = 2.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SimConfig{};
    cfg.object_weight = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("constant velocity without force has zero jerk") {
    RolloutTrace tr;
    tr.dt = 0.001;
    tr.horizon = 3.0;
    ArmState a;
    a.vel = Eigen::Vector3d(0.2, -0.1, 0.05);
    for (int k = 0; k < 500; ++k) {
      a.pos += a.vel * tr.dt;
      tr.push(k * tr.dt, a, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), 0.0, 60.0, 0.0);
    }
    tr.contact_time = 0.1;
    tr.release_time = 0.4;
    const auto m = extract_metrics(tr);
    CHECK(m.peak_jerk == 0.0);
    CHECK(m.peak_force == 0.0);
    CHECK(m.success);
    CHECK(m.duration == doctest::Approx(0.3));
  }

  TEST_CASE("no release means failure over the full horizon") {
    RolloutTrace tr;
    tr.dt = 0.001;
    tr.horizon = 3.0;
    tr.push(0.0, ArmState{}, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), 0.0, 60.0, 0.0);
    tr.contact_time = 0.0;
    const auto m = extract_metrics(tr);
    CHECK_FALSE(m.success);
    CHECK(m.duration == 3.0);
  }

  TEST_CASE("frozen fixture trace reproduces its metrics") {
    std::ifstream in(HANDOVER_FIXTURE_DIR "/trace_initial_s03.tsv");
    REQUIRE(in.good());
    const auto tr = read_trace(in);
    CHECK(tr.size() == 557);
    const auto m = extract_metrics(tr);
    CHECK(m.success);
    CHECK(std::abs(m.duration - 0.30600000000000005) <= 1e-9);
    CHECK(std::abs(m.peak_force - 27.892844492143222) <= 1e-9);
    CHECK(std::abs(m.peak_jerk - 241.08365374219682) <= 1e-9);
  }

  TEST_CASE("trace text round-trips") {
    const auto tr = roll(kInitial, 0.7);
    std::stringstream ss;
    write_trace(ss, tr);
    const auto back = read_trace(ss);
    REQUIRE(back.size() == tr.size());
    CHECK(back.ee_vel == tr.ee_vel);
    CHECK(back.release_time == tr.release_time);
    const auto m = extract_metrics(back);
    CHECK(m.peak_jerk == tr.peak_jerk);
    CHECK(m.peak_force == tr.peak_force);
  }

  TEST_CASE("failed metrics are worse than any success") {
    const auto f = failed_metrics(SimConfig{});
    CHECK_FALSE(f.success);
    CHECK(f.duration == SimConfig{}.horizon);
    CHECK(f.peak_force >= roll(kInitial, 1.0).peak_force);
  }
}
