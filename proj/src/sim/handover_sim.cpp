#include "sim/handover_sim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

#include "core/error.hpp"

namespace handover {

namespace {

constexpr double kMmToM = 1e-3;
constexpr double kPreContactWindow = 0.05;  // s of approach included in peak metrics

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(std::string("sim.") + field, what);
}

}  // namespace

void SimConfig::validate() const {
  require(std::isfinite(dt) && dt > 0.0 && dt <= 0.01, "dt", "must lie in (0, 0.01] s");
  require(std::isfinite(horizon) && horizon >= 3.0, "horizon", "must be at least 3 s");
  require(std::isfinite(object_weight) && object_weight > 0.0, "object_weight", "must be positive");
  require(std::isfinite(ee_mass) && ee_mass > 0.0, "ee_mass", "must be positive");
  require(std::isfinite(rot_inertia) && rot_inertia > 0.0, "rot_inertia", "must be positive");
  require(std::isfinite(plan_speed) && plan_speed > 0.0, "plan_speed", "must be positive");
  require(std::isfinite(stop_time) && stop_time > 0.0, "stop_time", "must be positive");
  require(std::isfinite(contact_distance) && contact_distance > 0.0, "contact_distance",
          "must be positive");
  require(std::isfinite(prediction_window) && prediction_window > 0.0, "prediction_window",
          "must be positive");
  require(finger_open > finger_closed && finger_closed >= 0.0, "finger_open",
          "must exceed finger_closed");
  require(std::isfinite(finger_gain) && finger_gain >= 0.0, "finger_gain", "must be non-negative");
  require(std::isfinite(lever_arm) && lever_arm > 0.0, "lever_arm", "must be positive");
  require(std::isfinite(jerk_filter_time) && jerk_filter_time >= dt, "jerk_filter_time",
          "must be at least dt");
  require(std::isfinite(post_release_tail) && post_release_tail >= 0.0, "post_release_tail",
          "must be non-negative");
  require(std::isfinite(max_approach_time) && max_approach_time > 0.0, "max_approach_time",
          "must be positive");
  const auto& h = human;
  require(std::isfinite(h.start_distance) && h.start_distance > contact_distance,
          "human.start_distance", "must exceed the contact distance");
  require(std::isfinite(h.approach_elevation) && std::abs(h.approach_elevation) < 1.5,
          "human.approach_elevation", "must be a finite angle below 1.5 rad");
  require(std::isfinite(h.stiffness) && h.stiffness > 0.0, "human.stiffness", "must be positive");
  require(std::isfinite(h.damping) && h.damping >= 0.0, "human.damping", "must be non-negative");
  require(std::isfinite(h.settle_time) && h.settle_time > 0.0, "human.settle_time",
          "must be positive");
  require(std::isfinite(h.grasp_time) && h.grasp_time > 0.0, "human.grasp_time", "must be positive");
  require(std::isfinite(h.pull_ramp_rate) && h.pull_ramp_rate >= 0.0, "human.pull_ramp_rate",
          "must be non-negative");
  require(std::isfinite(h.pull_speed_gain) && h.pull_speed_gain >= 0.0, "human.pull_speed_gain",
          "must be non-negative");
  require(std::isfinite(h.ramp_jitter) && h.ramp_jitter >= 0.0 && h.ramp_jitter < 1.0,
          "human.ramp_jitter", "must lie in [0, 1)");
  require(std::isfinite(h.support_share) && h.support_share >= 0.0, "human.support_share",
          "must be non-negative");
  require(std::isfinite(h.wrist_stiffness) && h.wrist_stiffness >= 0.0, "human.wrist_stiffness",
          "must be non-negative");
  require(std::isfinite(h.wrist_damping) && h.wrist_damping >= 0.0, "human.wrist_damping",
          "must be non-negative");
  require(std::isfinite(h.orientation_offset), "human.orientation_offset", "must be finite");
}

// ---- trajectory generator ----

TrackingMode tracking_mode(double distance_m, double d_min_m, double d_max_m) noexcept {
  if (distance_m > d_max_m) return TrackingMode::Hold;
  if (distance_m > d_min_m) return TrackingMode::Track;
  return TrackingMode::Predict;
}

ReferenceGenerator::ReferenceGenerator(double d_min_m, double d_max_m, double prediction_window,
                                       const Eigen::Vector3d& hold_pose)
    : d_min_(d_min_m), d_max_(d_max_m), window_(prediction_window), hold_(hold_pose) {
  if (!(d_min_m < d_max_m)) fail(ErrorCode::InvalidArgument, "d_min must be below d_max");
}

Eigen::Vector3d ReferenceGenerator::target(const Eigen::Vector3d& hand_pos,
                                           const Eigen::Vector3d& hand_vel,
                                           const Eigen::Vector3d& ee_pos, double t) {
  if (mode_ != TrackingMode::Predict) {
    mode_ = tracking_mode((hand_pos - ee_pos).norm(), d_min_, d_max_);
    if (mode_ == TrackingMode::Predict) {
      frozen_pos_ = hand_pos;
      frozen_vel_ = hand_vel;
      frozen_t_ = t;
    }
  }
  switch (mode_) {
    case TrackingMode::Hold: return hold_;
    case TrackingMode::Track: return hand_pos;
    case TrackingMode::Predict: break;
  }
  const double elapsed = std::min(t - frozen_t_, window_);
  return frozen_pos_ + frozen_vel_ * elapsed;
}

// ---- impedance controller ----

Eigen::Vector3d translational_stiffness(const ControllerParams& params) {
  return {params.trans_stiffness_x, params.trans_stiffness_y, params.trans_stiffness_z};
}

double critical_damping(double stiffness, double mass) {
  return 2.0 * std::sqrt(std::max(0.0, stiffness) * mass);
}

ImpedanceStep impedance_step(const ArmState& state, const ArmTarget& target,
                             const ControllerParams& params, const SimConfig& cfg,
                             const Eigen::Vector3d& external_force, double external_torque) {
  const Eigen::Vector3d p = translational_stiffness(params);
  ImpedanceStep out;
  for (int axis = 0; axis < 3; ++axis) {
    const double d = critical_damping(p(axis), cfg.ee_mass);
    out.control_force(axis) = -p(axis) * (state.pos(axis) - target.pos(axis)) -
                              d * (state.vel(axis) - target.vel(axis));
  }
  const double d_rot = critical_damping(params.rot_stiffness, cfg.rot_inertia);
  out.control_torque =
      -params.rot_stiffness * (state.angle - target.angle) - d_rot * state.ang_vel;

  const Eigen::Vector3d acc = (out.control_force + external_force) / cfg.ee_mass;
  const double ang_acc = (out.control_torque + external_torque) / cfg.rot_inertia;
  out.next.vel = state.vel + acc * cfg.dt;
  out.next.pos = state.pos + out.next.vel * cfg.dt;
  out.next.ang_vel = state.ang_vel + ang_acc * cfg.dt;
  out.next.angle = state.angle + out.next.ang_vel * cfg.dt;
  return out;
}

// ---- finger controller ----

double release_fraction(double finger_slope) noexcept { return 0.22 * std::max(0.0, finger_slope); }

GripState grip_step(double load_force, const ControllerParams& params, const SimConfig& cfg,
                    const GripState& previous) {
  if (!(load_force >= 0.0)) fail(ErrorCode::InvalidArgument, "load force must be non-negative");
  GripState next = previous;
  if (previous.released) {
    next.aperture = cfg.finger_open;
    return next;
  }
  const double threshold = release_fraction(params.finger_slope) * cfg.object_weight;
  next.aperture = std::min(cfg.finger_open,
                           cfg.finger_closed + cfg.finger_gain * std::max(0.0, load_force - threshold));
  if (load_force > 0.0 && load_force >= threshold) {
    next.released = true;
    next.aperture = cfg.finger_open;
  }
  return next;
}

// ---- rollout ----

void RolloutTrace::push(double t, const ArmState& arm, const Eigen::Vector3d& hand,
                        const Eigen::Vector3d& f, double tau, double aperture_mm, double load_n) {
  time.push_back(t);
  ee_pos.push_back(arm.pos);
  ee_vel.push_back(arm.vel);
  hand_pos.push_back(hand);
  force.push_back(f);
  torque.push_back(tau);
  aperture.push_back(aperture_mm);
  load.push_back(load_n);
}

HandoverMetrics failed_metrics(const SimConfig& cfg) {
  HandoverMetrics m;
  m.duration = cfg.horizon;
  m.peak_force = 10.0 * cfg.object_weight;
  m.peak_jerk = 1e4;
  m.success = false;
  return m;
}

RolloutTrace simulate_handover(const ControllerParams& params, const Context& s,
                               const SimConfig& cfg, RandomSource& rng) {
  cfg.validate();
  params.validate();
  const auto& human = cfg.human;
  const double speed = s.hand_speed();
  if (!(speed > 0.0)) fail(ErrorCode::InvalidArgument, "hand speed must be positive");

  const double ramp = human.pull_ramp_rate * (1.0 + human.pull_speed_gain * speed) *
                      (1.0 + human.ramp_jitter * rng.uniform(-1.0, 1.0));
  const Eigen::Vector3d approach(std::cos(human.approach_elevation),
                                 std::sin(human.approach_elevation), 0.0);
  const Eigen::Vector3d pull(-1.0, human.support_share, 0.0);
  const Eigen::Vector3d pull_dir = pull.normalized();

  RolloutTrace trace;
  trace.dt = cfg.dt;
  trace.horizon = cfg.horizon;
  trace.lever_arm = cfg.lever_arm;
  trace.jerk_filter_time = cfg.jerk_filter_time;
  trace.hand_speed = speed;

  ArmState arm;
  ArmTarget ref;
  GripState grip{cfg.finger_closed, false};
  ReferenceGenerator generator(params.d_min * kMmToM, params.d_max * kMmToM,
                               cfg.prediction_window, arm.pos);
  Eigen::Vector3d hand = -human.start_distance * approach;
  const Eigen::Vector3d hand_vel = speed * approach;

  bool contact = false;
  double t_contact = 0.0;
  Eigen::Vector3d hand_at_contact = Eigen::Vector3d::Zero();
  Eigen::Vector3d ee_at_contact = Eigen::Vector3d::Zero();
  std::optional<double> t_release;

  trace.push(0.0, arm, hand, Eigen::Vector3d::Zero(), 0.0, grip.aperture, 0.0);
  const double stop_decay = std::exp(-cfg.dt / cfg.stop_time);
  const auto max_steps = static_cast<long>((cfg.max_approach_time + cfg.horizon + 1.0) / cfg.dt);

  for (long step = 1; step <= max_steps; ++step) {
    const double t = step * cfg.dt;
    Eigen::Vector3d force = Eigen::Vector3d::Zero();
    double torque = 0.0;
    double load = 0.0;

    if (!contact) {
      if (t > cfg.max_approach_time) break;
      hand += hand_vel * cfg.dt;
      const Eigen::Vector3d goal = generator.target(hand, hand_vel, arm.pos, t);
      const Eigen::Vector3d delta = goal - ref.pos;
      const double max_move = cfg.plan_speed * cfg.dt;
      const double dist = delta.norm();
      const Eigen::Vector3d move = dist > max_move ? Eigen::Vector3d(delta * (max_move / dist)) : delta;
      ref.pos += move;
      ref.vel = move / cfg.dt;
    } else {
      // Contact stops the planner; the reference decelerates smoothly.
      ref.vel *= stop_decay;
      ref.pos += ref.vel * cfg.dt;
    }

    if (contact && !t_release) {
      const double tau = t - t_contact;
      const double settle = std::exp(-tau / human.settle_time);
      const double engage = 1.0 - std::exp(-tau / human.grasp_time);
      const Eigen::Vector3d eq_offset =
          approach * speed * human.settle_time * (1.0 - settle) + pull * (ramp * tau / human.stiffness);
      const Eigen::Vector3d eq_vel = approach * speed * settle + pull * (ramp / human.stiffness);
      hand = hand_at_contact + eq_offset;
      force = engage * (human.stiffness * (eq_offset - (arm.pos - ee_at_contact)) +
                        human.damping * (eq_vel - arm.vel));
      const double wrist_target = human.orientation_offset * (1.0 - settle);
      torque = engage * (human.wrist_stiffness * (wrist_target - arm.angle) -
                         human.wrist_damping * arm.ang_vel);
      // Only force along the pull/support direction transfers load; the
      // contact push does not.
      load = std::max(0.0, force.dot(pull_dir));
      grip = grip_step(load, params, cfg, grip);
      if (grip.released) t_release = t;
    } else if (t_release) {
      grip = grip_step(0.0, params, cfg, grip);
    }

    const auto stepped = impedance_step(arm, ref, params, cfg, force, torque);
    arm = stepped.next;
    if (!arm.pos.allFinite() || !arm.vel.allFinite() || !std::isfinite(arm.angle) ||
        !std::isfinite(arm.ang_vel) || !force.allFinite()) {
      fail(ErrorCode::DivergedRollout, "handover rollout diverged");
    }
    trace.push(t, arm, hand, force, torque, grip.aperture, load);

    if (!contact && (hand - arm.pos).norm() <= cfg.contact_distance) {
      contact = true;
      t_contact = t;
      hand_at_contact = hand;
      ee_at_contact = arm.pos;
    }
    if (t_release && t >= *t_release + cfg.post_release_tail) break;
    if (contact && !t_release && t - t_contact >= cfg.horizon) break;
  }

  if (contact) trace.contact_time = t_contact;
  trace.release_time = t_release;
  const auto m = extract_metrics(trace);
  trace.success = m.success;
  trace.duration = m.duration;
  trace.peak_force = m.peak_force;
  trace.peak_jerk = m.peak_jerk;
  return trace;
}

HandoverMetrics extract_metrics(const RolloutTrace& trace) {
  HandoverMetrics m;
  const std::size_t n = trace.size();
  m.success = trace.release_time.has_value() && trace.contact_time.has_value();
  m.duration = m.success ? std::min(*trace.release_time - *trace.contact_time, trace.horizon)
                         : trace.horizon;
  if (n == 0) return m;

  const double t_lo = trace.contact_time ? *trace.contact_time - kPreContactWindow : trace.time.front();
  const double t_hi = trace.release_time ? *trace.release_time : trace.time.back();
  const double alpha = std::min(1.0, trace.dt / trace.jerk_filter_time);

  Eigen::Vector3d acc_f = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = trace.time[k];
    const bool in_window = t >= t_lo - 1e-12 && t <= t_hi + 1e-12;
    if (in_window) {
      const double f = trace.force[k].norm() + std::abs(trace.torque[k]) / trace.lever_arm;
      m.peak_force = std::max(m.peak_force, f);
    }
    if (k == 0) continue;
    const Eigen::Vector3d acc = (trace.ee_vel[k] - trace.ee_vel[k - 1]) / trace.dt;
    const Eigen::Vector3d prev = acc_f;
    acc_f += alpha * (acc - acc_f);
    if (in_window && k >= 2) m.peak_jerk = std::max(m.peak_jerk, (acc_f - prev).norm() / trace.dt);
  }
  return m;
}

void write_trace(std::ostream& out, const RolloutTrace& trace, std::size_t stride) {
  if (stride == 0) stride = 1;
  out << std::setprecision(17);
  out << "# handover-trace 1\n";
  out << "# dt " << trace.dt << '\n';
  out << "# horizon " << trace.horizon << '\n';
  out << "# lever_arm " << trace.lever_arm << '\n';
  out << "# jerk_filter_time " << trace.jerk_filter_time << '\n';
  out << "# hand_speed " << trace.hand_speed << '\n';
  if (trace.contact_time) out << "# contact_time " << *trace.contact_time << '\n';
  if (trace.release_time) out << "# release_time " << *trace.release_time << '\n';
  out << "# success " << (trace.success ? 1 : 0) << '\n';
  out << "# duration " << trace.duration << '\n';
  out << "# peak_force " << trace.peak_force << '\n';
  out << "# peak_jerk " << trace.peak_jerk << '\n';
  out << "t_s\tee_x_m\tee_y_m\tee_z_m\tee_vx_mps\tee_vy_mps\tee_vz_mps\thand_x_m\thand_y_m\thand_z_m"
         "\tforce_x_N\tforce_y_N\tforce_z_N\ttorque_Nm\taperture_mm\tload_N\n";
  for (std::size_t k = 0; k < trace.size(); k += stride) {
    out << trace.time[k];
    for (const auto* v : {&trace.ee_pos[k], &trace.ee_vel[k], &trace.hand_pos[k], &trace.force[k]}) {
      out << '\t' << (*v)(0) << '\t' << (*v)(1) << '\t' << (*v)(2);
    }
    out << '\t' << trace.torque[k] << '\t' << trace.aperture[k] << '\t' << trace.load[k] << '\n';
  }
}

RolloutTrace read_trace(std::istream& in) {
  RolloutTrace trace;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      double value = 0;
      ls >> key;
      if (key == "handover-trace") continue;
      if (!(ls >> value)) fail(ErrorCode::InvalidArgument, "trace: malformed scalar line");
      if (key == "dt") trace.dt = value;
      else if (key == "horizon") trace.horizon = value;
      else if (key == "lever_arm") trace.lever_arm = value;
      else if (key == "jerk_filter_time") trace.jerk_filter_time = value;
      else if (key == "hand_speed") trace.hand_speed = value;
      else if (key == "contact_time") trace.contact_time = value;
      else if (key == "release_time") trace.release_time = value;
      else if (key == "success") trace.success = value != 0.0;
      else if (key == "duration") trace.duration = value;
      else if (key == "peak_force") trace.peak_force = value;
      else if (key == "peak_jerk") trace.peak_jerk = value;
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    std::istringstream ls(line);
    double v[16];
    for (double& x : v) {
      if (!(ls >> x)) fail(ErrorCode::InvalidArgument, "trace: malformed data row");
    }
    trace.time.push_back(v[0]);
    trace.ee_pos.emplace_back(v[1], v[2], v[3]);
    trace.ee_vel.emplace_back(v[4], v[5], v[6]);
    trace.hand_pos.emplace_back(v[7], v[8], v[9]);
    trace.force.emplace_back(v[10], v[11], v[12]);
    trace.torque.push_back(v[13]);
    trace.aperture.push_back(v[14]);
    trace.load.push_back(v[15]);
  }
  if (!(trace.dt > 0.0)) fail(ErrorCode::InvalidArgument, "trace: missing dt");
  return trace;
}

}  // namespace handover
