#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Core>

#include "core/random.hpp"
#include "core/types.hpp"

namespace handover {

// Hand frame: x is the approach axis (the human arrives from -x), y is
// vertical and load-bearing, z is lateral.
struct HumanProfile {
  double start_distance = 1.3;      // m, hand to object at t = 0
  double approach_elevation = 0.44; // rad, hand rises toward the object
  double stiffness = 2000.0;        // N/m, arm impedance once grasping
  double damping = 10.0;            // Ns/m
  double settle_time = 0.2;         // s, post-contact deceleration time constant
  double grasp_time = 0.015;        // s, grasp engagement time constant
  double pull_ramp_rate = 29.0;     // N/s at zero hand speed
  double pull_speed_gain = 14.0;    // s/m, ramp rate scales by 1 + gain * speed
  double ramp_jitter = 0.1;         // relative, uniform +-
  double support_share = 1.0;       // vertical support per unit pull
  double wrist_stiffness = 5.0;     // Nm/rad
  double wrist_damping = 0.05;      // Nms/rad
  double orientation_offset = 0.3;  // rad, human grasp orientation mismatch
};

struct SimConfig {
  double ee_mass = 1.0;            // kg, stands in for the arm inertia M
  double rot_inertia = 0.02;       // kg m^2
  double object_weight = 20.0;     // N
  double dt = 0.001;               // s
  double horizon = 3.0;            // s, longest contact phase before failure
  double plan_speed = 0.2;         // m/s, reference path speed limit
  double stop_time = 0.05;         // s, reference deceleration after contact
  double contact_distance = 0.02;  // m
  double prediction_window = 1.0;  // s of hand extrapolation below d_min
  double finger_closed = 60.0;     // mm
  double finger_open = 110.0;      // mm
  double finger_gain = 2.0;        // mm/N beyond the release load
  double lever_arm = 0.08;         // m, converts wrist torque to grasp force
  double jerk_filter_time = 0.04;  // s
  double post_release_tail = 0.05; // s
  double max_approach_time = 40.0; // s
  HumanProfile human;

  void validate() const;
};

// ---- trajectory generator ----

enum class TrackingMode { Hold, Track, Predict };

// Hold the pose while the hand is beyond d_max, follow it inside d_max, and
// below d_min extrapolate the hand at constant velocity frozen at the
// crossing instant (for at most the prediction window).
class ReferenceGenerator {
 public:
  ReferenceGenerator(double d_min_m, double d_max_m, double prediction_window,
                     const Eigen::Vector3d& hold_pose);

  Eigen::Vector3d target(const Eigen::Vector3d& hand_pos, const Eigen::Vector3d& hand_vel,
                         const Eigen::Vector3d& ee_pos, double t);
  TrackingMode mode() const noexcept { return mode_; }

 private:
  double d_min_;
  double d_max_;
  double window_;
  Eigen::Vector3d hold_;
  TrackingMode mode_ = TrackingMode::Hold;
  Eigen::Vector3d frozen_pos_ = Eigen::Vector3d::Zero();
  Eigen::Vector3d frozen_vel_ = Eigen::Vector3d::Zero();
  double frozen_t_ = 0.0;
};

// Stateless single query: hold / track rule only (no memory of a crossing).
TrackingMode tracking_mode(double distance_m, double d_min_m, double d_max_m) noexcept;

// ---- impedance controller ----

struct ArmState {
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
  Eigen::Vector3d vel = Eigen::Vector3d::Zero();
  double angle = 0.0;
  double ang_vel = 0.0;
};

struct ArmTarget {
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
  Eigen::Vector3d vel = Eigen::Vector3d::Zero();
  double angle = 0.0;
};

struct ImpedanceStep {
  ArmState next;
  Eigen::Vector3d control_force = Eigen::Vector3d::Zero();
  double control_torque = 0.0;
};

Eigen::Vector3d translational_stiffness(const ControllerParams& params);
// D = 2 sqrt(P m), critical damping per axis.
double critical_damping(double stiffness, double mass);

// F = -P dx - D dv per axis; semi-implicit Euler at cfg.dt.
ImpedanceStep impedance_step(const ArmState& state, const ArmTarget& target,
                             const ControllerParams& params, const SimConfig& cfg,
                             const Eigen::Vector3d& external_force = Eigen::Vector3d::Zero(),
                             double external_torque = 0.0);

// ---- finger controller ----

// Fraction of the object weight the human must carry before the fingers open.
double release_fraction(double finger_slope) noexcept;

struct GripState {
  double aperture = 0.0;  // mm
  bool released = false;  // latched
};

GripState grip_step(double load_force, const ControllerParams& params, const SimConfig& cfg,
                    const GripState& previous);

// ---- rollout ----

struct RolloutTrace {
  std::vector<double> time;
  std::vector<Eigen::Vector3d> ee_pos;
  std::vector<Eigen::Vector3d> ee_vel;
  std::vector<Eigen::Vector3d> hand_pos;
  std::vector<Eigen::Vector3d> force;  // human on object, N
  std::vector<double> torque;          // Nm
  std::vector<double> aperture;        // mm
  std::vector<double> load;            // N

  double dt = 0.0;
  double horizon = 0.0;
  double lever_arm = 0.08;
  double jerk_filter_time = 0.04;
  double hand_speed = 0.0;
  std::optional<double> contact_time;
  std::optional<double> release_time;
  bool success = false;
  double duration = 0.0;
  double peak_force = 0.0;
  double peak_jerk = 0.0;

  std::size_t size() const noexcept { return time.size(); }
  void push(double t, const ArmState& arm, const Eigen::Vector3d& hand, const Eigen::Vector3d& f,
            double tau, double aperture_mm, double load_n);
};

struct HandoverMetrics {
  double duration = 0.0;    // s, contact to release
  double peak_force = 0.0;  // N
  double peak_jerk = 0.0;   // m/s^3
  bool success = false;
};

// Worst-case metrics assigned to diverged rollouts.
HandoverMetrics failed_metrics(const SimConfig& cfg);

// Throws ErrorCode::DivergedRollout on any non-finite state.
RolloutTrace simulate_handover(const ControllerParams& params, const Context& s,
                               const SimConfig& cfg, RandomSource& rng);

HandoverMetrics extract_metrics(const RolloutTrace& trace);

// Columnar text: '#' scalar lines, a header naming units, one row per step.
void write_trace(std::ostream& out, const RolloutTrace& trace, std::size_t stride = 1);
RolloutTrace read_trace(std::istream& in);

}  // namespace handover
