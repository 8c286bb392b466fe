#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace handover {

inline constexpr std::size_t kParamDim = 7;
inline constexpr std::size_t kContextDim = 1;
inline constexpr std::size_t kJointDim = kContextDim + kParamDim;

using ExperimentId = std::int64_t;

struct ContextBounds {
  double lo = 0.1;  // m/s
  double hi = 1.0;

  void validate() const;
};

// Human hand approach speed in m/s.
class Context {
 public:
  Context() = default;
  explicit Context(double hand_speed);

  double hand_speed() const noexcept { return hand_speed_; }
  Eigen::VectorXd features() const;  // [s]
  bool within(const ContextBounds& bounds) const noexcept;

 private:
  double hand_speed_ = 0.0;
};

// Parameter order matches the policy vector:
// rot, trans x, trans y, trans z, finger slope, d_min, d_max.
enum class Param : std::size_t {
  RotStiffness = 0,
  TransStiffnessX,
  TransStiffnessY,
  TransStiffnessZ,
  FingerSlope,
  DMin,
  DMax,
};

const char* param_name(Param p) noexcept;
const char* param_unit(Param p) noexcept;

struct ParamBounds {
  std::array<double, kParamDim> lo{0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 300.0};
  std::array<double, kParamDim> hi{10.0, 1000.0, 1000.0, 1000.0, 5.0, 500.0, 1200.0};

  void validate() const;
};

struct ControllerParams {
  double rot_stiffness = 0.0;      // Nm/rad
  double trans_stiffness_x = 0.0;  // N/m
  double trans_stiffness_y = 0.0;
  double trans_stiffness_z = 0.0;
  double finger_slope = 0.0;       // 1/N
  double d_min = 0.0;              // mm
  double d_max = 0.0;              // mm

  std::array<double, kParamDim> to_array() const noexcept;
  Eigen::VectorXd to_vector() const;
  double operator[](Param p) const noexcept;

  // Throws if any invariant fails (finite, non-negative gains, 0 < d_min < d_max).
  void validate() const;

  friend bool operator==(const ControllerParams&, const ControllerParams&) = default;
};

// Projects a raw draw into the bounds; keeps d_min strictly below d_max.
ControllerParams clamp_params(std::span<const double> raw, const ParamBounds& bounds);

// y = [s, a]
struct JointPoint {
  Eigen::VectorXd y;

  static JointPoint make(const Context& s, const ControllerParams& a);
};

struct AbsoluteFeedback {
  ExperimentId sample_id = 0;
  double value = 0.0;  // [1, 10]

  friend bool operator==(const AbsoluteFeedback&, const AbsoluteFeedback&) = default;
};

struct PreferenceFeedback {
  ExperimentId winner_id = 0;
  ExperimentId loser_id = 0;

  friend bool operator==(const PreferenceFeedback&, const PreferenceFeedback&) = default;
};

inline constexpr double kRatingMin = 1.0;
inline constexpr double kRatingMax = 10.0;

class FeedbackEvent {
 public:
  static FeedbackEvent absolute(ExperimentId sample_id, double value);
  static FeedbackEvent preference(ExperimentId winner_id, ExperimentId loser_id);

  bool is_absolute() const noexcept { return std::holds_alternative<AbsoluteFeedback>(kind_); }
  const AbsoluteFeedback& as_absolute() const;
  const PreferenceFeedback& as_preference() const;

  // Ids the event refers to.
  std::vector<ExperimentId> referenced_ids() const;

  friend bool operator==(const FeedbackEvent&, const FeedbackEvent&) = default;

 private:
  explicit FeedbackEvent(std::variant<AbsoluteFeedback, PreferenceFeedback> kind)
      : kind_(kind) {}

  std::variant<AbsoluteFeedback, PreferenceFeedback> kind_;
};

struct ExperimentRecord {
  ExperimentId id = 0;
  Context context;
  ControllerParams params;
  std::vector<std::size_t> feedback;  // indices into the trial's feedback log
  std::optional<double> latent_reward;
};

}  // namespace handover
