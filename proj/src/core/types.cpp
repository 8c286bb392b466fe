#include "core/types.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace handover {

void ContextBounds::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    fail(ErrorCode::InvalidArgument, "context bounds must be finite with lo < hi");
  }
}

Context::Context(double hand_speed) : hand_speed_(hand_speed) {
  if (!std::isfinite(hand_speed)) {
    fail(ErrorCode::InvalidArgument, "context hand speed must be finite");
  }
}

Eigen::VectorXd Context::features() const {
  Eigen::VectorXd s(kContextDim);
  s(0) = hand_speed_;
  return s;
}

bool Context::within(const ContextBounds& bounds) const noexcept {
  return hand_speed_ >= bounds.lo && hand_speed_ <= bounds.hi;
}

const char* param_name(Param p) noexcept {
  switch (p) {
    case Param::RotStiffness: return "rot_stiffness";
    case Param::TransStiffnessX: return "trans_stiffness_x";
    case Param::TransStiffnessY: return "trans_stiffness_y";
    case Param::TransStiffnessZ: return "trans_stiffness_z";
    case Param::FingerSlope: return "finger_slope";
    case Param::DMin: return "d_min";
    case Param::DMax: return "d_max";
  }
  return "?";
}

const char* param_unit(Param p) noexcept {
  switch (p) {
    case Param::RotStiffness: return "Nm/rad";
    case Param::TransStiffnessX:
    case Param::TransStiffnessY:
    case Param::TransStiffnessZ: return "N/m";
    case Param::FingerSlope: return "1/N";
    case Param::DMin:
    case Param::DMax: return "mm";
  }
  return "?";
}

void ParamBounds::validate() const {
  for (std::size_t i = 0; i < kParamDim; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] < hi[i])) {
      fail(ErrorCode::InvalidArgument,
           std::string("parameter bounds invalid for ") + param_name(static_cast<Param>(i)));
    }
  }
  if (lo[0] < 0.0 || lo[1] < 0.0 || lo[2] < 0.0 || lo[3] < 0.0 || lo[4] < 0.0) {
    fail(ErrorCode::InvalidArgument, "stiffness and slope bounds must be non-negative");
  }
  if (!(lo[5] > 0.0) || !(hi[6] - 1.0 > lo[5])) {
    fail(ErrorCode::InvalidArgument, "tracking distance bounds cannot satisfy 0 < d_min < d_max");
  }
}

std::array<double, kParamDim> ControllerParams::to_array() const noexcept {
  return {rot_stiffness, trans_stiffness_x, trans_stiffness_y, trans_stiffness_z,
          finger_slope,  d_min,             d_max};
}

Eigen::VectorXd ControllerParams::to_vector() const {
  const auto a = to_array();
  return Eigen::Map<const Eigen::VectorXd>(a.data(), kParamDim);
}

double ControllerParams::operator[](Param p) const noexcept {
  return to_array()[static_cast<std::size_t>(p)];
}

void ControllerParams::validate() const {
  const auto a = to_array();
  for (double v : a) {
    if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "controller parameters must be finite");
  }
  if (rot_stiffness < 0 || trans_stiffness_x < 0 || trans_stiffness_y < 0 ||
      trans_stiffness_z < 0 || finger_slope < 0) {
    fail(ErrorCode::InvalidArgument, "stiffnesses and finger slope must be non-negative");
  }
  if (!(d_min > 0.0) || !(d_min < d_max)) {
    fail(ErrorCode::InvalidArgument, "tracking distances must satisfy 0 < d_min < d_max");
  }
}

ControllerParams clamp_params(std::span<const double> raw, const ParamBounds& bounds) {
  if (raw.size() != kParamDim) {
    fail(ErrorCode::InvalidArgument, "controller parameter vector must have 7 entries");
  }
  std::array<double, kParamDim> v{};
  for (std::size_t i = 0; i < kParamDim; ++i) {
    if (!std::isfinite(raw[i])) {
      fail(ErrorCode::InvalidArgument, "non-finite controller parameter draw rejected");
    }
    v[i] = std::clamp(raw[i], bounds.lo[i], bounds.hi[i]);
  }
  ControllerParams p{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  if (p.d_min >= p.d_max) p.d_min = p.d_max - 1.0;
  return p;
}

JointPoint JointPoint::make(const Context& s, const ControllerParams& a) {
  JointPoint p;
  p.y.resize(kJointDim);
  p.y(0) = s.hand_speed();
  p.y.tail(kParamDim) = a.to_vector();
  return p;
}

FeedbackEvent FeedbackEvent::absolute(ExperimentId sample_id, double value) {
  if (!std::isfinite(value)) fail(ErrorCode::InvalidArgument, "rating must be finite");
  return FeedbackEvent(AbsoluteFeedback{sample_id, std::clamp(value, kRatingMin, kRatingMax)});
}

FeedbackEvent FeedbackEvent::preference(ExperimentId winner_id, ExperimentId loser_id) {
  if (winner_id == loser_id) {
    fail(ErrorCode::InvalidArgument, "preference must compare two distinct experiments");
  }
  return FeedbackEvent(PreferenceFeedback{winner_id, loser_id});
}

const AbsoluteFeedback& FeedbackEvent::as_absolute() const {
  if (const auto* a = std::get_if<AbsoluteFeedback>(&kind_)) return *a;
  fail(ErrorCode::State, "feedback event is not absolute");
}

const PreferenceFeedback& FeedbackEvent::as_preference() const {
  if (const auto* p = std::get_if<PreferenceFeedback>(&kind_)) return *p;
  fail(ErrorCode::State, "feedback event is not a preference");
}

std::vector<ExperimentId> FeedbackEvent::referenced_ids() const {
  if (is_absolute()) return {as_absolute().sample_id};
  const auto& p = as_preference();
  return {p.winner_id, p.loser_id};
}

}  // namespace handover
