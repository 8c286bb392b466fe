#pragma once

#include <json.hpp>

#include "loop/learn_loop.hpp"

namespace handover {

nlohmann::json params_json(const ControllerParams& p);
ControllerParams params_from_json(const nlohmann::json& j);

nlohmann::json feedback_json(const FeedbackEvent& e);
FeedbackEvent feedback_from_json(const nlohmann::json& j);

// One dataset.jsonl line.
nlohmann::json record_json(const ExperimentRecord& r, const ExperimentOutcome& o);
void record_from_json(const nlohmann::json& j, ExperimentRecord& r, ExperimentOutcome& o);

nlohmann::json metrics_json(const HandoverMetrics& m);

// One log.jsonl line. Deterministic: no timing, no absolute paths.
nlohmann::json iteration_json(const IterationLog& log);
IterationLog iteration_from_json(const nlohmann::json& j);

nlohmann::json timing_json(const IterationTiming& t);

// Offset, context gain and std per parameter, plus the snapshot text.
nlohmann::json policy_summary_json(const GaussianContextualPolicy& policy);

// Trace columns from `lead` seconds before contact to the end, every
// `stride` steps; the whole trace when there was no contact.
nlohmann::json trace_json(const RolloutTrace& trace, double lead = 1.0, std::size_t stride = 5);

std::string fingerprint_hex(std::uint64_t fp);
std::uint64_t fingerprint_from_hex(const std::string& hex);

}  // namespace handover
