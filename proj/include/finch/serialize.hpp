#pragma once

#include <string>

#include <json.hpp>

#include "finch/context_mlp.hpp"
#include "finch/diagnostics.hpp"
#include "finch/metrics.hpp"
#include "finch/model.hpp"
#include "finch/synthetic.hpp"
#include "finch/training.hpp"

namespace finch {

using Json = nlohmann::json;

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const GateParameters& gate);
GateParameters gate_from_json(const Json& j);

Json to_json(const StageCheckpoint& ckpt);
// Throws MalformedFile when fields are missing or disagree with the stage tag.
StageCheckpoint checkpoint_from_json(const Json& j);

Json to_json(const EvalReport& report);
Json to_json(const EpochMetrics& metrics);
Json to_json(const DependenceReport& report);
Json to_json(const SyntheticConfig& config);

Json to_json(const ContextMlp& model);
ContextMlp context_mlp_from_json(const Json& j);

// Canonical text: sorted keys, two-space indent, trailing newline.
std::string canonical_dump(const Json& j);
// Single line, for line-delimited logs and CLI records.
std::string line_dump(const Json& j);

}  // namespace finch
