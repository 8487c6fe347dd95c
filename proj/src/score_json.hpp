#pragma once

#include <nlohmann/json.hpp>

#include "hs3/metrics.hpp"

// Internal JSON (de)serialization of ScoreSet shared by the run-record and
// benchmark-report writers so both emit the same field layout.
namespace hs3::detail {

nlohmann::ordered_json scores_to_json(const ScoreSet& s);
ScoreSet scores_from_json(const nlohmann::json& j);

}  // namespace hs3::detail
