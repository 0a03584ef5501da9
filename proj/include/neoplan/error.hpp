// Copyright 2026 The NeoPlan Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neoplan {

enum class ErrorCode {
  kInvalidArgument,
  kCycleDetected,
  kShapeMismatch,
  kIndivisibleChannel,
  kWrongLayout,
  kScheduleInvalid,
  kNonConstantStatistics,
  kAssignmentIncomplete,
  kStateExplosion,
  kPlanTimeout,
  kInfeasible,
  kMissingSchedule,
  kIoError,
  kCorruptDb,
  kCorruptModel,
  kInputMismatch,
  kValidation,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kIndivisibleChannel: return "IndivisibleChannel";
    case ErrorCode::kWrongLayout: return "WrongLayout";
    case ErrorCode::kScheduleInvalid: return "ScheduleInvalid";
    case ErrorCode::kNonConstantStatistics: return "NonConstantStatistics";
    case ErrorCode::kAssignmentIncomplete: return "AssignmentIncomplete";
    case ErrorCode::kStateExplosion: return "StateExplosion";
    case ErrorCode::kPlanTimeout: return "PlanTimeout";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kMissingSchedule: return "MissingSchedule";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kCorruptDb: return "CorruptDb";
    case ErrorCode::kCorruptModel: return "CorruptModel";
    case ErrorCode::kInputMismatch: return "InputMismatch";
    case ErrorCode::kValidation: return "Validation";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code and,
/// when one is responsible, the id of the offending graph node.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, int node = -1)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code),
        node_(node) {}

  ErrorCode code() const noexcept { return code_; }
  int node() const noexcept { return node_; }

 private:
  ErrorCode code_;
  int node_;
};

#define NEOPLAN_CHECK(cond, code, msg)                   \
  do {                                                   \
    if (!(cond)) throw ::neoplan::Error((code), (msg));  \
  } while (0)

}  // namespace neoplan
