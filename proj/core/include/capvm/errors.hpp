// Copyright 2026 The capvm Authors
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

#ifndef CAPVM_ERRORS_HPP_
#define CAPVM_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace capvm {

// Error codes crossing the guest-facing interfaces. They travel negated in
// integer result registers: values >= 0 are successful results.
enum class Err : int32_t {
  kOk = 0,
  kNoSuchKey = 1,
  kAccessDenied = 2,
  kRevoked = 3,
  kDuplicateKey = 4,
  kRangeNotOwned = 5,
  kNotOwner = 6,
  kNoSuchHandle = 7,
  kDuplicateId = 8,
  kWouldBlock = 9,
  kTimeout = 10,
  kQueueFull = 11,
  kStackPoolExhausted = 12,
  kCalleeFault = 13,
  kBadHostcall = 14,
  kUnknownFunc = 15,
  kBadDescriptor = 16,
  kNoSys = 17,
  kOutOfSpace = 18,
  kUnknownProgram = 19,
  kConfigInvalid = 20,
  kSizeTooLarge = 21,
  kPermDenied = 22,
  kOutOfBounds = 23,
  kFault = 24,
  kInvalidArg = 25,
  kTerminated = 26,
};

const char* err_name(Err e);

inline int64_t err_value(Err e) { return -static_cast<int64_t>(e); }
inline bool is_err(int64_t v) { return v < 0; }
inline Err err_of(int64_t v) {
  return v < 0 ? static_cast<Err>(-v) : Err::kOk;
}

// Host-level failure of a monitor operation (configuration, creation, and
// other APIs not driven through guest registers).
class MonitorError : public std::runtime_error {
 public:
  MonitorError(Err code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

}  // namespace capvm

#endif  // CAPVM_ERRORS_HPP_
