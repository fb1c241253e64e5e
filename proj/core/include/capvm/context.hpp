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

#ifndef CAPVM_CONTEXT_HPP_
#define CAPVM_CONTEXT_HPP_

#include <array>
#include <cstdint>
#include <mutex>
#include <vector>

#include "capvm/caps.hpp"

namespace capvm {

// Capability register index of ct6, the register cinvoke unseals the data
// capability into.
inline constexpr int kCt6 = 31;
inline constexpr int kNumCregs = 32;

// Names an authority for a machine operation: the default data capability,
// the program counter capability, or a numbered capability register. Guest
// code never passes capability values into the machine; it names registers.
struct Auth {
  enum class Kind : uint8_t { kDdc, kPcc, kReg };

  static constexpr Auth ddc() { return Auth{Kind::kDdc, 0}; }
  static constexpr Auth pcc() { return Auth{Kind::kPcc, 0}; }
  static constexpr Auth reg(int i) {
    return Auth{Kind::kReg, static_cast<uint8_t>(i)};
  }

  Kind kind;
  uint8_t index;
};

// Integer argument registers visible across domain transitions.
struct IntRegs {
  std::array<uint64_t, 6> a{};  // a0..a5
  uint64_t t0 = 0;
  uint64_t tp = 0;
};

// Per-execution-context register file. Every memory access a compartment
// performs is authorized by ddc, pcc or a named capability register of its
// context; there is no raw path. A context is driven by at most one host
// thread at a time, but the machine may scrub its registers from another
// thread during revocation, hence the internal lock.
class CompartmentContext {
 public:
  explicit CompartmentContext(uint32_t owner) : owner_(owner) {}

  CompartmentContext(const CompartmentContext&) = delete;
  CompartmentContext& operator=(const CompartmentContext&) = delete;

  uint32_t owner() const { return owner_; }
  uint64_t domain() const { return domain_; }

  IntRegs iregs;

 private:
  friend class Machine;

  struct TransitionFrame {
    uint64_t caller_domain;
  };

  uint32_t owner_;
  Capability pcc_;
  Capability ddc_;
  std::array<Capability, kNumCregs> cregs_{};
  // Domain key of the code currently executing through this context.
  // 0 is the monitor; compartment layers get their own keys.
  uint64_t domain_ = 0;
  bool resume_pending_ = false;
  std::vector<TransitionFrame> transitions_;
  mutable std::mutex mu_;
};

}  // namespace capvm

#endif  // CAPVM_CONTEXT_HPP_
