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

#ifndef CAPVM_ATTACKS_HPP_
#define CAPVM_ATTACKS_HPP_

#include <string>
#include <vector>

namespace capvm {

class Intravisor;

// One scripted escape attempt and its verdict. `contained` means the
// observed outcome matched the expected fault or error and the victim's
// memory was bit-identical before and after.
struct AttackOutcome {
  std::string behavior;
  std::string expected;
  std::string observed;
  bool contained = false;
  bool victim_intact = false;

  bool escaped() const { return !contained || !victim_intact; }
};

// The scripted behaviors the attacker program understands.
const std::vector<std::pair<std::string, std::string>>& attack_behaviors();

// Runs every behavior against a fresh victim/attacker pair and reports the
// outcomes. Zero escapes is the expected result.
std::vector<AttackOutcome> run_attacker_suite(Intravisor& iv);

}  // namespace capvm

#endif  // CAPVM_ATTACKS_HPP_
