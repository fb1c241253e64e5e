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

// Escape-attempt harness: runs each scripted attacker behavior against a
// fresh victim compartment and verifies that it faults (or errors) as
// expected while the victim's memory stays bit-identical.

#include "capvm/attacks.hpp"

#include <chrono>
#include <thread>

#include "capvm/guest.hpp"
#include "capvm/intravisor.hpp"
#include "capvm/layout.hpp"

namespace capvm {

namespace {

bool wait_console_contains(Intravisor& iv, Cvm& cvm, const std::string& text,
                           std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (iv.console_of(cvm).find(text) != std::string::npos) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  return false;
}

// Polls the attacker's in-memory flag byte (replay behavior handshake).
bool wait_flag_value(Intravisor& iv, uint64_t addr, uint8_t value,
                     std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (iv.machine().mem().snapshot(addr, 1)[0] == value) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  return false;
}

std::string observed_outcome(Intravisor& iv, Cvm& attacker) {
  std::string fault;
  {
    std::lock_guard<std::mutex> lk(attacker.mu);
    fault = attacker.fault;
  }
  if (!fault.empty()) {
    size_t colon = fault.find(':');
    return colon == std::string::npos ? fault : fault.substr(0, colon);
  }
  std::string console = iv.console_of(attacker);
  size_t at = console.find("result=");
  if (at != std::string::npos) {
    size_t end = console.find('\n', at);
    return console.substr(at + 7, end - at - 7);
  }
  return "NONE";
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& attack_behaviors() {
  static const std::vector<std::pair<std::string, std::string>> kBehaviors = {
      {"oob_load", "BOUNDS"},
      {"oob_store", "BOUNDS"},
      {"forge_tag", "TAG"},
      {"store_grant_cap", "PERM"},
      {"mismatched_pair", "SEAL_MISMATCH"},
      {"data_as_code", "PERM"},
      {"replay_revoked", "TAG"},
      {"widen_bounds", "MONOTONICITY"},
      {"unseal_affix", "PERM"},
      {"mutate_sealed", "SEALED_IMMUTABLE"},
      {"hostcall_oob_id", "BAD_HOSTCALL"},
      {"cross_pair_affix", "PERM"},
      {"write_via_readonly_grant", "PERM"},
  };
  return kBehaviors;
}

std::vector<AttackOutcome> run_attacker_suite(Intravisor& iv) {
  std::vector<AttackOutcome> outcomes;
  int round = 0;
  for (const auto& [behavior, expected] : attack_behaviors()) {
    AttackOutcome outcome;
    outcome.behavior = behavior;
    outcome.expected = expected;

    std::string key = "victim.buf" + std::to_string(round);
    DeploymentConfig victim_cfg;
    victim_cfg.name = "victim" + std::to_string(round);
    victim_cfg.heap_size = 64 << 10;
    victim_cfg.stack_count = 1;
    victim_cfg.stack_size = 16 << 10;
    victim_cfg.programs = {"victim"};
    victim_cfg.entry_args = {"key=" + key};
    victim_cfg.allowed_keys.push_back(
        AllowEntry{key, PermSet(Perm::kRead), "attacker*"});

    DeploymentConfig attacker_cfg;
    attacker_cfg.name = "attacker" + std::to_string(round);
    attacker_cfg.heap_size = 64 << 10;
    attacker_cfg.stack_count = 1;
    attacker_cfg.stack_size = 16 << 10;
    attacker_cfg.programs = {"attacker"};
    attacker_cfg.entry_args = {"behavior=" + behavior, "key=" + key};
    ++round;

    Cvm& victim = iv.cvm_make(victim_cfg);
    if (!wait_console_contains(iv, victim, "victim ready",
                               std::chrono::milliseconds(5000))) {
      outcome.observed = "victim did not come up";
      outcomes.push_back(outcome);
      continue;
    }

    auto before = iv.machine().mem().snapshot(victim.base, victim.length);
    auto tags_before =
        iv.machine().mem().tag_snapshot(victim.base, victim.length);

    Cvm& attacker = iv.cvm_make(attacker_cfg);
    if (behavior == "replay_revoked") {
      // Handshake: the attacker raises a flag in its own memory once it has
      // stashed the granted capability in a register; the victim then
      // revokes, and the flag is advanced to release the attacker.
      uint64_t flag = layout::align_up(
          attacker.progs[0].heap_base, 16);
      if (wait_flag_value(iv, flag, 1, std::chrono::milliseconds(5000))) {
        iv.revoke(victim, key);
        // Re-baseline after the legitimate donor-side teardown.
        before = iv.machine().mem().snapshot(victim.base, victim.length);
        tags_before =
            iv.machine().mem().tag_snapshot(victim.base, victim.length);
        uint8_t released = 2;
        iv.machine().mem().write_bytes(
            flag, std::span<const uint8_t>(&released, 1));
      }
    }
    iv.wait(attacker);

    outcome.observed = observed_outcome(iv, attacker);
    auto after = iv.machine().mem().snapshot(victim.base, victim.length);
    auto tags_after =
        iv.machine().mem().tag_snapshot(victim.base, victim.length);
    outcome.victim_intact = (after == before) && (tags_after == tags_before);
    outcome.contained = (outcome.observed == expected);
    outcomes.push_back(outcome);
  }
  return outcomes;
}

}  // namespace capvm
