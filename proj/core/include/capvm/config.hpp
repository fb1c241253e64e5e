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

#ifndef CAPVM_CONFIG_HPP_
#define CAPVM_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capvm/caps.hpp"

namespace capvm {

// One access-control entry of a deployment: which peers may obtain which
// rights on keys the compartment advertises. `key` and `peer` accept a
// trailing '*' wildcard.
struct AllowEntry {
  std::string key;
  PermSet rights;  // subset of {READ, WRITE}
  std::string peer;

  bool key_matches(const std::string& k) const;
  bool peer_matches(const std::string& p) const;
};

// Deployment description of one compartment. The file format fills a single
// program; builders may attach more than one program to a compartment to
// host several mutually isolated programs over one library OS instance.
struct DeploymentConfig {
  std::string name;
  uint64_t heap_size = 1 << 20;
  uint32_t stack_count = 4;
  uint64_t stack_size = 64 << 10;
  std::optional<std::string> disk_image;
  std::vector<std::string> programs;
  std::vector<std::string> entry_args;
  std::vector<AllowEntry> allowed_keys;
};

// Parses the flat key/value deployment format. Recognized keys:
//   name, heap_size, stack_count, stack_size, disk_image, program, args,
//   allow (repeatable: allow key=...,rights=r|w|rw,peer=...)
// Sizes accept K and M suffixes. A `name` key starts a new compartment
// block, so one file can describe a multi-compartment deployment.
// Throws MonitorError(kConfigInvalid) with a line diagnostic on bad input.
std::vector<DeploymentConfig> parse_config_text(const std::string& text);
std::vector<DeploymentConfig> parse_config_file(const std::string& path);

// Parses a size with optional K/M suffix, e.g. "64K", "4M", "512".
uint64_t parse_size(const std::string& text);

}  // namespace capvm

#endif  // CAPVM_CONFIG_HPP_
