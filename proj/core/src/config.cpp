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

#include "capvm/config.hpp"

#include <fstream>
#include <sstream>

#include "capvm/errors.hpp"

namespace capvm {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(int line, const std::string& msg) {
  throw MonitorError(Err::kConfigInvalid,
                     "config line " + std::to_string(line) + ": " + msg);
}

bool glob_matches(const std::string& pattern, const std::string& value) {
  if (!pattern.empty() && pattern.back() == '*') {
    return value.compare(0, pattern.size() - 1,
                         pattern.substr(0, pattern.size() - 1)) == 0;
  }
  return pattern == value;
}

AllowEntry parse_allow(int line, const std::string& value) {
  AllowEntry entry;
  bool have_key = false, have_rights = false;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    size_t eq = part.find('=');
    if (eq == std::string::npos) bad(line, "allow expects k=v pairs: " + part);
    std::string k = trim(part.substr(0, eq));
    std::string v = trim(part.substr(eq + 1));
    if (k == "key") {
      entry.key = v;
      have_key = true;
    } else if (k == "rights") {
      if (v == "r") {
        entry.rights = PermSet(Perm::kRead);
      } else if (v == "w") {
        entry.rights = PermSet(Perm::kWrite);
      } else if (v == "rw") {
        entry.rights = Perm::kRead | Perm::kWrite;
      } else {
        bad(line, "rights must be r, w or rw");
      }
      have_rights = true;
    } else if (k == "peer") {
      entry.peer = v;
    } else {
      bad(line, "unknown allow field: " + k);
    }
  }
  if (!have_key || !have_rights) bad(line, "allow needs key= and rights=");
  if (entry.peer.empty()) entry.peer = "*";
  return entry;
}

std::vector<std::string> split_args(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string part;
  while (ss >> part) out.push_back(part);
  return out;
}

}  // namespace

bool AllowEntry::key_matches(const std::string& k) const {
  return glob_matches(key, k);
}

bool AllowEntry::peer_matches(const std::string& p) const {
  return glob_matches(peer, p);
}

uint64_t parse_size(const std::string& text) {
  if (text.empty()) {
    throw MonitorError(Err::kConfigInvalid, "empty size value");
  }
  uint64_t mult = 1;
  std::string digits = text;
  char suffix = text.back();
  if (suffix == 'K' || suffix == 'k') {
    mult = 1024;
    digits.pop_back();
  } else if (suffix == 'M' || suffix == 'm') {
    mult = 1024 * 1024;
    digits.pop_back();
  }
  if (digits.empty() ||
      digits.find_first_not_of("0123456789") != std::string::npos) {
    throw MonitorError(Err::kConfigInvalid, "bad size value: " + text);
  }
  return std::stoull(digits) * mult;
}

std::vector<DeploymentConfig> parse_config_text(const std::string& text) {
  std::vector<DeploymentConfig> out;
  DeploymentConfig* cur = nullptr;
  std::stringstream ss(text);
  std::string raw;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    // `allow` entries carry their own k=v list after the keyword.
    if (s.rfind("allow ", 0) == 0 || s.rfind("allow\t", 0) == 0) {
      if (cur == nullptr) bad(line, "first key must be name");
      cur->allowed_keys.push_back(parse_allow(line, trim(s.substr(6))));
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos) bad(line, "expected key=value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key == "name") {
      if (value.empty()) bad(line, "name must not be empty");
      out.emplace_back();
      cur = &out.back();
      cur->name = value;
      continue;
    }
    if (cur == nullptr) bad(line, "first key must be name");
    if (key == "heap_size") {
      try {
        cur->heap_size = parse_size(value);
      } catch (const MonitorError& e) {
        bad(line, e.what());
      }
      if (cur->heap_size == 0) bad(line, "heap_size must be positive");
    } else if (key == "stack_count") {
      try {
        cur->stack_count = static_cast<uint32_t>(std::stoul(value));
      } catch (...) {
        bad(line, "bad stack_count: " + value);
      }
      if (cur->stack_count < 1) bad(line, "stack_count must be at least 1");
    } else if (key == "stack_size") {
      try {
        cur->stack_size = parse_size(value);
      } catch (const MonitorError& e) {
        bad(line, e.what());
      }
      if (cur->stack_size == 0) bad(line, "stack_size must be positive");
    } else if (key == "disk_image") {
      cur->disk_image = value;
    } else if (key == "program") {
      if (value.empty()) bad(line, "program must not be empty");
      cur->programs.push_back(value);
    } else if (key == "args") {
      cur->entry_args = split_args(value);
    } else {
      bad(line, "unknown key: " + key);
    }
  }
  if (out.empty()) {
    throw MonitorError(Err::kConfigInvalid, "config defines no compartment");
  }
  for (const auto& cfg : out) {
    if (cfg.programs.empty()) {
      throw MonitorError(Err::kConfigInvalid,
                         "compartment " + cfg.name + " has no program");
    }
  }
  return out;
}

std::vector<DeploymentConfig> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MonitorError(Err::kConfigInvalid, "cannot open config: " + path);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace capvm
