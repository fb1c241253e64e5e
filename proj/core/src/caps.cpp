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

#include "capvm/caps.hpp"

#include <cstdio>

namespace capvm {

std::string PermSet::to_string() const {
  std::string s;
  auto add = [&](Perm p, char c) {
    if (has(p)) s.push_back(c);
  };
  add(Perm::kRead, 'r');
  add(Perm::kWrite, 'w');
  add(Perm::kExec, 'x');
  add(Perm::kLoadCap, 'l');
  add(Perm::kStoreCap, 's');
  add(Perm::kSeal, 'S');
  add(Perm::kUnseal, 'U');
  if (s.empty()) s = "-";
  return s;
}

const char* fault_kind_name(FaultKind kind) {
  switch (kind) {
    case FaultKind::kTag:
      return "TAG";
    case FaultKind::kBounds:
      return "BOUNDS";
    case FaultKind::kPerm:
      return "PERM";
    case FaultKind::kSealMismatch:
      return "SEAL_MISMATCH";
    case FaultKind::kSealedImmutable:
      return "SEALED_IMMUTABLE";
    case FaultKind::kMonotonicity:
      return "MONOTONICITY";
    case FaultKind::kAlignment:
      return "ALIGNMENT";
  }
  return "?";
}

CapFault::CapFault(FaultKind kind, std::string detail)
    : std::runtime_error(std::string(fault_kind_name(kind)) + ": " +
                         std::move(detail)),
      kind_(kind) {}

std::string Capability::to_string() const {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "cap{%c base=0x%llx len=0x%llx cur=0x%llx %s%s",
                tag_ ? 'v' : '-', static_cast<unsigned long long>(base_),
                static_cast<unsigned long long>(length_),
                static_cast<unsigned long long>(cursor_),
                perms_.to_string().c_str(), sealed() ? "" : "}");
  std::string s(buf);
  if (sealed()) {
    std::snprintf(buf, sizeof(buf), " otype=%u}", otype_);
    s += buf;
  }
  return s;
}

}  // namespace capvm
