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

#ifndef CAPVM_PROGRAMS_HPP_
#define CAPVM_PROGRAMS_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace capvm {

class GuestApi;

// A runnable guest program: a host routine standing in for the program
// binary. Handlers access memory and services only through the GuestApi
// handed to them, which routes everything through the compartment context
// and the syscall trampoline.
struct GuestProgram {
  using Entry =
      std::function<int64_t(GuestApi&, const std::vector<std::string>&)>;
  using Func = std::function<int64_t(GuestApi&, uint64_t, uint64_t)>;

  std::string name;
  // Library-OS-mode programs run at the library OS layer (full compartment
  // authority, direct hostcall access) instead of behind the program
  // boundary. Used for code standing in for library OS internals.
  bool libos_mode = false;
  Entry entry;
  // Exported functions reachable through the cross-compartment call device;
  // each receives (api, arg_addr, arg_size) and returns an integer.
  std::map<std::string, Func> exported_funcs;
};

class ProgramRegistry {
 public:
  void add(GuestProgram program);
  const GuestProgram* find(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, GuestProgram> programs_;
};

// Registers the built-in programs: hello, producer, consumer, kv_server,
// kv_client, crypto_lib, attacker, victim.
void register_builtin_programs(ProgramRegistry& registry);

}  // namespace capvm

#endif  // CAPVM_PROGRAMS_HPP_
