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

#ifndef CAPVM_INTRAVISOR_HPP_
#define CAPVM_INTRAVISOR_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "capvm/config.hpp"
#include "capvm/errors.hpp"
#include "capvm/layout.hpp"
#include "capvm/machine.hpp"
#include "capvm/programs.hpp"

namespace capvm {

class ShimLibOS;
class Intravisor;

enum class DevKind : uint8_t { kFile = 0, kCall = 1, kStream = 2 };

// Hostcall identifiers: indexes into the dispatch table reached through the
// Affix OCALL pair with the id in t0.
enum Hostcall : uint64_t {
  // Minimal operation.
  kHcPrint = 0,
  kHcExit,
  kHcClock,
  kHcSleep,
  kHcThreadCreate,
  kHcThreadJoin,
  kHcWait,
  kHcWake,
  kHcRand,
  kHcArgv,
  kHcYield,
  kHcLog,
  // Disk I/O.
  kHcDiskRead,
  kHcDiskWrite,
  kHcDiskGetsize,
  // Network I/O (loopback stubs).
  kHcNetRead,
  kHcNetWrite,
  kHcNetPoll,
  // Capability-based communication.
  kHcFileMake,
  kHcCallMake,
  kHcStreamMake,
  kHcDevGet,
  kHcDevDestroy,
  kHcDevWait,
  kHcDevNotify,
  kHcCall,
  kHcCallJoin,
  kHcStreamRecv,
  // Compartment setup services.
  kHcSealEntry,
  // Two-copy baseline channel used by the benchmark harness.
  kHcPipeSend,
  kHcPipeRecv,
  kHcCount,
};

enum class HostcallCat : uint8_t {
  kMinimal,
  kDisk,
  kNet,
  kComm,
  kSetup,
  kBaseline,
};

struct HostcallInfo {
  uint64_t id;
  const char* name;
  HostcallCat cat;
};

// t0 selectors for entries into a compartment (the inner-call dispatch
// table). Init runs with t0 == kIdInit; exported functions and thread
// starts carry their index in the low bits.
inline constexpr uint64_t kIdInit = 0;
inline constexpr uint64_t kIdFuncBase = 1ull << 56;
inline constexpr uint64_t kIdThreadBase = 2ull << 56;

// The tp value installed while a thread executes inside the monitor.
inline constexpr uint64_t kHostTp = 0x7057;

// Wait-queue selector for device waits.
enum class DevQueue : uint64_t { kSignal = 0, kCompletions = 1, kBuffers = 2 };

// A communication endpoint held by a compartment: the per-compartment
// device index doubles as the capability slot index.
struct DeviceBinding {
  bool used = false;
  std::string key;
  DevKind kind = DevKind::kFile;
  bool donor = false;
  uint64_t epoch = 0;
  // FILE: granted window and rights. STREAM: channel arena window.
  uint64_t grant_base = 0;
  uint64_t grant_len = 0;
  PermSet rights;
  uint32_t chan = 0;  // STREAM only
};

struct CvmProgram {
  std::string name;
  const GuestProgram* def = nullptr;
  bool libos_mode = false;
  uint64_t base = 0;
  uint64_t length = 0;
  Capability ddc;
  uint64_t gates_addr = 0;
  uint64_t arg_arena = 0;
  uint64_t heap_base = 0;
  uint64_t heap_len = 0;
  uint64_t heap_bump = 0;  // guarded by Cvm::mu
  uint64_t entry_addr = 0;
  uint64_t resume_addr = 0;
};

// A compartment: its region, default capabilities, Affix location, stack
// pool and hosted programs.
struct Cvm {
  Cvm() = default;
  ~Cvm();
  Cvm(const Cvm&) = delete;
  Cvm& operator=(const Cvm&) = delete;

  enum class State { kCreated, kRunning, kTerminated };

  uint32_t id = 0;
  std::string name;
  DeploymentConfig cfg;
  uint64_t base = 0;
  uint64_t length = 0;
  Capability pcc;
  Capability ddc;
  uint64_t affix_addr = 0;
  uint32_t entry_otype = 0;
  uint32_t syscall_otype = 0;

  uint64_t entry_addr = 0;            // inner-call dispatch entry
  uint64_t hostcall_resume_addr = 0;  // return point after a hostcall
  uint64_t syscall_entry_addr = 0;    // program -> library OS gate
  uint64_t libos_resume_addr = 0;     // program -> library OS return

  std::vector<CvmProgram> progs;

  std::vector<std::pair<uint64_t, uint64_t>> stack_pool;
  std::vector<bool> stack_used;  // guarded by mu

  State state = State::kCreated;
  int64_t exit_code = 0;
  std::string fault;  // diagnostic when the compartment faulted

  std::array<DeviceBinding, layout::kMaxDevices> bindings;  // guarded by mu

  // Exported-function table: selector index -> (program, name, fn).
  struct FuncRec {
    uint32_t prog;
    std::string name;
    GuestProgram::Func fn;
  };
  std::vector<FuncRec> funcs;

  struct ThreadRec {
    std::thread th;
    std::atomic<bool> done{false};
    int64_t result = 0;
    std::string fault;
    int stack_idx = -1;
    std::mutex mu;
    std::condition_variable cv;
  };
  std::vector<std::unique_ptr<ThreadRec>> threads;  // guarded by mu

  // Async call completions.
  struct Completion {
    bool done = false;
    int64_t result = 0;
  };
  std::map<uint64_t, Completion> completions;  // guarded by mu
  uint64_t next_completion = 1;
  std::condition_variable completions_cv;

  std::vector<bool> arg_slots_used;  // per prog*slot, guarded by mu
  std::vector<bool> chan_used;       // guarded by mu

  std::fstream disk;
  std::mutex disk_mu;

  std::deque<uint8_t> loopback;  // net stub, guarded by mu

  std::string console;  // guarded by mu
  std::chrono::steady_clock::time_point created_at;
  std::optional<std::chrono::steady_clock::time_point> first_output;

  std::unique_ptr<ShimLibOS> shim;

  std::mutex mu;
  std::condition_variable cv;

  uint64_t libos_domain() const { return (uint64_t{id} << 8) | 0xff; }
  uint64_t prog_domain(uint32_t prog) const {
    return (uint64_t{id} << 8) | prog;
  }
  uint64_t libos_gate_addr(uint32_t prog) const {
    return base + layout::kLibosGatesOffset +
           prog * layout::kGateSlots * layout::kGranule;
  }
  uint64_t dev_slot_addr(uint32_t dev) const {
    return base + layout::kDevSlotsOffset + dev * layout::kGranule;
  }
  uint64_t chan_arena_addr(uint32_t chan) const {
    return base + layout::kChannelsOffset + chan * layout::kChannelArenaSize;
  }
};

// The trusted monitor. It owns the machine, creates compartments, builds
// their default capabilities and Affixes, dispatches hostcalls, holds the
// key registry for communication endpoints and performs revocation.
class Intravisor {
 public:
  struct Options {
    uint64_t mem_size = 256ull << 20;
    uint64_t monitor_size = 16ull << 20;
    uint64_t seed = 0x5eed;
    bool echo_console = false;
  };

  Intravisor();
  explicit Intravisor(Options opts);
  ~Intravisor();

  Machine& machine() { return machine_; }
  ProgramRegistry& programs() { return programs_; }

  // --- Lifecycle -------------------------------------------------------------

  // Creates the compartment, carves its region, derives default capabilities,
  // builds the Affix and enters Init on a fresh thread. Throws MonitorError
  // on configuration or resource failures.
  Cvm& cvm_make(const DeploymentConfig& cfg);

  // Blocks until every thread of the compartment has finished.
  void wait(Cvm& cvm);
  void wait_all();

  Cvm* find_cvm(const std::string& name);
  Cvm& cvm_of(uint32_t id);

  // --- Registry (host-level entry points; hostcalls route here too) ----------

  int64_t advertise(Cvm& donor, DevKind kind, const std::string& key,
                    uint64_t a, uint64_t b);
  int64_t probe(Cvm& recipient, DevKind kind, const std::string& key);
  int64_t revoke(Cvm& donor, const std::string& key);

  // --- Introspection ----------------------------------------------------------

  const std::vector<HostcallInfo>& hostcall_table() const { return table_; }
  uint64_t last_hostcall_tp() const { return last_hostcall_tp_.load(); }
  std::string console_of(Cvm& cvm);
  double ms_to_first_output(const Cvm& cvm) const;

  // Cross-world result channel for host-side harnesses; guest data never
  // travels through it.
  void blackboard_put(const std::string& key, std::shared_ptr<void> value);
  std::shared_ptr<void> blackboard_get(const std::string& key);

  // --- Benchmark baseline pipes ----------------------------------------------

  int32_t pipe_create(uint64_t capacity);

  // --- Used by the guest kit (library OS layer) -------------------------------

  int64_t hostcall_result(CompartmentContext& ctx) {
    return static_cast<int64_t>(ctx.iregs.a[0]);
  }

 private:
  friend class ShimLibOS;
  friend class GuestApi;

  struct RegistryEntry {
    std::string key;
    DevKind kind = DevKind::kFile;
    uint32_t donor = 0;
    uint64_t epoch = 0;
    bool revoked = false;
    uint64_t base = 0;  // FILE: advertised range
    uint64_t len = 0;
    uint32_t func = 0;  // CALL: function selector
    uint32_t chan = 0;  // STREAM: donor channel index
    uint64_t mode = 0;  // STREAM: mode flags
    std::vector<AllowEntry> acl;
    std::vector<std::pair<uint32_t, uint32_t>> holders;  // (cvm, dev)
    // Wait queues: signal (wait/notify), completions, buffers.
    struct Queue {
      std::mutex mu;
      std::condition_variable cv;
      bool token = false;
      bool revoked = false;
    };
    std::shared_ptr<Queue> queues[3] = {std::make_shared<Queue>(),
                                        std::make_shared<Queue>(),
                                        std::make_shared<Queue>()};
  };

  struct Pipe {
    uint64_t staging = 0;
    uint64_t capacity = 0;
    uint64_t data_len = 0;
    bool has_data = false;
    std::mutex mu;
    std::condition_variable send_cv;
    std::condition_variable recv_cv;
  };

  // Registry lookup result copied out under the registry lock.
  struct DevLookup {
    Err status = Err::kOk;  // kOk, kNoSuchHandle or kRevoked
    DeviceBinding binding;
    uint32_t donor_id = 0;
    uint32_t func = 0;
    std::shared_ptr<RegistryEntry::Queue> queues[3];
  };
  DevLookup lookup_device(Cvm& cvm, uint64_t dev);

  struct Futex {
    std::mutex mu;
    std::condition_variable cv;
  };

  using HostcallFn = int64_t (Intravisor::*)(Cvm&, CompartmentContext&);

  void build_hostcall_table();
  void bootstrap_monitor();

  // Monitor-side transition helpers.
  int64_t icall(CompartmentContext& ctx, Cvm& cvm, uint64_t t0,
                std::array<uint64_t, 6> args);
  void hostcall_entry(CompartmentContext& ctx);

  void build_affix(Cvm& cvm);
  void seal_program_gates(Cvm& cvm, uint32_t prog);
  uint64_t spawn_guest_thread(
      Cvm& cvm, uint64_t t0, std::array<uint64_t, 6> args, int stack_idx,
      std::function<void(int64_t, const std::string&)> on_done);
  int take_stack_slot(Cvm& cvm);
  void release_stack_slot(Cvm& cvm, int idx);
  Cvm* find_cvm_locked(const std::string& name);
  int alloc_binding(Cvm& cvm);

  // Derives a capability value: bounds [base, base+len), cursor=base, perms.
  Capability derive_cap(const Capability& from, uint64_t base, uint64_t len,
                        PermSet perms);
  Capability seal_cap(const Capability& cap, uint32_t otype);
  Capability cap_with_cursor(const Capability& cap, uint64_t cursor);
  void store_cap_at(uint64_t addr, const Capability& cap);
  void clear_cap_at(uint64_t addr);

  bool guest_range_ok(const Cvm& cvm, uint64_t addr, uint64_t len) const;
  std::string read_guest_string(Cvm& cvm, uint64_t addr, uint64_t len);

  void revoke_locked(RegistryEntry& entry);

  // Hostcall implementations.
  int64_t hc_print(Cvm&, CompartmentContext&);
  int64_t hc_exit(Cvm&, CompartmentContext&);
  int64_t hc_clock(Cvm&, CompartmentContext&);
  int64_t hc_sleep(Cvm&, CompartmentContext&);
  int64_t hc_thread_create(Cvm&, CompartmentContext&);
  int64_t hc_thread_join(Cvm&, CompartmentContext&);
  int64_t hc_wait(Cvm&, CompartmentContext&);
  int64_t hc_wake(Cvm&, CompartmentContext&);
  int64_t hc_rand(Cvm&, CompartmentContext&);
  int64_t hc_argv(Cvm&, CompartmentContext&);
  int64_t hc_yield(Cvm&, CompartmentContext&);
  int64_t hc_log(Cvm&, CompartmentContext&);
  int64_t hc_disk_read(Cvm&, CompartmentContext&);
  int64_t hc_disk_write(Cvm&, CompartmentContext&);
  int64_t hc_disk_getsize(Cvm&, CompartmentContext&);
  int64_t hc_net_read(Cvm&, CompartmentContext&);
  int64_t hc_net_write(Cvm&, CompartmentContext&);
  int64_t hc_net_poll(Cvm&, CompartmentContext&);
  int64_t hc_file_make(Cvm&, CompartmentContext&);
  int64_t hc_call_make(Cvm&, CompartmentContext&);
  int64_t hc_stream_make(Cvm&, CompartmentContext&);
  int64_t hc_dev_get(Cvm&, CompartmentContext&);
  int64_t hc_dev_destroy(Cvm&, CompartmentContext&);
  int64_t hc_dev_wait(Cvm&, CompartmentContext&);
  int64_t hc_dev_notify(Cvm&, CompartmentContext&);
  int64_t hc_call(Cvm&, CompartmentContext&);
  int64_t hc_call_join(Cvm&, CompartmentContext&);
  int64_t hc_stream_recv(Cvm&, CompartmentContext&);
  int64_t hc_seal_entry(Cvm&, CompartmentContext&);
  int64_t hc_pipe_send(Cvm&, CompartmentContext&);
  int64_t hc_pipe_recv(Cvm&, CompartmentContext&);

  Options opts_;
  Machine machine_;
  ProgramRegistry programs_;

  // Monitor capability values (native monitor authority).
  Capability mon_ddc_;
  Capability mon_pcc_;
  Capability sealer_;
  Machine::ContextPtr mon_ctx_;
  std::mutex mon_mu_;

  uint64_t next_region_ = 0;
  uint64_t monitor_bump_ = layout::kMonitorHeapBase;
  uint32_t next_cvm_id_ = 1;
  uint32_t next_otype_ = 2;  // 1 is the monitor otype

  std::mutex cvms_mu_;
  std::vector<std::unique_ptr<Cvm>> cvms_;

  std::mutex registry_mu_;
  std::map<std::string, std::unique_ptr<RegistryEntry>> registry_;
  uint64_t next_epoch_ = 1;

  std::mutex pipes_mu_;
  std::vector<std::unique_ptr<Pipe>> pipes_;

  std::mutex futex_mu_;
  std::map<std::pair<uint32_t, uint64_t>, std::shared_ptr<Futex>> futexes_;

  std::vector<HostcallInfo> table_;
  std::vector<HostcallFn> handlers_;

  std::mutex rng_mu_;
  std::mt19937_64 rng_;

  std::mutex blackboard_mu_;
  std::map<std::string, std::shared_ptr<void>> blackboard_;

  std::atomic<uint64_t> last_hostcall_tp_{0};
  std::atomic<bool> shutdown_{false};
};

const char* dev_kind_name(DevKind kind);

}  // namespace capvm

#endif  // CAPVM_INTRAVISOR_HPP_
