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

#ifndef CAPVM_GUEST_HPP_
#define CAPVM_GUEST_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "capvm/intravisor.hpp"

namespace capvm {

// System call numbers understood by the library OS shim. Programs reach the
// shim only through the sealed syscall gate.
enum Sys : uint64_t {
  kSysWrite = 1,
  kSysRead,
  kSysOpen,
  kSysClose,
  kSysThreadCreate,
  kSysThreadJoin,
  kSysExit,
  kSysClock,
  kSysSleep,
  kSysRand,
  kSysYield,
  kSysLog,
  kSysFileMake = 32,
  kSysFileGet,
  kSysFileRead,
  kSysFileWrite,
  kSysFileWait,
  kSysFileNotify,
  kSysFileDestroy,
  kSysCallMake,
  kSysCallGet,
  kSysCall,
  kSysCallJoin,
  kSysCallDestroy,
  kSysStreamMake,
  kSysStreamGet,
  kSysStreamSend,
  kSysStreamRecv,
  kSysStreamPoll,
  kSysStreamDestroy,
  kSysPipeSend,
  kSysPipeRecv,
};

// Descriptor types in the shim's descriptor table (which lives in the
// library OS arena of the compartment's simulated memory).
enum class DescType : uint32_t {
  kFree = 0,
  kConsole = 1,
  kDisk = 2,
  kCapDev = 3,
};

// The minimal library OS of one compartment: descriptor table, the CAP
// device drivers, and the syscall dispatch the program layer enters through
// the sealed gate. Data-path operations of the drivers run here, moving
// bytes with capcpy under capabilities loaded from the device slots; the
// monitor is involved only at setup and teardown.
class ShimLibOS {
 public:
  ShimLibOS(Intravisor& iv, Cvm& cvm);

  Cvm& cvm() { return cvm_; }
  bool init_done() const { return init_done_; }
  uint64_t syscall_transitions() const { return syscall_transitions_; }

  // Entry handlers wired into the machine by the monitor.
  void on_inner_entry(Machine& m, CompartmentContext& ctx);  // Init/func/thread
  void on_syscall(Machine& m, CompartmentContext& ctx);
  void on_prog_entry(Machine& m, CompartmentContext& ctx, uint32_t prog);

  // Hostcall trampoline usable by library-OS-layer code: loads the Affix
  // OCALL pair and cinvokes it.
  int64_t ocall(Machine& m, CompartmentContext& ctx, uint64_t id, uint64_t a0 = 0,
                uint64_t a1 = 0, uint64_t a2 = 0, uint64_t a3 = 0,
                uint64_t a4 = 0, uint64_t a5 = 0);

  using ThreadFn = std::function<int64_t(GuestApi&, uint64_t)>;

  // Registers a thread start routine; the returned selector is passed to the
  // thread_create hostcall.
  uint64_t register_thread_fn(uint32_t prog, ThreadFn fn);

 private:
  friend class GuestApi;

  struct Desc {
    DescType type = DescType::kFree;
    uint32_t dev = 0;
    uint64_t offset = 0;
  };

  int64_t init_sequence(Machine& m, CompartmentContext& ctx);
  int64_t run_in_program(Machine& m, CompartmentContext& ctx, uint32_t prog,
                         std::function<int64_t(GuestApi&)> body);
  void ret_to_monitor(Machine& m, CompartmentContext& ctx, int64_t result);

  int64_t syscall_dispatch(Machine& m, CompartmentContext& ctx, uint32_t prog,
                           uint64_t sysno, std::array<uint64_t, 6> a);

  // Descriptor table access (simulated memory).
  Desc read_desc(Machine& m, CompartmentContext& ctx, int fd);
  void write_desc(Machine& m, CompartmentContext& ctx, int fd, const Desc& d);
  int alloc_desc(Machine& m, CompartmentContext& ctx, DescType type,
                 uint32_t dev);

  // Caller bounds for buffer validation: the program sub-region, or the whole
  // compartment for library-OS-layer callers.
  std::pair<uint64_t, uint64_t> caller_bounds(uint32_t prog) const;
  bool range_ok(uint32_t prog, uint64_t addr, uint64_t len) const;

  // Driver data paths (see commdev.hpp for the channel arena protocol).
  int64_t file_read(Machine& m, CompartmentContext& ctx, uint32_t prog,
                    uint32_t dev, uint64_t dst, uint64_t off, uint64_t len);
  int64_t file_write(Machine& m, CompartmentContext& ctx, uint32_t prog,
                     uint32_t dev, uint64_t src, uint64_t off, uint64_t len);
  int64_t stream_send(Machine& m, CompartmentContext& ctx, uint32_t prog,
                      uint32_t dev, uint64_t buf, uint64_t len);
  int64_t stream_poll(Machine& m, CompartmentContext& ctx, uint32_t prog,
                      uint32_t dev, uint64_t out, uint64_t max_events,
                      int64_t timeout_ns);

  int64_t sys_open(Machine& m, CompartmentContext& ctx, uint32_t prog,
                   uint64_t path_addr, uint64_t path_len);
  int64_t sys_read(Machine& m, CompartmentContext& ctx, uint32_t prog, int fd,
                   uint64_t buf, uint64_t len);
  int64_t sys_write(Machine& m, CompartmentContext& ctx, uint32_t prog, int fd,
                    uint64_t buf, uint64_t len);

  // Loads the binding's device-slot capability into `reg`; false when the
  // slot's tag is gone (revoked).
  bool load_dev_cap(Machine& m, CompartmentContext& ctx, uint32_t dev, int reg);

  std::string read_guest_str(Machine& m, CompartmentContext& ctx, uint64_t addr,
                             uint64_t len);

  Intravisor& iv_;
  Cvm& cvm_;
  bool init_done_ = false;
  uint64_t syscall_transitions_ = 0;

  std::mutex mu_;
  std::vector<std::pair<uint32_t, ThreadFn>> thread_fns_;
  std::map<std::thread::id, std::function<int64_t(GuestApi&)>> pending_;
};

// The interface a guest program works through: memory access in its own
// sub-region, a bump allocator over its heap, and the syscall trampoline.
// The capability machine, not this class, is the security boundary; the
// attacker program drives the machine directly through ctx().
class GuestApi {
 public:
  GuestApi(Machine& m, CompartmentContext& ctx, ShimLibOS& shim, uint32_t prog,
           bool libos_layer = false);

  Machine& machine() { return m_; }
  CompartmentContext& ctx() { return ctx_; }

  uint32_t prog_index() const { return prog_; }
  bool libos_layer() const { return libos_layer_; }
  bool shim_init_done() const { return shim_.init_done(); }
  const std::string& cvm_name() const { return shim_.cvm_.name; }
  uint64_t region_base() const { return shim_.cvm_.base; }
  uint64_t region_len() const { return shim_.cvm_.length; }

  // Program memory.
  uint64_t heap_base() const;
  uint64_t heap_len() const;
  uint64_t alloc(uint64_t size, uint64_t align = 16);
  void mem_write(uint64_t addr, std::span<const uint8_t> data);
  std::vector<uint8_t> mem_read(uint64_t addr, uint64_t len);
  uint64_t push_bytes(std::span<const uint8_t> data);  // alloc + write
  uint64_t push_str(const std::string& s);

  // The syscall trampoline: exactly one domain call and one return.
  int64_t syscall(uint64_t sysno, uint64_t a0 = 0, uint64_t a1 = 0,
                  uint64_t a2 = 0, uint64_t a3 = 0, uint64_t a4 = 0,
                  uint64_t a5 = 0);

  // Direct hostcall, available only to library-OS-layer code (programs
  // cannot reach the Affix; their loads fault on the program boundary).
  int64_t ocall(uint64_t id, uint64_t a0 = 0, uint64_t a1 = 0, uint64_t a2 = 0,
                uint64_t a3 = 0, uint64_t a4 = 0, uint64_t a5 = 0);

  // Convenience wrappers over the syscall surface.
  int64_t sys_write(int fd, std::span<const uint8_t> data);
  int64_t print(const std::string& s);
  int64_t open(const std::string& path);
  int64_t close(int fd);
  int64_t read(int fd, uint64_t buf, uint64_t len);
  int64_t write(int fd, uint64_t buf, uint64_t len);
  int64_t exit(int64_t code);
  int64_t clock_ns();
  int64_t sleep_ns(uint64_t ns);
  uint64_t rand_u64();
  int64_t spawn_thread(ShimLibOS::ThreadFn fn, uint64_t arg = 0);
  int64_t join_thread(int64_t tid);

  int64_t cp_file_make(const std::string& key, uint64_t addr, uint64_t size);
  int64_t cp_file_get(const std::string& key);
  int64_t cp_file_read(int dev, uint64_t dst, uint64_t off, uint64_t len);
  int64_t cp_file_write(int dev, uint64_t src, uint64_t off, uint64_t len);
  int64_t cp_file_wait(int dev);
  int64_t cp_file_notify(int dev);
  int64_t cp_file_destroy(int dev);
  int64_t cp_call_make(const std::string& key, const std::string& func);
  int64_t cp_call_get(const std::string& key);
  int64_t cp_call(int dev, bool async, uint64_t arg, uint64_t size);
  int64_t cp_call_join(int64_t completion);
  int64_t cp_call_destroy(int dev);
  int64_t cp_stream_make(const std::string& key, bool nonblocking = false);
  int64_t cp_stream_get(const std::string& key);
  int64_t cp_stream_send(int dev, uint64_t buf, uint64_t len);
  int64_t cp_stream_recv(int dev, uint64_t id, uint64_t buf, uint64_t size);
  // Fills out_addr with (id, bytes) pairs; returns the pair count.
  int64_t cp_stream_poll(int dev, uint64_t out_addr, uint64_t max_events,
                         int64_t timeout_ns);
  int64_t cp_stream_destroy(int dev);
  int64_t pipe_send(int pipe, uint64_t buf, uint64_t len);
  int64_t pipe_recv(int pipe, uint64_t buf, uint64_t cap);

  // Selector of one of this program's exported functions, for cp_call_make.
  int64_t func_selector(const std::string& name) const;

  static constexpr uint32_t kLibosProg = 0xff;

 private:
  friend class ShimLibOS;

  uint64_t ddc_cursor() const;

  Machine& m_;
  CompartmentContext& ctx_;
  ShimLibOS& shim_;
  uint32_t prog_;
  bool libos_layer_;
};

}  // namespace capvm

#endif  // CAPVM_GUEST_HPP_
