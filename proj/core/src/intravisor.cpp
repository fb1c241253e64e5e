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

#include "capvm/intravisor.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "capvm/commdev.hpp"
#include "capvm/guest.hpp"

namespace capvm {

namespace {

constexpr uint32_t kMonitorOtype = 1;

// Scratch registers the monitor uses while preparing transitions.
constexpr int kRegCode = 8;
constexpr int kRegData = 9;
constexpr int kRegSealer = 7;
constexpr int kRegDdc = 6;

std::chrono::steady_clock::duration ns_duration(uint64_t ns) {
  return std::chrono::nanoseconds(ns);
}

}  // namespace

const char* err_name(Err e) {
  switch (e) {
    case Err::kOk: return "OK";
    case Err::kNoSuchKey: return "NO_SUCH_KEY";
    case Err::kAccessDenied: return "ACCESS_DENIED";
    case Err::kRevoked: return "REVOKED";
    case Err::kDuplicateKey: return "DUPLICATE_KEY";
    case Err::kRangeNotOwned: return "RANGE_NOT_OWNED";
    case Err::kNotOwner: return "NOT_OWNER";
    case Err::kNoSuchHandle: return "NO_SUCH_HANDLE";
    case Err::kDuplicateId: return "DUPLICATE_ID";
    case Err::kWouldBlock: return "WOULD_BLOCK";
    case Err::kTimeout: return "TIMEOUT";
    case Err::kQueueFull: return "QUEUE_FULL";
    case Err::kStackPoolExhausted: return "STACK_POOL_EXHAUSTED";
    case Err::kCalleeFault: return "CALLEE_FAULT";
    case Err::kBadHostcall: return "BAD_HOSTCALL";
    case Err::kUnknownFunc: return "UNKNOWN_FUNC";
    case Err::kBadDescriptor: return "BAD_DESCRIPTOR";
    case Err::kNoSys: return "NOSYS";
    case Err::kOutOfSpace: return "OUT_OF_SPACE";
    case Err::kUnknownProgram: return "UNKNOWN_PROGRAM";
    case Err::kConfigInvalid: return "CONFIG_INVALID";
    case Err::kSizeTooLarge: return "SIZE_TOO_LARGE";
    case Err::kPermDenied: return "PERM";
    case Err::kOutOfBounds: return "BOUNDS";
    case Err::kFault: return "FAULT";
    case Err::kInvalidArg: return "INVALID_ARG";
    case Err::kTerminated: return "TERMINATED";
  }
  return "?";
}

const char* dev_kind_name(DevKind kind) {
  switch (kind) {
    case DevKind::kFile: return "file";
    case DevKind::kCall: return "call";
    case DevKind::kStream: return "stream";
  }
  return "?";
}

Cvm::~Cvm() = default;

Intravisor::Intravisor() : Intravisor(Options{}) {}

Intravisor::Intravisor(Options opts)
    : opts_(opts),
      machine_(Machine::Options{.mem_size = opts.mem_size}),
      rng_(opts.seed) {
  register_builtin_programs(programs_);
  bootstrap_monitor();
  build_hostcall_table();
}

Intravisor::~Intravisor() {
  shutdown_.store(true);
  {
    std::lock_guard<std::mutex> lk(registry_mu_);
    for (auto& [key, entry] : registry_) {
      if (!entry->revoked) revoke_locked(*entry);
    }
  }
  {
    std::lock_guard<std::mutex> lk(futex_mu_);
    for (auto& [key, fx] : futexes_) {
      std::lock_guard<std::mutex> flk(fx->mu);
      fx->cv.notify_all();
    }
  }
  {
    std::lock_guard<std::mutex> lk(pipes_mu_);
    for (auto& p : pipes_) {
      std::lock_guard<std::mutex> plk(p->mu);
      p->send_cv.notify_all();
      p->recv_cv.notify_all();
    }
  }
  wait_all();
}

void Intravisor::bootstrap_monitor() {
  mon_ctx_ = machine_.make_context(Machine::kMonitorOwner);
  Capability root = machine_.root_capability();
  mon_ddc_ = root;

  machine_.monitor_write_reg(*mon_ctx_, 20, root);
  machine_.cap_set_bounds(*mon_ctx_, 21, Auth::reg(20), 0, opts_.monitor_size);
  machine_.cap_and_perms(*mon_ctx_, 21, Auth::reg(21), PermSet(Perm::kExec));
  mon_pcc_ = machine_.read_reg(*mon_ctx_, Auth::reg(21));

  uint64_t otype_range = std::min<uint64_t>(kOtypeSpace, machine_.mem().size());
  machine_.cap_set_bounds(*mon_ctx_, 21, Auth::reg(20), 0, otype_range);
  machine_.cap_and_perms(*mon_ctx_, 21, Auth::reg(21),
                         Perm::kSeal | Perm::kUnseal);
  sealer_ = machine_.read_reg(*mon_ctx_, Auth::reg(21));
  machine_.cap_clear(*mon_ctx_, 20);
  machine_.cap_clear(*mon_ctx_, 21);

  // Install the monitor's ddc on its own context.
  machine_.monitor_write_reg(*mon_ctx_, 20, mon_ddc_);
  machine_.write_ddc(*mon_ctx_, Auth::reg(20));
  machine_.cap_clear(*mon_ctx_, 20);

  machine_.register_entry(
      layout::kMonitorOcallEntry,
      EntryRecord{EntryRecord::Kind::kHandler, 0, "monitor.ocall",
                  [this](Machine&, CompartmentContext& ctx) {
                    hostcall_entry(ctx);
                  }});
  machine_.register_entry(layout::kMonitorRetEntry,
                          EntryRecord{EntryRecord::Kind::kResume, 0,
                                      "monitor.ret", nullptr});

  next_region_ = opts_.monitor_size;
}

void Intravisor::build_hostcall_table() {
  table_ = {
      {kHcPrint, "print", HostcallCat::kMinimal},
      {kHcExit, "exit", HostcallCat::kMinimal},
      {kHcClock, "clock", HostcallCat::kMinimal},
      {kHcSleep, "sleep", HostcallCat::kMinimal},
      {kHcThreadCreate, "thread_create", HostcallCat::kMinimal},
      {kHcThreadJoin, "thread_join", HostcallCat::kMinimal},
      {kHcWait, "wait", HostcallCat::kMinimal},
      {kHcWake, "wake", HostcallCat::kMinimal},
      {kHcRand, "rand", HostcallCat::kMinimal},
      {kHcArgv, "argv", HostcallCat::kMinimal},
      {kHcYield, "yield", HostcallCat::kMinimal},
      {kHcLog, "log", HostcallCat::kMinimal},
      {kHcDiskRead, "disk_read", HostcallCat::kDisk},
      {kHcDiskWrite, "disk_write", HostcallCat::kDisk},
      {kHcDiskGetsize, "disk_getsize", HostcallCat::kDisk},
      {kHcNetRead, "net_read", HostcallCat::kNet},
      {kHcNetWrite, "net_write", HostcallCat::kNet},
      {kHcNetPoll, "net_poll", HostcallCat::kNet},
      {kHcFileMake, "file_make", HostcallCat::kComm},
      {kHcCallMake, "call_make", HostcallCat::kComm},
      {kHcStreamMake, "stream_make", HostcallCat::kComm},
      {kHcDevGet, "dev_get", HostcallCat::kComm},
      {kHcDevDestroy, "dev_destroy", HostcallCat::kComm},
      {kHcDevWait, "dev_wait", HostcallCat::kComm},
      {kHcDevNotify, "dev_notify", HostcallCat::kComm},
      {kHcCall, "call", HostcallCat::kComm},
      {kHcCallJoin, "call_join", HostcallCat::kComm},
      {kHcStreamRecv, "stream_recv", HostcallCat::kComm},
      {kHcSealEntry, "seal_entry", HostcallCat::kSetup},
      {kHcPipeSend, "pipe_send", HostcallCat::kBaseline},
      {kHcPipeRecv, "pipe_recv", HostcallCat::kBaseline},
  };
  handlers_.assign(kHcCount, nullptr);
  handlers_[kHcPrint] = &Intravisor::hc_print;
  handlers_[kHcExit] = &Intravisor::hc_exit;
  handlers_[kHcClock] = &Intravisor::hc_clock;
  handlers_[kHcSleep] = &Intravisor::hc_sleep;
  handlers_[kHcThreadCreate] = &Intravisor::hc_thread_create;
  handlers_[kHcThreadJoin] = &Intravisor::hc_thread_join;
  handlers_[kHcWait] = &Intravisor::hc_wait;
  handlers_[kHcWake] = &Intravisor::hc_wake;
  handlers_[kHcRand] = &Intravisor::hc_rand;
  handlers_[kHcArgv] = &Intravisor::hc_argv;
  handlers_[kHcYield] = &Intravisor::hc_yield;
  handlers_[kHcLog] = &Intravisor::hc_log;
  handlers_[kHcDiskRead] = &Intravisor::hc_disk_read;
  handlers_[kHcDiskWrite] = &Intravisor::hc_disk_write;
  handlers_[kHcDiskGetsize] = &Intravisor::hc_disk_getsize;
  handlers_[kHcNetRead] = &Intravisor::hc_net_read;
  handlers_[kHcNetWrite] = &Intravisor::hc_net_write;
  handlers_[kHcNetPoll] = &Intravisor::hc_net_poll;
  handlers_[kHcFileMake] = &Intravisor::hc_file_make;
  handlers_[kHcCallMake] = &Intravisor::hc_call_make;
  handlers_[kHcStreamMake] = &Intravisor::hc_stream_make;
  handlers_[kHcDevGet] = &Intravisor::hc_dev_get;
  handlers_[kHcDevDestroy] = &Intravisor::hc_dev_destroy;
  handlers_[kHcDevWait] = &Intravisor::hc_dev_wait;
  handlers_[kHcDevNotify] = &Intravisor::hc_dev_notify;
  handlers_[kHcCall] = &Intravisor::hc_call;
  handlers_[kHcCallJoin] = &Intravisor::hc_call_join;
  handlers_[kHcStreamRecv] = &Intravisor::hc_stream_recv;
  handlers_[kHcSealEntry] = &Intravisor::hc_seal_entry;
  handlers_[kHcPipeSend] = &Intravisor::hc_pipe_send;
  handlers_[kHcPipeRecv] = &Intravisor::hc_pipe_recv;
}

// --- Capability helpers (monitor authority) ----------------------------------

Capability Intravisor::derive_cap(const Capability& from, uint64_t base,
                                  uint64_t len, PermSet perms) {
  std::lock_guard<std::mutex> lk(mon_mu_);
  machine_.monitor_write_reg(*mon_ctx_, 20, from);
  machine_.cap_set_bounds(*mon_ctx_, 20, Auth::reg(20), base, len);
  machine_.cap_and_perms(*mon_ctx_, 20, Auth::reg(20), perms);
  Capability out = machine_.read_reg(*mon_ctx_, Auth::reg(20));
  machine_.cap_clear(*mon_ctx_, 20);
  return out;
}

Capability Intravisor::seal_cap(const Capability& cap, uint32_t otype) {
  std::lock_guard<std::mutex> lk(mon_mu_);
  machine_.monitor_write_reg(*mon_ctx_, 20, cap);
  machine_.monitor_write_reg(*mon_ctx_, 21, sealer_);
  machine_.cap_seal(*mon_ctx_, 20, Auth::reg(20), Auth::reg(21), otype);
  Capability out = machine_.read_reg(*mon_ctx_, Auth::reg(20));
  machine_.cap_clear(*mon_ctx_, 20);
  machine_.cap_clear(*mon_ctx_, 21);
  return out;
}

void Intravisor::store_cap_at(uint64_t addr, const Capability& cap) {
  std::lock_guard<std::mutex> lk(mon_mu_);
  machine_.monitor_write_reg(*mon_ctx_, 20, mon_ddc_);
  machine_.monitor_write_reg(*mon_ctx_, 21, cap);
  machine_.store_cap(*mon_ctx_, Auth::reg(20), addr, Auth::reg(21));
  machine_.cap_clear(*mon_ctx_, 20);
  machine_.cap_clear(*mon_ctx_, 21);
}

void Intravisor::clear_cap_at(uint64_t addr) { store_cap_at(addr, Capability()); }

Capability Intravisor::cap_with_cursor(const Capability& cap, uint64_t cursor) {
  std::lock_guard<std::mutex> lk(mon_mu_);
  machine_.monitor_write_reg(*mon_ctx_, 20, cap);
  machine_.cap_inc_offset(*mon_ctx_, 20, Auth::reg(20),
                          static_cast<int64_t>(cursor - cap.cursor()));
  Capability out = machine_.read_reg(*mon_ctx_, Auth::reg(20));
  machine_.cap_clear(*mon_ctx_, 20);
  return out;
}

bool Intravisor::guest_range_ok(const Cvm& cvm, uint64_t addr,
                                uint64_t len) const {
  if (addr < cvm.base || addr > cvm.base + cvm.length) return false;
  return len <= cvm.base + cvm.length - addr;
}

std::string Intravisor::read_guest_string(Cvm& cvm, uint64_t addr,
                                          uint64_t len) {
  if (len > 256 || !guest_range_ok(cvm, addr, len)) {
    throw MonitorError(Err::kOutOfBounds, "bad guest string");
  }
  auto bytes = machine_.mem().snapshot(addr, len);
  return std::string(bytes.begin(), bytes.end());
}

// --- Compartment creation -----------------------------------------------------

Cvm& Intravisor::cvm_make(const DeploymentConfig& cfg) {
  if (cfg.name.empty()) {
    throw MonitorError(Err::kConfigInvalid, "compartment needs a name");
  }
  if (cfg.heap_size == 0) {
    throw MonitorError(Err::kConfigInvalid, "heap_size must be positive");
  }
  if (cfg.stack_count < 1) {
    throw MonitorError(Err::kConfigInvalid, "stack_count must be at least 1");
  }
  if (cfg.programs.empty() || cfg.programs.size() > layout::kMaxPrograms) {
    throw MonitorError(Err::kConfigInvalid, "bad program count");
  }
  std::vector<const GuestProgram*> defs;
  for (const auto& name : cfg.programs) {
    const GuestProgram* def = programs_.find(name);
    if (def == nullptr) {
      throw MonitorError(Err::kUnknownProgram, "unknown program: " + name);
    }
    defs.push_back(def);
  }

  auto cvm_ptr = std::make_unique<Cvm>();
  Cvm& cvm = *cvm_ptr;
  cvm.name = cfg.name;
  cvm.cfg = cfg;
  cvm.created_at = std::chrono::steady_clock::now();

  // Region layout.
  const size_t nprogs = cfg.programs.size();
  uint64_t heap_each = layout::align_up(
      std::max<uint64_t>(cfg.heap_size / nprogs, 4096), 4096);
  uint64_t prog_len = layout::kProgHeapOffset + heap_each;
  uint64_t stacks_off =
      layout::kProgramsOffset + nprogs * prog_len;
  uint64_t region_len = layout::align_up(
      stacks_off + uint64_t{cfg.stack_count} * cfg.stack_size, 4096);

  {
    std::lock_guard<std::mutex> lk(cvms_mu_);
    if (find_cvm_locked(cfg.name) != nullptr) {
      throw MonitorError(Err::kConfigInvalid,
                         "compartment name in use: " + cfg.name);
    }
    if (next_region_ + region_len > machine_.mem().size()) {
      throw MonitorError(Err::kOutOfSpace, "address space exhausted");
    }
    cvm.id = next_cvm_id_++;
    cvm.base = next_region_;
    next_region_ += region_len;
    cvm.entry_otype = next_otype_++;
    cvm.syscall_otype = next_otype_++;
  }
  cvm.length = region_len;
  cvm.affix_addr = cvm.base + layout::kAffixOffset;

  // Default capabilities: the whole region, data without capability-store or
  // sealing rights.
  cvm.pcc = derive_cap(mon_ddc_, cvm.base, cvm.length, PermSet(Perm::kExec));
  cvm.ddc = derive_cap(mon_ddc_, cvm.base, cvm.length,
                       Perm::kRead | Perm::kWrite | Perm::kLoadCap);

  // Entry points in the code arena.
  uint64_t code = cvm.base + layout::kCodeOffset;
  uint64_t next_entry = code;
  auto take_entry = [&]() {
    uint64_t a = next_entry;
    next_entry += layout::kGranule;
    return a;
  };
  cvm.entry_addr = take_entry();
  cvm.hostcall_resume_addr = take_entry();
  cvm.syscall_entry_addr = take_entry();
  cvm.libos_resume_addr = take_entry();

  // Program sub-regions.
  for (size_t i = 0; i < nprogs; ++i) {
    CvmProgram prog;
    prog.name = cfg.programs[i];
    prog.def = defs[i];
    prog.libos_mode = defs[i]->libos_mode;
    prog.base = cvm.base + layout::kProgramsOffset + i * prog_len;
    prog.length = prog_len;
    prog.gates_addr = prog.base + layout::kProgGatesOffset;
    prog.arg_arena = prog.base + layout::kProgArgArenaOffset;
    prog.heap_base = prog.base + layout::kProgHeapOffset;
    prog.heap_len = heap_each;
    prog.ddc = derive_cap(cvm.ddc, prog.base, prog.length,
                          Perm::kRead | Perm::kWrite | Perm::kLoadCap);
    prog.entry_addr = take_entry();
    prog.resume_addr = take_entry();
    cvm.progs.push_back(std::move(prog));
  }

  // Stack pool.
  for (uint32_t i = 0; i < cfg.stack_count; ++i) {
    cvm.stack_pool.emplace_back(cvm.base + stacks_off + i * cfg.stack_size,
                                cfg.stack_size);
  }
  cvm.stack_used.assign(cfg.stack_count, false);
  cvm.arg_slots_used.assign(nprogs * layout::kMaxInflightCalls, false);
  cvm.chan_used.assign(layout::kMaxChannels, false);

  // Exported-function table across all hosted programs.
  for (size_t i = 0; i < nprogs; ++i) {
    for (const auto& [fname, fn] : defs[i]->exported_funcs) {
      cvm.funcs.push_back(
          Cvm::FuncRec{static_cast<uint32_t>(i), fname, fn});
    }
  }

  if (cfg.disk_image) {
    const std::string& path = *cfg.disk_image;
    if (!std::filesystem::exists(path)) {
      std::ofstream create(path, std::ios::binary);
    }
    cvm.disk.open(path, std::ios::in | std::ios::out | std::ios::binary);
    if (!cvm.disk) {
      throw MonitorError(Err::kConfigInvalid, "cannot open disk image: " + path);
    }
  }

  cvm.shim = std::make_unique<ShimLibOS>(*this, cvm);
  ShimLibOS* shim = cvm.shim.get();

  machine_.register_entry(
      cvm.entry_addr,
      EntryRecord{EntryRecord::Kind::kHandler, cvm.libos_domain(),
                  cvm.name + ".entry",
                  [shim](Machine& m, CompartmentContext& ctx) {
                    shim->on_inner_entry(m, ctx);
                  }});
  machine_.register_entry(
      cvm.hostcall_resume_addr,
      EntryRecord{EntryRecord::Kind::kResume, cvm.libos_domain(),
                  cvm.name + ".hostcall_resume", nullptr});
  machine_.register_entry(
      cvm.syscall_entry_addr,
      EntryRecord{EntryRecord::Kind::kHandler, cvm.libos_domain(),
                  cvm.name + ".syscall",
                  [shim](Machine& m, CompartmentContext& ctx) {
                    shim->on_syscall(m, ctx);
                  }});
  machine_.register_entry(
      cvm.libos_resume_addr,
      EntryRecord{EntryRecord::Kind::kResume, cvm.libos_domain(),
                  cvm.name + ".libos_resume", nullptr});
  for (size_t i = 0; i < nprogs; ++i) {
    uint32_t prog = static_cast<uint32_t>(i);
    machine_.register_entry(
        cvm.progs[i].entry_addr,
        EntryRecord{EntryRecord::Kind::kHandler, cvm.prog_domain(prog),
                    cvm.name + "." + cvm.progs[i].name + ".entry",
                    [shim, prog](Machine& m, CompartmentContext& ctx) {
                      shim->on_prog_entry(m, ctx, prog);
                    }});
    machine_.register_entry(
        cvm.progs[i].resume_addr,
        EntryRecord{EntryRecord::Kind::kResume, cvm.prog_domain(prog),
                    cvm.name + "." + cvm.progs[i].name + ".resume", nullptr});
  }

  build_affix(cvm);

  Cvm* raw;
  {
    std::lock_guard<std::mutex> lk(cvms_mu_);
    cvms_.push_back(std::move(cvm_ptr));
    raw = cvms_.back().get();
  }

  raw->state = Cvm::State::kRunning;
  spawn_guest_thread(*raw, kIdInit, {}, /*stack_idx=*/-1, nullptr);
  return *raw;
}

void Intravisor::build_affix(Cvm& cvm) {
  Capability mon_ddc_sealed = seal_cap(mon_ddc_, kMonitorOtype);
  Capability ret_sealed =
      seal_cap(cap_with_cursor(mon_pcc_, layout::kMonitorRetEntry),
               kMonitorOtype);
  Capability ocall_sealed =
      seal_cap(cap_with_cursor(mon_pcc_, layout::kMonitorOcallEntry),
               kMonitorOtype);
  store_cap_at(cvm.affix_addr + layout::kAffixMonDdc * layout::kGranule,
               mon_ddc_sealed);
  store_cap_at(cvm.affix_addr + layout::kAffixRet * layout::kGranule,
               ret_sealed);
  store_cap_at(cvm.affix_addr + layout::kAffixOcall * layout::kGranule,
               ocall_sealed);
}

void Intravisor::seal_program_gates(Cvm& cvm, uint32_t prog) {
  const CvmProgram& p = cvm.progs[prog];
  Capability libos_ddc_sealed = seal_cap(cvm.ddc, cvm.syscall_otype);
  Capability prog_ddc_sealed = seal_cap(p.ddc, cvm.syscall_otype);
  Capability syscall_code = seal_cap(
      cap_with_cursor(cvm.pcc, cvm.syscall_entry_addr), cvm.syscall_otype);
  Capability libos_resume_code = seal_cap(
      cap_with_cursor(cvm.pcc, cvm.libos_resume_addr), cvm.syscall_otype);
  Capability prog_resume_code =
      seal_cap(cap_with_cursor(cvm.pcc, p.resume_addr), cvm.syscall_otype);
  Capability prog_entry_code =
      seal_cap(cap_with_cursor(cvm.pcc, p.entry_addr), cvm.syscall_otype);

  // Program-side gates: the syscall pair and the return-to-libOS code.
  uint64_t pg = p.gates_addr;
  store_cap_at(pg + 0 * layout::kGranule, syscall_code);
  store_cap_at(pg + 1 * layout::kGranule, libos_ddc_sealed);
  store_cap_at(pg + 2 * layout::kGranule, libos_resume_code);

  // LibOS-side gates: enter-program and resume-program pairs.
  uint64_t lg = cvm.libos_gate_addr(prog);
  store_cap_at(lg + 0 * layout::kGranule, prog_resume_code);
  store_cap_at(lg + 1 * layout::kGranule, prog_ddc_sealed);
  store_cap_at(lg + 2 * layout::kGranule, prog_entry_code);
}

// --- Threads -------------------------------------------------------------------

int Intravisor::take_stack_slot(Cvm& cvm) {
  std::lock_guard<std::mutex> lk(cvm.mu);
  for (size_t i = 0; i < cvm.stack_used.size(); ++i) {
    if (!cvm.stack_used[i]) {
      cvm.stack_used[i] = true;
      return static_cast<int>(i);
    }
  }
  return -1;
}

void Intravisor::release_stack_slot(Cvm& cvm, int idx) {
  if (idx < 0) return;
  std::lock_guard<std::mutex> lk(cvm.mu);
  cvm.stack_used[idx] = false;
}

uint64_t Intravisor::spawn_guest_thread(
    Cvm& cvm, uint64_t t0, std::array<uint64_t, 6> args, int stack_idx,
    std::function<void(int64_t, const std::string&)> on_done) {
  Cvm::ThreadRec* rec;
  uint64_t tid;
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    cvm.threads.push_back(std::make_unique<Cvm::ThreadRec>());
    rec = cvm.threads.back().get();
    rec->stack_idx = stack_idx;
    tid = cvm.threads.size() - 1;
  }
  rec->th = std::thread([this, &cvm, rec, t0, args, stack_idx,
                         on_done = std::move(on_done)] {
    auto ctx = machine_.make_context(cvm.id);
    ctx->iregs.tp =
        stack_idx >= 0 ? cvm.stack_pool[stack_idx].first : cvm.base;
    int64_t result = 0;
    std::string fault;
    try {
      result = icall(*ctx, cvm, t0, args);
    } catch (const CapFault& f) {
      fault = f.what();
      result = err_value(Err::kFault);
    } catch (const MonitorError& e) {
      fault = e.what();
      result = err_value(e.code());
    }
    release_stack_slot(cvm, stack_idx);
    if (!fault.empty()) {
      std::lock_guard<std::mutex> lk(cvm.mu);
      if (cvm.fault.empty()) cvm.fault = fault;
    }
    {
      std::lock_guard<std::mutex> lk(rec->mu);
      rec->result = result;
      rec->fault = fault;
      rec->done.store(true);
      rec->cv.notify_all();
    }
    if (on_done) on_done(result, fault);
  });
  return tid;
}

int64_t Intravisor::icall(CompartmentContext& ctx, Cvm& cvm, uint64_t t0,
                          std::array<uint64_t, 6> args) {
  Machine& m = machine_;
  m.monitor_write_reg(ctx, kRegCode, cvm.pcc);
  m.cap_inc_offset(ctx, kRegCode, Auth::reg(kRegCode),
                   static_cast<int64_t>(cvm.entry_addr - cvm.pcc.cursor()));
  m.monitor_write_reg(ctx, kRegSealer, sealer_);
  m.cap_seal(ctx, kRegCode, Auth::reg(kRegCode), Auth::reg(kRegSealer),
             cvm.entry_otype);
  m.monitor_write_reg(ctx, kRegData, cvm.ddc);
  m.cap_seal(ctx, kRegData, Auth::reg(kRegData), Auth::reg(kRegSealer),
             cvm.entry_otype);
  m.cap_clear(ctx, kRegSealer);
  ctx.iregs.t0 = t0;
  for (size_t i = 0; i < args.size(); ++i) ctx.iregs.a[i] = args[i];
  // Stage the target's ddc before the crossing, then enter.
  m.monitor_write_reg(ctx, kRegDdc, cvm.ddc);
  m.write_ddc(ctx, Auth::reg(kRegDdc));
  m.cap_clear(ctx, kRegDdc);
  m.cinvoke(ctx, kRegCode, kRegData);
  // Back in the monitor: restore our ddc from the returned capability.
  m.write_ddc(ctx, Auth::reg(kCt6));
  m.cap_clear(ctx, kCt6);
  return static_cast<int64_t>(ctx.iregs.a[0]);
}

// --- Hostcall dispatch ----------------------------------------------------------

void Intravisor::hostcall_entry(CompartmentContext& ctx) {
  Machine& m = machine_;
  // Install our data authority from ct6 and verify it really is the
  // monitor's: a caller can only have obtained it sealed from the Affix.
  m.write_ddc(ctx, Auth::reg(kCt6));
  Capability ddc = m.read_reg(ctx, Auth::ddc());
  if (ddc.base() != 0 || ddc.length() != m.mem().size() ||
      !ddc.perms().has(Perm::kStoreCap) || !ddc.perms().has(Perm::kWrite)) {
    throw CapFault(FaultKind::kPerm,
                   "hostcall entered without the monitor data capability");
  }
  Cvm& cvm = cvm_of(ctx.owner());
  uint64_t guest_tp = ctx.iregs.tp;
  ctx.iregs.tp = kHostTp;
  last_hostcall_tp_.store(kHostTp);

  uint64_t id = ctx.iregs.t0;
  int64_t result;
  if (id >= handlers_.size() || handlers_[id] == nullptr) {
    result = err_value(Err::kBadHostcall);
  } else {
    result = (this->*handlers_[id])(cvm, ctx);
  }

  // Revoked capabilities in the CPU context are destroyed at the domain
  // switch: every capability register is scrubbed before re-entry.
  for (int i = 0; i < kNumCregs; ++i) m.cap_clear(ctx, i);
  ctx.iregs.a[0] = static_cast<uint64_t>(result);
  ctx.iregs.tp = guest_tp;

  // Fresh sealed return pair for this call.
  m.monitor_write_reg(ctx, kRegCode, cvm.pcc);
  m.cap_inc_offset(
      ctx, kRegCode, Auth::reg(kRegCode),
      static_cast<int64_t>(cvm.hostcall_resume_addr - cvm.pcc.cursor()));
  m.monitor_write_reg(ctx, kRegSealer, sealer_);
  m.cap_seal(ctx, kRegCode, Auth::reg(kRegCode), Auth::reg(kRegSealer),
             cvm.entry_otype);
  m.monitor_write_reg(ctx, kRegData, cvm.ddc);
  m.cap_seal(ctx, kRegData, Auth::reg(kRegData), Auth::reg(kRegSealer),
             cvm.entry_otype);
  m.cap_clear(ctx, kRegSealer);
  m.monitor_write_reg(ctx, kRegDdc, cvm.ddc);
  m.write_ddc(ctx, Auth::reg(kRegDdc));
  m.cap_clear(ctx, kRegDdc);
  m.cinvoke(ctx, kRegCode, kRegData);
}

// --- Registry -------------------------------------------------------------------

Cvm* Intravisor::find_cvm_locked(const std::string& name) {
  for (auto& c : cvms_) {
    if (c->name == name) return c.get();
  }
  return nullptr;
}

Cvm* Intravisor::find_cvm(const std::string& name) {
  std::lock_guard<std::mutex> lk(cvms_mu_);
  return find_cvm_locked(name);
}

Cvm& Intravisor::cvm_of(uint32_t id) {
  std::lock_guard<std::mutex> lk(cvms_mu_);
  for (auto& c : cvms_) {
    if (c->id == id) return *c;
  }
  throw std::logic_error("unknown compartment id");
}

int Intravisor::alloc_binding(Cvm& cvm) {
  std::lock_guard<std::mutex> lk(cvm.mu);
  for (size_t i = 0; i < cvm.bindings.size(); ++i) {
    if (!cvm.bindings[i].used) {
      cvm.bindings[i] = DeviceBinding{};
      cvm.bindings[i].used = true;
      return static_cast<int>(i);
    }
  }
  return -1;
}

int64_t Intravisor::advertise(Cvm& donor, DevKind kind, const std::string& key,
                              uint64_t a, uint64_t b) {
  if (key.empty() || key.size() > 64) return err_value(Err::kInvalidArg);
  std::lock_guard<std::mutex> lk(registry_mu_);
  auto it = registry_.find(key);
  if (it != registry_.end() && !it->second->revoked) {
    return err_value(Err::kDuplicateKey);
  }

  auto entry = std::make_unique<RegistryEntry>();
  entry->key = key;
  entry->kind = kind;
  entry->donor = donor.id;
  entry->epoch = next_epoch_++;
  for (const auto& allow : donor.cfg.allowed_keys) {
    if (allow.key_matches(key)) entry->acl.push_back(allow);
  }

  Capability donor_slot_cap;
  switch (kind) {
    case DevKind::kFile: {
      if (b == 0) return err_value(Err::kInvalidArg);
      try {
        donor_slot_cap =
            derive_cap(donor.ddc, a, b, Perm::kRead | Perm::kWrite);
      } catch (const CapFault&) {
        return err_value(Err::kRangeNotOwned);
      }
      entry->base = a;
      entry->len = b;
      break;
    }
    case DevKind::kCall: {
      if (a >= donor.funcs.size()) return err_value(Err::kUnknownFunc);
      entry->func = static_cast<uint32_t>(a);
      break;
    }
    case DevKind::kStream: {
      int chan = -1;
      {
        std::lock_guard<std::mutex> clk(donor.mu);
        for (size_t i = 0; i < donor.chan_used.size(); ++i) {
          if (!donor.chan_used[i]) {
            donor.chan_used[i] = true;
            chan = static_cast<int>(i);
            break;
          }
        }
      }
      if (chan < 0) return err_value(Err::kOutOfSpace);
      entry->chan = static_cast<uint32_t>(chan);
      entry->mode = a;
      uint64_t arena = donor.chan_arena_addr(entry->chan);
      std::vector<uint8_t> zero(layout::kChannelArenaSize, 0);
      machine_.mem().write_bytes(arena, zero);
      machine_.mem().atomic_store_u64(arena + chan::kLive, 1);
      machine_.mem().atomic_store_u64(arena + chan::kMode, a);
      donor_slot_cap =
          derive_cap(donor.ddc, arena, chan::kArenaBytes,
                     Perm::kRead | Perm::kWrite | Perm::kLoadCap);
      entry->base = arena;
      entry->len = chan::kArenaBytes;
      break;
    }
  }

  int dev = alloc_binding(donor);
  if (dev < 0) {
    if (kind == DevKind::kStream) {
      std::lock_guard<std::mutex> clk(donor.mu);
      donor.chan_used[entry->chan] = false;
    }
    return err_value(Err::kOutOfSpace);
  }
  {
    std::lock_guard<std::mutex> clk(donor.mu);
    DeviceBinding& binding = donor.bindings[dev];
    binding.key = key;
    binding.kind = kind;
    binding.donor = true;
    binding.epoch = entry->epoch;
    binding.grant_base = entry->base;
    binding.grant_len = entry->len;
    binding.rights = Perm::kRead | Perm::kWrite;
    binding.chan = entry->chan;
  }
  if (kind != DevKind::kCall) {
    store_cap_at(donor.dev_slot_addr(dev), donor_slot_cap);
  }
  entry->holders.emplace_back(donor.id, dev);
  registry_[key] = std::move(entry);
  return dev;
}

int64_t Intravisor::probe(Cvm& recipient, DevKind kind, const std::string& key) {
  std::lock_guard<std::mutex> lk(registry_mu_);
  auto it = registry_.find(key);
  if (it == registry_.end()) return err_value(Err::kNoSuchKey);
  RegistryEntry& entry = *it->second;
  if (entry.revoked) return err_value(Err::kRevoked);
  if (entry.kind != kind) return err_value(Err::kNoSuchKey);

  Cvm& donor = cvm_of(entry.donor);
  PermSet rights;
  if (recipient.id == donor.id) {
    rights = Perm::kRead | Perm::kWrite;
  } else {
    bool matched = false;
    for (const auto& allow : entry.acl) {
      if (allow.peer_matches(recipient.name)) {
        rights = allow.rights;
        matched = true;
        break;
      }
    }
    if (!matched || rights.empty()) return err_value(Err::kAccessDenied);
  }

  int dev = alloc_binding(recipient);
  if (dev < 0) return err_value(Err::kOutOfSpace);

  Capability grant;
  switch (kind) {
    case DevKind::kFile:
      grant = derive_cap(donor.ddc, entry.base, entry.len,
                         rights & (Perm::kRead | Perm::kWrite));
      break;
    case DevKind::kStream:
      grant = derive_cap(donor.ddc, entry.base, entry.len,
                         Perm::kRead | Perm::kWrite | Perm::kLoadCap);
      break;
    case DevKind::kCall:
      break;
  }
  {
    std::lock_guard<std::mutex> clk(recipient.mu);
    DeviceBinding& binding = recipient.bindings[dev];
    binding.key = key;
    binding.kind = kind;
    binding.donor = false;
    binding.epoch = entry.epoch;
    binding.grant_base = entry.base;
    binding.grant_len = entry.len;
    binding.rights = rights;
    binding.chan = entry.chan;
  }
  if (kind != DevKind::kCall) {
    store_cap_at(recipient.dev_slot_addr(dev), grant);
  }
  entry.holders.emplace_back(recipient.id, dev);
  return dev;
}

int64_t Intravisor::revoke(Cvm& donor, const std::string& key) {
  std::lock_guard<std::mutex> lk(registry_mu_);
  auto it = registry_.find(key);
  if (it == registry_.end() || it->second->revoked) {
    return err_value(Err::kNoSuchKey);
  }
  RegistryEntry& entry = *it->second;
  if (entry.donor != donor.id) return err_value(Err::kNotOwner);
  revoke_locked(entry);
  return 0;
}

void Intravisor::revoke_locked(RegistryEntry& entry) {
  entry.revoked = true;

  // Ranges whose register copies must die with the entry.
  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  if (entry.kind == DevKind::kFile) {
    ranges.emplace_back(entry.base, entry.len);
  } else if (entry.kind == DevKind::kStream) {
    Cvm& donor = cvm_of(entry.donor);
    uint64_t arena = donor.chan_arena_addr(entry.chan);
    ranges.emplace_back(arena, chan::kArenaBytes);
    machine_.mem().atomic_store_u64(arena + chan::kLive, 0);
    // Collect and scrub the posted destination capabilities.
    uint64_t pcons = machine_.mem().atomic_load_u64(arena + chan::kPostedCons);
    uint64_t pprod = machine_.mem().atomic_load_u64(arena + chan::kPostedProd);
    for (uint64_t i = pcons; i < pprod && i < pcons + chan::kRingCap; ++i) {
      uint64_t slot = arena + chan::posted_cap(static_cast<uint32_t>(i));
      Capability cap = machine_.mem().read_cap(slot);
      if (cap.tag()) ranges.emplace_back(cap.base(), cap.length());
      clear_cap_at(slot);
    }
    {
      std::lock_guard<std::mutex> clk(donor.mu);
      donor.chan_used[entry.chan] = false;
    }
  }

  // Scrub every holder's device slot.
  for (auto [cvm_id, dev] : entry.holders) {
    Cvm& holder = cvm_of(cvm_id);
    if (entry.kind != DevKind::kCall) {
      clear_cap_at(holder.dev_slot_addr(dev));
    }
    std::lock_guard<std::mutex> clk(holder.mu);
    holder.bindings[dev].epoch = 0;  // no live entry carries epoch 0
  }

  // Destroy register copies held outside the donor (the simulated analogue
  // of revoked capabilities being destroyed on a context switch).
  for (auto [base, len] : ranges) {
    machine_.sweep_registers(base, len, entry.donor);
  }

  for (auto& q : entry.queues) {
    std::lock_guard<std::mutex> qlk(q->mu);
    q->revoked = true;
    q->cv.notify_all();
  }
}

// --- Waiting / teardown ----------------------------------------------------------

void Intravisor::wait(Cvm& cvm) {
  for (;;) {
    std::thread* to_join = nullptr;
    {
      std::lock_guard<std::mutex> lk(cvm.mu);
      for (auto& rec : cvm.threads) {
        if (rec->th.joinable()) {
          to_join = &rec->th;
          break;
        }
      }
    }
    if (to_join == nullptr) break;
    to_join->join();
  }
  std::lock_guard<std::mutex> lk(cvm.mu);
  cvm.state = Cvm::State::kTerminated;
}

void Intravisor::wait_all() {
  std::vector<Cvm*> all;
  {
    std::lock_guard<std::mutex> lk(cvms_mu_);
    for (auto& c : cvms_) all.push_back(c.get());
  }
  for (Cvm* c : all) wait(*c);
}

std::string Intravisor::console_of(Cvm& cvm) {
  std::lock_guard<std::mutex> lk(cvm.mu);
  return cvm.console;
}

double Intravisor::ms_to_first_output(const Cvm& cvm) const {
  if (!cvm.first_output) return -1.0;
  return std::chrono::duration<double, std::milli>(*cvm.first_output -
                                                   cvm.created_at)
      .count();
}

void Intravisor::blackboard_put(const std::string& key,
                                std::shared_ptr<void> value) {
  std::lock_guard<std::mutex> lk(blackboard_mu_);
  blackboard_[key] = std::move(value);
}

std::shared_ptr<void> Intravisor::blackboard_get(const std::string& key) {
  std::lock_guard<std::mutex> lk(blackboard_mu_);
  auto it = blackboard_.find(key);
  return it == blackboard_.end() ? nullptr : it->second;
}

int32_t Intravisor::pipe_create(uint64_t capacity) {
  std::lock_guard<std::mutex> lk(pipes_mu_);
  uint64_t staging = layout::align_up(monitor_bump_, 16);
  if (staging + capacity > opts_.monitor_size) {
    throw MonitorError(Err::kOutOfSpace, "monitor region exhausted");
  }
  monitor_bump_ = staging + capacity;
  auto p = std::make_unique<Pipe>();
  p->staging = staging;
  p->capacity = capacity;
  pipes_.push_back(std::move(p));
  return static_cast<int32_t>(pipes_.size() - 1);
}

}  // namespace capvm
