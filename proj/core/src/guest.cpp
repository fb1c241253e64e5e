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

// Everything inside a compartment: the Init sequence, the library OS shim
// with its descriptor table, the program<->libOS syscall trampoline and the
// guest-facing API. Drivers for the communication devices live in
// commdev.cpp.

#include "capvm/guest.hpp"

#include <cstring>

#include "capvm/commdev.hpp"

namespace capvm {

namespace {

// Register conventions inside the shim. Scratch registers 6..15 are scrubbed
// before control returns to the program layer; 16/17 carry sealed pairs into
// cinvoke and are consumed by it.
constexpr int kRegScratch = 8;
constexpr int kRegPairA = 9;
constexpr int kRegPairB = 10;
constexpr int kRegOcallA = 16;
constexpr int kRegOcallB = 17;

}  // namespace

void ProgramRegistry::add(GuestProgram program) {
  std::lock_guard<std::mutex> lk(mu_);
  programs_[program.name] = std::move(program);
}

const GuestProgram* ProgramRegistry::find(const std::string& name) const {
  std::lock_guard<std::mutex> lk(mu_);
  auto it = programs_.find(name);
  return it == programs_.end() ? nullptr : &it->second;
}

std::vector<std::string> ProgramRegistry::names() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<std::string> out;
  for (const auto& [name, def] : programs_) out.push_back(name);
  return out;
}

ShimLibOS::ShimLibOS(Intravisor& iv, Cvm& cvm) : iv_(iv), cvm_(cvm) {}

// --- Entry dispatch -------------------------------------------------------------

void ShimLibOS::on_inner_entry(Machine& m, CompartmentContext& ctx) {
  uint64_t t0 = ctx.iregs.t0;
  int64_t result;
  if (t0 == kIdInit) {
    result = init_sequence(m, ctx);
  } else if ((t0 & kIdFuncBase) == kIdFuncBase) {
    uint32_t sel = static_cast<uint32_t>(t0 & 0xffffffffu);
    uint64_t arg_addr = ctx.iregs.a[0];
    uint64_t arg_size = ctx.iregs.a[1];
    if (sel >= cvm_.funcs.size()) {
      result = err_value(Err::kUnknownFunc);
    } else {
      const Cvm::FuncRec& rec = cvm_.funcs[sel];
      auto fn = rec.fn;
      if (cvm_.progs[rec.prog].libos_mode) {
        GuestApi api(m, ctx, *this, rec.prog, /*libos_layer=*/true);
        result = fn(api, arg_addr, arg_size);
      } else {
        result = run_in_program(m, ctx, rec.prog, [&](GuestApi& api) {
          return fn(api, arg_addr, arg_size);
        });
      }
    }
  } else if ((t0 & kIdThreadBase) == kIdThreadBase) {
    uint32_t sel = static_cast<uint32_t>(t0 & 0xffffffffu);
    uint64_t arg = ctx.iregs.a[0];
    std::pair<uint32_t, ThreadFn> rec;
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (sel >= thread_fns_.size()) {
        ret_to_monitor(m, ctx, err_value(Err::kInvalidArg));
        return;
      }
      rec = thread_fns_[sel];
    }
    if (cvm_.progs[rec.first].libos_mode) {
      GuestApi api(m, ctx, *this, rec.first, /*libos_layer=*/true);
      result = rec.second(api, arg);
    } else {
      result = run_in_program(m, ctx, rec.first, [&](GuestApi& api) {
        return rec.second(api, arg);
      });
    }
  } else {
    result = err_value(Err::kInvalidArg);
  }
  ret_to_monitor(m, ctx, result);
}

int64_t ShimLibOS::init_sequence(Machine& m, CompartmentContext& ctx) {
  // Wire the console descriptors.
  for (int fd = 0; fd < 3; ++fd) {
    write_desc(m, ctx, fd, Desc{DescType::kConsole, 0, 0});
  }
  // The shim cannot seal; the gate pairs come from the sealing service.
  for (uint32_t prog = 0; prog < cvm_.progs.size(); ++prog) {
    int64_t r = ocall(m, ctx, kHcSealEntry, prog);
    if (is_err(r)) {
      throw MonitorError(err_of(r), "init: sealing the program gates failed");
    }
  }
  init_done_ = true;

  int64_t last = 0;
  for (uint32_t prog = 0; prog < cvm_.progs.size(); ++prog) {
    const GuestProgram* def = cvm_.progs[prog].def;
    auto args = cvm_.cfg.entry_args;
    if (cvm_.progs[prog].libos_mode) {
      GuestApi api(m, ctx, *this, prog, /*libos_layer=*/true);
      last = def->entry(api, args);
    } else {
      last = run_in_program(m, ctx, prog, [&](GuestApi& api) {
        return def->entry(api, args);
      });
    }
  }
  return last;
}

int64_t ShimLibOS::run_in_program(Machine& m, CompartmentContext& ctx,
                                  uint32_t prog,
                                  std::function<int64_t(GuestApi&)> body) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    pending_[std::this_thread::get_id()] = std::move(body);
  }
  const CvmProgram& p = cvm_.progs[prog];
  uint64_t gates = cvm_.libos_gate_addr(prog);
  // Load the enter-program pair first, then narrow ddc for the callee.
  m.load_cap(ctx, kRegPairA, Auth::ddc(), gates + 2 * layout::kGranule);
  m.load_cap(ctx, kRegPairB, Auth::ddc(), gates + 1 * layout::kGranule);
  m.cap_set_bounds(ctx, kRegScratch, Auth::ddc(), p.base, p.length);
  m.cap_and_perms(ctx, kRegScratch, Auth::reg(kRegScratch),
                  Perm::kRead | Perm::kWrite | Perm::kLoadCap);
  m.write_ddc(ctx, Auth::reg(kRegScratch));
  m.cap_clear(ctx, kRegScratch);
  m.cinvoke(ctx, kRegPairA, kRegPairB);
  // Back at the library OS layer via the libos_resume entry.
  m.write_ddc(ctx, Auth::reg(kCt6));
  m.cap_clear(ctx, kCt6);
  return static_cast<int64_t>(ctx.iregs.a[0]);
}

void ShimLibOS::on_prog_entry(Machine& m, CompartmentContext& ctx,
                              uint32_t prog) {
  std::function<int64_t(GuestApi&)> body;
  {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = pending_.find(std::this_thread::get_id());
    if (it == pending_.end()) {
      throw CapFault(FaultKind::kPerm, "program entry without a pending call");
    }
    body = std::move(it->second);
    pending_.erase(it);
  }
  GuestApi api(m, ctx, *this, prog);
  int64_t result = body(api);
  ctx.iregs.a[0] = static_cast<uint64_t>(result);
  const CvmProgram& p = cvm_.progs[prog];
  m.load_cap(ctx, kRegPairA, Auth::ddc(),
             p.gates_addr + 2 * layout::kGranule);
  m.load_cap(ctx, kRegPairB, Auth::ddc(),
             p.gates_addr + 1 * layout::kGranule);
  m.cinvoke(ctx, kRegPairA, kRegPairB);
}

void ShimLibOS::ret_to_monitor(Machine& m, CompartmentContext& ctx,
                               int64_t result) {
  ctx.iregs.a[0] = static_cast<uint64_t>(result);
  m.load_cap(ctx, kRegPairA, Auth::ddc(),
             cvm_.affix_addr + layout::kAffixRet * layout::kGranule);
  m.load_cap(ctx, kRegPairB, Auth::ddc(),
             cvm_.affix_addr + layout::kAffixMonDdc * layout::kGranule);
  m.cinvoke(ctx, kRegPairA, kRegPairB);
}

int64_t ShimLibOS::ocall(Machine& m, CompartmentContext& ctx, uint64_t id,
                         uint64_t a0, uint64_t a1, uint64_t a2, uint64_t a3,
                         uint64_t a4, uint64_t a5) {
  m.load_cap(ctx, kRegOcallA, Auth::ddc(),
             cvm_.affix_addr + layout::kAffixOcall * layout::kGranule);
  m.load_cap(ctx, kRegOcallB, Auth::ddc(),
             cvm_.affix_addr + layout::kAffixMonDdc * layout::kGranule);
  ctx.iregs.t0 = id;
  ctx.iregs.a = {a0, a1, a2, a3, a4, a5};
  m.cinvoke(ctx, kRegOcallA, kRegOcallB);
  return static_cast<int64_t>(ctx.iregs.a[0]);
}

uint64_t ShimLibOS::register_thread_fn(uint32_t prog, ThreadFn fn) {
  std::lock_guard<std::mutex> lk(mu_);
  thread_fns_.emplace_back(prog, std::move(fn));
  return thread_fns_.size() - 1;
}

// --- Syscall dispatch -------------------------------------------------------------

void ShimLibOS::on_syscall(Machine& m, CompartmentContext& ctx) {
  // Install the library OS authority carried by the gate pair.
  m.write_ddc(ctx, Auth::reg(kCt6));
  uint64_t caller = m.caller_domain(ctx);
  uint32_t prog = static_cast<uint32_t>(caller & 0xff);
  if (prog >= cvm_.progs.size()) {
    throw CapFault(FaultKind::kPerm, "syscall from unknown program layer");
  }
  uint64_t sysno = ctx.iregs.t0;
  syscall_transitions_ += 2;  // the call and its return

  int64_t result = syscall_dispatch(m, ctx, prog, sysno, ctx.iregs.a);

  for (int i = 6; i <= 15; ++i) m.cap_clear(ctx, i);
  ctx.iregs.a[0] = static_cast<uint64_t>(result);

  const CvmProgram& p = cvm_.progs[prog];
  uint64_t gates = cvm_.libos_gate_addr(prog);
  m.load_cap(ctx, kRegPairA, Auth::ddc(), gates + 0 * layout::kGranule);
  m.load_cap(ctx, kRegPairB, Auth::ddc(), gates + 1 * layout::kGranule);
  m.cap_set_bounds(ctx, kRegScratch, Auth::ddc(), p.base, p.length);
  m.cap_and_perms(ctx, kRegScratch, Auth::reg(kRegScratch),
                  Perm::kRead | Perm::kWrite | Perm::kLoadCap);
  m.write_ddc(ctx, Auth::reg(kRegScratch));
  m.cap_clear(ctx, kRegScratch);
  m.cinvoke(ctx, kRegPairA, kRegPairB);
}

std::pair<uint64_t, uint64_t> ShimLibOS::caller_bounds(uint32_t prog) const {
  if (prog == GuestApi::kLibosProg) return {cvm_.base, cvm_.length};
  const CvmProgram& p = cvm_.progs[prog];
  return {p.base, p.length};
}

bool ShimLibOS::range_ok(uint32_t prog, uint64_t addr, uint64_t len) const {
  auto [base, blen] = caller_bounds(prog);
  if (addr < base || addr > base + blen) return false;
  return len <= base + blen - addr;
}

int64_t ShimLibOS::syscall_dispatch(Machine& m, CompartmentContext& ctx,
                                    uint32_t prog, uint64_t sysno,
                                    std::array<uint64_t, 6> a) {
  switch (sysno) {
    case kSysWrite:
      return sys_write(m, ctx, prog, static_cast<int>(a[0]), a[1], a[2]);
    case kSysRead:
      return sys_read(m, ctx, prog, static_cast<int>(a[0]), a[1], a[2]);
    case kSysOpen:
      return sys_open(m, ctx, prog, a[0], a[1]);
    case kSysClose: {
      int fd = static_cast<int>(a[0]);
      if (fd < 0 || fd >= static_cast<int>(layout::kMaxDescriptors)) {
        return err_value(Err::kBadDescriptor);
      }
      Desc d = read_desc(m, ctx, fd);
      if (d.type == DescType::kFree) return err_value(Err::kBadDescriptor);
      write_desc(m, ctx, fd, Desc{});
      return 0;
    }
    case kSysThreadCreate:
      return ocall(m, ctx, kHcThreadCreate, a[0], a[1]);
    case kSysThreadJoin:
      return ocall(m, ctx, kHcThreadJoin, a[0]);
    case kSysExit:
      return ocall(m, ctx, kHcExit, a[0]);
    case kSysClock:
      return ocall(m, ctx, kHcClock);
    case kSysSleep:
      return ocall(m, ctx, kHcSleep, a[0]);
    case kSysRand:
      return ocall(m, ctx, kHcRand);
    case kSysYield:
      return ocall(m, ctx, kHcYield);
    case kSysLog:
      if (!range_ok(prog, a[1], a[2])) return err_value(Err::kOutOfBounds);
      return ocall(m, ctx, kHcLog, a[0], a[1], a[2]);
    case kSysFileMake:
      if (!range_ok(prog, a[2], a[3])) return err_value(Err::kRangeNotOwned);
      return ocall(m, ctx, kHcFileMake, a[0], a[1], a[2], a[3]);
    case kSysFileGet:
      return ocall(m, ctx, kHcDevGet,
                   static_cast<uint64_t>(DevKind::kFile), a[0], a[1]);
    case kSysFileRead:
      return file_read(m, ctx, prog, static_cast<uint32_t>(a[0]), a[1], a[2],
                       a[3]);
    case kSysFileWrite:
      return file_write(m, ctx, prog, static_cast<uint32_t>(a[0]), a[1], a[2],
                        a[3]);
    case kSysFileWait:
      return ocall(m, ctx, kHcDevWait, a[0], static_cast<uint64_t>(-1),
                   static_cast<uint64_t>(DevQueue::kSignal));
    case kSysFileNotify:
      return ocall(m, ctx, kHcDevNotify, a[0],
                   static_cast<uint64_t>(DevQueue::kSignal));
    case kSysFileDestroy:
    case kSysCallDestroy:
    case kSysStreamDestroy:
      return ocall(m, ctx, kHcDevDestroy, a[0]);
    case kSysCallMake:
      return ocall(m, ctx, kHcCallMake, a[0], a[1], a[2]);
    case kSysCallGet:
      return ocall(m, ctx, kHcDevGet,
                   static_cast<uint64_t>(DevKind::kCall), a[0], a[1]);
    case kSysCall:
      if (a[3] > 0 && !range_ok(prog, a[2], a[3])) {
        return err_value(Err::kOutOfBounds);
      }
      return ocall(m, ctx, kHcCall, a[0], a[1], a[2], a[3]);
    case kSysCallJoin:
      return ocall(m, ctx, kHcCallJoin, a[0]);
    case kSysStreamMake:
      return ocall(m, ctx, kHcStreamMake, a[0], a[1], a[2]);
    case kSysStreamGet:
      return ocall(m, ctx, kHcDevGet,
                   static_cast<uint64_t>(DevKind::kStream), a[0], a[1]);
    case kSysStreamSend:
      return stream_send(m, ctx, prog, static_cast<uint32_t>(a[0]), a[1], a[2]);
    case kSysStreamRecv:
      if (!range_ok(prog, a[2], a[3])) return err_value(Err::kRangeNotOwned);
      return ocall(m, ctx, kHcStreamRecv, a[0], a[1], a[2], a[3]);
    case kSysStreamPoll:
      return stream_poll(m, ctx, prog, static_cast<uint32_t>(a[0]), a[1], a[2],
                         static_cast<int64_t>(a[3]));
    case kSysPipeSend:
      if (!range_ok(prog, a[1], a[2])) return err_value(Err::kOutOfBounds);
      return ocall(m, ctx, kHcPipeSend, a[0], a[1], a[2]);
    case kSysPipeRecv:
      if (!range_ok(prog, a[1], a[2])) return err_value(Err::kOutOfBounds);
      return ocall(m, ctx, kHcPipeRecv, a[0], a[1], a[2]);
    default:
      return err_value(Err::kNoSys);
  }
}

// --- Descriptor table (lives in the library OS arena) ------------------------------

ShimLibOS::Desc ShimLibOS::read_desc(Machine& m, CompartmentContext& ctx,
                                     int fd) {
  uint64_t addr = cvm_.base + layout::kDescTableOffset +
                  static_cast<uint64_t>(fd) * layout::kDescSize;
  uint8_t raw[16];
  uint64_t cursor = m.read_reg(ctx, Auth::ddc()).cursor();
  m.load_bytes(ctx, Auth::ddc(), addr - cursor, raw);
  Desc d;
  uint32_t type;
  std::memcpy(&type, raw, 4);
  d.type = static_cast<DescType>(type);
  std::memcpy(&d.dev, raw + 4, 4);
  std::memcpy(&d.offset, raw + 8, 8);
  return d;
}

void ShimLibOS::write_desc(Machine& m, CompartmentContext& ctx, int fd,
                           const Desc& d) {
  uint64_t addr = cvm_.base + layout::kDescTableOffset +
                  static_cast<uint64_t>(fd) * layout::kDescSize;
  uint8_t raw[16];
  uint32_t type = static_cast<uint32_t>(d.type);
  std::memcpy(raw, &type, 4);
  std::memcpy(raw + 4, &d.dev, 4);
  std::memcpy(raw + 8, &d.offset, 8);
  uint64_t cursor = m.read_reg(ctx, Auth::ddc()).cursor();
  m.store_bytes(ctx, Auth::ddc(), addr - cursor, raw);
}

int ShimLibOS::alloc_desc(Machine& m, CompartmentContext& ctx, DescType type,
                          uint32_t dev) {
  for (int fd = 3; fd < static_cast<int>(layout::kMaxDescriptors); ++fd) {
    if (read_desc(m, ctx, fd).type == DescType::kFree) {
      write_desc(m, ctx, fd, Desc{type, dev, 0});
      return fd;
    }
  }
  return err_value(Err::kOutOfSpace);
}

int64_t ShimLibOS::sys_open(Machine& m, CompartmentContext& ctx, uint32_t prog,
                            uint64_t path_addr, uint64_t path_len) {
  if (path_len > 64 || !range_ok(prog, path_addr, path_len)) {
    return err_value(Err::kOutOfBounds);
  }
  std::string path = read_guest_str(m, ctx, path_addr, path_len);
  if (path == "/dev/disk") {
    return alloc_desc(m, ctx, DescType::kDisk, 0);
  }
  if (path.rfind("/dev/cf", 0) == 0 && path.size() > 7) {
    uint32_t dev = 0;
    for (size_t i = 7; i < path.size(); ++i) {
      if (path[i] < '0' || path[i] > '9') return err_value(Err::kBadDescriptor);
      dev = dev * 10 + static_cast<uint32_t>(path[i] - '0');
    }
    {
      std::lock_guard<std::mutex> lk(cvm_.mu);
      if (dev >= cvm_.bindings.size() || !cvm_.bindings[dev].used) {
        return err_value(Err::kNoSuchHandle);
      }
    }
    return alloc_desc(m, ctx, DescType::kCapDev, dev);
  }
  return err_value(Err::kBadDescriptor);
}

int64_t ShimLibOS::sys_read(Machine& m, CompartmentContext& ctx, uint32_t prog,
                            int fd, uint64_t buf, uint64_t len) {
  if (fd < 0 || fd >= static_cast<int>(layout::kMaxDescriptors)) {
    return err_value(Err::kBadDescriptor);
  }
  if (!range_ok(prog, buf, len)) return err_value(Err::kOutOfBounds);
  Desc d = read_desc(m, ctx, fd);
  int64_t n;
  switch (d.type) {
    case DescType::kConsole:
      return 0;
    case DescType::kDisk:
      n = ocall(m, ctx, kHcDiskRead, d.offset, buf, len);
      break;
    case DescType::kCapDev:
      n = file_read(m, ctx, prog, d.dev, buf, d.offset, len);
      break;
    default:
      return err_value(Err::kBadDescriptor);
  }
  if (n > 0) {
    d.offset += static_cast<uint64_t>(n);
    write_desc(m, ctx, fd, d);
  }
  return n;
}

int64_t ShimLibOS::sys_write(Machine& m, CompartmentContext& ctx, uint32_t prog,
                             int fd, uint64_t buf, uint64_t len) {
  if (fd < 0 || fd >= static_cast<int>(layout::kMaxDescriptors)) {
    return err_value(Err::kBadDescriptor);
  }
  if (!range_ok(prog, buf, len)) return err_value(Err::kOutOfBounds);
  Desc d = read_desc(m, ctx, fd);
  int64_t n;
  switch (d.type) {
    case DescType::kConsole:
      return ocall(m, ctx, kHcPrint, buf, len);
    case DescType::kDisk:
      n = ocall(m, ctx, kHcDiskWrite, d.offset, buf, len);
      break;
    case DescType::kCapDev:
      n = file_write(m, ctx, prog, d.dev, buf, d.offset, len);
      break;
    default:
      return err_value(Err::kBadDescriptor);
  }
  if (n > 0) {
    d.offset += static_cast<uint64_t>(n);
    write_desc(m, ctx, fd, d);
  }
  return n;
}

std::string ShimLibOS::read_guest_str(Machine& m, CompartmentContext& ctx,
                                      uint64_t addr, uint64_t len) {
  std::vector<uint8_t> raw(len);
  uint64_t cursor = m.read_reg(ctx, Auth::ddc()).cursor();
  m.load_bytes(ctx, Auth::ddc(), addr - cursor, raw);
  return std::string(raw.begin(), raw.end());
}

// --- GuestApi ------------------------------------------------------------------

GuestApi::GuestApi(Machine& m, CompartmentContext& ctx, ShimLibOS& shim,
                   uint32_t prog, bool libos_layer)
    : m_(m), ctx_(ctx), shim_(shim), prog_(prog), libos_layer_(libos_layer) {}

uint64_t GuestApi::ddc_cursor() const {
  return m_.read_reg(ctx_, Auth::ddc()).cursor();
}

uint64_t GuestApi::heap_base() const {
  return shim_.cvm_.progs[prog_].heap_base;
}

uint64_t GuestApi::heap_len() const { return shim_.cvm_.progs[prog_].heap_len; }

uint64_t GuestApi::alloc(uint64_t size, uint64_t align) {
  CvmProgram& p = shim_.cvm_.progs[prog_];
  std::lock_guard<std::mutex> lk(shim_.cvm_.mu);
  uint64_t at = layout::align_up(p.heap_base + p.heap_bump, align);
  if (at + size > p.heap_base + p.heap_len) {
    throw MonitorError(Err::kOutOfSpace, "program heap exhausted");
  }
  p.heap_bump = at + size - p.heap_base;
  return at;
}

void GuestApi::mem_write(uint64_t addr, std::span<const uint8_t> data) {
  m_.store_bytes(ctx_, Auth::ddc(), addr - ddc_cursor(), data);
}

std::vector<uint8_t> GuestApi::mem_read(uint64_t addr, uint64_t len) {
  std::vector<uint8_t> out(len);
  m_.load_bytes(ctx_, Auth::ddc(), addr - ddc_cursor(), out);
  return out;
}

uint64_t GuestApi::push_bytes(std::span<const uint8_t> data) {
  uint64_t at = alloc(std::max<uint64_t>(data.size(), 1));
  mem_write(at, data);
  return at;
}

uint64_t GuestApi::push_str(const std::string& s) {
  return push_bytes(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

int64_t GuestApi::syscall(uint64_t sysno, uint64_t a0, uint64_t a1, uint64_t a2,
                          uint64_t a3, uint64_t a4, uint64_t a5) {
  if (libos_layer_) {
    // Library-OS-layer code is the shim; no gate crossing is involved.
    return shim_.syscall_dispatch(m_, ctx_, kLibosProg, sysno,
                                  {a0, a1, a2, a3, a4, a5});
  }
  const CvmProgram& p = shim_.cvm_.progs[prog_];
  m_.load_cap(ctx_, kRegOcallA, Auth::ddc(), p.gates_addr + 0);
  m_.load_cap(ctx_, kRegOcallB, Auth::ddc(),
              p.gates_addr + 1 * layout::kGranule);
  ctx_.iregs.t0 = sysno;
  ctx_.iregs.a = {a0, a1, a2, a3, a4, a5};
  m_.cinvoke(ctx_, kRegOcallA, kRegOcallB);
  return static_cast<int64_t>(ctx_.iregs.a[0]);
}

int64_t GuestApi::ocall(uint64_t id, uint64_t a0, uint64_t a1, uint64_t a2,
                        uint64_t a3, uint64_t a4, uint64_t a5) {
  return shim_.ocall(m_, ctx_, id, a0, a1, a2, a3, a4, a5);
}

int64_t GuestApi::sys_write(int fd, std::span<const uint8_t> data) {
  uint64_t at = push_bytes(data);
  return syscall(kSysWrite, static_cast<uint64_t>(fd), at, data.size());
}

int64_t GuestApi::print(const std::string& s) {
  return sys_write(1, std::span<const uint8_t>(
                          reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

int64_t GuestApi::open(const std::string& path) {
  uint64_t at = push_str(path);
  return syscall(kSysOpen, at, path.size());
}

int64_t GuestApi::close(int fd) { return syscall(kSysClose, fd); }

int64_t GuestApi::read(int fd, uint64_t buf, uint64_t len) {
  return syscall(kSysRead, static_cast<uint64_t>(fd), buf, len);
}

int64_t GuestApi::write(int fd, uint64_t buf, uint64_t len) {
  return syscall(kSysWrite, static_cast<uint64_t>(fd), buf, len);
}

int64_t GuestApi::exit(int64_t code) {
  return syscall(kSysExit, static_cast<uint64_t>(code));
}

int64_t GuestApi::clock_ns() { return syscall(kSysClock); }

int64_t GuestApi::sleep_ns(uint64_t ns) { return syscall(kSysSleep, ns); }

uint64_t GuestApi::rand_u64() {
  return static_cast<uint64_t>(syscall(kSysRand));
}

int64_t GuestApi::spawn_thread(ShimLibOS::ThreadFn fn, uint64_t arg) {
  uint64_t sel = shim_.register_thread_fn(prog_, std::move(fn));
  return syscall(kSysThreadCreate, sel, arg);
}

int64_t GuestApi::join_thread(int64_t tid) {
  return syscall(kSysThreadJoin, static_cast<uint64_t>(tid));
}

int64_t GuestApi::cp_file_make(const std::string& key, uint64_t addr,
                               uint64_t size) {
  uint64_t k = push_str(key);
  return syscall(kSysFileMake, k, key.size(), addr, size);
}

int64_t GuestApi::cp_file_get(const std::string& key) {
  uint64_t k = push_str(key);
  return syscall(kSysFileGet, k, key.size());
}

int64_t GuestApi::cp_file_read(int dev, uint64_t dst, uint64_t off,
                               uint64_t len) {
  return syscall(kSysFileRead, static_cast<uint64_t>(dev), dst, off, len);
}

int64_t GuestApi::cp_file_write(int dev, uint64_t src, uint64_t off,
                                uint64_t len) {
  return syscall(kSysFileWrite, static_cast<uint64_t>(dev), src, off, len);
}

int64_t GuestApi::cp_file_wait(int dev) {
  return syscall(kSysFileWait, static_cast<uint64_t>(dev));
}

int64_t GuestApi::cp_file_notify(int dev) {
  return syscall(kSysFileNotify, static_cast<uint64_t>(dev));
}

int64_t GuestApi::cp_file_destroy(int dev) {
  return syscall(kSysFileDestroy, static_cast<uint64_t>(dev));
}

int64_t GuestApi::cp_call_make(const std::string& key, const std::string& func) {
  int64_t sel = func_selector(func);
  if (sel < 0) return err_value(Err::kUnknownFunc);
  uint64_t k = push_str(key);
  return syscall(kSysCallMake, k, key.size(), static_cast<uint64_t>(sel));
}

int64_t GuestApi::cp_call_get(const std::string& key) {
  uint64_t k = push_str(key);
  return syscall(kSysCallGet, k, key.size());
}

int64_t GuestApi::cp_call(int dev, bool async, uint64_t arg, uint64_t size) {
  return syscall(kSysCall, static_cast<uint64_t>(dev), async ? 1 : 0, arg,
                 size);
}

int64_t GuestApi::cp_call_join(int64_t completion) {
  return syscall(kSysCallJoin, static_cast<uint64_t>(completion));
}

int64_t GuestApi::cp_call_destroy(int dev) {
  return syscall(kSysCallDestroy, static_cast<uint64_t>(dev));
}

int64_t GuestApi::cp_stream_make(const std::string& key, bool nonblocking) {
  uint64_t k = push_str(key);
  return syscall(kSysStreamMake, k, key.size(),
                 nonblocking ? chan::kModeNonblock : 0);
}

int64_t GuestApi::cp_stream_get(const std::string& key) {
  uint64_t k = push_str(key);
  return syscall(kSysStreamGet, k, key.size());
}

int64_t GuestApi::cp_stream_send(int dev, uint64_t buf, uint64_t len) {
  return syscall(kSysStreamSend, static_cast<uint64_t>(dev), buf, len);
}

int64_t GuestApi::cp_stream_recv(int dev, uint64_t id, uint64_t buf,
                                 uint64_t size) {
  return syscall(kSysStreamRecv, static_cast<uint64_t>(dev), id, buf, size);
}

int64_t GuestApi::cp_stream_poll(int dev, uint64_t out_addr,
                                 uint64_t max_events, int64_t timeout_ns) {
  return syscall(kSysStreamPoll, static_cast<uint64_t>(dev), out_addr,
                 max_events, static_cast<uint64_t>(timeout_ns));
}

int64_t GuestApi::cp_stream_destroy(int dev) {
  return syscall(kSysStreamDestroy, static_cast<uint64_t>(dev));
}

int64_t GuestApi::pipe_send(int pipe, uint64_t buf, uint64_t len) {
  return syscall(kSysPipeSend, static_cast<uint64_t>(pipe), buf, len);
}

int64_t GuestApi::pipe_recv(int pipe, uint64_t buf, uint64_t cap) {
  return syscall(kSysPipeRecv, static_cast<uint64_t>(pipe), buf, cap);
}

int64_t GuestApi::func_selector(const std::string& name) const {
  for (size_t i = 0; i < shim_.cvm_.funcs.size(); ++i) {
    const auto& rec = shim_.cvm_.funcs[i];
    if (rec.prog == prog_ && rec.name == name) {
      return static_cast<int64_t>(i);
    }
  }
  return err_value(Err::kUnknownFunc);
}

}  // namespace capvm
