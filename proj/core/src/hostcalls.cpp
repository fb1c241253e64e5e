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

// Hostcall implementations. Handlers run on the calling guest's execution
// context with monitor authority; arguments arrive in a0..a5 and the result
// is returned to the guest in a0.

#include <cstring>
#include <iostream>

#include "capvm/commdev.hpp"
#include "capvm/guest.hpp"
#include "capvm/intravisor.hpp"

namespace capvm {

namespace {
constexpr uint64_t kMaxIoChunk = 64ull << 20;
}

int64_t Intravisor::hc_print(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t addr = ctx.iregs.a[0], len = ctx.iregs.a[1];
  if (len > kMaxIoChunk || !guest_range_ok(cvm, addr, len)) {
    return err_value(Err::kOutOfBounds);
  }
  auto bytes = machine_.mem().snapshot(addr, len);
  std::string text(bytes.begin(), bytes.end());
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    cvm.console += text;
    if (!cvm.first_output) {
      cvm.first_output = std::chrono::steady_clock::now();
    }
  }
  if (opts_.echo_console) {
    std::cout << text << std::flush;
  }
  return static_cast<int64_t>(len);
}

int64_t Intravisor::hc_exit(Cvm& cvm, CompartmentContext& ctx) {
  std::lock_guard<std::mutex> lk(cvm.mu);
  cvm.exit_code = static_cast<int64_t>(ctx.iregs.a[0]);
  return 0;
}

int64_t Intravisor::hc_clock(Cvm&, CompartmentContext&) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int64_t Intravisor::hc_sleep(Cvm&, CompartmentContext& ctx) {
  std::this_thread::sleep_for(std::chrono::nanoseconds(ctx.iregs.a[0]));
  return 0;
}

int64_t Intravisor::hc_thread_create(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t fn_sel = ctx.iregs.a[0];
  uint64_t arg = ctx.iregs.a[1];
  int stack = take_stack_slot(cvm);
  if (stack < 0) return err_value(Err::kStackPoolExhausted);
  uint64_t tid = spawn_guest_thread(cvm, kIdThreadBase | fn_sel,
                                    {arg, 0, 0, 0, 0, 0}, stack, nullptr);
  return static_cast<int64_t>(tid);
}

int64_t Intravisor::hc_thread_join(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t tid = ctx.iregs.a[0];
  Cvm::ThreadRec* rec = nullptr;
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    if (tid >= cvm.threads.size()) return err_value(Err::kInvalidArg);
    rec = cvm.threads[tid].get();
  }
  std::unique_lock<std::mutex> lk(rec->mu);
  rec->cv.wait(lk, [&] { return rec->done.load(); });
  return rec->result;
}

int64_t Intravisor::hc_wait(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t addr = ctx.iregs.a[0];
  uint64_t expected = ctx.iregs.a[1];
  int64_t timeout_ns = static_cast<int64_t>(ctx.iregs.a[2]);
  if (addr % 8 != 0 || !guest_range_ok(cvm, addr, 8)) {
    return err_value(Err::kOutOfBounds);
  }
  std::shared_ptr<Futex> fx;
  {
    std::lock_guard<std::mutex> lk(futex_mu_);
    auto& slot = futexes_[{cvm.id, addr}];
    if (!slot) slot = std::make_shared<Futex>();
    fx = slot;
  }
  std::unique_lock<std::mutex> lk(fx->mu);
  if (machine_.mem().atomic_load_u64(addr) != expected) return 0;
  auto pred = [&] {
    return shutdown_.load() ||
           machine_.mem().atomic_load_u64(addr) != expected;
  };
  if (timeout_ns < 0) {
    fx->cv.wait(lk, pred);
  } else if (!fx->cv.wait_for(lk, std::chrono::nanoseconds(timeout_ns), pred)) {
    return err_value(Err::kTimeout);
  }
  if (shutdown_.load()) return err_value(Err::kTerminated);
  return 0;
}

int64_t Intravisor::hc_wake(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t addr = ctx.iregs.a[0];
  std::shared_ptr<Futex> fx;
  {
    std::lock_guard<std::mutex> lk(futex_mu_);
    auto it = futexes_.find({cvm.id, addr});
    if (it == futexes_.end()) return 0;
    fx = it->second;
  }
  std::lock_guard<std::mutex> lk(fx->mu);
  fx->cv.notify_all();
  return 0;
}

int64_t Intravisor::hc_rand(Cvm&, CompartmentContext&) {
  std::lock_guard<std::mutex> lk(rng_mu_);
  return static_cast<int64_t>(rng_() >> 1);  // keep it non-negative
}

int64_t Intravisor::hc_argv(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t buf = ctx.iregs.a[0], cap = ctx.iregs.a[1];
  std::string joined;
  for (const auto& arg : cvm.cfg.entry_args) {
    joined += arg;
    joined.push_back('\0');
  }
  uint64_t n = std::min<uint64_t>(cap, joined.size());
  if (n > 0) {
    if (!guest_range_ok(cvm, buf, n)) return err_value(Err::kOutOfBounds);
    machine_.mem().write_bytes(
        buf, std::span<const uint8_t>(
                 reinterpret_cast<const uint8_t*>(joined.data()), n));
  }
  return static_cast<int64_t>(joined.size());
}

int64_t Intravisor::hc_yield(Cvm&, CompartmentContext&) {
  std::this_thread::yield();
  return 0;
}

int64_t Intravisor::hc_log(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t addr = ctx.iregs.a[1], len = ctx.iregs.a[2];
  if (len > kMaxIoChunk || !guest_range_ok(cvm, addr, len)) {
    return err_value(Err::kOutOfBounds);
  }
  if (opts_.echo_console) {
    auto bytes = machine_.mem().snapshot(addr, len);
    std::cerr << "[" << cvm.name << "] "
              << std::string(bytes.begin(), bytes.end()) << "\n";
  }
  return 0;
}

// --- Disk ---------------------------------------------------------------------

int64_t Intravisor::hc_disk_read(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t off = ctx.iregs.a[0], buf = ctx.iregs.a[1], len = ctx.iregs.a[2];
  if (!cvm.disk.is_open()) return err_value(Err::kBadDescriptor);
  if (len > kMaxIoChunk || !guest_range_ok(cvm, buf, len)) {
    return err_value(Err::kOutOfBounds);
  }
  std::lock_guard<std::mutex> lk(cvm.disk_mu);
  cvm.disk.clear();
  cvm.disk.seekg(static_cast<std::streamoff>(off));
  std::vector<uint8_t> tmp(len);
  cvm.disk.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(len));
  std::streamsize n = cvm.disk.gcount();
  if (n > 0) {
    machine_.mem().write_bytes(
        buf, std::span<const uint8_t>(tmp.data(), static_cast<size_t>(n)));
  }
  return n;
}

int64_t Intravisor::hc_disk_write(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t off = ctx.iregs.a[0], buf = ctx.iregs.a[1], len = ctx.iregs.a[2];
  if (!cvm.disk.is_open()) return err_value(Err::kBadDescriptor);
  if (len > kMaxIoChunk || !guest_range_ok(cvm, buf, len)) {
    return err_value(Err::kOutOfBounds);
  }
  std::lock_guard<std::mutex> lk(cvm.disk_mu);
  cvm.disk.clear();
  cvm.disk.seekp(static_cast<std::streamoff>(off));
  auto bytes = machine_.mem().snapshot(buf, len);
  cvm.disk.write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(len));
  cvm.disk.flush();
  return cvm.disk ? static_cast<int64_t>(len) : err_value(Err::kFault);
}

int64_t Intravisor::hc_disk_getsize(Cvm& cvm, CompartmentContext&) {
  if (!cvm.disk.is_open()) return err_value(Err::kBadDescriptor);
  std::lock_guard<std::mutex> lk(cvm.disk_mu);
  cvm.disk.clear();
  cvm.disk.seekg(0, std::ios::end);
  return static_cast<int64_t>(cvm.disk.tellg());
}

// --- Network (loopback stubs) ---------------------------------------------------

int64_t Intravisor::hc_net_read(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t buf = ctx.iregs.a[0], len = ctx.iregs.a[1];
  if (len > kMaxIoChunk || !guest_range_ok(cvm, buf, len)) {
    return err_value(Err::kOutOfBounds);
  }
  std::lock_guard<std::mutex> lk(cvm.mu);
  uint64_t n = std::min<uint64_t>(len, cvm.loopback.size());
  std::vector<uint8_t> tmp(cvm.loopback.begin(),
                           cvm.loopback.begin() + static_cast<long>(n));
  cvm.loopback.erase(cvm.loopback.begin(),
                     cvm.loopback.begin() + static_cast<long>(n));
  if (n > 0) machine_.mem().write_bytes(buf, tmp);
  return static_cast<int64_t>(n);
}

int64_t Intravisor::hc_net_write(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t buf = ctx.iregs.a[0], len = ctx.iregs.a[1];
  if (len > kMaxIoChunk || !guest_range_ok(cvm, buf, len)) {
    return err_value(Err::kOutOfBounds);
  }
  auto bytes = machine_.mem().snapshot(buf, len);
  std::lock_guard<std::mutex> lk(cvm.mu);
  cvm.loopback.insert(cvm.loopback.end(), bytes.begin(), bytes.end());
  return static_cast<int64_t>(len);
}

int64_t Intravisor::hc_net_poll(Cvm& cvm, CompartmentContext&) {
  std::lock_guard<std::mutex> lk(cvm.mu);
  return static_cast<int64_t>(cvm.loopback.size());
}

// --- Communication primitives ----------------------------------------------------

int64_t Intravisor::hc_file_make(Cvm& cvm, CompartmentContext& ctx) {
  std::string key;
  try {
    key = read_guest_string(cvm, ctx.iregs.a[0], ctx.iregs.a[1]);
  } catch (const MonitorError& e) {
    return err_value(e.code());
  }
  return advertise(cvm, DevKind::kFile, key, ctx.iregs.a[2], ctx.iregs.a[3]);
}

int64_t Intravisor::hc_call_make(Cvm& cvm, CompartmentContext& ctx) {
  std::string key;
  try {
    key = read_guest_string(cvm, ctx.iregs.a[0], ctx.iregs.a[1]);
  } catch (const MonitorError& e) {
    return err_value(e.code());
  }
  return advertise(cvm, DevKind::kCall, key, ctx.iregs.a[2], 0);
}

int64_t Intravisor::hc_stream_make(Cvm& cvm, CompartmentContext& ctx) {
  std::string key;
  try {
    key = read_guest_string(cvm, ctx.iregs.a[0], ctx.iregs.a[1]);
  } catch (const MonitorError& e) {
    return err_value(e.code());
  }
  return advertise(cvm, DevKind::kStream, key, ctx.iregs.a[2], 0);
}

int64_t Intravisor::hc_dev_get(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t kind = ctx.iregs.a[0];
  if (kind > 2) return err_value(Err::kInvalidArg);
  std::string key;
  try {
    key = read_guest_string(cvm, ctx.iregs.a[1], ctx.iregs.a[2]);
  } catch (const MonitorError& e) {
    return err_value(e.code());
  }
  return probe(cvm, static_cast<DevKind>(kind), key);
}

int64_t Intravisor::hc_dev_destroy(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t dev = ctx.iregs.a[0];
  std::string key;
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    if (dev >= cvm.bindings.size() || !cvm.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    if (!cvm.bindings[dev].donor) return err_value(Err::kNotOwner);
    key = cvm.bindings[dev].key;
  }
  return revoke(cvm, key);
}

Intravisor::DevLookup Intravisor::lookup_device(Cvm& cvm, uint64_t dev) {
  DevLookup out;
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    if (dev >= cvm.bindings.size() || !cvm.bindings[dev].used) {
      out.status = Err::kNoSuchHandle;
      return out;
    }
    out.binding = cvm.bindings[dev];
  }
  std::lock_guard<std::mutex> lk(registry_mu_);
  auto it = registry_.find(out.binding.key);
  if (it == registry_.end()) {
    out.status = Err::kRevoked;
    return out;
  }
  RegistryEntry& entry = *it->second;
  if (entry.revoked || entry.epoch != out.binding.epoch ||
      out.binding.epoch == 0) {
    out.status = Err::kRevoked;
    return out;
  }
  out.donor_id = entry.donor;
  out.func = entry.func;
  for (int i = 0; i < 3; ++i) out.queues[i] = entry.queues[i];
  return out;
}

int64_t Intravisor::hc_dev_wait(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t dev = ctx.iregs.a[0];
  int64_t timeout_ns = static_cast<int64_t>(ctx.iregs.a[1]);
  uint64_t which = ctx.iregs.a[2];
  if (which > 2) return err_value(Err::kInvalidArg);
  DevLookup look = lookup_device(cvm, dev);
  if (look.status != Err::kOk) return err_value(look.status);
  auto q = look.queues[which];
  std::unique_lock<std::mutex> lk(q->mu);
  auto pred = [&] { return q->token || q->revoked || shutdown_.load(); };
  if (timeout_ns < 0) {
    q->cv.wait(lk, pred);
  } else if (!q->cv.wait_for(lk, std::chrono::nanoseconds(timeout_ns), pred)) {
    return err_value(Err::kTimeout);
  }
  if (q->revoked || shutdown_.load()) return err_value(Err::kRevoked);
  q->token = false;
  return 0;
}

int64_t Intravisor::hc_dev_notify(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t dev = ctx.iregs.a[0];
  uint64_t which = ctx.iregs.a[1];
  if (which > 2) return err_value(Err::kInvalidArg);
  DevLookup look = lookup_device(cvm, dev);
  if (look.status != Err::kOk) return err_value(look.status);
  auto q = look.queues[which];
  std::lock_guard<std::mutex> lk(q->mu);
  q->token = true;
  q->cv.notify_all();
  return 0;
}

int64_t Intravisor::hc_call(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t dev = ctx.iregs.a[0];
  bool async = ctx.iregs.a[1] != 0;
  uint64_t arg = ctx.iregs.a[2], size = ctx.iregs.a[3];
  DevLookup look = lookup_device(cvm, dev);
  if (look.status != Err::kOk) return err_value(look.status);
  if (look.binding.kind != DevKind::kCall) return err_value(Err::kInvalidArg);
  if (size > layout::kArgSlotSize) return err_value(Err::kSizeTooLarge);
  if (size > 0 && !guest_range_ok(cvm, arg, size)) {
    return err_value(Err::kOutOfBounds);
  }
  Cvm& donor = cvm_of(look.donor_id);
  uint32_t func_idx = look.func;
  uint32_t prog = donor.funcs[func_idx].prog;

  // Argument arena slot in the target program's sub-region.
  int arg_slot = -1;
  {
    std::lock_guard<std::mutex> lk(donor.mu);
    for (uint32_t i = 0; i < layout::kMaxInflightCalls; ++i) {
      size_t idx = prog * layout::kMaxInflightCalls + i;
      if (!donor.arg_slots_used[idx]) {
        donor.arg_slots_used[idx] = true;
        arg_slot = static_cast<int>(i);
        break;
      }
    }
  }
  if (arg_slot < 0) return err_value(Err::kQueueFull);
  uint64_t arena =
      donor.progs[prog].arg_arena + uint64_t(arg_slot) * layout::kArgSlotSize;
  if (size > 0) {
    machine_.mem().copy_range(arena, arg, size);
  }

  int stack = take_stack_slot(donor);
  if (stack < 0) {
    std::lock_guard<std::mutex> lk(donor.mu);
    donor.arg_slots_used[prog * layout::kMaxInflightCalls + arg_slot] = false;
    return err_value(Err::kStackPoolExhausted);
  }

  auto release = [this, &donor, prog, arg_slot] {
    std::lock_guard<std::mutex> lk(donor.mu);
    donor.arg_slots_used[prog * layout::kMaxInflightCalls + arg_slot] = false;
  };

  if (!async) {
    Cvm::ThreadRec* rec = nullptr;
    uint64_t tid = spawn_guest_thread(donor, kIdFuncBase | func_idx,
                                      {arena, size, 0, 0, 0, 0}, stack, nullptr);
    {
      std::lock_guard<std::mutex> lk(donor.mu);
      rec = donor.threads[tid].get();
    }
    std::unique_lock<std::mutex> lk(rec->mu);
    rec->cv.wait(lk, [&] { return rec->done.load(); });
    release();
    if (!rec->fault.empty()) return err_value(Err::kCalleeFault);
    return rec->result;
  }

  uint64_t completion;
  {
    std::lock_guard<std::mutex> lk(cvm.mu);
    completion = cvm.next_completion++;
    cvm.completions[completion] = Cvm::Completion{};
  }
  spawn_guest_thread(
      donor, kIdFuncBase | func_idx, {arena, size, 0, 0, 0, 0}, stack,
      [this, &cvm, completion, release](int64_t result, const std::string& fault) {
        release();
        std::lock_guard<std::mutex> lk(cvm.mu);
        auto it = cvm.completions.find(completion);
        if (it != cvm.completions.end()) {
          it->second.done = true;
          it->second.result =
              fault.empty() ? result : err_value(Err::kCalleeFault);
          cvm.completions_cv.notify_all();
        }
      });
  return static_cast<int64_t>(completion);
}

int64_t Intravisor::hc_call_join(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t completion = ctx.iregs.a[0];
  std::unique_lock<std::mutex> lk(cvm.mu);
  auto it = cvm.completions.find(completion);
  if (it == cvm.completions.end()) return err_value(Err::kInvalidArg);
  cvm.completions_cv.wait(lk, [&] {
    return cvm.completions[completion].done || shutdown_.load();
  });
  if (shutdown_.load() && !cvm.completions[completion].done) {
    return err_value(Err::kTerminated);
  }
  int64_t result = cvm.completions[completion].result;
  cvm.completions.erase(completion);
  return result;
}

int64_t Intravisor::hc_stream_recv(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t dev = ctx.iregs.a[0];
  uint64_t id = ctx.iregs.a[1];
  uint64_t buf = ctx.iregs.a[2], size = ctx.iregs.a[3];
  if (size == 0) return err_value(Err::kInvalidArg);

  std::lock_guard<std::mutex> lk(registry_mu_);
  DeviceBinding binding;
  {
    std::lock_guard<std::mutex> clk(cvm.mu);
    if (dev >= cvm.bindings.size() || !cvm.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    binding = cvm.bindings[dev];
  }
  auto it = registry_.find(binding.key);
  if (it == registry_.end()) return err_value(Err::kRevoked);
  RegistryEntry& entry = *it->second;
  if (entry.revoked || entry.epoch != binding.epoch ||
      entry.kind != DevKind::kStream) {
    return err_value(Err::kRevoked);
  }

  Cvm& donor = cvm_of(entry.donor);
  uint64_t arena = donor.chan_arena_addr(entry.chan);

  // The destination capability is derived from the posting compartment's
  // authority; a window outside it cannot be built.
  Capability dest;
  try {
    dest = derive_cap(cvm.ddc, buf, size, PermSet(Perm::kWrite));
  } catch (const CapFault&) {
    return err_value(Err::kRangeNotOwned);
  }

  uint64_t pcons = machine_.mem().atomic_load_u64(arena + chan::kPostedCons);
  uint64_t pprod = machine_.mem().atomic_load_u64(arena + chan::kPostedProd);
  if (pprod - pcons >= chan::kRingCap) return err_value(Err::kQueueFull);
  for (uint64_t i = pcons; i < pprod; ++i) {
    uint64_t meta = arena + chan::posted_meta(static_cast<uint32_t>(i));
    if (machine_.mem().atomic_load_u64(meta) == id) {
      return err_value(Err::kDuplicateId);
    }
  }
  uint64_t ccons = machine_.mem().atomic_load_u64(arena + chan::kCompCons);
  uint64_t cprod = machine_.mem().atomic_load_u64(arena + chan::kCompProd);
  for (uint64_t i = ccons; i < cprod; ++i) {
    uint64_t slot = arena + chan::comp_slot(static_cast<uint32_t>(i));
    if (machine_.mem().atomic_load_u64(slot) == id) {
      return err_value(Err::kDuplicateId);
    }
  }

  uint64_t meta = arena + chan::posted_meta(static_cast<uint32_t>(pprod));
  machine_.mem().atomic_store_u64(meta, id);
  machine_.mem().atomic_store_u64(meta + 8, size);
  store_cap_at(arena + chan::posted_cap(static_cast<uint32_t>(pprod)), dest);
  machine_.mem().atomic_store_u64(arena + chan::kPostedProd, pprod + 1);

  auto q = entry.queues[static_cast<int>(DevQueue::kBuffers)];
  {
    std::lock_guard<std::mutex> qlk(q->mu);
    q->token = true;
    q->cv.notify_all();
  }
  return 0;
}

int64_t Intravisor::hc_seal_entry(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t prog = ctx.iregs.a[0];
  if (prog >= cvm.progs.size()) return err_value(Err::kInvalidArg);
  seal_program_gates(cvm, static_cast<uint32_t>(prog));
  return 0;
}

// --- Benchmark baseline pipes -----------------------------------------------------

int64_t Intravisor::hc_pipe_send(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t pipe_id = ctx.iregs.a[0], buf = ctx.iregs.a[1], len = ctx.iregs.a[2];
  Pipe* pipe;
  {
    std::lock_guard<std::mutex> lk(pipes_mu_);
    if (pipe_id >= pipes_.size()) return err_value(Err::kInvalidArg);
    pipe = pipes_[pipe_id].get();
  }
  if (len > pipe->capacity) return err_value(Err::kSizeTooLarge);
  if (!guest_range_ok(cvm, buf, len)) return err_value(Err::kOutOfBounds);
  std::unique_lock<std::mutex> lk(pipe->mu);
  pipe->send_cv.wait(lk, [&] { return !pipe->has_data || shutdown_.load(); });
  if (shutdown_.load()) return err_value(Err::kTerminated);
  // First copy: sender buffer into the monitor staging area.
  machine_.mem().copy_range(pipe->staging, buf, len);
  pipe->data_len = len;
  pipe->has_data = true;
  pipe->recv_cv.notify_one();
  return static_cast<int64_t>(len);
}

int64_t Intravisor::hc_pipe_recv(Cvm& cvm, CompartmentContext& ctx) {
  uint64_t pipe_id = ctx.iregs.a[0], buf = ctx.iregs.a[1], cap = ctx.iregs.a[2];
  Pipe* pipe;
  {
    std::lock_guard<std::mutex> lk(pipes_mu_);
    if (pipe_id >= pipes_.size()) return err_value(Err::kInvalidArg);
    pipe = pipes_[pipe_id].get();
  }
  if (!guest_range_ok(cvm, buf, cap)) return err_value(Err::kOutOfBounds);
  std::unique_lock<std::mutex> lk(pipe->mu);
  pipe->recv_cv.wait(lk, [&] { return pipe->has_data || shutdown_.load(); });
  if (shutdown_.load() && !pipe->has_data) return err_value(Err::kTerminated);
  uint64_t n = std::min(cap, pipe->data_len);
  // Second copy: staging area into the receiver buffer.
  machine_.mem().copy_range(buf, pipe->staging, n);
  pipe->has_data = false;
  pipe->send_cv.notify_one();
  return static_cast<int64_t>(n);
}

}  // namespace capvm
