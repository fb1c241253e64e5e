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

#include "capvm/machine.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>

namespace capvm {
namespace {

std::string hex(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

void check_reg_index(int reg) {
  if (reg < 0 || reg >= kNumCregs) {
    throw std::out_of_range("capability register index out of range");
  }
}

// True when [addr, addr+len) lies inside the capability's bounds. Computed
// without overflow: cap.top() cannot overflow because base+length is bounded
// by the address-space size.
bool in_bounds(const Capability& cap, uint64_t addr, uint64_t len) {
  if (addr < cap.base() || addr > cap.top()) return false;
  return len <= cap.top() - addr;
}

}  // namespace

Machine::Machine(const Options& opts) : mem_(opts.mem_size) {}

Capability Machine::root_capability() {
  std::lock_guard<std::mutex> lk(root_mu_);
  if (root_issued_) {
    throw CapFault(FaultKind::kPerm, "root capability already issued");
  }
  root_issued_ = true;
  return Capability(true, 0, mem_.size(), 0, PermSet::all(), kOtypeUnsealed);
}

Machine::ContextPtr Machine::make_context(uint32_t owner) {
  auto* ctx = new CompartmentContext(owner);
  {
    std::lock_guard<std::mutex> lk(contexts_mu_);
    contexts_.push_back(ctx);
  }
  return ContextPtr(ctx, [this](CompartmentContext* c) {
    {
      std::lock_guard<std::mutex> lk(contexts_mu_);
      contexts_.erase(std::remove(contexts_.begin(), contexts_.end(), c),
                      contexts_.end());
    }
    delete c;
  });
}

const Capability& Machine::auth_ref(const CompartmentContext& ctx,
                                    Auth which) const {
  switch (which.kind) {
    case Auth::Kind::kDdc:
      return ctx.ddc_;
    case Auth::Kind::kPcc:
      return ctx.pcc_;
    case Auth::Kind::kReg:
      check_reg_index(which.index);
      return ctx.cregs_[which.index];
  }
  throw std::logic_error("bad auth kind");
}

void Machine::check_live(CompartmentContext& ctx) const {
  if (ctx.resume_pending_) {
    throw CapFault(FaultKind::kPerm,
                   "operation issued after the domain returned control");
  }
}

Capability Machine::read_auth_checked(CompartmentContext& ctx,
                                      Auth which) const {
  return auth_ref(ctx, which);
}

void Machine::write_reg_locked(CompartmentContext& ctx, int dst,
                               const Capability& c) {
  check_reg_index(dst);
  ctx.cregs_[dst] = c;
}

void Machine::cap_move(CompartmentContext& ctx, int dst, Auth src) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  write_reg_locked(ctx, dst, auth_ref(ctx, src));
}

void Machine::cap_clear(CompartmentContext& ctx, int reg) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  write_reg_locked(ctx, reg, Capability());
}

void Machine::cap_set_bounds(CompartmentContext& ctx, int dst, Auth src,
                             uint64_t new_base, uint64_t new_len) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "set_bounds on untagged capability");
  if (c.sealed()) {
    throw CapFault(FaultKind::kSealedImmutable, "set_bounds on sealed capability");
  }
  if (new_base < c.base() || new_base > c.top() ||
      new_len > c.top() - new_base) {
    throw CapFault(FaultKind::kMonotonicity,
                   "requested bounds [" + hex(new_base) + "," +
                       hex(new_base + new_len) + ") exceed " + c.to_string());
  }
  uint64_t cursor = std::clamp(c.cursor(), new_base, new_base + new_len);
  write_reg_locked(
      ctx, dst,
      Capability(true, new_base, new_len, cursor, c.perms(), kOtypeUnsealed));
}

void Machine::cap_and_perms(CompartmentContext& ctx, int dst, Auth src,
                            PermSet mask) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "and_perms on untagged capability");
  if (c.sealed()) {
    throw CapFault(FaultKind::kSealedImmutable, "and_perms on sealed capability");
  }
  write_reg_locked(ctx, dst,
                   Capability(true, c.base(), c.length(), c.cursor(),
                              c.perms() & mask, kOtypeUnsealed));
}

void Machine::cap_inc_offset(CompartmentContext& ctx, int dst, Auth src,
                             int64_t delta) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "inc_offset on untagged capability");
  if (c.sealed()) {
    throw CapFault(FaultKind::kSealedImmutable, "inc_offset on sealed capability");
  }
  // An out-of-bounds cursor is representable; the dereference faults later.
  uint64_t cursor = c.cursor() + static_cast<uint64_t>(delta);
  write_reg_locked(ctx, dst,
                   Capability(true, c.base(), c.length(), cursor, c.perms(),
                              kOtypeUnsealed));
}

void Machine::cap_seal(CompartmentContext& ctx, int dst, Auth src, Auth sealer,
                       uint32_t otype) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  const Capability& s = auth_ref(ctx, sealer);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "seal of untagged capability");
  if (c.sealed()) {
    throw CapFault(FaultKind::kSealedImmutable, "seal of already sealed capability");
  }
  if (!s.tag()) throw CapFault(FaultKind::kTag, "untagged sealer");
  if (s.sealed()) throw CapFault(FaultKind::kSealMismatch, "sealed sealer");
  if (!s.perms().has(Perm::kSeal)) {
    throw CapFault(FaultKind::kPerm, "sealer lacks SEAL");
  }
  if (otype >= kOtypeSpace || !in_bounds(s, otype, 1)) {
    throw CapFault(FaultKind::kBounds,
                   "otype " + std::to_string(otype) + " outside sealer range");
  }
  write_reg_locked(ctx, dst,
                   Capability(true, c.base(), c.length(), c.cursor(), c.perms(),
                              otype));
}

void Machine::cap_unseal(CompartmentContext& ctx, int dst, Auth src,
                         Auth unsealer) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  const Capability& u = auth_ref(ctx, unsealer);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "unseal of untagged capability");
  if (!c.sealed()) {
    throw CapFault(FaultKind::kSealMismatch, "unseal of unsealed capability");
  }
  if (!u.tag()) throw CapFault(FaultKind::kTag, "untagged unsealer");
  if (u.sealed()) throw CapFault(FaultKind::kSealMismatch, "sealed unsealer");
  if (!u.perms().has(Perm::kUnseal)) {
    throw CapFault(FaultKind::kPerm, "unsealer lacks UNSEAL");
  }
  if (!in_bounds(u, c.otype(), 1)) {
    throw CapFault(FaultKind::kSealMismatch,
                   "otype " + std::to_string(c.otype()) + " outside unsealer range");
  }
  write_reg_locked(ctx, dst,
                   Capability(true, c.base(), c.length(), c.cursor(), c.perms(),
                              kOtypeUnsealed));
}

void Machine::write_ddc(CompartmentContext& ctx, Auth src) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  const Capability& c = auth_ref(ctx, src);
  if (!c.tag()) throw CapFault(FaultKind::kTag, "ddc write from untagged capability");
  if (c.sealed()) {
    throw CapFault(FaultKind::kSealMismatch, "ddc write from sealed capability");
  }
  ctx.ddc_ = c;
}

Capability Machine::read_reg(const CompartmentContext& ctx, Auth which) const {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  return auth_ref(ctx, which);
}

Machine::Checked Machine::check_data_access(CompartmentContext& ctx, Auth auth,
                                            uint64_t offset, uint64_t len,
                                            Perm needed, const char* what) {
  Capability cap;
  {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    check_live(ctx);
    cap = auth_ref(ctx, auth);
  }
  if (!cap.tag()) throw CapFault(FaultKind::kTag, std::string(what) + " via untagged capability");
  if (cap.sealed()) {
    throw CapFault(FaultKind::kSealMismatch,
                   std::string(what) + " via sealed capability");
  }
  if (!cap.perms().has(needed)) {
    throw CapFault(FaultKind::kPerm,
                   std::string(what) + " needs " + PermSet(needed).to_string() +
                       " on " + cap.to_string());
  }
  uint64_t addr = cap.cursor() + offset;
  if (addr < cap.cursor() && offset != 0) {
    throw CapFault(FaultKind::kBounds, std::string(what) + " address wraps");
  }
  if (!in_bounds(cap, addr, len)) {
    throw CapFault(FaultKind::kBounds,
                   std::string(what) + " range [" + hex(addr) + "," +
                       hex(addr + len) + ") outside " + cap.to_string());
  }
  return Checked{cap, addr};
}

void Machine::load_bytes(CompartmentContext& ctx, Auth auth, uint64_t offset,
                         std::span<uint8_t> out) {
  Checked c = check_data_access(ctx, auth, offset, out.size(), Perm::kRead,
                                "load");
  mem_.read_bytes(c.addr, out);
}

void Machine::store_bytes(CompartmentContext& ctx, Auth auth, uint64_t offset,
                          std::span<const uint8_t> in) {
  Checked c = check_data_access(ctx, auth, offset, in.size(), Perm::kWrite,
                                "store");
  mem_.write_bytes(c.addr, in);
}

void Machine::load_cap(CompartmentContext& ctx, int dst, Auth auth,
                       uint64_t addr) {
  Capability cap;
  {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    check_live(ctx);
    cap = auth_ref(ctx, auth);
  }
  if (!cap.tag()) throw CapFault(FaultKind::kTag, "load_cap via untagged capability");
  if (cap.sealed()) {
    throw CapFault(FaultKind::kSealMismatch, "load_cap via sealed capability");
  }
  if (!cap.perms().has(Perm::kLoadCap)) {
    throw CapFault(FaultKind::kPerm, "authority lacks LOAD_CAP");
  }
  if (addr % TaggedMemory::kGranule != 0) {
    throw CapFault(FaultKind::kAlignment, "load_cap address " + hex(addr));
  }
  if (!in_bounds(cap, addr, TaggedMemory::kGranule)) {
    throw CapFault(FaultKind::kBounds, "load_cap address " + hex(addr) +
                                           " outside " + cap.to_string());
  }
  Capability loaded = mem_.read_cap(addr);
  std::lock_guard<std::mutex> lk(ctx.mu_);
  check_live(ctx);
  write_reg_locked(ctx, dst, loaded);
}

void Machine::store_cap(CompartmentContext& ctx, Auth auth, uint64_t addr,
                        Auth src) {
  Capability cap;
  Capability value;
  {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    check_live(ctx);
    cap = auth_ref(ctx, auth);
    value = auth_ref(ctx, src);
  }
  if (!cap.tag()) throw CapFault(FaultKind::kTag, "store_cap via untagged capability");
  if (cap.sealed()) {
    throw CapFault(FaultKind::kSealMismatch, "store_cap via sealed capability");
  }
  if (!cap.perms().has(Perm::kStoreCap)) {
    throw CapFault(FaultKind::kPerm, "authority lacks STORE_CAP");
  }
  if (addr % TaggedMemory::kGranule != 0) {
    throw CapFault(FaultKind::kAlignment, "store_cap address " + hex(addr));
  }
  if (!in_bounds(cap, addr, TaggedMemory::kGranule)) {
    throw CapFault(FaultKind::kBounds, "store_cap address " + hex(addr) +
                                           " outside " + cap.to_string());
  }
  mem_.write_cap(addr, value);
}

uint64_t Machine::capcpy(CompartmentContext& ctx, Auth dst, uint64_t dst_off,
                         Auth src, uint64_t src_off, uint64_t len) {
  Checked s = check_data_access(ctx, src, src_off, len, Perm::kRead, "capcpy src");
  Checked d = check_data_access(ctx, dst, dst_off, len, Perm::kWrite, "capcpy dst");
  mem_.copy_range(d.addr, s.addr, len);
  return len;
}

uint64_t Machine::atomic_load_u64(CompartmentContext& ctx, Auth auth,
                                  uint64_t offset) {
  Checked c = check_data_access(ctx, auth, offset, 8, Perm::kRead, "amo load");
  if (c.addr % 8 != 0) {
    throw CapFault(FaultKind::kAlignment, "amo address " + hex(c.addr));
  }
  return mem_.atomic_load_u64(c.addr);
}

void Machine::atomic_store_u64(CompartmentContext& ctx, Auth auth,
                               uint64_t offset, uint64_t value) {
  Checked c = check_data_access(ctx, auth, offset, 8, Perm::kWrite, "amo store");
  if (c.addr % 8 != 0) {
    throw CapFault(FaultKind::kAlignment, "amo address " + hex(c.addr));
  }
  mem_.atomic_store_u64(c.addr, value);
}

uint64_t Machine::atomic_fetch_add_u64(CompartmentContext& ctx, Auth auth,
                                       uint64_t offset, uint64_t delta) {
  check_data_access(ctx, auth, offset, 8, Perm::kRead, "amo add");
  Checked c = check_data_access(ctx, auth, offset, 8, Perm::kWrite, "amo add");
  if (c.addr % 8 != 0) {
    throw CapFault(FaultKind::kAlignment, "amo address " + hex(c.addr));
  }
  return mem_.atomic_fetch_add_u64(c.addr, delta);
}

bool Machine::atomic_cas_u64(CompartmentContext& ctx, Auth auth,
                             uint64_t offset, uint64_t& expected,
                             uint64_t desired) {
  check_data_access(ctx, auth, offset, 8, Perm::kRead, "amo cas");
  Checked c = check_data_access(ctx, auth, offset, 8, Perm::kWrite, "amo cas");
  if (c.addr % 8 != 0) {
    throw CapFault(FaultKind::kAlignment, "amo address " + hex(c.addr));
  }
  return mem_.atomic_cas_u64(c.addr, expected, desired);
}

void Machine::cinvoke(CompartmentContext& ctx, int code_reg, int data_reg) {
  EntryRecord record;
  uint64_t prev_domain;
  {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    check_live(ctx);
    check_reg_index(code_reg);
    check_reg_index(data_reg);
    const Capability& code = ctx.cregs_[code_reg];
    const Capability& data = ctx.cregs_[data_reg];
    if (!code.tag() || !data.tag()) {
      throw CapFault(FaultKind::kTag, "cinvoke with untagged operand");
    }
    if (!code.sealed() || !data.sealed()) {
      throw CapFault(FaultKind::kSealMismatch, "cinvoke with unsealed operand");
    }
    if (code.otype() != data.otype()) {
      throw CapFault(FaultKind::kSealMismatch,
                     "cinvoke otype mismatch: " + std::to_string(code.otype()) +
                         " vs " + std::to_string(data.otype()));
    }
    if (!code.perms().has(Perm::kExec)) {
      throw CapFault(FaultKind::kPerm, "cinvoke code capability lacks EXEC");
    }
    uint64_t target = code.cursor();
    {
      std::shared_lock<std::shared_mutex> elk(entries_mu_);
      auto it = entries_.find(target);
      if (it == entries_.end()) {
        throw CapFault(FaultKind::kBounds,
                       "cinvoke target " + hex(target) + " is not an entry point");
      }
      record = it->second;
    }
    if (!in_bounds(code, target, 1)) {
      throw CapFault(FaultKind::kBounds, "cinvoke target outside code bounds");
    }
    prev_domain = ctx.domain_;
    if (record.kind == EntryRecord::Kind::kResume) {
      if (ctx.transitions_.empty() ||
          ctx.transitions_.back().caller_domain != record.domain) {
        throw CapFault(FaultKind::kPerm,
                       "return entry " + record.name +
                           " does not match the pending transition");
      }
    }
    // Transfer: install pcc, unseal data into ct6, consume the operands.
    Capability unsealed_code(true, code.base(), code.length(), code.cursor(),
                             code.perms(), kOtypeUnsealed);
    Capability unsealed_data(true, data.base(), data.length(), data.cursor(),
                             data.perms(), kOtypeUnsealed);
    ctx.pcc_ = unsealed_code;
    ctx.cregs_[code_reg] = Capability();
    ctx.cregs_[data_reg] = Capability();
    ctx.cregs_[kCt6] = unsealed_data;
    cinvoke_count_.fetch_add(1, std::memory_order_relaxed);
    if (record.kind == EntryRecord::Kind::kResume) {
      ctx.transitions_.pop_back();
      ctx.domain_ = record.domain;
      ctx.resume_pending_ = true;
      return;
    }
    ctx.transitions_.push_back({prev_domain});
    ctx.domain_ = record.domain;
  }

  // Handler dispatch runs unlocked; the handler issues machine operations on
  // this context.
  size_t depth;
  {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    depth = ctx.transitions_.size();
  }
  try {
    record.fn(*this, ctx);
  } catch (...) {
    std::lock_guard<std::mutex> lk(ctx.mu_);
    // Abandon whatever is left of the nested transition state; the fault
    // propagates to the invoking frame.
    while (ctx.transitions_.size() >= depth && !ctx.transitions_.empty()) {
      ctx.domain_ = ctx.transitions_.back().caller_domain;
      ctx.transitions_.pop_back();
    }
    ctx.resume_pending_ = false;
    throw;
  }

  std::lock_guard<std::mutex> lk(ctx.mu_);
  if (ctx.transitions_.size() >= depth) {
    // The handler returned without invoking its return entry; treat it as an
    // escape attempt and fault the compartment.
    while (ctx.transitions_.size() >= depth) {
      ctx.domain_ = ctx.transitions_.back().caller_domain;
      ctx.transitions_.pop_back();
    }
    ctx.resume_pending_ = false;
    throw CapFault(FaultKind::kPerm,
                   "entry " + record.name + " returned without a domain return");
  }
  ctx.resume_pending_ = false;
}

uint64_t Machine::caller_domain(const CompartmentContext& ctx) const {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  if (ctx.transitions_.empty()) return 0;
  return ctx.transitions_.back().caller_domain;
}

void Machine::register_entry(uint64_t addr, EntryRecord record) {
  std::unique_lock<std::shared_mutex> lk(entries_mu_);
  if (!entries_.emplace(addr, std::move(record)).second) {
    throw std::logic_error("entry already registered at " + hex(addr));
  }
}

bool Machine::has_entry(uint64_t addr) const {
  std::shared_lock<std::shared_mutex> lk(entries_mu_);
  return entries_.count(addr) != 0;
}

void Machine::monitor_write_reg(CompartmentContext& ctx, int reg,
                                const Capability& cap) {
  std::lock_guard<std::mutex> lk(ctx.mu_);
  if (ctx.domain_ != 0) {
    throw std::logic_error("monitor_write_reg outside the monitor domain");
  }
  write_reg_locked(ctx, reg, cap);
}

void Machine::sweep_registers(uint64_t base, uint64_t len,
                              uint32_t except_owner) {
  if (len == 0) return;
  std::lock_guard<std::mutex> lk(contexts_mu_);
  for (CompartmentContext* ctx : contexts_) {
    if (ctx->owner() == except_owner || ctx->owner() == kMonitorOwner) continue;
    std::lock_guard<std::mutex> clk(ctx->mu_);
    for (auto& reg : ctx->cregs_) {
      if (reg.tag() && reg.base() < base + len && base < reg.top()) {
        reg = Capability();
      }
    }
  }
}

}  // namespace capvm
