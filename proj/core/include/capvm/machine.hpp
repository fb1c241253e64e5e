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

#ifndef CAPVM_MACHINE_HPP_
#define CAPVM_MACHINE_HPP_

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "capvm/caps.hpp"
#include "capvm/context.hpp"
#include "capvm/memory.hpp"

namespace capvm {

class Machine;

// A code address a sealed pcc may transfer control to. kHandler entries run
// a host routine standing in for the code at that address; kResume entries
// mark return points: invoking one pops the matching transition frame and
// lets the nested host call unwind to the caller's frame.
struct EntryRecord {
  enum class Kind : uint8_t { kHandler, kResume };

  Kind kind = Kind::kHandler;
  // Domain key the entry belongs to (0 = monitor). On a handler dispatch the
  // context's domain becomes this key; a resume entry only accepts control
  // when the pending transition was made from this domain.
  uint64_t domain = 0;
  std::string name;
  std::function<void(Machine&, CompartmentContext&)> fn;
};

// The capability machine: tagged memory plus the instruction-level operation
// API every compartment is driven through. It is not a fetch-decode
// interpreter; guest programs are host routines that may touch memory only
// via a CompartmentContext, which preserves every enforcement point (tag,
// bounds, permission, seal and monotonicity checks) of the modeled ISA.
//
// Transition protocol: cinvoke validates a sealed (code, data) register pair,
// installs pcc from the code capability, unseals the data capability into
// ct6 and clears the operand registers. ddc passes through unchanged; the
// more privileged side of a crossing pre-stages ddc for the less privileged
// side, and a callee entering a more privileged layer installs its ddc from
// ct6. A resume entry must match the transition frame pushed by the call
// that is being returned from; once it fires, the returning domain may issue
// no further operations through the context.
class Machine {
 public:
  struct Options {
    uint64_t mem_size = 256ull << 20;
  };

  explicit Machine(const Options& opts);

  TaggedMemory& mem() { return mem_; }
  const TaggedMemory& mem() const { return mem_; }

  // The initial authority, covering the whole address space with all
  // permissions. Faults on a second call: all authority derives from the
  // single root handed to the monitor at construction time.
  Capability root_capability();

  // --- Context management --------------------------------------------------

  using ContextPtr =
      std::unique_ptr<CompartmentContext, std::function<void(CompartmentContext*)>>;
  ContextPtr make_context(uint32_t owner);

  // --- Derivation operations (results always land in a numbered register) --

  void cap_move(CompartmentContext& ctx, int dst, Auth src);
  void cap_clear(CompartmentContext& ctx, int reg);
  void cap_set_bounds(CompartmentContext& ctx, int dst, Auth src,
                      uint64_t new_base, uint64_t new_len);
  void cap_and_perms(CompartmentContext& ctx, int dst, Auth src, PermSet mask);
  void cap_inc_offset(CompartmentContext& ctx, int dst, Auth src,
                      int64_t delta);
  void cap_seal(CompartmentContext& ctx, int dst, Auth src, Auth sealer,
                uint32_t otype);
  void cap_unseal(CompartmentContext& ctx, int dst, Auth src, Auth unsealer);

  // ddc := src. The source must be tagged and unsealed.
  void write_ddc(CompartmentContext& ctx, Auth src);

  // Register inspection (a copy; cannot confer authority).
  Capability read_reg(const CompartmentContext& ctx, Auth which) const;

  // --- Memory operations ----------------------------------------------------

  // offset is relative to the authority's cursor.
  void load_bytes(CompartmentContext& ctx, Auth auth, uint64_t offset,
                  std::span<uint8_t> out);
  void store_bytes(CompartmentContext& ctx, Auth auth, uint64_t offset,
                   std::span<const uint8_t> in);

  // addr is absolute, 16-byte aligned and must fall within the authority's
  // bounds. Loads require LOAD_CAP, stores STORE_CAP.
  void load_cap(CompartmentContext& ctx, int dst, Auth auth, uint64_t addr);
  void store_cap(CompartmentContext& ctx, Auth auth, uint64_t addr, Auth src);

  // One-pass cross-compartment copy; src needs READ, dst needs WRITE.
  // Returns the byte count moved (always len).
  uint64_t capcpy(CompartmentContext& ctx, Auth dst, uint64_t dst_off,
                  Auth src, uint64_t src_off, uint64_t len);

  // Word atomics over shared queue indices; offset is cursor-relative and
  // the effective address must be 8-byte aligned. Loads require READ,
  // mutations READ and WRITE.
  uint64_t atomic_load_u64(CompartmentContext& ctx, Auth auth,
                           uint64_t offset);
  void atomic_store_u64(CompartmentContext& ctx, Auth auth, uint64_t offset,
                        uint64_t value);
  uint64_t atomic_fetch_add_u64(CompartmentContext& ctx, Auth auth,
                                uint64_t offset, uint64_t delta);
  bool atomic_cas_u64(CompartmentContext& ctx, Auth auth, uint64_t offset,
                      uint64_t& expected, uint64_t desired);

  // --- Control transfer ------------------------------------------------------

  // Domain crossing. Both operands must be tagged, sealed with equal otypes,
  // and the code capability must carry EXEC. On success pcc and ct6 are
  // replaced, the operand registers are consumed, and control enters the
  // entry registered at the new pcc cursor.
  void cinvoke(CompartmentContext& ctx, int code_reg, int data_reg);

  uint64_t cinvoke_count() const {
    return cinvoke_count_.load(std::memory_order_relaxed);
  }
  uint64_t copy_counter() const { return mem_.copy_counter(); }

  // Domain key of the caller of the innermost pending transition (0 when
  // none). Lets a callee identify which domain entered it.
  uint64_t caller_domain(const CompartmentContext& ctx) const;

  // --- Host-side plumbing (monitor / builder use only) -----------------------

  // Maps a code address to an entry record. Part of compartment construction,
  // not reachable from guest code.
  void register_entry(uint64_t addr, EntryRecord record);
  bool has_entry(uint64_t addr) const;

  // Places a capability value into a register of a monitor-owned context.
  // This is the monitor's native authority; contexts owned by compartments
  // are rejected.
  void monitor_write_reg(CompartmentContext& ctx, int reg,
                         const Capability& cap);

  // Clears every tagged register whose range overlaps [base, base+len) in
  // all contexts except those owned by `except_owner` or by the monitor.
  // Models the destruction of revoked capabilities held in CPU contexts.
  void sweep_registers(uint64_t base, uint64_t len, uint32_t except_owner);

  static constexpr uint32_t kMonitorOwner = 0;

 private:
  struct Checked {
    Capability cap;
    uint64_t addr;  // effective start address
  };

  const Capability& auth_ref(const CompartmentContext& ctx, Auth which) const;
  void check_live(CompartmentContext& ctx) const;
  Capability read_auth_checked(CompartmentContext& ctx, Auth which) const;
  Checked check_data_access(CompartmentContext& ctx, Auth auth,
                            uint64_t offset, uint64_t len, Perm needed,
                            const char* what);
  void write_reg_locked(CompartmentContext& ctx, int dst, const Capability& c);

  TaggedMemory mem_;
  bool root_issued_ = false;
  std::mutex root_mu_;

  mutable std::shared_mutex entries_mu_;
  std::map<uint64_t, EntryRecord> entries_;

  std::mutex contexts_mu_;
  std::vector<CompartmentContext*> contexts_;

  std::atomic<uint64_t> cinvoke_count_{0};
};

}  // namespace capvm

#endif  // CAPVM_MACHINE_HPP_
