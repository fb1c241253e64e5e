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

#ifndef CAPVM_MEMORY_HPP_
#define CAPVM_MEMORY_HPP_

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "capvm/caps.hpp"

namespace capvm {

// The single shared address space: a flat byte array plus one validity tag
// per aligned 16-byte granule. A granule's tag is set only by a whole
// capability store; any plain byte store overlapping the granule clears it.
//
// The 16 bytes of a tagged granule hold a packed inspection image of the
// stored capability (base/length/cursor low words, permissions, otype); the
// exact uncompressed fields live in a shadow table keyed by granule, which is
// only consulted while the granule's tag is set. Byte writes therefore can
// never fabricate a valid capability.
//
// copy_counter counts the bytes moved by copy_range (the machine's capcpy)
// and nothing else; it is the instrumentation all copy-count checks rely on.
class TaggedMemory {
 public:
  static constexpr uint64_t kGranule = 16;
  static constexpr uint64_t kMaxSize = 1ull << 32;

  explicit TaggedMemory(uint64_t size);

  uint64_t size() const { return size_; }
  uint64_t copy_counter() const {
    return copy_counter_.load(std::memory_order_relaxed);
  }

  // Plain data access. Ranges must be pre-validated by the caller.
  void read_bytes(uint64_t addr, std::span<uint8_t> out) const;
  void write_bytes(uint64_t addr, std::span<const uint8_t> in);

  // Moves len bytes with forward byte-copy semantics (overlapping ranges
  // behave like a per-byte loop), clears destination granule tags and adds
  // len to copy_counter.
  void copy_range(uint64_t dst, uint64_t src, uint64_t len);

  // Capability slots. addr must be 16-byte aligned and in range.
  void write_cap(uint64_t addr, const Capability& cap);
  Capability read_cap(uint64_t addr) const;
  bool granule_tag(uint64_t addr) const;

  // Word accessors used for shared queue indices. addr must be 8-byte
  // aligned; these are atomic with respect to each other.
  uint64_t atomic_load_u64(uint64_t addr) const;
  void atomic_store_u64(uint64_t addr, uint64_t value);
  uint64_t atomic_fetch_add_u64(uint64_t addr, uint64_t delta);
  bool atomic_cas_u64(uint64_t addr, uint64_t& expected, uint64_t desired);

  // Host-level instrumentation for tests and the monitor.
  std::vector<uint8_t> snapshot(uint64_t addr, uint64_t len) const;
  std::vector<bool> tag_snapshot(uint64_t addr, uint64_t len) const;

 private:
  static void encode_image(const Capability& cap, uint8_t out[16]);
  static Capability decode_image(const uint8_t in[16]);
  void clear_tags_in(uint64_t addr, uint64_t len);

  uint64_t size_;
  std::unique_ptr<uint8_t[]> bytes_;
  std::unique_ptr<std::atomic<uint8_t>[]> tags_;
  mutable std::mutex cap_mu_;
  std::unordered_map<uint64_t, Capability> shadow_;
  std::atomic<uint64_t> copy_counter_{0};
};

}  // namespace capvm

#endif  // CAPVM_MEMORY_HPP_
