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

#include "capvm/memory.hpp"

#include <cassert>
#include <cstring>
#include <stdexcept>

namespace capvm {

// Packed 16-byte inspection image of a stored capability. The shadow table
// holds the authoritative fields; this is what byte reads of the granule see.
//   [0,4)   base (low 32 bits)
//   [4,8)   length (low 32 bits)
//   [8,12)  cursor (low 32 bits)
//   [12]    permission bits
//   [13,16) otype, 0xffffff when unsealed
void TaggedMemory::encode_image(const Capability& cap, uint8_t out[16]) {
  auto put32 = [&](int off, uint32_t v) { std::memcpy(out + off, &v, 4); };
  put32(0, static_cast<uint32_t>(cap.base()));
  put32(4, static_cast<uint32_t>(cap.length()));
  put32(8, static_cast<uint32_t>(cap.cursor()));
  out[12] = cap.perms().raw();
  uint32_t ot = cap.sealed() ? (cap.otype() & 0xffffffu) : 0xffffffu;
  out[13] = static_cast<uint8_t>(ot);
  out[14] = static_cast<uint8_t>(ot >> 8);
  out[15] = static_cast<uint8_t>(ot >> 16);
}

Capability TaggedMemory::decode_image(const uint8_t in[16]) {
  auto get32 = [&](int off) {
    uint32_t v;
    std::memcpy(&v, in + off, 4);
    return v;
  };
  uint32_t ot = static_cast<uint32_t>(in[13]) |
                (static_cast<uint32_t>(in[14]) << 8) |
                (static_cast<uint32_t>(in[15]) << 16);
  return Capability(false, get32(0), get32(4), get32(8),
                    PermSet::from_raw(in[12]),
                    ot == 0xffffffu ? kOtypeUnsealed : ot);
}

TaggedMemory::TaggedMemory(uint64_t size) : size_(size) {
  if (size == 0 || size % kGranule != 0 || size > kMaxSize) {
    throw std::invalid_argument("memory size must be a positive multiple of 16 and at most 4 GiB");
  }
  bytes_ = std::make_unique<uint8_t[]>(size);
  uint64_t granules = size / kGranule;
  tags_ = std::make_unique<std::atomic<uint8_t>[]>(granules);
  for (uint64_t i = 0; i < granules; ++i) {
    tags_[i].store(0, std::memory_order_relaxed);
  }
}

void TaggedMemory::read_bytes(uint64_t addr, std::span<uint8_t> out) const {
  assert(addr + out.size() <= size_);
  std::memcpy(out.data(), bytes_.get() + addr, out.size());
}

void TaggedMemory::write_bytes(uint64_t addr, std::span<const uint8_t> in) {
  assert(addr + in.size() <= size_);
  std::memcpy(bytes_.get() + addr, in.data(), in.size());
  clear_tags_in(addr, in.size());
}

void TaggedMemory::copy_range(uint64_t dst, uint64_t src, uint64_t len) {
  assert(dst + len <= size_ && src + len <= size_);
  if (len > 0) {
    uint8_t* d = bytes_.get() + dst;
    const uint8_t* s = bytes_.get() + src;
    bool overlap = (dst < src + len) && (src < dst + len);
    if (!overlap) {
      std::memcpy(d, s, len);
    } else {
      // Forward byte-copy semantics, matching the per-byte loop that defines
      // this operation.
      for (uint64_t i = 0; i < len; ++i) d[i] = s[i];
    }
    clear_tags_in(dst, len);
  }
  copy_counter_.fetch_add(len, std::memory_order_relaxed);
}

void TaggedMemory::write_cap(uint64_t addr, const Capability& cap) {
  assert(addr % kGranule == 0 && addr + kGranule <= size_);
  std::lock_guard<std::mutex> lk(cap_mu_);
  uint8_t image[16];
  encode_image(cap, image);
  std::memcpy(bytes_.get() + addr, image, 16);
  uint64_t g = addr / kGranule;
  if (cap.tag()) {
    shadow_[g] = cap;
    tags_[g].store(1, std::memory_order_release);
  } else {
    shadow_.erase(g);
    tags_[g].store(0, std::memory_order_release);
  }
}

Capability TaggedMemory::read_cap(uint64_t addr) const {
  assert(addr % kGranule == 0 && addr + kGranule <= size_);
  std::lock_guard<std::mutex> lk(cap_mu_);
  uint64_t g = addr / kGranule;
  if (tags_[g].load(std::memory_order_acquire)) {
    auto it = shadow_.find(g);
    if (it != shadow_.end()) return it->second;
  }
  return decode_image(bytes_.get() + addr);
}

bool TaggedMemory::granule_tag(uint64_t addr) const {
  assert(addr < size_);
  return tags_[addr / kGranule].load(std::memory_order_acquire) != 0;
}

void TaggedMemory::clear_tags_in(uint64_t addr, uint64_t len) {
  if (len == 0) return;
  uint64_t first = addr / kGranule;
  uint64_t last = (addr + len - 1) / kGranule;
  for (uint64_t g = first; g <= last; ++g) {
    if (tags_[g].load(std::memory_order_relaxed)) {
      std::lock_guard<std::mutex> lk(cap_mu_);
      shadow_.erase(g);
      tags_[g].store(0, std::memory_order_release);
    }
  }
}

uint64_t TaggedMemory::atomic_load_u64(uint64_t addr) const {
  assert(addr % 8 == 0 && addr + 8 <= size_);
  return std::atomic_ref<uint64_t>(
             *reinterpret_cast<uint64_t*>(bytes_.get() + addr))
      .load(std::memory_order_acquire);
}

void TaggedMemory::atomic_store_u64(uint64_t addr, uint64_t value) {
  assert(addr % 8 == 0 && addr + 8 <= size_);
  std::atomic_ref<uint64_t>(*reinterpret_cast<uint64_t*>(bytes_.get() + addr))
      .store(value, std::memory_order_release);
  clear_tags_in(addr, 8);
}

uint64_t TaggedMemory::atomic_fetch_add_u64(uint64_t addr, uint64_t delta) {
  assert(addr % 8 == 0 && addr + 8 <= size_);
  uint64_t prev =
      std::atomic_ref<uint64_t>(*reinterpret_cast<uint64_t*>(bytes_.get() + addr))
          .fetch_add(delta, std::memory_order_acq_rel);
  clear_tags_in(addr, 8);
  return prev;
}

bool TaggedMemory::atomic_cas_u64(uint64_t addr, uint64_t& expected,
                                  uint64_t desired) {
  assert(addr % 8 == 0 && addr + 8 <= size_);
  bool ok =
      std::atomic_ref<uint64_t>(*reinterpret_cast<uint64_t*>(bytes_.get() + addr))
          .compare_exchange_strong(expected, desired, std::memory_order_acq_rel);
  if (ok) clear_tags_in(addr, 8);
  return ok;
}

std::vector<uint8_t> TaggedMemory::snapshot(uint64_t addr, uint64_t len) const {
  assert(addr + len <= size_);
  std::vector<uint8_t> out(len);
  std::memcpy(out.data(), bytes_.get() + addr, len);
  return out;
}

std::vector<bool> TaggedMemory::tag_snapshot(uint64_t addr, uint64_t len) const {
  assert(addr + len <= size_);
  std::vector<bool> out;
  if (len == 0) return out;
  uint64_t first = addr / kGranule;
  uint64_t last = (addr + len - 1) / kGranule;
  out.reserve(last - first + 1);
  for (uint64_t g = first; g <= last; ++g) {
    out.push_back(tags_[g].load(std::memory_order_acquire) != 0);
  }
  return out;
}

}  // namespace capvm
