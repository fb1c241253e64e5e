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

#ifndef CAPVM_COMMDEV_HPP_
#define CAPVM_COMMDEV_HPP_

#include <cstdint>

namespace capvm::chan {

// Stream channel arena layout, offsets from the arena base. The arena lives
// inside the channel maker's region; the peer reaches it through a granted
// capability with READ, WRITE and LOAD_CAP. Destination-buffer capabilities
// are stored into the capability ring by the monitor when a buffer is
// posted; the data path never calls into the monitor.
inline constexpr uint64_t kLive = 0;           // u64: 1 while the channel is live
inline constexpr uint64_t kMode = 8;           // u64: bit 0 = non-blocking send
inline constexpr uint64_t kPostedProd = 16;    // u64
inline constexpr uint64_t kPostedCons = 24;    // u64
inline constexpr uint64_t kCompReserve = 32;   // u64
inline constexpr uint64_t kCompProd = 40;      // u64
inline constexpr uint64_t kCompCons = 48;      // u64
inline constexpr uint64_t kPollerAsleep = 56;  // u64

inline constexpr uint32_t kRingCap = 32;

inline constexpr uint64_t kPostedMeta = 64;  // kRingCap x {id u64, len u64}
inline constexpr uint64_t kPostedCaps =
    kPostedMeta + kRingCap * 16;  // kRingCap x capability slot
inline constexpr uint64_t kCompRing =
    kPostedCaps + kRingCap * 16;  // kRingCap x {id u64, bytes u64}
inline constexpr uint64_t kArenaBytes = kCompRing + kRingCap * 16;

inline constexpr uint64_t kModeNonblock = 1;

inline constexpr uint64_t posted_meta(uint32_t idx) {
  return kPostedMeta + (idx % kRingCap) * 16;
}
inline constexpr uint64_t posted_cap(uint32_t idx) {
  return kPostedCaps + (idx % kRingCap) * 16;
}
inline constexpr uint64_t comp_slot(uint32_t idx) {
  return kCompRing + (idx % kRingCap) * 16;
}

}  // namespace capvm::chan

#endif  // CAPVM_COMMDEV_HPP_
