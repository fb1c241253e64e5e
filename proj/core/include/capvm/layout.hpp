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

#ifndef CAPVM_LAYOUT_HPP_
#define CAPVM_LAYOUT_HPP_

#include <cstdint>

namespace capvm::layout {

inline constexpr uint64_t kGranule = 16;

// Monitor region entry points.
inline constexpr uint64_t kMonitorOcallEntry = 0x10;
inline constexpr uint64_t kMonitorRetEntry = 0x20;
inline constexpr uint64_t kMonitorHeapBase = 0x1000;

// Compartment region layout, offsets from the region base.
//
//   +0x0000  Affix: three sealed capability slots
//   +0x0030  device capability slots (one per binding)
//   +0x0440  code arena: entry-point addresses
//   +0x1000  library OS arena: descriptor table, gate slots, channel arenas
//   +0x8000  program sub-regions: gates | call-argument arena | heap
//   ...      thread stack pool
inline constexpr uint64_t kAffixOffset = 0x0;
inline constexpr int kAffixMonDdc = 0;
inline constexpr int kAffixRet = 1;
inline constexpr int kAffixOcall = 2;

inline constexpr uint64_t kDevSlotsOffset = 0x30;
inline constexpr uint32_t kMaxDevices = 64;

inline constexpr uint64_t kCodeOffset = 0x440;
inline constexpr uint64_t kCodeSize = 0x400;  // 64 entry slots, 16 bytes each

inline constexpr uint64_t kLibosOffset = 0x1000;
inline constexpr uint64_t kDescTableOffset = kLibosOffset;
inline constexpr uint32_t kMaxDescriptors = 64;
inline constexpr uint64_t kDescSize = 16;

inline constexpr uint64_t kLibosGatesOffset = kLibosOffset + 0x400;
inline constexpr uint32_t kMaxPrograms = 16;
inline constexpr uint64_t kGateSlots = 4;  // 4 capability slots per program

inline constexpr uint64_t kChannelsOffset = kLibosOffset + 0x800;
inline constexpr uint32_t kMaxChannels = 8;
inline constexpr uint64_t kChannelArenaSize = 2048;

inline constexpr uint64_t kProgramsOffset = 0x8000;

// Program sub-region layout, offsets from the program base.
inline constexpr uint64_t kProgGatesOffset = 0x0;  // 4 capability slots
inline constexpr uint64_t kProgArgArenaOffset = 0x1000;
inline constexpr uint32_t kMaxInflightCalls = 8;
inline constexpr uint64_t kArgSlotSize = 4096;
inline constexpr uint64_t kProgHeapOffset =
    kProgArgArenaOffset + kMaxInflightCalls * kArgSlotSize;

inline constexpr uint64_t align_up(uint64_t v, uint64_t a) {
  return (v + a - 1) & ~(a - 1);
}

}  // namespace capvm::layout

#endif  // CAPVM_LAYOUT_HPP_
