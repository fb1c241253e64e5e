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

#include <gtest/gtest.h>

#include <random>

#include "capvm/machine.hpp"

namespace capvm {
namespace {

constexpr int kRoot = 1;
constexpr int kGuestDdc = 2;
constexpr int kTmp = 3;
constexpr int kTmp2 = 4;

class MemoryOpsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    machine_.monitor_write_reg(*ctx_, kRoot, machine_.root_capability());
  }

  // Installs ddc with the given bounds and perms.
  void set_ddc(uint64_t base, uint64_t len, PermSet perms) {
    machine_.cap_set_bounds(*ctx_, kGuestDdc, Auth::reg(kRoot), base, len);
    machine_.cap_and_perms(*ctx_, kGuestDdc, Auth::reg(kGuestDdc), perms);
    machine_.write_ddc(*ctx_, Auth::reg(kGuestDdc));
  }

  void expect_fault(FaultKind kind, const std::function<void()>& fn) {
    try {
      fn();
      FAIL() << "expected " << fault_kind_name(kind);
    } catch (const CapFault& f) {
      EXPECT_EQ(f.kind(), kind) << f.what();
    }
  }

  std::vector<uint8_t> pattern(size_t n, uint8_t seed = 0) {
    std::vector<uint8_t> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = static_cast<uint8_t>(seed + i);
    return v;
  }

  Machine machine_{Machine::Options{.mem_size = 1 << 20}};
  Machine::ContextPtr ctx_ = machine_.make_context(Machine::kMonitorOwner);
};

TEST_F(MemoryOpsTest, LoadStoreRoundTrip) {
  set_ddc(0x1000, 0x1000, Perm::kRead | Perm::kWrite);
  auto data = pattern(64);
  machine_.store_bytes(*ctx_, Auth::ddc(), 0, data);
  std::vector<uint8_t> out(64);
  machine_.load_bytes(*ctx_, Auth::ddc(), 0, out);
  EXPECT_EQ(out, data);
}

TEST_F(MemoryOpsTest, ReadStraddlingUpperBoundFaults) {
  set_ddc(0x1000, 0x1000, Perm::kRead | Perm::kWrite);
  std::vector<uint8_t> out(64);
  expect_fault(FaultKind::kBounds, [&] {
    machine_.load_bytes(*ctx_, Auth::ddc(), 0x1000 - 32, out);
  });
}

TEST_F(MemoryOpsTest, ReadWithoutReadPermFaults) {
  set_ddc(0x1000, 0x1000, PermSet(Perm::kWrite));
  std::vector<uint8_t> out(8);
  expect_fault(FaultKind::kPerm,
               [&] { machine_.load_bytes(*ctx_, Auth::ddc(), 0, out); });
}

TEST_F(MemoryOpsTest, WriteViaReadOnlyAuthFaults) {
  set_ddc(0x1000, 0x1000, PermSet(Perm::kRead));
  auto data = pattern(8);
  expect_fault(FaultKind::kPerm,
               [&] { machine_.store_bytes(*ctx_, Auth::ddc(), 0, data); });
}

TEST_F(MemoryOpsTest, ByteStoreClearsOverlappedGranuleTag) {
  // Monitor stores a capability, then a single byte store into the granule
  // invalidates it.
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.store_cap(*ctx_, Auth::reg(kRoot), 0x4000, Auth::reg(kTmp));
  EXPECT_TRUE(machine_.mem().granule_tag(0x4000));

  set_ddc(0x4000, 0x100, Perm::kRead | Perm::kWrite | Perm::kLoadCap);
  uint8_t one = 0xff;
  machine_.store_bytes(*ctx_, Auth::ddc(), 3, std::span<const uint8_t>(&one, 1));
  EXPECT_FALSE(machine_.mem().granule_tag(0x4000));

  machine_.load_cap(*ctx_, kTmp2, Auth::ddc(), 0x4000);
  EXPECT_FALSE(machine_.read_reg(*ctx_, Auth::reg(kTmp2)).tag());
}

TEST_F(MemoryOpsTest, StoreCapWithoutStoreCapPermFaults) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  set_ddc(0x4000, 0x100,
          Perm::kRead | Perm::kWrite | Perm::kLoadCap);  // the guest default set
  expect_fault(FaultKind::kPerm, [&] {
    machine_.store_cap(*ctx_, Auth::ddc(), 0x4000, Auth::reg(kTmp));
  });
}

TEST_F(MemoryOpsTest, StoreCapLoadCapRoundTrip) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kTmp), Perm::kRead | Perm::kWrite);
  Capability stored = machine_.read_reg(*ctx_, Auth::reg(kTmp));

  machine_.store_cap(*ctx_, Auth::reg(kRoot), 0x4000, Auth::reg(kTmp));
  set_ddc(0x4000, 0x100, Perm::kRead | Perm::kLoadCap);
  machine_.load_cap(*ctx_, kTmp2, Auth::ddc(), 0x4000);
  Capability loaded = machine_.read_reg(*ctx_, Auth::reg(kTmp2));
  EXPECT_TRUE(loaded.tag());
  EXPECT_TRUE(loaded.same_bits(stored));
}

TEST_F(MemoryOpsTest, LoadCapRequiresAlignment) {
  set_ddc(0x4000, 0x100, Perm::kRead | Perm::kLoadCap);
  expect_fault(FaultKind::kAlignment,
               [&] { machine_.load_cap(*ctx_, kTmp, Auth::ddc(), 0x4008); });
}

TEST_F(MemoryOpsTest, LoadCapRequiresLoadCapPerm) {
  set_ddc(0x4000, 0x100, Perm::kRead | Perm::kWrite);
  expect_fault(FaultKind::kPerm,
               [&] { machine_.load_cap(*ctx_, kTmp, Auth::ddc(), 0x4000); });
}

TEST_F(MemoryOpsTest, CapcpyCountsBytes) {
  set_ddc(0x1000, 0x10000, Perm::kRead | Perm::kWrite);
  auto data = pattern(4096);
  machine_.store_bytes(*ctx_, Auth::ddc(), 0, data);
  uint64_t before = machine_.copy_counter();
  uint64_t moved = machine_.capcpy(*ctx_, Auth::ddc(), 0x8000, Auth::ddc(), 0, 4096);
  EXPECT_EQ(moved, 4096u);
  EXPECT_EQ(machine_.copy_counter() - before, 4096u);
}

TEST_F(MemoryOpsTest, CapcpyZeroLengthIsNoop) {
  set_ddc(0x1000, 0x1000, Perm::kRead | Perm::kWrite);
  uint64_t before = machine_.copy_counter();
  EXPECT_EQ(machine_.capcpy(*ctx_, Auth::ddc(), 16, Auth::ddc(), 0, 0), 0u);
  EXPECT_EQ(machine_.copy_counter(), before);
}

TEST_F(MemoryOpsTest, CapcpyClearsDestinationTags) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.store_cap(*ctx_, Auth::reg(kRoot), 0x4000, Auth::reg(kTmp));
  EXPECT_TRUE(machine_.mem().granule_tag(0x4000));
  set_ddc(0x1000, 0x10000, Perm::kRead | Perm::kWrite);
  machine_.capcpy(*ctx_, Auth::ddc(), 0x3000, Auth::ddc(), 0, 64);
  EXPECT_FALSE(machine_.mem().granule_tag(0x4000));
}

// The naive byte-loop oracle: copies one byte at a time through the same
// authority, independent of the capcpy implementation.
void naive_copy(Machine& m, CompartmentContext& ctx, uint64_t dst_off,
                uint64_t src_off, uint64_t len) {
  for (uint64_t i = 0; i < len; ++i) {
    uint8_t b;
    m.load_bytes(ctx, Auth::ddc(), src_off + i, std::span<uint8_t>(&b, 1));
    m.store_bytes(ctx, Auth::ddc(), dst_off + i, std::span<const uint8_t>(&b, 1));
  }
}

TEST_F(MemoryOpsTest, CapcpyMatchesNaiveLoopOracle) {
  constexpr uint64_t kArena = 0x1000;
  constexpr uint64_t kArenaLen = 0x4000;
  std::mt19937_64 rng(42);
  for (int round = 0; round < 200; ++round) {
    set_ddc(kArena, kArenaLen, Perm::kRead | Perm::kWrite);
    std::vector<uint8_t> init(kArenaLen);
    for (auto& b : init) b = static_cast<uint8_t>(rng());
    machine_.store_bytes(*ctx_, Auth::ddc(), 0, init);

    uint64_t len = rng() % 512;
    uint64_t src = rng() % (kArenaLen - len);
    uint64_t dst = rng() % (kArenaLen - len);  // may overlap src

    // Oracle run first, on a scratch copy of the arena state.
    auto before = machine_.mem().snapshot(kArena, kArenaLen);
    naive_copy(machine_, *ctx_, dst, src, len);
    auto expected = machine_.mem().snapshot(kArena, kArenaLen);

    // Reset and run the implementation.
    machine_.store_bytes(*ctx_, Auth::ddc(), 0, before);
    machine_.capcpy(*ctx_, Auth::ddc(), dst, Auth::ddc(), src, len);
    auto actual = machine_.mem().snapshot(kArena, kArenaLen);
    ASSERT_EQ(actual, expected) << "round " << round << " len=" << len
                                << " src=" << src << " dst=" << dst;
  }
}

TEST_F(MemoryOpsTest, CapcpySrcNeedsReadDstNeedsWrite) {
  set_ddc(0x1000, 0x1000, PermSet(Perm::kWrite));
  expect_fault(FaultKind::kPerm, [&] {
    machine_.capcpy(*ctx_, Auth::ddc(), 0x100, Auth::ddc(), 0, 16);
  });
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x1000, 0x1000);
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kTmp), PermSet(Perm::kRead));
  expect_fault(FaultKind::kPerm, [&] {
    machine_.capcpy(*ctx_, Auth::reg(kTmp), 0x100, Auth::reg(kTmp), 0, 16);
  });
}

TEST_F(MemoryOpsTest, AtomicsRequireAlignmentAndPerms) {
  set_ddc(0x1000, 0x1000, Perm::kRead | Perm::kWrite);
  machine_.atomic_store_u64(*ctx_, Auth::ddc(), 64, 7);
  EXPECT_EQ(machine_.atomic_load_u64(*ctx_, Auth::ddc(), 64), 7u);
  EXPECT_EQ(machine_.atomic_fetch_add_u64(*ctx_, Auth::ddc(), 64, 3), 7u);
  EXPECT_EQ(machine_.atomic_load_u64(*ctx_, Auth::ddc(), 64), 10u);
  uint64_t expected = 10;
  EXPECT_TRUE(machine_.atomic_cas_u64(*ctx_, Auth::ddc(), 64, expected, 11));
  expected = 10;
  EXPECT_FALSE(machine_.atomic_cas_u64(*ctx_, Auth::ddc(), 64, expected, 12));
  EXPECT_EQ(expected, 11u);

  expect_fault(FaultKind::kAlignment, [&] {
    machine_.atomic_load_u64(*ctx_, Auth::ddc(), 3);
  });
}

}  // namespace
}  // namespace capvm
