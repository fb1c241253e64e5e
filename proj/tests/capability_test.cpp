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

#include "capvm/machine.hpp"

namespace capvm {
namespace {

// Register conventions used throughout these tests.
constexpr int kRoot = 1;
constexpr int kTmp = 2;
constexpr int kTmp2 = 3;
constexpr int kSealer = 4;

class CapabilityTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = machine_.root_capability();
    machine_.monitor_write_reg(*ctx_, kRoot, root_);
  }

  Capability reg(int i) const { return machine_.read_reg(*ctx_, Auth::reg(i)); }

  void expect_fault(FaultKind kind, const std::function<void()>& fn) {
    try {
      fn();
      FAIL() << "expected " << fault_kind_name(kind);
    } catch (const CapFault& f) {
      EXPECT_EQ(f.kind(), kind) << f.what();
    }
  }

  Machine machine_{Machine::Options{.mem_size = 1 << 20}};
  Machine::ContextPtr ctx_ = machine_.make_context(Machine::kMonitorOwner);
  Capability root_;
};

TEST_F(CapabilityTest, RootCoversWholeSpaceWithAllPerms) {
  EXPECT_TRUE(root_.tag());
  EXPECT_EQ(root_.base(), 0u);
  EXPECT_EQ(root_.length(), 1u << 20);
  EXPECT_EQ(root_.perms(), PermSet::all());
  EXPECT_FALSE(root_.sealed());
}

TEST_F(CapabilityTest, SecondRootRequestFaults) {
  expect_fault(FaultKind::kPerm, [&] { machine_.root_capability(); });
}

TEST_F(CapabilityTest, DerivedChainKeepsTag) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x1000, 0x1000);
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kTmp), Perm::kRead | Perm::kWrite);
  machine_.cap_inc_offset(*ctx_, kTmp, Auth::reg(kTmp), 16);
  EXPECT_TRUE(reg(kTmp).tag());
}

TEST_F(CapabilityTest, SetBoundsToStrictSubset) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0, 4096);
  machine_.cap_set_bounds(*ctx_, kTmp2, Auth::reg(kTmp), 1024, 512);
  Capability c = reg(kTmp2);
  EXPECT_EQ(c.base(), 1024u);
  EXPECT_EQ(c.length(), 512u);
  EXPECT_GE(c.cursor(), 1024u);
  EXPECT_LE(c.cursor(), 1536u);
}

TEST_F(CapabilityTest, SetBoundsToSupersetFaults) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 1024, 512);
  expect_fault(FaultKind::kMonotonicity, [&] {
    machine_.cap_set_bounds(*ctx_, kTmp2, Auth::reg(kTmp), 0, 4096);
  });
}

TEST_F(CapabilityTest, SetBoundsIdentity) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0, 4096);
  machine_.cap_set_bounds(*ctx_, kTmp2, Auth::reg(kTmp), 0, 4096);
  Capability c = reg(kTmp2);
  EXPECT_EQ(c.base(), 0u);
  EXPECT_EQ(c.length(), 4096u);
}

TEST_F(CapabilityTest, AndPermsIntersects) {
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kRoot), Perm::kRead | Perm::kWrite);
  machine_.cap_and_perms(*ctx_, kTmp2, Auth::reg(kTmp), PermSet(Perm::kRead));
  EXPECT_EQ(reg(kTmp2).perms(), PermSet(Perm::kRead));
}

TEST_F(CapabilityTest, AndPermsCannotEscalate) {
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kRoot), PermSet(Perm::kRead));
  machine_.cap_and_perms(*ctx_, kTmp2, Auth::reg(kTmp), Perm::kRead | Perm::kWrite);
  EXPECT_EQ(reg(kTmp2).perms(), PermSet(Perm::kRead));
}

TEST_F(CapabilityTest, AndPermsEmptyMaskKeepsTag) {
  machine_.cap_and_perms(*ctx_, kTmp, Auth::reg(kRoot), PermSet::none());
  EXPECT_TRUE(reg(kTmp).tag());
  EXPECT_TRUE(reg(kTmp).perms().empty());
}

TEST_F(CapabilityTest, IncOffsetMovesCursor) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0, 4096);
  machine_.cap_inc_offset(*ctx_, kTmp, Auth::reg(kTmp), 100);
  machine_.cap_inc_offset(*ctx_, kTmp, Auth::reg(kTmp), 28);
  EXPECT_EQ(reg(kTmp).cursor(), 128u);
}

TEST_F(CapabilityTest, IncOffsetZeroIsIdentity) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 64, 128);
  Capability before = reg(kTmp);
  machine_.cap_inc_offset(*ctx_, kTmp, Auth::reg(kTmp), 0);
  EXPECT_TRUE(reg(kTmp).same_bits(before));
}

TEST_F(CapabilityTest, OutOfBoundsCursorFaultsAtDereference) {
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0, 64);
  machine_.cap_inc_offset(*ctx_, kTmp, Auth::reg(kTmp), 4096);
  EXPECT_TRUE(reg(kTmp).tag());  // representable
  uint8_t byte;
  expect_fault(FaultKind::kBounds, [&] {
    machine_.load_bytes(*ctx_, Auth::reg(kTmp), 0, std::span<uint8_t>(&byte, 1));
  });
}

TEST_F(CapabilityTest, SealAndUnsealRoundTrip) {
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 16);
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.cap_seal(*ctx_, kTmp2, Auth::reg(kTmp), Auth::reg(kSealer), 7);
  Capability sealed = reg(kTmp2);
  EXPECT_TRUE(sealed.sealed());
  EXPECT_EQ(sealed.otype(), 7u);

  machine_.cap_unseal(*ctx_, kTmp2, Auth::reg(kTmp2), Auth::reg(kSealer));
  Capability unsealed = reg(kTmp2);
  EXPECT_FALSE(unsealed.sealed());
  EXPECT_EQ(unsealed.base(), 0x2000u);
}

TEST_F(CapabilityTest, SealerWithoutSealPermFaults) {
  machine_.cap_and_perms(*ctx_, kSealer, Auth::reg(kRoot), Perm::kRead | Perm::kWrite);
  expect_fault(FaultKind::kPerm, [&] {
    machine_.cap_seal(*ctx_, kTmp, Auth::reg(kRoot), Auth::reg(kSealer), 1);
  });
}

TEST_F(CapabilityTest, SealOtypeOutsideSealerRangeFaults) {
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 16);
  expect_fault(FaultKind::kBounds, [&] {
    machine_.cap_seal(*ctx_, kTmp, Auth::reg(kRoot), Auth::reg(kSealer), 99);
  });
}

TEST_F(CapabilityTest, SealedCapabilityIsImmutable) {
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 16);
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.cap_seal(*ctx_, kTmp, Auth::reg(kTmp), Auth::reg(kSealer), 7);
  expect_fault(FaultKind::kSealedImmutable, [&] {
    machine_.cap_inc_offset(*ctx_, kTmp2, Auth::reg(kTmp), 8);
  });
  expect_fault(FaultKind::kSealedImmutable, [&] {
    machine_.cap_set_bounds(*ctx_, kTmp2, Auth::reg(kTmp), 0x2000, 0x10);
  });
  expect_fault(FaultKind::kSealedImmutable, [&] {
    machine_.cap_and_perms(*ctx_, kTmp2, Auth::reg(kTmp), PermSet(Perm::kRead));
  });
}

TEST_F(CapabilityTest, UnsealWithWrongRangeFaults) {
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 16);
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x2000, 0x100);
  machine_.cap_seal(*ctx_, kTmp, Auth::reg(kTmp), Auth::reg(kSealer), 7);
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 8, 8);  // [8,16)
  expect_fault(FaultKind::kSealMismatch, [&] {
    machine_.cap_unseal(*ctx_, kTmp2, Auth::reg(kTmp), Auth::reg(kSealer));
  });
}

TEST_F(CapabilityTest, UnsealOfUnsealedFaults) {
  machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 16);
  expect_fault(FaultKind::kSealMismatch, [&] {
    machine_.cap_unseal(*ctx_, kTmp, Auth::reg(kRoot), Auth::reg(kSealer));
  });
}

TEST_F(CapabilityTest, UntaggedSourceFaults) {
  machine_.cap_clear(*ctx_, kTmp);
  expect_fault(FaultKind::kTag, [&] {
    machine_.cap_set_bounds(*ctx_, kTmp2, Auth::reg(kTmp), 0, 16);
  });
  expect_fault(FaultKind::kTag, [&] {
    machine_.cap_inc_offset(*ctx_, kTmp2, Auth::reg(kTmp), 1);
  });
}

}  // namespace
}  // namespace capvm
