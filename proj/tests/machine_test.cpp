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

constexpr int kRoot = 1;
constexpr int kSealer = 2;
constexpr int kCode = 10;
constexpr int kData = 11;
constexpr int kRetCode = 12;
constexpr int kRetData = 13;
constexpr int kTmp = 14;

constexpr uint64_t kTargetAddr = 0x100;
constexpr uint64_t kBackAddr = 0x200;
constexpr uint32_t kOtype = 7;
constexpr uint64_t kCalleeDomain = 0x99;

class CinvokeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    machine_.monitor_write_reg(*ctx_, kRoot, machine_.root_capability());
    machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 256);

    machine_.register_entry(
        kTargetAddr,
        EntryRecord{EntryRecord::Kind::kHandler, kCalleeDomain, "target",
                    [this](Machine& m, CompartmentContext& ctx) {
                      handler_ran_ = true;
                      observed_t0_ = ctx.iregs.t0;
                      observed_ct6_ = m.read_reg(ctx, Auth::reg(kCt6));
                      if (body_) body_(m, ctx);
                      m.cinvoke(ctx, kRetCode, kRetData);
                      if (after_return_) after_return_(m, ctx);
                    }});
    machine_.register_entry(kBackAddr,
                            EntryRecord{EntryRecord::Kind::kResume, 0, "back",
                                        nullptr});
  }

  // Builds a sealed pair in (code_reg, data_reg): code cursor at `target`,
  // data over [0x8000, 0x8100), both sealed with `otype`.
  void build_pair(int code_reg, int data_reg, uint64_t target, uint32_t otype,
                  bool code_exec = true) {
    machine_.cap_set_bounds(*ctx_, code_reg, Auth::reg(kRoot), 0, 0x1000);
    machine_.cap_and_perms(*ctx_, code_reg, Auth::reg(code_reg),
                           code_exec ? PermSet(Perm::kExec)
                                     : Perm::kRead | Perm::kWrite);
    machine_.cap_inc_offset(*ctx_, code_reg, Auth::reg(code_reg),
                            static_cast<int64_t>(target));
    machine_.cap_seal(*ctx_, code_reg, Auth::reg(code_reg), Auth::reg(kSealer),
                      otype);

    machine_.cap_set_bounds(*ctx_, data_reg, Auth::reg(kRoot), 0x8000, 0x100);
    machine_.cap_and_perms(*ctx_, data_reg, Auth::reg(data_reg),
                           Perm::kRead | Perm::kWrite);
    machine_.cap_seal(*ctx_, data_reg, Auth::reg(data_reg), Auth::reg(kSealer),
                      otype);
  }

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
  bool handler_ran_ = false;
  uint64_t observed_t0_ = 0;
  Capability observed_ct6_;
  std::function<void(Machine&, CompartmentContext&)> body_;
  std::function<void(Machine&, CompartmentContext&)> after_return_;
};

TEST_F(CinvokeTest, MatchedPairTransfersControl) {
  build_pair(kCode, kData, kTargetAddr, kOtype);
  build_pair(kRetCode, kRetData, kBackAddr, kOtype);
  ctx_->iregs.t0 = 0x1234;
  uint64_t transitions_before = machine_.cinvoke_count();

  machine_.cinvoke(*ctx_, kCode, kData);

  EXPECT_TRUE(handler_ran_);
  EXPECT_EQ(observed_t0_, 0x1234u);
  // ct6 held the unsealed data capability during the handler.
  EXPECT_TRUE(observed_ct6_.tag());
  EXPECT_FALSE(observed_ct6_.sealed());
  EXPECT_EQ(observed_ct6_.base(), 0x8000u);
  // Operand registers are consumed by the transfer.
  EXPECT_FALSE(machine_.read_reg(*ctx_, Auth::reg(kCode)).tag());
  EXPECT_FALSE(machine_.read_reg(*ctx_, Auth::reg(kData)).tag());
  // Call plus return.
  EXPECT_EQ(machine_.cinvoke_count() - transitions_before, 2u);
  // After the return, pcc sits at the resume entry and the context is usable.
  EXPECT_EQ(machine_.read_reg(*ctx_, Auth::pcc()).cursor(), kBackAddr);
  machine_.cap_move(*ctx_, kTmp, Auth::reg(kRoot));
}

TEST_F(CinvokeTest, OtypeMismatchFaults) {
  build_pair(kCode, kData, kTargetAddr, 7);
  build_pair(kRetCode, kRetData, kBackAddr, 7);
  // Re-seal data with a different otype.
  machine_.cap_set_bounds(*ctx_, kData, Auth::reg(kRoot), 0x8000, 0x100);
  machine_.cap_seal(*ctx_, kData, Auth::reg(kData), Auth::reg(kSealer), 9);
  expect_fault(FaultKind::kSealMismatch,
               [&] { machine_.cinvoke(*ctx_, kCode, kData); });
  EXPECT_FALSE(handler_ran_);
}

TEST_F(CinvokeTest, DataCapabilityInCodePositionFaults) {
  build_pair(kCode, kData, kTargetAddr, kOtype, /*code_exec=*/false);
  expect_fault(FaultKind::kPerm,
               [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, UnsealedOperandFaults) {
  build_pair(kCode, kData, kTargetAddr, kOtype);
  machine_.cap_set_bounds(*ctx_, kData, Auth::reg(kRoot), 0x8000, 0x100);
  expect_fault(FaultKind::kSealMismatch,
               [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, UntaggedOperandFaults) {
  build_pair(kCode, kData, kTargetAddr, kOtype);
  machine_.cap_clear(*ctx_, kData);
  expect_fault(FaultKind::kTag, [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, NonEntryTargetFaults) {
  build_pair(kCode, kData, 0x300, kOtype);  // no entry registered there
  expect_fault(FaultKind::kBounds,
               [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, SpuriousResumeFaults) {
  // Invoking a return entry with no matching pending transition is refused.
  build_pair(kCode, kData, kBackAddr, kOtype);
  expect_fault(FaultKind::kPerm,
               [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, OperationsAfterReturnFault) {
  build_pair(kCode, kData, kTargetAddr, kOtype);
  build_pair(kRetCode, kRetData, kBackAddr, kOtype);
  after_return_ = [](Machine& m, CompartmentContext& ctx) {
    // The handler gave up control; this must fault.
    m.cap_move(ctx, kTmp, Auth::reg(kCt6));
  };
  expect_fault(FaultKind::kPerm, [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, HandlerWithoutReturnFaults) {
  machine_.register_entry(
      0x400, EntryRecord{EntryRecord::Kind::kHandler, kCalleeDomain, "noret",
                         [](Machine&, CompartmentContext&) {}});
  build_pair(kCode, kData, 0x400, kOtype);
  expect_fault(FaultKind::kPerm, [&] { machine_.cinvoke(*ctx_, kCode, kData); });
}

TEST_F(CinvokeTest, Ct6WrittenOnlyByCinvoke) {
  EXPECT_FALSE(machine_.read_reg(*ctx_, Auth::reg(kCt6)).tag());
  build_pair(kCode, kData, kTargetAddr, kOtype);
  build_pair(kRetCode, kRetData, kBackAddr, kOtype);
  machine_.cinvoke(*ctx_, kCode, kData);
  // ct6 now carries the return pair's unsealed data capability.
  EXPECT_TRUE(machine_.read_reg(*ctx_, Auth::reg(kCt6)).tag());
}

TEST_F(CinvokeTest, SweepClearsOverlappingRegistersOfOtherOwners) {
  auto guest_ctx = machine_.make_context(5);
  // Hand the guest context a capability over [0x8000, 0x8100).
  machine_.cap_set_bounds(*ctx_, kTmp, Auth::reg(kRoot), 0x8000, 0x100);
  Capability grant = machine_.read_reg(*ctx_, Auth::reg(kTmp));
  machine_.monitor_write_reg(*guest_ctx, 3, grant);
  ASSERT_TRUE(machine_.read_reg(*guest_ctx, Auth::reg(3)).tag());

  machine_.sweep_registers(0x8000, 0x100, /*except_owner=*/7);
  EXPECT_FALSE(machine_.read_reg(*guest_ctx, Auth::reg(3)).tag());
  // The monitor's own registers are never swept.
  EXPECT_TRUE(machine_.read_reg(*ctx_, Auth::reg(kTmp)).tag());
}

}  // namespace
}  // namespace capvm
