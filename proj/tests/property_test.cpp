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

// Randomized property checks over the capability machine: provenance,
// monotonicity, integrity and sealed immutability under fuzzed operation
// sequences.

#include <gtest/gtest.h>

#include <random>

#include "capvm/machine.hpp"

namespace capvm {
namespace {

constexpr int kRoot = 1;
constexpr int kParent = 2;
constexpr int kChild = 3;
constexpr int kSealer = 4;

class PropertyTest : public ::testing::Test {
 protected:
  void SetUp() override {
    machine_.monitor_write_reg(*ctx_, kRoot, machine_.root_capability());
    machine_.cap_set_bounds(*ctx_, kSealer, Auth::reg(kRoot), 0, 256);
  }

  Capability reg(int i) const { return machine_.read_reg(*ctx_, Auth::reg(i)); }

  Machine machine_{Machine::Options{.mem_size = 4 << 20}};
  Machine::ContextPtr ctx_ = machine_.make_context(Machine::kMonitorOwner);
  std::mt19937_64 rng_{0xcafef00d};
};

// No sequence of byte writes can fabricate a tagged capability.
TEST_F(PropertyTest, ProvenanceNoFabricationFromBytes) {
  machine_.cap_set_bounds(*ctx_, kParent, Auth::reg(kRoot), 0x10000, 0x10000);
  machine_.write_ddc(*ctx_, Auth::reg(kParent));
  for (int i = 0; i < 10000; ++i) {
    uint8_t bytes[16];
    for (auto& b : bytes) b = static_cast<uint8_t>(rng_());
    uint64_t slot = 0x10000 + (rng_() % 0x1000) * 16;
    machine_.store_bytes(*ctx_, Auth::ddc(), slot - 0x10000,
                         std::span<const uint8_t>(bytes, 16));
    machine_.load_cap(*ctx_, kChild, Auth::ddc(), slot);
    ASSERT_FALSE(reg(kChild).tag()) << "fabricated tag at round " << i;
  }
}

// Every link of a random derivation chain stays within its parent's bounds
// and permissions, and any widening attempt faults.
TEST_F(PropertyTest, MonotonicityOverRandomChains) {
  const uint64_t space = machine_.mem().size();
  for (int chain = 0; chain < 10000; ++chain) {
    machine_.cap_move(*ctx_, kParent, Auth::reg(kRoot));
    Capability parent = reg(kParent);
    int links = 1 + static_cast<int>(rng_() % 6);
    for (int l = 0; l < links; ++l) {
      int op = static_cast<int>(rng_() % 3);
      if (op == 0 && parent.length() > 0) {
        uint64_t nb = parent.base() + rng_() % parent.length();
        uint64_t nl = rng_() % (parent.top() - nb + 1);
        machine_.cap_set_bounds(*ctx_, kChild, Auth::reg(kParent), nb, nl);
      } else if (op == 1) {
        machine_.cap_and_perms(*ctx_, kChild, Auth::reg(kParent),
                               PermSet::from_raw(static_cast<uint8_t>(rng_())));
      } else {
        machine_.cap_inc_offset(*ctx_, kChild, Auth::reg(kParent),
                                static_cast<int64_t>(rng_() % 1024) - 512);
      }
      Capability child = reg(kChild);
      ASSERT_TRUE(child.tag());
      ASSERT_GE(child.base(), parent.base());
      ASSERT_LE(child.top(), parent.top());
      ASSERT_TRUE(child.perms().subset_of(parent.perms()));
      machine_.cap_move(*ctx_, kParent, Auth::reg(kChild));
      parent = child;
    }
    // A widening attempt on the final link must fault unless the link still
    // covers the whole space.
    if (parent.base() > 0 || parent.top() < space) {
      ASSERT_THROW(machine_.cap_set_bounds(*ctx_, kChild, Auth::reg(kParent),
                                           0, space),
                   CapFault);
    }
  }
}

// Byte stores over a tagged granule always clear the tag, wherever they land
// inside the granule.
TEST_F(PropertyTest, IntegrityTagClearedByOverlappingStore) {
  machine_.cap_set_bounds(*ctx_, kParent, Auth::reg(kRoot), 0x10000, 0x10000);
  machine_.write_ddc(*ctx_, Auth::reg(kParent));
  for (int i = 0; i < 2000; ++i) {
    uint64_t slot = 0x10000 + (rng_() % 0x1000) * 16;
    machine_.cap_set_bounds(*ctx_, kChild, Auth::reg(kRoot), 0x2000, 0x100);
    machine_.store_cap(*ctx_, Auth::reg(kRoot), slot, Auth::reg(kChild));
    ASSERT_TRUE(machine_.mem().granule_tag(slot));

    uint64_t off = rng_() % 16;
    uint64_t len = 1 + rng_() % (16 - off);
    std::vector<uint8_t> junk(len, static_cast<uint8_t>(rng_()));
    machine_.store_bytes(*ctx_, Auth::ddc(), slot - 0x10000 + off, junk);
    ASSERT_FALSE(machine_.mem().granule_tag(slot));

    machine_.load_cap(*ctx_, kChild, Auth::ddc(), slot);
    ASSERT_FALSE(reg(kChild).tag());
  }
}

TEST_F(PropertyTest, SealedCapabilitiesRejectAllDerivation) {
  for (int i = 0; i < 500; ++i) {
    uint64_t base = (rng_() % 0x1000) * 16;
    uint64_t len = 16 + (rng_() % 0x100) * 16;
    machine_.cap_set_bounds(*ctx_, kParent, Auth::reg(kRoot), base, len);
    machine_.cap_seal(*ctx_, kParent, Auth::reg(kParent), Auth::reg(kSealer),
                      static_cast<uint32_t>(rng_() % 256));
    ASSERT_THROW(
        machine_.cap_set_bounds(*ctx_, kChild, Auth::reg(kParent), base, 16),
        CapFault);
    ASSERT_THROW(machine_.cap_and_perms(*ctx_, kChild, Auth::reg(kParent),
                                        PermSet(Perm::kRead)),
                 CapFault);
    ASSERT_THROW(machine_.cap_inc_offset(*ctx_, kChild, Auth::reg(kParent), 1),
                 CapFault);
  }
}

}  // namespace
}  // namespace capvm
