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

#include <atomic>
#include <filesystem>
#include <fstream>

#include "capvm/guest.hpp"
#include "capvm/intravisor.hpp"

namespace capvm {
namespace {

DeploymentConfig small_cfg(const std::string& name,
                           const std::string& program) {
  DeploymentConfig cfg;
  cfg.name = name;
  cfg.heap_size = 256 << 10;
  cfg.stack_count = 4;
  cfg.stack_size = 16 << 10;
  cfg.programs = {program};
  return cfg;
}

TEST(IntravisorTest, HelloRunsAndPrints) {
  Intravisor iv;
  Cvm& cvm = iv.cvm_make(small_cfg("h", "hello"));
  iv.wait(cvm);
  EXPECT_EQ(cvm.fault, "");
  EXPECT_EQ(iv.console_of(cvm), "hello\n");
  EXPECT_EQ(cvm.exit_code, 0);
  EXPECT_EQ(cvm.state, Cvm::State::kTerminated);
  EXPECT_GE(iv.ms_to_first_output(cvm), 0.0);
}

TEST(IntravisorTest, RegionsOfDistinctCvmsAreDisjoint) {
  Intravisor iv;
  Cvm& a = iv.cvm_make(small_cfg("a", "hello"));
  Cvm& b = iv.cvm_make(small_cfg("b", "hello"));
  Cvm& c = iv.cvm_make(small_cfg("c", "hello"));
  iv.wait_all();
  auto overlaps = [](const Cvm& x, const Cvm& y) {
    return x.base < y.base + y.length && y.base < x.base + x.length;
  };
  EXPECT_FALSE(overlaps(a, b));
  EXPECT_FALSE(overlaps(a, c));
  EXPECT_FALSE(overlaps(b, c));
}

TEST(IntravisorTest, UnknownProgramIsRejected) {
  Intravisor iv;
  try {
    iv.cvm_make(small_cfg("x", "nonexistent"));
    FAIL() << "expected UNKNOWN_PROGRAM";
  } catch (const MonitorError& e) {
    EXPECT_EQ(e.code(), Err::kUnknownProgram);
  }
}

TEST(IntravisorTest, OutOfSpaceWhenRegionsExhaust) {
  Intravisor iv(Intravisor::Options{.mem_size = 8 << 20,
                                    .monitor_size = 4 << 20});
  DeploymentConfig cfg = small_cfg("big", "hello");
  cfg.heap_size = 16 << 20;
  try {
    iv.cvm_make(cfg);
    FAIL() << "expected OUT_OF_SPACE";
  } catch (const MonitorError& e) {
    EXPECT_EQ(e.code(), Err::kOutOfSpace);
  }
}

TEST(IntravisorTest, DefaultDdcExcludesCapStoreAndSealing) {
  Intravisor iv;
  Cvm& cvm = iv.cvm_make(small_cfg("h", "hello"));
  iv.wait(cvm);
  EXPECT_FALSE(cvm.ddc.perms().has(Perm::kStoreCap));
  EXPECT_FALSE(cvm.ddc.perms().has(Perm::kSeal));
  EXPECT_FALSE(cvm.ddc.perms().has(Perm::kUnseal));
  EXPECT_TRUE(cvm.ddc.perms().has(Perm::kRead));
  EXPECT_TRUE(cvm.ddc.perms().has(Perm::kWrite));
  EXPECT_TRUE(cvm.ddc.perms().has(Perm::kLoadCap));
  for (const auto& prog : cvm.progs) {
    EXPECT_FALSE(prog.ddc.perms().has(Perm::kStoreCap));
    EXPECT_FALSE(prog.ddc.perms().has(Perm::kSeal));
    EXPECT_FALSE(prog.ddc.perms().has(Perm::kUnseal));
  }
}

TEST(IntravisorTest, AffixHoldsThreeSealedCapabilities) {
  Intravisor iv;
  Cvm& cvm = iv.cvm_make(small_cfg("h", "hello"));
  iv.wait(cvm);
  for (int slot = 0; slot < 3; ++slot) {
    uint64_t addr = cvm.affix_addr + slot * 16;
    EXPECT_TRUE(iv.machine().mem().granule_tag(addr));
    Capability cap = iv.machine().mem().read_cap(addr);
    EXPECT_TRUE(cap.tag());
    EXPECT_TRUE(cap.sealed());
    EXPECT_EQ(cap.otype(), 1u);  // the monitor otype
  }
}

TEST(IntravisorTest, HostcallTableCounts) {
  Intravisor iv;
  int disk = 0, comm = 0, minimal = 0, net = 0;
  for (const auto& info : iv.hostcall_table()) {
    switch (info.cat) {
      case HostcallCat::kDisk: ++disk; break;
      case HostcallCat::kComm: ++comm; break;
      case HostcallCat::kMinimal: ++minimal; break;
      case HostcallCat::kNet: ++net; break;
      default: break;
    }
  }
  EXPECT_EQ(disk, 3);
  EXPECT_EQ(comm, 10);
  EXPECT_EQ(minimal, 12);
  EXPECT_EQ(net, 3);
}

TEST(IntravisorTest, BadHostcallIdReturnsErrorNotFault) {
  Intravisor iv;
  auto result = std::make_shared<std::atomic<int64_t>>(0);
  iv.programs().add(GuestProgram{
      "poke", true,
      [result](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        result->store(api.ocall(12345));
        return 0;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("p", "poke"));
  iv.wait(cvm);
  EXPECT_EQ(cvm.fault, "");
  EXPECT_EQ(err_of(result->load()), Err::kBadHostcall);
}

TEST(IntravisorTest, ThreadSpawnUsesPoolAndExhausts) {
  Intravisor iv;
  auto results = std::make_shared<std::vector<int64_t>>();
  iv.programs().add(GuestProgram{
      "spawner", false,
      [results](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        // Pool has 4 stacks; the init thread does not draw from the pool.
        std::vector<int64_t> tids;
        for (int i = 0; i < 4; ++i) {
          int64_t tid = api.spawn_thread(
              [](GuestApi& inner, uint64_t arg) -> int64_t {
                inner.sleep_ns(20000000);
                return static_cast<int64_t>(arg + 1);
              },
              i);
          results->push_back(tid);
          tids.push_back(tid);
        }
        // Fifth spawn must fail: the pool is exhausted.
        results->push_back(api.spawn_thread(
            [](GuestApi&, uint64_t) -> int64_t { return 0; }, 0));
        for (int64_t tid : tids) {
          results->push_back(api.join_thread(tid));
        }
        return 0;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("s", "spawner"));
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  ASSERT_EQ(results->size(), 9u);
  for (int i = 0; i < 4; ++i) EXPECT_GE((*results)[i], 0) << i;
  EXPECT_EQ(err_of((*results)[4]), Err::kStackPoolExhausted);
  for (int i = 0; i < 4; ++i) EXPECT_EQ((*results)[5 + i], i + 1);
}

TEST(IntravisorTest, ThreadsShareHeapWrites) {
  Intravisor iv;
  auto ok = std::make_shared<std::atomic<bool>>(false);
  iv.programs().add(GuestProgram{
      "sharer", false,
      [ok](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        uint64_t buf = api.alloc(8);
        api.mem_write(buf, std::vector<uint8_t>{1, 2, 3, 4, 5, 6, 7, 8});
        int64_t tid = api.spawn_thread(
            [buf](GuestApi& inner, uint64_t) -> int64_t {
              auto seen = inner.mem_read(buf, 8);
              inner.mem_write(buf, std::vector<uint8_t>{9, 9, 9, 9, 9, 9, 9, 9});
              return seen == std::vector<uint8_t>{1, 2, 3, 4, 5, 6, 7, 8} ? 1
                                                                          : 0;
            });
        int64_t r = api.join_thread(tid);
        auto after = api.mem_read(buf, 8);
        ok->store(r == 1 &&
                  after == std::vector<uint8_t>(8, 9));
        return 0;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("sh", "sharer"));
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  EXPECT_TRUE(ok->load());
}

TEST(IntravisorTest, TpSwitchesBetweenGuestAndHostValues) {
  Intravisor iv;
  auto tp_during = std::make_shared<std::atomic<uint64_t>>(0);
  auto tp_after = std::make_shared<std::atomic<uint64_t>>(0);
  iv.programs().add(GuestProgram{
      "tp_probe", true,
      [&iv, tp_during, tp_after](GuestApi& api,
                                 const std::vector<std::string>&) -> int64_t {
        api.ocall(kHcClock);
        tp_during->store(iv.last_hostcall_tp());
        tp_after->store(api.ctx().iregs.tp);
        return 0;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("tp", "tp_probe"));
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  EXPECT_EQ(tp_during->load(), kHostTp);
  EXPECT_NE(tp_after->load(), kHostTp);  // restored to the guest value
}

TEST(IntravisorTest, HostcallScrubsCapabilityRegisters) {
  Intravisor iv;
  auto leaked = std::make_shared<std::atomic<int>>(0);
  iv.programs().add(GuestProgram{
      "scrub_probe", true,
      [leaked](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        Machine& m = api.machine();
        CompartmentContext& ctx = api.ctx();
        // Leave derived capabilities in several registers, then cross into
        // the monitor and back.
        for (int r = 3; r < 6; ++r) {
          m.cap_set_bounds(ctx, r, Auth::ddc(), api.region_base(), 64);
        }
        api.ocall(kHcClock);
        int live = 0;
        for (int r = 0; r < kNumCregs; ++r) {
          Capability cap = m.read_reg(ctx, Auth::reg(r));
          if (r == kCt6) continue;  // carries the returned data capability
          if (cap.tag()) ++live;
        }
        leaked->store(live);
        return 0;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("sc", "scrub_probe"));
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  EXPECT_EQ(leaked->load(), 0);
}

TEST(IntravisorTest, DiskHostcallsRoundTrip) {
  Intravisor iv;
  std::string disk_path = "/tmp/capvm_test_disk.img";
  std::filesystem::remove(disk_path);
  auto status = std::make_shared<std::atomic<int64_t>>(-1);
  iv.programs().add(GuestProgram{
      "disk_probe", false,
      [status](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        int64_t fd = api.open("/dev/disk");
        if (is_err(fd)) return fd;
        std::vector<uint8_t> data = {'d', 'i', 's', 'k', '!', 0, 1, 2};
        uint64_t buf = api.push_bytes(data);
        int64_t w = api.write(static_cast<int>(fd), buf, data.size());
        if (w != static_cast<int64_t>(data.size())) return -100;
        api.close(static_cast<int>(fd));
        // Re-open: the descriptor offset restarts at zero.
        fd = api.open("/dev/disk");
        uint64_t rbuf = api.alloc(8);
        int64_t r = api.read(static_cast<int>(fd), rbuf, 8);
        if (r != 8) return -101;
        status->store(api.mem_read(rbuf, 8) == data ? 0 : -102);
        return 0;
      },
      {}});
  DeploymentConfig cfg = small_cfg("d", "disk_probe");
  cfg.disk_image = disk_path;
  Cvm& cvm = iv.cvm_make(cfg);
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  EXPECT_EQ(status->load(), 0);
  EXPECT_EQ(std::filesystem::file_size(disk_path), 8u);
  std::filesystem::remove(disk_path);
}

TEST(IntravisorTest, InitReceivesIdInitAndRunsFirst) {
  Intravisor iv;
  auto order = std::make_shared<std::vector<std::string>>();
  iv.programs().add(GuestProgram{
      "order_probe", false,
      [order](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        order->push_back("program");
        return api.shim_init_done() ? 0 : -1;
      },
      {}});
  Cvm& cvm = iv.cvm_make(small_cfg("o", "order_probe"));
  iv.wait(cvm);
  ASSERT_EQ(cvm.fault, "");
  // The program observed a fully initialized shim.
  ASSERT_EQ(order->size(), 1u);
  std::lock_guard<std::mutex> lk(cvm.mu);
  EXPECT_EQ(cvm.threads[0]->result, 0);
}

}  // namespace
}  // namespace capvm
