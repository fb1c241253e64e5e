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

// CAP device drivers: the data paths of the file and stream devices. They
// run at the library OS layer of the calling compartment, load the granted
// capability from the device slot for every operation, and move bytes with a
// single capcpy. Teardown scrubs the slot, so a revoked device surfaces here
// as a tag fault, reported as REVOKED.

#include <chrono>
#include <cstring>
#include <thread>

#include "capvm/commdev.hpp"
#include "capvm/guest.hpp"

namespace capvm {

namespace {

constexpr int kRegDev = 10;   // device slot capability
constexpr int kRegDest = 11;  // posted destination capability

// Poll spins this long before parking on the wait queue; a hot ping-pong
// peer is served without any monitor transition.
constexpr auto kPollSpin = std::chrono::microseconds(50);

int64_t map_fault(const CapFault& f) {
  switch (f.kind()) {
    case FaultKind::kTag:
      return err_value(Err::kRevoked);
    case FaultKind::kPerm:
      return err_value(Err::kPermDenied);
    case FaultKind::kBounds:
      return err_value(Err::kOutOfBounds);
    default:
      return err_value(Err::kFault);
  }
}

}  // namespace

bool ShimLibOS::load_dev_cap(Machine& m, CompartmentContext& ctx, uint32_t dev,
                             int reg) {
  m.load_cap(ctx, reg, Auth::ddc(), cvm_.dev_slot_addr(dev));
  return m.read_reg(ctx, Auth::reg(reg)).tag();
}

int64_t ShimLibOS::file_read(Machine& m, CompartmentContext& ctx, uint32_t prog,
                             uint32_t dev, uint64_t dst, uint64_t off,
                             uint64_t len) {
  DeviceBinding b;
  {
    std::lock_guard<std::mutex> lk(cvm_.mu);
    if (dev >= cvm_.bindings.size() || !cvm_.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    b = cvm_.bindings[dev];
  }
  if (b.kind != DevKind::kFile) return err_value(Err::kInvalidArg);
  if (!range_ok(prog, dst, len)) return err_value(Err::kOutOfBounds);
  if (!load_dev_cap(m, ctx, dev, kRegDev)) return err_value(Err::kRevoked);
  if (off >= b.grant_len) return 0;
  uint64_t n = std::min(len, b.grant_len - off);
  try {
    m.capcpy(ctx, Auth::ddc(), dst - cvm_.base, Auth::reg(kRegDev), off, n);
  } catch (const CapFault& f) {
    return map_fault(f);
  }
  return static_cast<int64_t>(n);
}

int64_t ShimLibOS::file_write(Machine& m, CompartmentContext& ctx,
                              uint32_t prog, uint32_t dev, uint64_t src,
                              uint64_t off, uint64_t len) {
  DeviceBinding b;
  {
    std::lock_guard<std::mutex> lk(cvm_.mu);
    if (dev >= cvm_.bindings.size() || !cvm_.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    b = cvm_.bindings[dev];
  }
  if (b.kind != DevKind::kFile) return err_value(Err::kInvalidArg);
  if (!range_ok(prog, src, len)) return err_value(Err::kOutOfBounds);
  if (!load_dev_cap(m, ctx, dev, kRegDev)) return err_value(Err::kRevoked);
  if (off >= b.grant_len) return 0;
  uint64_t n = std::min(len, b.grant_len - off);
  try {
    m.capcpy(ctx, Auth::reg(kRegDev), off, Auth::ddc(), src - cvm_.base, n);
  } catch (const CapFault& f) {
    return map_fault(f);
  }
  return static_cast<int64_t>(n);
}

int64_t ShimLibOS::stream_send(Machine& m, CompartmentContext& ctx,
                               uint32_t prog, uint32_t dev, uint64_t buf,
                               uint64_t len) {
  DeviceBinding b;
  {
    std::lock_guard<std::mutex> lk(cvm_.mu);
    if (dev >= cvm_.bindings.size() || !cvm_.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    b = cvm_.bindings[dev];
  }
  if (b.kind != DevKind::kStream) return err_value(Err::kInvalidArg);
  if (!range_ok(prog, buf, len)) return err_value(Err::kOutOfBounds);

  for (;;) {
    // The arena capability is reloaded on every attempt; a revoked channel
    // shows up as a cleared slot or a dead live flag.
    if (!load_dev_cap(m, ctx, dev, kRegDev)) return err_value(Err::kRevoked);
    try {
      if (m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kLive) != 1) {
        return err_value(Err::kRevoked);
      }
      uint64_t mode = m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kMode);
      uint64_t cons =
          m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kPostedCons);
      uint64_t prod =
          m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kPostedProd);
      if (cons == prod) {
        if (mode & chan::kModeNonblock) return err_value(Err::kWouldBlock);
        int64_t r = ocall(m, ctx, kHcDevWait, dev, static_cast<uint64_t>(-1),
                          static_cast<uint64_t>(DevQueue::kBuffers));
        if (is_err(r)) return r;
        continue;
      }
      // Atomically claim one posted buffer.
      uint64_t expected = cons;
      if (!m.atomic_cas_u64(ctx, Auth::reg(kRegDev), chan::kPostedCons,
                            expected, cons + 1)) {
        continue;
      }
      uint32_t idx = static_cast<uint32_t>(cons);
      uint64_t id =
          m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::posted_meta(idx));
      uint64_t cap_len = m.atomic_load_u64(ctx, Auth::reg(kRegDev),
                                           chan::posted_meta(idx) + 8);
      m.load_cap(ctx, kRegDest, Auth::reg(kRegDev),
                 b.grant_base + chan::posted_cap(idx));
      uint64_t n = std::min(len, cap_len);
      m.capcpy(ctx, Auth::reg(kRegDest), 0, Auth::ddc(), buf - cvm_.base, n);
      m.cap_clear(ctx, kRegDest);

      // Publish the completion in claim order.
      uint64_t slot =
          m.atomic_fetch_add_u64(ctx, Auth::reg(kRegDev), chan::kCompReserve, 1);
      uint32_t cidx = static_cast<uint32_t>(slot);
      m.atomic_store_u64(ctx, Auth::reg(kRegDev), chan::comp_slot(cidx), id);
      m.atomic_store_u64(ctx, Auth::reg(kRegDev), chan::comp_slot(cidx) + 8, n);
      while (m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kCompProd) !=
             slot) {
        std::this_thread::yield();
      }
      m.atomic_store_u64(ctx, Auth::reg(kRegDev), chan::kCompProd, slot + 1);

      if (m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kPollerAsleep) != 0) {
        ocall(m, ctx, kHcDevNotify, dev,
              static_cast<uint64_t>(DevQueue::kCompletions));
      }
      return static_cast<int64_t>(n);
    } catch (const CapFault& f) {
      return map_fault(f);
    }
  }
}

int64_t ShimLibOS::stream_poll(Machine& m, CompartmentContext& ctx,
                               uint32_t prog, uint32_t dev, uint64_t out,
                               uint64_t max_events, int64_t timeout_ns) {
  DeviceBinding b;
  {
    std::lock_guard<std::mutex> lk(cvm_.mu);
    if (dev >= cvm_.bindings.size() || !cvm_.bindings[dev].used) {
      return err_value(Err::kNoSuchHandle);
    }
    b = cvm_.bindings[dev];
  }
  if (b.kind != DevKind::kStream) return err_value(Err::kInvalidArg);
  if (max_events == 0) return err_value(Err::kInvalidArg);
  if (!range_ok(prog, out, max_events * 16)) return err_value(Err::kOutOfBounds);

  auto started = std::chrono::steady_clock::now();
  auto deadline = started + std::chrono::nanoseconds(
                                timeout_ns < 0 ? int64_t{0} : timeout_ns);
  uint64_t count = 0;

  for (;;) {
    if (!load_dev_cap(m, ctx, dev, kRegDev)) return err_value(Err::kRevoked);
    try {
      if (m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kLive) != 1) {
        return err_value(Err::kRevoked);
      }
      m.atomic_store_u64(ctx, Auth::reg(kRegDev), chan::kPollerAsleep, 0);
      // Drain: each completion is delivered exactly once.
      while (count < max_events) {
        uint64_t cons =
            m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kCompCons);
        uint64_t prod =
            m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kCompProd);
        if (cons >= prod) break;
        uint64_t expected = cons;
        if (!m.atomic_cas_u64(ctx, Auth::reg(kRegDev), chan::kCompCons,
                              expected, cons + 1)) {
          continue;
        }
        uint32_t idx = static_cast<uint32_t>(cons);
        uint64_t id =
            m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::comp_slot(idx));
        uint64_t bytes = m.atomic_load_u64(ctx, Auth::reg(kRegDev),
                                           chan::comp_slot(idx) + 8);
        uint8_t pair[16];
        std::memcpy(pair, &id, 8);
        std::memcpy(pair + 8, &bytes, 8);
        m.store_bytes(ctx, Auth::ddc(), out + count * 16 - cvm_.base, pair);
        ++count;
      }
      if (count > 0) return static_cast<int64_t>(count);
      if (timeout_ns == 0) return err_value(Err::kTimeout);

      auto now = std::chrono::steady_clock::now();
      if (now - started < kPollSpin) {
        std::this_thread::yield();
        continue;
      }
      if (timeout_ns > 0 && now >= deadline) return err_value(Err::kTimeout);

      // Park on the completion queue; recheck after announcing the sleep so
      // a concurrent publish is never lost.
      m.atomic_store_u64(ctx, Auth::reg(kRegDev), chan::kPollerAsleep, 1);
      uint64_t cons =
          m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kCompCons);
      uint64_t prod =
          m.atomic_load_u64(ctx, Auth::reg(kRegDev), chan::kCompProd);
      if (prod > cons) continue;
      int64_t remaining = -1;
      if (timeout_ns > 0) {
        remaining = std::chrono::duration_cast<std::chrono::nanoseconds>(
                        deadline - now)
                        .count();
        if (remaining <= 0) return err_value(Err::kTimeout);
      }
      int64_t r = ocall(m, ctx, kHcDevWait, dev, static_cast<uint64_t>(remaining),
                        static_cast<uint64_t>(DevQueue::kCompletions));
      if (is_err(r) && err_of(r) != Err::kTimeout) return r;
      if (is_err(r) && err_of(r) == Err::kTimeout) {
        timeout_ns = 0;  // one final drain, then report the timeout
      }
    } catch (const CapFault& f) {
      return map_fault(f);
    }
  }
}

}  // namespace capvm
