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

// Transfer benchmarks: the capability-backed file and stream devices against
// a deliberately two-copy pipe baseline, plus a raw in-compartment copy as
// the upper bound. Every scenario runs on a fresh machine so the copy
// counter delta is exactly the scenario's traffic.

#include "capvm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <memory>
#include <sstream>

#include "capvm/config.hpp"
#include "capvm/guest.hpp"
#include "capvm/intravisor.hpp"

namespace capvm {

namespace {

using Clock = std::chrono::steady_clock;

int64_t ns_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
}

// Harness-side sample sink shared with the sender program.
struct SampleSink {
  std::vector<int64_t> ns;
  int64_t status = 0;
};

DeploymentConfig bench_cfg(const std::string& name, uint64_t heap,
                           std::vector<std::string> programs,
                           std::vector<std::string> args,
                           std::vector<AllowEntry> allow = {}) {
  DeploymentConfig cfg;
  cfg.name = name;
  cfg.heap_size = heap;
  cfg.stack_count = 2;
  cfg.stack_size = 32 << 10;
  cfg.programs = std::move(programs);
  cfg.entry_args = std::move(args);
  cfg.allowed_keys = std::move(allow);
  return cfg;
}

BenchResult finish_row(const std::string& mechanism, uint64_t size,
                       uint64_t iters, const std::vector<int64_t>& samples,
                       uint64_t bytes) {
  std::vector<double> d(samples.begin(), samples.end());
  BenchResult row;
  row.mechanism = mechanism;
  row.size = size;
  row.iters = iters;
  row.median_ns = stat_median(d);
  row.mean_ns = stat_mean(d);
  row.stddev_ns = stat_stddev(d);
  row.bytes_copied = bytes;
  return row;
}

BenchResult bench_file(uint64_t size, uint64_t iters) {
  Intravisor iv(Intravisor::Options{
      .mem_size = std::max<uint64_t>(64ull << 20, size * 8),
      .monitor_size = 8ull << 20});
  auto sink = std::make_shared<SampleSink>();

  iv.programs().add(GuestProgram{
      "bench_file_donor", false,
      [size](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        uint64_t buf = api.alloc(size);
        int64_t dev = api.cp_file_make("bench.buf", buf, size);
        if (is_err(dev)) return dev;
        api.print("ready\n");
        while (api.cp_file_wait(static_cast<int>(dev)) == 0) break;
        return 0;
      },
      {}});
  iv.programs().add(GuestProgram{
      "bench_file_runner", false,
      [size, iters, sink](GuestApi& api,
                          const std::vector<std::string>&) -> int64_t {
        int64_t dev = err_value(Err::kNoSuchKey);
        for (int i = 0; i < 2000 && is_err(dev); ++i) {
          dev = api.cp_file_get("bench.buf");
          if (is_err(dev)) api.sleep_ns(1000000);
        }
        if (is_err(dev)) return sink->status = dev;
        uint64_t src = api.alloc(size);
        sink->ns.reserve(iters);
        for (uint64_t i = 0; i < iters; ++i) {
          auto t0 = Clock::now();
          int64_t n = api.cp_file_write(static_cast<int>(dev), src, 0, size);
          auto t1 = Clock::now();
          if (n != static_cast<int64_t>(size)) return sink->status = n;
          sink->ns.push_back(ns_between(t0, t1));
        }
        api.cp_file_notify(static_cast<int>(dev));
        return 0;
      },
      {}});

  uint64_t heap = size + (1 << 20);
  uint64_t before = iv.machine().copy_counter();
  iv.cvm_make(bench_cfg("donor", heap, {"bench_file_donor"}, {},
                        {AllowEntry{"bench.buf",
                                    Perm::kRead | Perm::kWrite, "runner"}}));
  iv.cvm_make(bench_cfg("runner", heap, {"bench_file_runner"}, {}));
  iv.wait_all();
  uint64_t bytes = iv.machine().copy_counter() - before;
  return finish_row("file", size, iters, sink->ns, bytes);
}

BenchResult bench_stream(uint64_t size, uint64_t iters) {
  Intravisor iv(Intravisor::Options{
      .mem_size = std::max<uint64_t>(64ull << 20, size * 16),
      .monitor_size = 8ull << 20});
  auto sink = std::make_shared<SampleSink>();
  constexpr uint64_t kDepth = 4;

  iv.programs().add(GuestProgram{
      "bench_stream_owner", false,
      [size, iters](GuestApi& api, const std::vector<std::string>&) -> int64_t {
        int64_t dev = api.cp_stream_make("bench.stream");
        if (is_err(dev)) return dev;
        std::vector<uint64_t> bufs;
        for (uint64_t i = 0; i < kDepth; ++i) {
          bufs.push_back(api.alloc(size));
          int64_t r =
              api.cp_stream_recv(static_cast<int>(dev), i, bufs.back(), size);
          if (is_err(r)) return r;
        }
        uint64_t next_id = kDepth;
        uint64_t out = api.alloc(16 * kDepth);
        uint64_t received = 0;
        while (received < iters) {
          int64_t n = api.cp_stream_poll(static_cast<int>(dev), out, kDepth,
                                         10000000000ll);
          if (is_err(n)) return n;
          auto events = api.mem_read(out, static_cast<uint64_t>(n) * 16);
          for (int64_t e = 0; e < n; ++e) {
            uint64_t id;
            std::memcpy(&id, events.data() + e * 16, 8);
            ++received;
            if (received + kDepth <= iters + kDepth) {
              int64_t r = api.cp_stream_recv(static_cast<int>(dev), next_id,
                                             bufs[id % kDepth], size);
              next_id += 1;
              if (is_err(r)) return r;
            }
          }
        }
        return 0;
      },
      {}});
  iv.programs().add(GuestProgram{
      "bench_stream_sender", false,
      [size, iters, sink](GuestApi& api,
                          const std::vector<std::string>&) -> int64_t {
        int64_t dev = err_value(Err::kNoSuchKey);
        for (int i = 0; i < 2000 && is_err(dev); ++i) {
          dev = api.cp_stream_get("bench.stream");
          if (is_err(dev)) api.sleep_ns(1000000);
        }
        if (is_err(dev)) return sink->status = dev;
        uint64_t src = api.alloc(size);
        sink->ns.reserve(iters);
        for (uint64_t i = 0; i < iters; ++i) {
          auto t0 = Clock::now();
          int64_t n = api.cp_stream_send(static_cast<int>(dev), src, size);
          auto t1 = Clock::now();
          if (n != static_cast<int64_t>(size)) return sink->status = n;
          sink->ns.push_back(ns_between(t0, t1));
        }
        return 0;
      },
      {}});

  uint64_t heap = size * (kDepth + 1) + (1 << 20);
  uint64_t before = iv.machine().copy_counter();
  iv.cvm_make(bench_cfg("owner", heap, {"bench_stream_owner"}, {},
                        {AllowEntry{"bench.stream",
                                    Perm::kRead | Perm::kWrite, "sender"}}));
  iv.cvm_make(bench_cfg("sender", size + (1 << 20), {"bench_stream_sender"}, {}));
  iv.wait_all();
  uint64_t bytes = iv.machine().copy_counter() - before;
  return finish_row("stream", size, iters, sink->ns, bytes);
}

BenchResult bench_pipe(uint64_t size, uint64_t iters) {
  Intravisor iv(Intravisor::Options{
      .mem_size = std::max<uint64_t>(64ull << 20, size * 8),
      .monitor_size = std::max<uint64_t>(16ull << 20, size + (1 << 20))});
  auto sink = std::make_shared<SampleSink>();
  int32_t pipe = iv.pipe_create(size);

  iv.programs().add(GuestProgram{
      "bench_pipe_receiver", false,
      [size, iters, pipe](GuestApi& api,
                          const std::vector<std::string>&) -> int64_t {
        uint64_t buf = api.alloc(size);
        for (uint64_t i = 0; i < iters; ++i) {
          int64_t n = api.pipe_recv(pipe, buf, size);
          if (n != static_cast<int64_t>(size)) return n;
        }
        return 0;
      },
      {}});
  iv.programs().add(GuestProgram{
      "bench_pipe_sender", false,
      [size, iters, pipe, sink](GuestApi& api,
                                const std::vector<std::string>&) -> int64_t {
        uint64_t src = api.alloc(size);
        sink->ns.reserve(iters);
        for (uint64_t i = 0; i < iters; ++i) {
          auto t0 = Clock::now();
          int64_t n = api.pipe_send(pipe, src, size);
          auto t1 = Clock::now();
          if (n != static_cast<int64_t>(size)) return sink->status = n;
          sink->ns.push_back(ns_between(t0, t1));
        }
        return 0;
      },
      {}});

  uint64_t heap = size + (1 << 20);
  uint64_t before = iv.machine().copy_counter();
  iv.cvm_make(bench_cfg("rx", heap, {"bench_pipe_receiver"}, {}));
  iv.cvm_make(bench_cfg("tx", heap, {"bench_pipe_sender"}, {}));
  iv.wait_all();
  uint64_t bytes = iv.machine().copy_counter() - before;
  return finish_row("pipe", size, iters, sink->ns, bytes);
}

BenchResult bench_memcpy(uint64_t size, uint64_t iters) {
  Intravisor iv(Intravisor::Options{
      .mem_size = std::max<uint64_t>(64ull << 20, size * 8),
      .monitor_size = 8ull << 20});
  auto sink = std::make_shared<SampleSink>();

  // Raw capcpy within one compartment: the upper performance bound.
  iv.programs().add(GuestProgram{
      "bench_memcpy", true,
      [size, iters, sink](GuestApi& api,
                          const std::vector<std::string>&) -> int64_t {
        Machine& m = api.machine();
        CompartmentContext& ctx = api.ctx();
        uint64_t src = api.alloc(size);
        uint64_t dst = api.alloc(size);
        uint64_t base = api.region_base();
        sink->ns.reserve(iters);
        for (uint64_t i = 0; i < iters; ++i) {
          auto t0 = Clock::now();
          m.capcpy(ctx, Auth::ddc(), dst - base, Auth::ddc(), src - base, size);
          auto t1 = Clock::now();
          sink->ns.push_back(ns_between(t0, t1));
        }
        return 0;
      },
      {}});

  uint64_t before = iv.machine().copy_counter();
  iv.cvm_make(bench_cfg("mc", size * 2 + (1 << 20), {"bench_memcpy"}, {}));
  iv.wait_all();
  uint64_t bytes = iv.machine().copy_counter() - before;
  return finish_row("memcpy", size, iters, sink->ns, bytes);
}

}  // namespace

double stat_median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

double stat_mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double sum = 0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double stat_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double mean = stat_mean(v);
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double stat_percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  size_t lo = static_cast<size_t>(rank);
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

std::vector<BenchResult> run_bench(const std::string& mechanism,
                                   const std::vector<uint64_t>& sizes,
                                   uint64_t iters) {
  std::vector<BenchResult> rows;
  for (uint64_t size : sizes) {
    if (mechanism == "file") {
      rows.push_back(bench_file(size, iters));
    } else if (mechanism == "stream") {
      rows.push_back(bench_stream(size, iters));
    } else if (mechanism == "pipe") {
      rows.push_back(bench_pipe(size, iters));
    } else if (mechanism == "memcpy") {
      rows.push_back(bench_memcpy(size, iters));
    } else {
      throw MonitorError(Err::kInvalidArg, "unknown mechanism: " + mechanism);
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchResult>& rows) {
  std::ostringstream out;
  out << "mechanism,size,iters,median_ns,mean_ns,stddev_ns,bytes_copied\n";
  for (const auto& r : rows) {
    out << r.mechanism << ',' << r.size << ',' << r.iters << ','
        << static_cast<int64_t>(r.median_ns) << ','
        << static_cast<int64_t>(r.mean_ns) << ','
        << static_cast<int64_t>(r.stddev_ns) << ',' << r.bytes_copied << '\n';
  }
  return out.str();
}

KvStats demo_kv(uint64_t ops, const std::string& transport, bool echo) {
  Intravisor iv(Intravisor::Options{.mem_size = 64ull << 20,
                                    .monitor_size = 8ull << 20,
                                    .echo_console = echo});
  std::vector<std::string> server_args = {"transport=" + transport};
  std::vector<std::string> client_args = {"transport=" + transport,
                                          "ops=" + std::to_string(ops)};
  if (transport == "pipe") {
    int32_t req = iv.pipe_create(4096);
    int32_t resp = iv.pipe_create(4096);
    server_args.push_back("req=" + std::to_string(req));
    server_args.push_back("resp=" + std::to_string(resp));
    client_args.push_back("req=" + std::to_string(req));
    client_args.push_back("resp=" + std::to_string(resp));
  }
  iv.cvm_make(bench_cfg("server", 1 << 20, {"kv_server"}, server_args,
                        {AllowEntry{"kv.req", Perm::kRead | Perm::kWrite,
                                    "client"}}));
  Cvm& client = iv.cvm_make(
      bench_cfg("client", 1 << 20, {"kv_client"}, client_args,
                {AllowEntry{"kv.resp", Perm::kRead | Perm::kWrite, "server"}}));
  iv.wait_all();

  KvStats stats;
  std::string console = iv.console_of(client);
  std::istringstream in(console);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("kvreport ", 0) == 0) {
      std::istringstream fields(line.substr(9));
      std::string field;
      while (fields >> field) {
        size_t eq = field.find('=');
        if (eq == std::string::npos) continue;
        uint64_t value = std::stoull(field.substr(eq + 1));
        std::string name = field.substr(0, eq);
        if (name == "ops") stats.ops = value;
        if (name == "misses") stats.misses = value;
        if (name == "mismatches") stats.mismatches = value;
      }
    } else if (line.rfind("lat:", 0) == 0) {
      std::istringstream vals(line.substr(4));
      std::string v;
      while (std::getline(vals, v, ',')) {
        if (!v.empty()) stats.samples_ns.push_back(std::stoll(v));
      }
    }
  }
  std::vector<double> d(stats.samples_ns.begin(), stats.samples_ns.end());
  stats.median_ns = stat_median(d);
  stats.p95_ns = stat_percentile(d, 95);
  stats.stddev_ns = stat_stddev(d);
  for (double p : {10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0, 100.0}) {
    stats.cdf.emplace_back(p, stat_percentile(d, p));
  }
  return stats;
}

std::string kv_stats_text(const KvStats& stats) {
  std::ostringstream out;
  out << "ops=" << stats.ops << " misses=" << stats.misses
      << " mismatches=" << stats.mismatches << "\n";
  out << "median_us=" << stats.median_ns / 1000.0
      << " p95_us=" << stats.p95_ns / 1000.0
      << " stddev_us=" << stats.stddev_ns / 1000.0 << "\n";
  out << "percentile,latency_us\n";
  for (auto [p, ns] : stats.cdf) {
    out << p << ',' << ns / 1000.0 << '\n';
  }
  return out.str();
}

int run_config_file(const std::string& path, bool echo) {
  auto configs = parse_config_file(path);
  Intravisor iv(Intravisor::Options{.echo_console = echo});
  auto started = Clock::now();
  std::vector<Cvm*> cvms;
  for (const auto& cfg : configs) {
    cvms.push_back(&iv.cvm_make(cfg));
  }
  int exit_code = 0;
  for (Cvm* cvm : cvms) {
    iv.wait(*cvm);
    if (!echo) {
      std::string console = iv.console_of(*cvm);
      if (!console.empty()) std::cout << console;
    }
    double first_ms = iv.ms_to_first_output(*cvm);
    double total_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - started)
            .count();
    std::cout << "[capvm] " << cvm->name << ": first output "
              << (first_ms < 0 ? std::string("n/a")
                               : std::to_string(first_ms) + " ms")
              << ", finished after " << total_ms << " ms";
    {
      std::lock_guard<std::mutex> lk(cvm->mu);
      if (!cvm->fault.empty()) {
        std::cout << ", fault: " << cvm->fault;
        exit_code = 1;
      } else if (cvm->exit_code != 0) {
        std::cout << ", exit code " << cvm->exit_code;
        exit_code = static_cast<int>(cvm->exit_code);
      }
    }
    std::cout << "\n";
  }
  return exit_code;
}

std::vector<uint64_t> parse_size_list(const std::string& text) {
  std::vector<uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(parse_size(part));
  }
  return out;
}

}  // namespace capvm
