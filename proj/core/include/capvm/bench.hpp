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

#ifndef CAPVM_BENCH_HPP_
#define CAPVM_BENCH_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace capvm {

// One benchmark row: a transfer mechanism at one size. bytes_copied is the
// machine's copy counter over the scenario, exact by construction.
struct BenchResult {
  std::string mechanism;
  uint64_t size = 0;
  uint64_t iters = 0;
  double median_ns = 0;
  double mean_ns = 0;
  double stddev_ns = 0;
  uint64_t bytes_copied = 0;

  double throughput_mbps() const {
    return median_ns > 0 ? (static_cast<double>(size) / median_ns) * 953.674
                         : 0;  // bytes/ns -> MiB/s
  }
};

struct KvStats {
  uint64_t ops = 0;
  uint64_t misses = 0;
  uint64_t mismatches = 0;
  double median_ns = 0;
  double p95_ns = 0;
  double stddev_ns = 0;
  // (percentile, latency ns) rows of the distribution table.
  std::vector<std::pair<double, double>> cdf;
  std::vector<int64_t> samples_ns;
};

double stat_median(std::vector<double> v);
double stat_mean(const std::vector<double>& v);
double stat_stddev(const std::vector<double>& v);
double stat_percentile(std::vector<double> v, double p);

// Runs one transfer scenario per size on a fresh machine instance.
// mechanism is one of "file", "stream", "pipe", "memcpy".
std::vector<BenchResult> run_bench(const std::string& mechanism,
                                   const std::vector<uint64_t>& sizes,
                                   uint64_t iters);

std::string bench_csv(const std::vector<BenchResult>& rows);

// Runs a GET/SET exchange between a kv server and client compartment over
// the given transport ("stream" or "pipe").
KvStats demo_kv(uint64_t ops, const std::string& transport, bool echo = false);

std::string kv_stats_text(const KvStats& stats);

// Runs a deployment config: creates every compartment, waits for
// termination, prints program output and deployment timing. Returns the
// process exit code.
int run_config_file(const std::string& path, bool echo);

// Parses "4K,64K,1M" style size lists.
std::vector<uint64_t> parse_size_list(const std::string& text);

}  // namespace capvm

#endif  // CAPVM_BENCH_HPP_
