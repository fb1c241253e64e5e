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

// Built-in guest programs. Regular programs run behind the program boundary
// and reach the world through the syscall trampoline; the attacker runs at
// the library OS layer and drives the capability machine directly, standing
// in for a fully compromised compartment.

#include <chrono>
#include <cstring>
#include <map>
#include <sstream>
#include <thread>

#include "capvm/commdev.hpp"
#include "capvm/guest.hpp"

namespace capvm {
namespace {

std::map<std::string, std::string> parse_kv_args(
    const std::vector<std::string>& args) {
  std::map<std::string, std::string> out;
  for (const auto& arg : args) {
    size_t eq = arg.find('=');
    if (eq == std::string::npos) {
      out[arg] = "";
    } else {
      out[arg.substr(0, eq)] = arg.substr(eq + 1);
    }
  }
  return out;
}

uint64_t arg_u64(const std::map<std::string, std::string>& args,
                 const std::string& key, uint64_t fallback) {
  auto it = args.find(key);
  if (it == args.end() || it->second.empty()) return fallback;
  return std::stoull(it->second);
}

std::string arg_str(const std::map<std::string, std::string>& args,
                    const std::string& key, const std::string& fallback) {
  auto it = args.find(key);
  return it == args.end() ? fallback : it->second;
}

// Retries a device lookup until the peer has advertised it.
int64_t get_with_retry(GuestApi& api, int64_t (GuestApi::*get)(const std::string&),
                       const std::string& key, int tries = 2000) {
  for (int i = 0; i < tries; ++i) {
    int64_t dev = (api.*get)(key);
    if (!is_err(dev) || err_of(dev) != Err::kNoSuchKey) return dev;
    api.sleep_ns(1000000);
  }
  return err_value(Err::kNoSuchKey);
}

std::vector<uint8_t> pattern_bytes(uint64_t n, uint64_t seed) {
  std::vector<uint8_t> v(n);
  for (uint64_t i = 0; i < n; ++i) {
    v[i] = static_cast<uint8_t>(seed * 131 + i * 7);
  }
  return v;
}

// --- hello ---------------------------------------------------------------------

int64_t hello_main(GuestApi& api, const std::vector<std::string>&) {
  api.print("hello\n");
  api.exit(0);
  return 0;
}

// --- producer / consumer over a stream -------------------------------------------

int64_t producer_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  std::string key = arg_str(args, "key", "pc");
  uint64_t msg = arg_u64(args, "msg", 1024);
  uint64_t count = arg_u64(args, "count", 16);

  int64_t dev = get_with_retry(api, &GuestApi::cp_stream_get, key);
  if (is_err(dev)) return dev;
  uint64_t buf = api.alloc(msg);
  uint64_t total = 0;
  for (uint64_t i = 0; i < count; ++i) {
    api.mem_write(buf, pattern_bytes(msg, i));
    int64_t n = api.cp_stream_send(static_cast<int>(dev), buf, msg);
    if (is_err(n)) return n;
    total += static_cast<uint64_t>(n);
  }
  api.print("producer sent " + std::to_string(total) + "\n");
  api.exit(0);
  return 0;
}

int64_t consumer_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  std::string key = arg_str(args, "key", "pc");
  uint64_t msg = arg_u64(args, "msg", 1024);
  uint64_t count = arg_u64(args, "count", 16);
  uint64_t depth = std::min<uint64_t>(arg_u64(args, "depth", 4), 8);

  int64_t dev = api.cp_stream_make(key);
  if (is_err(dev)) return dev;
  std::vector<uint64_t> bufs;
  for (uint64_t i = 0; i < depth; ++i) {
    bufs.push_back(api.alloc(msg));
    int64_t r = api.cp_stream_recv(static_cast<int>(dev), i, bufs.back(), msg);
    if (is_err(r)) return r;
  }
  uint64_t next_id = depth;
  uint64_t total = 0, received = 0;
  uint64_t out = api.alloc(16 * depth);
  while (received < count) {
    int64_t n = api.cp_stream_poll(static_cast<int>(dev), out, depth,
                                   2000000000);
    if (is_err(n)) return n;
    auto events = api.mem_read(out, static_cast<uint64_t>(n) * 16);
    for (int64_t e = 0; e < n; ++e) {
      uint64_t id, bytes;
      std::memcpy(&id, events.data() + e * 16, 8);
      std::memcpy(&bytes, events.data() + e * 16 + 8, 8);
      total += bytes;
      ++received;
      // Repost the same buffer under a fresh id.
      int64_t r = api.cp_stream_recv(static_cast<int>(dev), next_id++,
                                     bufs[id % depth], msg);
      if (is_err(r)) return r;
    }
  }
  api.print("consumer received " + std::to_string(total) + "\n");
  api.exit(0);
  return 0;
}

// --- kv server / client -----------------------------------------------------------

// Request: op u8 (1=SET, 2=GET, 3=QUIT), klen u8, key, vlen u16le, value.
// Response: status u8 (0=OK, 1=MISS), vlen u16le, value.
constexpr uint8_t kOpSet = 1, kOpGet = 2, kOpQuit = 3;

std::vector<uint8_t> kv_request(uint8_t op, const std::string& key,
                                const std::string& value) {
  std::vector<uint8_t> req;
  req.push_back(op);
  req.push_back(static_cast<uint8_t>(key.size()));
  req.insert(req.end(), key.begin(), key.end());
  req.push_back(static_cast<uint8_t>(value.size() & 0xff));
  req.push_back(static_cast<uint8_t>(value.size() >> 8));
  req.insert(req.end(), value.begin(), value.end());
  return req;
}

struct KvTransport {
  GuestApi& api;
  bool stream;
  int send_dev = -1;  // stream: send side; pipe: pipe id
  int recv_dev = -1;
  std::vector<uint64_t> bufs;
  uint64_t next_id = 0;
  uint64_t out_addr = 0;
  uint64_t buf_size = 0;

  int64_t send(uint64_t addr, uint64_t len) {
    if (stream) return api.cp_stream_send(send_dev, addr, len);
    return api.pipe_send(send_dev, addr, len);
  }
  // Receives one message into `scratch`; returns the byte count.
  int64_t recv_one(uint64_t scratch) {
    if (!stream) return api.pipe_recv(recv_dev, scratch, buf_size);
    for (;;) {
      int64_t n = api.cp_stream_poll(recv_dev, out_addr, 1, 5000000000ll);
      if (is_err(n)) return n;
      if (n == 0) continue;
      auto ev = api.mem_read(out_addr, 16);
      uint64_t id, bytes;
      std::memcpy(&id, ev.data(), 8);
      std::memcpy(&bytes, ev.data() + 8, 8);
      uint64_t buf = bufs[id % bufs.size()];
      auto data = api.mem_read(buf, bytes);
      api.mem_write(scratch, data);
      int64_t r = api.cp_stream_recv(recv_dev, next_id, buf, buf_size);
      next_id += bufs.size();
      if (is_err(r)) return r;
      return static_cast<int64_t>(bytes);
    }
  }
};

int64_t kv_server_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  bool stream = arg_str(args, "transport", "stream") == "stream";
  constexpr uint64_t kBufSize = 512;

  KvTransport t{api, stream};
  t.buf_size = kBufSize;
  if (stream) {
    int64_t req = api.cp_stream_make("kv.req");
    if (is_err(req)) return req;
    t.recv_dev = static_cast<int>(req);
    for (uint64_t i = 0; i < 4; ++i) {
      t.bufs.push_back(api.alloc(kBufSize));
      api.cp_stream_recv(t.recv_dev, i, t.bufs.back(), kBufSize);
    }
    t.next_id = 4;
    t.out_addr = api.alloc(16);
    int64_t resp = get_with_retry(api, &GuestApi::cp_stream_get, "kv.resp");
    if (is_err(resp)) return resp;
    t.send_dev = static_cast<int>(resp);
  } else {
    t.recv_dev = static_cast<int>(arg_u64(args, "req", 0));
    t.send_dev = static_cast<int>(arg_u64(args, "resp", 1));
  }

  std::map<std::string, std::string> store;
  uint64_t scratch = api.alloc(kBufSize);
  uint64_t resp_buf = api.alloc(kBufSize);
  api.print("kv_server ready\n");
  for (;;) {
    int64_t n = t.recv_one(scratch);
    if (is_err(n)) return n;
    auto req = api.mem_read(scratch, static_cast<uint64_t>(n));
    if (req.size() < 2) continue;
    uint8_t op = req[0];
    uint8_t klen = req[1];
    std::string key(req.begin() + 2, req.begin() + 2 + klen);
    std::vector<uint8_t> resp;
    if (op == kOpSet) {
      uint16_t vlen = static_cast<uint16_t>(req[2 + klen]) |
                      (static_cast<uint16_t>(req[3 + klen]) << 8);
      store[key] = std::string(req.begin() + 4 + klen,
                               req.begin() + 4 + klen + vlen);
      resp = {0, 0, 0};
    } else if (op == kOpGet) {
      auto it = store.find(key);
      if (it == store.end()) {
        resp = {1, 0, 0};
      } else {
        resp.push_back(0);
        resp.push_back(static_cast<uint8_t>(it->second.size() & 0xff));
        resp.push_back(static_cast<uint8_t>(it->second.size() >> 8));
        resp.insert(resp.end(), it->second.begin(), it->second.end());
      }
    } else {
      api.mem_write(resp_buf, std::vector<uint8_t>{0, 0, 0});
      t.send(resp_buf, 3);
      break;
    }
    api.mem_write(resp_buf, resp);
    int64_t s = t.send(resp_buf, resp.size());
    if (is_err(s)) return s;
  }
  api.exit(0);
  return 0;
}

int64_t kv_client_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  bool stream = arg_str(args, "transport", "stream") == "stream";
  uint64_t ops = arg_u64(args, "ops", 1000);
  uint64_t seed = arg_u64(args, "seed", 7);
  constexpr uint64_t kBufSize = 512;
  constexpr uint64_t kValueLen = 100;

  KvTransport t{api, stream};
  t.buf_size = kBufSize;
  if (stream) {
    int64_t resp = api.cp_stream_make("kv.resp");
    if (is_err(resp)) return resp;
    t.recv_dev = static_cast<int>(resp);
    for (uint64_t i = 0; i < 4; ++i) {
      t.bufs.push_back(api.alloc(kBufSize));
      api.cp_stream_recv(t.recv_dev, i, t.bufs.back(), kBufSize);
    }
    t.next_id = 4;
    t.out_addr = api.alloc(16);
    int64_t req = get_with_retry(api, &GuestApi::cp_stream_get, "kv.req");
    if (is_err(req)) return req;
    t.send_dev = static_cast<int>(req);
  } else {
    t.send_dev = static_cast<int>(arg_u64(args, "req", 0));
    t.recv_dev = static_cast<int>(arg_u64(args, "resp", 1));
  }

  std::map<std::string, std::string> shadow;
  uint64_t req_buf = api.alloc(kBufSize);
  uint64_t scratch = api.alloc(kBufSize);
  uint64_t misses = 0, mismatches = 0;
  std::vector<int64_t> lat_ns;
  lat_ns.reserve(ops);
  uint64_t rng = seed * 0x9e3779b97f4a7c15ull + 1;
  auto next_rand = [&rng] {
    rng ^= rng << 13;
    rng ^= rng >> 7;
    rng ^= rng << 17;
    return rng;
  };

  for (uint64_t i = 0; i < ops; ++i) {
    std::string key(1, static_cast<char>('a' + next_rand() % 26));
    bool do_set = (i % 2 == 0);
    std::vector<uint8_t> req;
    std::string value;
    if (do_set) {
      value.resize(kValueLen);
      for (auto& c : value) c = static_cast<char>('A' + next_rand() % 26);
      req = kv_request(kOpSet, key, value);
    } else {
      req = kv_request(kOpGet, key, "");
    }
    api.mem_write(req_buf, req);

    auto t0 = std::chrono::steady_clock::now();
    int64_t s = t.send(req_buf, req.size());
    if (is_err(s)) return s;
    int64_t n = t.recv_one(scratch);
    if (is_err(n)) return n;
    auto t1 = std::chrono::steady_clock::now();
    lat_ns.push_back(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());

    auto resp = api.mem_read(scratch, static_cast<uint64_t>(n));
    if (do_set) {
      if (resp.empty() || resp[0] != 0) ++mismatches;
      shadow[key] = value;
    } else {
      auto it = shadow.find(key);
      if (resp.empty()) {
        ++mismatches;
      } else if (resp[0] == 1) {
        if (it != shadow.end()) ++mismatches;
        ++misses;
      } else {
        uint16_t vlen = static_cast<uint16_t>(resp[1]) |
                        (static_cast<uint16_t>(resp[2]) << 8);
        std::string got(resp.begin() + 3, resp.begin() + 3 + vlen);
        if (it == shadow.end() || it->second != got) ++mismatches;
      }
    }
  }

  // Shut the server down.
  auto quit = kv_request(kOpQuit, "q", "");
  api.mem_write(req_buf, quit);
  t.send(req_buf, quit.size());
  t.recv_one(scratch);

  std::ostringstream report;
  report << "kvreport ops=" << ops << " misses=" << misses
         << " mismatches=" << mismatches << "\n";
  for (size_t i = 0; i < lat_ns.size(); ++i) {
    if (i % 100 == 0) report << "lat:";
    report << lat_ns[i] << ((i % 100 == 99 || i + 1 == lat_ns.size()) ? "\n" : ",");
  }
  api.print(report.str());
  api.exit(0);
  return 0;
}

// --- crypto library ---------------------------------------------------------------

// arg buffer: in_klen u8, in_key, out_klen u8, out_key, xor_key u8
int64_t crypto_xor(GuestApi& api, uint64_t arg_addr, uint64_t arg_size) {
  if (arg_size < 3) return err_value(Err::kInvalidArg);
  auto arg = api.mem_read(arg_addr, arg_size);
  uint8_t in_klen = arg[0];
  std::string in_key(arg.begin() + 1, arg.begin() + 1 + in_klen);
  uint8_t out_klen = arg[1 + in_klen];
  std::string out_key(arg.begin() + 2 + in_klen,
                      arg.begin() + 2 + in_klen + out_klen);
  uint8_t xkey = arg[2 + in_klen + out_klen];

  int64_t in_dev = api.cp_file_get(in_key);
  if (is_err(in_dev)) return in_dev;
  int64_t out_dev = api.cp_file_get(out_key);
  if (is_err(out_dev)) return out_dev;

  uint64_t chunk = 4096;
  uint64_t buf = api.alloc(chunk);
  uint64_t off = 0;
  uint64_t checksum = 0;
  for (;;) {
    int64_t n = api.cp_file_read(static_cast<int>(in_dev), buf, off, chunk);
    if (is_err(n)) return n;
    if (n == 0) break;
    auto data = api.mem_read(buf, static_cast<uint64_t>(n));
    for (auto& c : data) {
      c = static_cast<uint8_t>(c ^ xkey);
      checksum += c;
    }
    api.mem_write(buf, data);
    int64_t w = api.cp_file_write(static_cast<int>(out_dev), buf, off,
                                  static_cast<uint64_t>(n));
    if (is_err(w)) return w;
    off += static_cast<uint64_t>(n);
  }
  return static_cast<int64_t>(checksum & 0x7fffffffffffffffull);
}

int64_t crypto_sum(GuestApi& api, uint64_t arg_addr, uint64_t arg_size) {
  auto data = api.mem_read(arg_addr, arg_size);
  uint64_t sum = 0;
  for (uint8_t b : data) sum += b;
  return static_cast<int64_t>(sum);
}

int64_t crypto_lib_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  std::string prefix = arg_str(args, "prefix", "crypto");
  // Library mode: set up a control stream and register the public functions.
  int64_t ctl = api.cp_stream_make(prefix + ".ctl");
  if (is_err(ctl)) return ctl;
  int64_t r = api.cp_call_make(prefix + ".xor", "xor");
  if (is_err(r)) return r;
  r = api.cp_call_make(prefix + ".sum", "sum");
  if (is_err(r)) return r;
  api.print("crypto_lib ready\n");
  // Service calls until the control stream is torn down.
  uint64_t out = api.alloc(16);
  for (;;) {
    int64_t n = api.cp_stream_poll(static_cast<int>(ctl), out, 1, 500000000);
    if (is_err(n) && err_of(n) != Err::kTimeout) break;
  }
  return 0;
}

// --- victim ------------------------------------------------------------------------

int64_t victim_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  std::string key = arg_str(args, "key", "victim.buf");
  uint64_t buf = api.alloc(4096);
  api.mem_write(buf, pattern_bytes(4096, 0x51));
  int64_t dev = api.cp_file_make(key, buf, 4096);
  if (is_err(dev)) return dev;
  api.print("victim ready\n");
  // Sit still so the attacker suite can diff this region byte for byte.
  while (api.cp_file_wait(static_cast<int>(dev)) == 0) {
  }
  return 0;
}

// --- attacker ------------------------------------------------------------------------

// Runs one scripted escape attempt named by argv, driving the machine
// directly from the library OS layer. Behaviors that fault terminate the
// compartment; behaviors that return an error report it on the console.
int64_t attacker_main(GuestApi& api, const std::vector<std::string>& argv) {
  auto args = parse_kv_args(argv);
  std::string behavior = arg_str(args, "behavior", "");
  std::string victim_key = arg_str(args, "key", "victim.buf");
  Machine& m = api.machine();
  CompartmentContext& ctx = api.ctx();
  uint64_t base = api.region_base();
  uint64_t len = api.region_len();
  uint64_t affix = base + layout::kAffixOffset;
  // Own scratch slot, 16-byte aligned, in this compartment's heap.
  uint64_t scratch = layout::align_up(api.alloc(64), 16);

  auto slot_addr = [&](int64_t dev) {
    return base + layout::kDevSlotsOffset +
           static_cast<uint64_t>(dev) * layout::kGranule;
  };

  if (behavior == "oob_load") {
    uint8_t b;
    m.load_bytes(ctx, Auth::ddc(), len + 0x1000, std::span<uint8_t>(&b, 1));
    api.print("result=ESCAPE\n");  // not reached when contained
  } else if (behavior == "oob_store") {
    uint8_t b = 0xff;
    m.store_bytes(ctx, Auth::ddc(), len + 0x1000,
                  std::span<const uint8_t>(&b, 1));
    api.print("result=ESCAPE\n");
  } else if (behavior == "forge_tag") {
    // Write 16 arbitrary bytes, load them as a capability, and try to use it.
    auto junk = pattern_bytes(16, 0xab);
    m.store_bytes(ctx, Auth::ddc(), scratch - base, junk);
    m.load_cap(ctx, 10, Auth::ddc(), scratch);
    uint8_t b;
    m.load_bytes(ctx, Auth::reg(10), 0, std::span<uint8_t>(&b, 1));
    api.print("result=ESCAPE\n");
  } else if (behavior == "store_grant_cap") {
    int64_t dev = api.cp_file_get(victim_key);
    if (is_err(dev)) return dev;
    m.load_cap(ctx, 10, Auth::ddc(), slot_addr(dev));
    m.store_cap(ctx, Auth::ddc(), scratch, Auth::reg(10));
    api.print("result=ESCAPE\n");
  } else if (behavior == "mismatched_pair") {
    // Affix code capability against a syscall-class data capability.
    uint64_t prog0 = base + layout::kProgramsOffset;
    m.load_cap(ctx, 10, Auth::ddc(),
               affix + layout::kAffixOcall * layout::kGranule);
    m.load_cap(ctx, 11, Auth::ddc(), prog0 + 1 * layout::kGranule);
    m.cinvoke(ctx, 10, 11);
    api.print("result=ESCAPE\n");
  } else if (behavior == "data_as_code") {
    m.load_cap(ctx, 10, Auth::ddc(),
               affix + layout::kAffixMonDdc * layout::kGranule);
    m.load_cap(ctx, 11, Auth::ddc(),
               affix + layout::kAffixMonDdc * layout::kGranule);
    m.cinvoke(ctx, 10, 11);
    api.print("result=ESCAPE\n");
  } else if (behavior == "replay_revoked") {
    int64_t dev = api.cp_file_get(victim_key);
    if (is_err(dev)) return dev;
    m.load_cap(ctx, 10, Auth::ddc(), slot_addr(dev));
    // Signal the harness through our own memory and spin without any
    // monitor transition, keeping the stashed register copy alive.
    uint8_t flag = 1;
    m.store_bytes(ctx, Auth::ddc(), scratch - base,
                  std::span<const uint8_t>(&flag, 1));
    for (;;) {
      uint8_t cur;
      m.load_bytes(ctx, Auth::ddc(), scratch - base,
                   std::span<uint8_t>(&cur, 1));
      if (cur == 2) break;
      std::this_thread::yield();
    }
    // The grant was revoked while we held it; the register copy is gone.
    m.capcpy(ctx, Auth::ddc(), scratch + 16 - base, Auth::reg(10), 0, 16);
    api.print("result=ESCAPE\n");
  } else if (behavior == "widen_bounds") {
    m.cap_set_bounds(ctx, 10, Auth::ddc(), 0, m.mem().size());
    api.print("result=ESCAPE\n");
  } else if (behavior == "unseal_affix") {
    m.load_cap(ctx, 10, Auth::ddc(),
               affix + layout::kAffixMonDdc * layout::kGranule);
    m.cap_unseal(ctx, 11, Auth::reg(10), Auth::ddc());
    api.print("result=ESCAPE\n");
  } else if (behavior == "mutate_sealed") {
    m.load_cap(ctx, 10, Auth::ddc(),
               affix + layout::kAffixRet * layout::kGranule);
    m.cap_inc_offset(ctx, 11, Auth::reg(10), 8);
    api.print("result=ESCAPE\n");
  } else if (behavior == "hostcall_oob_id") {
    int64_t r = api.ocall(9999);
    if (is_err(r) && err_of(r) == Err::kBadHostcall) {
      api.print("result=BAD_HOSTCALL\n");
      return 0;
    }
    api.print("result=ESCAPE\n");
  } else if (behavior == "cross_pair_affix") {
    // A structurally valid pair built from two different Affix slots. The
    // return entry fires, after which this domain has given up control; the
    // very next operation must fault.
    m.load_cap(ctx, 10, Auth::ddc(),
               affix + layout::kAffixRet * layout::kGranule);
    m.load_cap(ctx, 11, Auth::ddc(),
               affix + layout::kAffixOcall * layout::kGranule);
    m.cinvoke(ctx, 10, 11);
    uint8_t b;
    m.load_bytes(ctx, Auth::ddc(), 0, std::span<uint8_t>(&b, 1));
    api.print("result=ESCAPE\n");
  } else if (behavior == "write_via_readonly_grant") {
    int64_t dev = api.cp_file_get(victim_key);
    if (is_err(dev)) return dev;
    m.load_cap(ctx, 10, Auth::ddc(), slot_addr(dev));
    m.capcpy(ctx, Auth::reg(10), 0, Auth::ddc(), scratch - base, 16);
    api.print("result=ESCAPE\n");
  } else {
    api.print("result=UNKNOWN_BEHAVIOR\n");
    return err_value(Err::kInvalidArg);
  }
  return 0;
}

}  // namespace

void register_builtin_programs(ProgramRegistry& registry) {
  registry.add(GuestProgram{"hello", false, hello_main, {}});
  registry.add(GuestProgram{"producer", false, producer_main, {}});
  registry.add(GuestProgram{"consumer", false, consumer_main, {}});
  registry.add(GuestProgram{"kv_server", false, kv_server_main, {}});
  registry.add(GuestProgram{"kv_client", false, kv_client_main, {}});
  registry.add(GuestProgram{
      "crypto_lib", false, crypto_lib_main,
      {{"xor", crypto_xor}, {"sum", crypto_sum}}});
  registry.add(GuestProgram{"attacker", true, attacker_main, {}});
  registry.add(GuestProgram{"victim", false, victim_main, {}});
}

}  // namespace capvm
