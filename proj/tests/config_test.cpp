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

#include "capvm/config.hpp"
#include "capvm/errors.hpp"

namespace capvm {
namespace {

TEST(ConfigTest, ParsesFullDeployment) {
  auto cfgs = parse_config_text(
      "# demo\n"
      "name = web\n"
      "heap_size = 1M\n"
      "stack_count = 8\n"
      "stack_size = 64K\n"
      "disk_image = /tmp/web.img\n"
      "program = hello\n"
      "args = msg=4096 count=8\n"
      "allow key=kv,rights=rw,peer=client\n"
      "allow key=pub*,rights=r\n");
  ASSERT_EQ(cfgs.size(), 1u);
  const DeploymentConfig& cfg = cfgs[0];
  EXPECT_EQ(cfg.name, "web");
  EXPECT_EQ(cfg.heap_size, 1u << 20);
  EXPECT_EQ(cfg.stack_count, 8u);
  EXPECT_EQ(cfg.stack_size, 64u << 10);
  EXPECT_EQ(cfg.disk_image.value(), "/tmp/web.img");
  ASSERT_EQ(cfg.programs.size(), 1u);
  EXPECT_EQ(cfg.programs[0], "hello");
  EXPECT_EQ(cfg.entry_args, (std::vector<std::string>{"msg=4096", "count=8"}));
  ASSERT_EQ(cfg.allowed_keys.size(), 2u);
  EXPECT_EQ(cfg.allowed_keys[0].key, "kv");
  EXPECT_EQ(cfg.allowed_keys[0].rights, Perm::kRead | Perm::kWrite);
  EXPECT_EQ(cfg.allowed_keys[0].peer, "client");
  EXPECT_EQ(cfg.allowed_keys[1].rights, PermSet(Perm::kRead));
  EXPECT_EQ(cfg.allowed_keys[1].peer, "*");
}

TEST(ConfigTest, MultipleCompartmentsPerFile) {
  auto cfgs = parse_config_text(
      "name = a\nprogram = hello\n"
      "name = b\nprogram = hello\nheap_size = 2M\n");
  ASSERT_EQ(cfgs.size(), 2u);
  EXPECT_EQ(cfgs[0].name, "a");
  EXPECT_EQ(cfgs[1].name, "b");
  EXPECT_EQ(cfgs[1].heap_size, 2u << 20);
}

TEST(ConfigTest, DiagnosticsCarryLineNumbers) {
  try {
    parse_config_text("name = a\nprogram = hello\nbogus_key = 1\n");
    FAIL() << "expected CONFIG_INVALID";
  } catch (const MonitorError& e) {
    EXPECT_EQ(e.code(), Err::kConfigInvalid);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ConfigTest, RejectsZeroHeap) {
  EXPECT_THROW(parse_config_text("name = a\nprogram = h\nheap_size = 0\n"),
               MonitorError);
}

TEST(ConfigTest, RejectsMissingProgram) {
  EXPECT_THROW(parse_config_text("name = a\nheap_size = 1M\n"), MonitorError);
}

TEST(ConfigTest, RejectsKeysBeforeName) {
  EXPECT_THROW(parse_config_text("heap_size = 1M\nname = a\nprogram = h\n"),
               MonitorError);
}

TEST(ConfigTest, RejectsBadRights) {
  EXPECT_THROW(
      parse_config_text("name=a\nprogram=h\nallow key=k,rights=rwx\n"),
      MonitorError);
}

TEST(ConfigTest, SizeSuffixes) {
  EXPECT_EQ(parse_size("512"), 512u);
  EXPECT_EQ(parse_size("4K"), 4096u);
  EXPECT_EQ(parse_size("4k"), 4096u);
  EXPECT_EQ(parse_size("1M"), 1u << 20);
  EXPECT_THROW(parse_size("4G"), MonitorError);
  EXPECT_THROW(parse_size(""), MonitorError);
  EXPECT_THROW(parse_size("12x3"), MonitorError);
}

TEST(ConfigTest, AllowEntryMatching) {
  AllowEntry e{"kv*", PermSet(Perm::kRead), "client*"};
  EXPECT_TRUE(e.key_matches("kv"));
  EXPECT_TRUE(e.key_matches("kv.req"));
  EXPECT_FALSE(e.key_matches("k"));
  EXPECT_TRUE(e.peer_matches("client0"));
  EXPECT_FALSE(e.peer_matches("serve"));
}

}  // namespace
}  // namespace capvm
