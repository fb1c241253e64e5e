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

#ifndef CAPVM_CAPS_HPP_
#define CAPVM_CAPS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace capvm {

// Permissions carried by a capability. STORE_CAP (elsewhere often spelled
// PERMIT_STORE_CAP) is the permission withheld from every capability handed
// to a compartment, so that compartments can load capabilities but never
// store them.
enum class Perm : uint8_t {
  kRead = 1u << 0,
  kWrite = 1u << 1,
  kExec = 1u << 2,
  kLoadCap = 1u << 3,
  kStoreCap = 1u << 4,
  kSeal = 1u << 5,
  kUnseal = 1u << 6,
};

// A small value type over the permission bits.
class PermSet {
 public:
  constexpr PermSet() = default;
  constexpr PermSet(Perm p) : bits_(static_cast<uint8_t>(p)) {}  // NOLINT

  static constexpr PermSet all() { return PermSet(0x7f); }
  static constexpr PermSet none() { return PermSet(0); }
  static constexpr PermSet from_raw(uint8_t raw) { return PermSet(raw & 0x7f); }

  constexpr uint8_t raw() const { return bits_; }
  constexpr bool has(Perm p) const {
    return (bits_ & static_cast<uint8_t>(p)) != 0;
  }
  constexpr bool subset_of(PermSet other) const {
    return (bits_ & ~other.bits_) == 0;
  }
  constexpr bool empty() const { return bits_ == 0; }

  friend constexpr PermSet operator|(PermSet a, PermSet b) {
    return PermSet(static_cast<uint8_t>(a.bits_ | b.bits_));
  }
  friend constexpr PermSet operator&(PermSet a, PermSet b) {
    return PermSet(static_cast<uint8_t>(a.bits_ & b.bits_));
  }
  friend constexpr bool operator==(PermSet a, PermSet b) {
    return a.bits_ == b.bits_;
  }

  std::string to_string() const;

 private:
  explicit constexpr PermSet(uint8_t raw) : bits_(raw) {}
  uint8_t bits_ = 0;
};

inline constexpr PermSet operator|(Perm a, Perm b) {
  return PermSet(a) | PermSet(b);
}

// Object-type value marking a capability as unsealed. Valid seal types are
// 24-bit values below kOtypeSpace.
inline constexpr uint32_t kOtypeUnsealed = 0xffffffffu;
inline constexpr uint32_t kOtypeSpace = 1u << 24;

// Fault classes raised by the capability machine. A fault aborts the
// offending operation before any memory or register mutation.
enum class FaultKind : uint8_t {
  kTag,
  kBounds,
  kPerm,
  kSealMismatch,
  kSealedImmutable,
  kMonotonicity,
  kAlignment,
};

const char* fault_kind_name(FaultKind kind);

class CapFault : public std::runtime_error {
 public:
  CapFault(FaultKind kind, std::string detail);
  FaultKind kind() const { return kind_; }

 private:
  FaultKind kind_;
};

// A memory capability: validity tag, bounds, cursor, permissions and an
// optional seal type. Sealed capabilities are immutable until unsealed or
// consumed by cinvoke. Only the Machine can mint or transform tagged
// capabilities; everything else observes them through the accessors.
class Capability {
 public:
  // The default capability is untagged and authorizes nothing.
  constexpr Capability() = default;

  constexpr bool tag() const { return tag_; }
  constexpr uint64_t base() const { return base_; }
  constexpr uint64_t length() const { return length_; }
  constexpr uint64_t top() const { return base_ + length_; }
  constexpr uint64_t cursor() const { return cursor_; }
  constexpr PermSet perms() const { return perms_; }
  constexpr uint32_t otype() const { return otype_; }
  constexpr bool sealed() const { return otype_ != kOtypeUnsealed; }

  bool same_bits(const Capability& other) const {
    return tag_ == other.tag_ && base_ == other.base_ &&
           length_ == other.length_ && cursor_ == other.cursor_ &&
           perms_ == other.perms_ && otype_ == other.otype_;
  }

  std::string to_string() const;

 private:
  friend class Machine;
  friend class TaggedMemory;

  Capability(bool tag, uint64_t base, uint64_t length, uint64_t cursor,
             PermSet perms, uint32_t otype)
      : tag_(tag),
        base_(base),
        length_(length),
        cursor_(cursor),
        perms_(perms),
        otype_(otype) {}

  bool tag_ = false;
  uint64_t base_ = 0;
  uint64_t length_ = 0;
  uint64_t cursor_ = 0;
  PermSet perms_ = PermSet::none();
  uint32_t otype_ = kOtypeUnsealed;
};

}  // namespace capvm

#endif  // CAPVM_CAPS_HPP_
