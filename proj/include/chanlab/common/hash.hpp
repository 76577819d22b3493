#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace chanlab {

// 64-bit FNV-1a; used for parameter fingerprints and config snapshots.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::span<const double> values) {
    update(values.data(), values.size_bytes());
  }
  void update(std::string_view text) { update(text.data(), text.size()); }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.digest();
}

}  // namespace chanlab
