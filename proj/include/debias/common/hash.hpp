#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace debias {

// 64-bit FNV-1a, used for dataset fingerprints and checkpoint digests.
class Fnv1a {
public:
  static constexpr std::uint64_t kOffset = 1469598103934665603ULL;
  static constexpr std::uint64_t kPrime = 1099511628211ULL;

  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= kPrime;
    }
    return *this;
  }

  Fnv1a& update(const void* data, std::size_t n) {
    return update(std::string_view(static_cast<const char*>(data), n));
  }

  std::uint64_t digest() const { return state_; }

private:
  std::uint64_t state_ = kOffset;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  return Fnv1a().update(bytes).digest();
}

std::string hex64(std::uint64_t v);

}  // namespace debias
