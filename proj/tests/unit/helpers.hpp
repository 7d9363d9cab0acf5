#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "realm/event_io.hpp"

namespace test {

inline std::vector<std::uint8_t> revt_header(std::uint16_t w, std::uint16_t h, std::uint64_t count) {
  std::vector<std::uint8_t> b = {'R', 'E', 'V', 'T'};
  b.push_back(static_cast<std::uint8_t>(w & 0xFF));
  b.push_back(static_cast<std::uint8_t>(w >> 8));
  b.push_back(static_cast<std::uint8_t>(h & 0xFF));
  b.push_back(static_cast<std::uint8_t>(h >> 8));
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
  return b;
}

inline void revt_record(std::vector<std::uint8_t>& b, std::uint64_t t, std::uint16_t x, std::uint16_t y, std::int8_t p) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(t >> (8 * i)));
  b.push_back(static_cast<std::uint8_t>(x & 0xFF));
  b.push_back(static_cast<std::uint8_t>(x >> 8));
  b.push_back(static_cast<std::uint8_t>(y & 0xFF));
  b.push_back(static_cast<std::uint8_t>(y >> 8));
  b.push_back(static_cast<std::uint8_t>(p));
  b.push_back(0);
}

inline realm::events::EventStream stream_at(const std::vector<std::uint64_t>& times, std::uint16_t w = 8,
                                            std::uint16_t h = 8) {
  realm::events::EventStream s{w, h, {}};
  for (std::size_t i = 0; i < times.size(); ++i)
    s.events.push_back({times[i], static_cast<std::uint16_t>(i % w), static_cast<std::uint16_t>((i / w) % h),
                        static_cast<std::int8_t>(i % 2 ? -1 : 1)});
  return s;
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("realm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace test
