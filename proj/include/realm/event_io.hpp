#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace realm::events {

struct Event {
  std::uint64_t t = 0;  ///< microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  ///< polarity, -1 or +1

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<Event> events;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// A temporally bounded slice. Events are copied; windows are small compared
/// to the streams they come from and outlive them in the CLI pipeline.
struct EventWindow {
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  std::vector<Event> events;

  bool empty() const { return events.empty(); }
};

struct WindowSpec {
  enum class Mode { FixedCount, FixedTime };
  Mode mode = Mode::FixedCount;
  std::uint64_t amount = 150'000;  ///< event count or duration in microseconds
  std::uint32_t stride = 1;

  /// Parses "count:N" or "time:MS" (milliseconds, may be fractional).
  static WindowSpec parse(const std::string& text, std::uint32_t stride = 1);
};

/// Decodes REVT binary, falling back to "t_us,x,y,p" CSV when the magic is absent
/// and the data starts with the CSV header.
EventStream parse_events(std::span<const std::uint8_t> bytes);
EventStream parse_events_csv(const std::string& text);

std::vector<std::uint8_t> write_events(const EventStream& stream);
std::string write_events_csv(const EventStream& stream);

EventStream read_events_file(const std::string& path);
void write_events_file(const std::string& path, const EventStream& stream);

/// Validates the stream invariants; throws realm::Error on violation.
void validate(const EventStream& stream);

std::vector<EventWindow> window_fixed_count(const EventStream& stream, std::uint64_t n,
                                            std::uint32_t stride);
std::vector<EventWindow> window_fixed_time(const EventStream& stream, std::uint64_t dt_us,
                                           std::uint32_t stride);
std::vector<EventWindow> make_windows(const EventStream& stream, const WindowSpec& spec);

}  // namespace realm::events
