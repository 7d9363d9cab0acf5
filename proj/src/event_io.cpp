#include "realm/event_io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "realm/error.hpp"

namespace realm::events {

namespace {

constexpr char kMagic[4] = {'R', 'E', 'V', 'T'};
constexpr std::size_t kHeaderSize = 4 + 2 + 2 + 8;
constexpr std::size_t kRecordSize = 8 + 2 + 2 + 1 + 1;
constexpr std::string_view kCsvHeader = "t_us,x,y,p";

template <typename T>
T read_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void check_event(const Event& e, const EventStream& s, std::size_t index) {
  if (e.x >= s.width || e.y >= s.height) {
    throw Error(ErrorCode::OutOfBoundsPixel, "event " + std::to_string(index) + " at (" +
                                                 std::to_string(e.x) + "," + std::to_string(e.y) +
                                                 ") outside " + std::to_string(s.width) + "x" +
                                                 std::to_string(s.height));
  }
  if (e.p != 1 && e.p != -1) {
    throw Error(ErrorCode::BadPolarity, "event " + std::to_string(index) + " has polarity " +
                                            std::to_string(static_cast<int>(e.p)));
  }
}

}  // namespace

WindowSpec WindowSpec::parse(const std::string& text, std::uint32_t stride) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "window spec must be count:N or time:MS, got '" + text + "'");
  const std::string kind = text.substr(0, colon);
  const std::string value = text.substr(colon + 1);
  WindowSpec spec;
  spec.stride = stride;
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  try {
    if (kind == "count") {
      spec.mode = Mode::FixedCount;
      const long long n = std::stoll(value);
      if (n < 1) throw Error(ErrorCode::InvalidArgument, "window count must be >= 1");
      spec.amount = static_cast<std::uint64_t>(n);
    } else if (kind == "time") {
      spec.mode = Mode::FixedTime;
      const double ms = std::stod(value);
      const auto us = static_cast<long long>(std::llround(ms * 1000.0));
      if (us < 1) throw Error(ErrorCode::InvalidArgument, "window duration must be >= 1 us");
      spec.amount = static_cast<std::uint64_t>(us);
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown window mode '" + kind + "'");
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidArgument, "bad window value '" + value + "'");
  }
  return spec;
}

void validate(const EventStream& stream) {
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    check_event(stream.events[i], stream, i);
    if (i > 0 && stream.events[i].t < stream.events[i - 1].t) {
      throw Error(ErrorCode::NonMonotoneTimestamp,
                  "event " + std::to_string(i) + " has t=" + std::to_string(stream.events[i].t) +
                      " before previous t=" + std::to_string(stream.events[i - 1].t));
    }
  }
}

EventStream parse_events(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    const std::string_view head(reinterpret_cast<const char*>(bytes.data()),
                                std::min(bytes.size(), kCsvHeader.size()));
    if (head == kCsvHeader) return parse_events_csv(std::string(bytes.begin(), bytes.end()));
    throw Error(ErrorCode::BadMagic, "expected REVT magic or CSV header");
  }
  if (bytes.size() < kHeaderSize) {
    if (bytes.size() < 4) throw Error(ErrorCode::BadMagic, "file shorter than magic");
    throw Error(ErrorCode::TruncatedFile, "header is " + std::to_string(bytes.size()) + " bytes");
  }
  EventStream s;
  const std::uint8_t* p = bytes.data() + 4;
  s.width = read_le<std::uint16_t>(p);
  s.height = read_le<std::uint16_t>(p + 2);
  const auto count = read_le<std::uint64_t>(p + 4);
  const std::size_t available = (bytes.size() - kHeaderSize) / kRecordSize;
  if (count > available) {
    throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(count) +
                                              " events, file holds " + std::to_string(available));
  }
  s.events.resize(count);
  const std::uint8_t* r = bytes.data() + kHeaderSize;
  for (std::uint64_t i = 0; i < count; ++i, r += kRecordSize) {
    Event& e = s.events[i];
    e.t = read_le<std::uint64_t>(r);
    e.x = read_le<std::uint16_t>(r + 8);
    e.y = read_le<std::uint16_t>(r + 10);
    e.p = static_cast<std::int8_t>(r[12]);
  }
  validate(s);
  return s;
}

EventStream parse_events_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kCsvHeader, 0) != 0)
    throw Error(ErrorCode::BadMagic, "CSV must start with header '" + std::string(kCsvHeader) + "'");
  EventStream s;
  // Optional "# width=W height=H" comment; otherwise bounds are inferred.
  bool explicit_size = false;
  std::vector<Event> events;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      unsigned w = 0, h = 0;
      if (std::sscanf(line.c_str(), "# width=%u height=%u", &w, &h) == 2) {
        s.width = static_cast<std::uint16_t>(w);
        s.height = static_cast<std::uint16_t>(h);
        explicit_size = true;
      }
      continue;
    }
    unsigned long long t = 0;
    unsigned x = 0, y = 0;
    int pol = 0;
    if (std::sscanf(line.c_str(), "%llu,%u,%u,%d", &t, &x, &y, &pol) != 4)
      throw Error(ErrorCode::TruncatedFile, "malformed CSV line " + std::to_string(lineno));
    if (x > 0xFFFF || y > 0xFFFF)
      throw Error(ErrorCode::OutOfBoundsPixel, "coordinate overflow on line " + std::to_string(lineno));
    if (pol != 1 && pol != -1)
      throw Error(ErrorCode::BadPolarity, "polarity " + std::to_string(pol) + " on line " + std::to_string(lineno));
    events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                      static_cast<std::int8_t>(pol)});
  }
  if (!explicit_size) {
    unsigned w = 0, h = 0;
    for (const auto& e : events) {
      w = std::max<unsigned>(w, e.x + 1u);
      h = std::max<unsigned>(h, e.y + 1u);
    }
    s.width = static_cast<std::uint16_t>(w);
    s.height = static_cast<std::uint16_t>(h);
  }
  s.events = std::move(events);
  validate(s);
  return s;
}

std::vector<std::uint8_t> write_events(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + kRecordSize * stream.events.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  write_le<std::uint16_t>(out, stream.width);
  write_le<std::uint16_t>(out, stream.height);
  write_le<std::uint64_t>(out, stream.events.size());
  for (const auto& e : stream.events) {
    write_le<std::uint64_t>(out, e.t);
    write_le<std::uint16_t>(out, e.x);
    write_le<std::uint16_t>(out, e.y);
    write_le<std::int8_t>(out, e.p);
    out.push_back(0);
  }
  return out;
}

std::string write_events_csv(const EventStream& stream) {
  std::ostringstream os;
  os << kCsvHeader << '\n' << "# width=" << stream.width << " height=" << stream.height << '\n';
  for (const auto& e : stream.events)
    os << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
  return os.str();
}

EventStream read_events_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_events(bytes);
}

void write_events_file(const std::string& path, const EventStream& stream) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path);
  const auto bytes = write_events(stream);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

std::vector<EventWindow> window_fixed_count(const EventStream& stream, std::uint64_t n,
                                            std::uint32_t stride) {
  if (n < 1 || stride < 1) throw Error(ErrorCode::InvalidArgument, "count and stride must be >= 1");
  std::vector<EventWindow> out;
  const std::uint64_t full = stream.events.size() / n;
  for (std::uint64_t k = 0; k < full; k += stride) {
    EventWindow w;
    auto first = stream.events.begin() + static_cast<std::ptrdiff_t>(k * n);
    w.events.assign(first, first + static_cast<std::ptrdiff_t>(n));
    w.t_start = w.events.front().t;
    w.t_end = w.events.back().t;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<EventWindow> window_fixed_time(const EventStream& stream, std::uint64_t dt_us,
                                           std::uint32_t stride) {
  if (dt_us < 1 || stride < 1) throw Error(ErrorCode::InvalidArgument, "duration and stride must be >= 1");
  std::vector<EventWindow> out;
  if (stream.events.empty()) return out;
  const std::uint64_t t0 = stream.events.front().t;
  const std::uint64_t last = stream.events.back().t;
  // Bin k covers [t0 + k dt, t0 + (k+1) dt). Only bins lying entirely inside
  // the observed span [t0, last] are emitted; the trailing partial bin is dropped.
  const std::uint64_t complete = (last - t0 + 1) / dt_us;

  std::size_t cursor = 0;
  for (std::uint64_t k = 0; k < complete; ++k) {
    const std::uint64_t lo = t0 + k * dt_us;
    const std::uint64_t hi = lo + dt_us;
    const std::size_t begin = cursor;
    while (cursor < stream.events.size() && stream.events[cursor].t < hi) ++cursor;
    if (k % stride != 0) continue;
    EventWindow w;
    w.t_start = lo;
    w.t_end = hi - 1;
    w.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(begin),
                    stream.events.begin() + static_cast<std::ptrdiff_t>(cursor));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<EventWindow> make_windows(const EventStream& stream, const WindowSpec& spec) {
  return spec.mode == WindowSpec::Mode::FixedCount
             ? window_fixed_count(stream, spec.amount, spec.stride)
             : window_fixed_time(stream, spec.amount, spec.stride);
}

}  // namespace realm::events
