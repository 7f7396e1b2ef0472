#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace htapsim {

/// Cluster-wide transaction identifier handed out by the coordinator.
enum class Dxid : std::uint64_t {};

/// Per-segment transaction identifier stamped into tuple versions.
enum class LocalXid : std::uint64_t {};

/// Segment number; the coordinator is segment -1.
enum class SegmentId : int {};

inline constexpr SegmentId kCoordinator{-1};

/// Stable tuple address within one segment's copy of a table.
enum class Ctid : std::uint64_t {};

/// Statement counter inside one transaction.
enum class CommandId : std::uint32_t {};

/// Logical simulator time.
using Tick = std::uint64_t;

constexpr std::uint64_t to_underlying(Dxid v) noexcept { return static_cast<std::uint64_t>(v); }
constexpr std::uint64_t to_underlying(LocalXid v) noexcept { return static_cast<std::uint64_t>(v); }
constexpr int to_underlying(SegmentId v) noexcept { return static_cast<int>(v); }
constexpr std::uint64_t to_underlying(Ctid v) noexcept { return static_cast<std::uint64_t>(v); }
constexpr std::uint32_t to_underlying(CommandId v) noexcept { return static_cast<std::uint32_t>(v); }

constexpr SegmentId segment_id(int v) noexcept { return SegmentId{v}; }

std::string to_string(Dxid v);
std::string to_string(LocalXid v);
/// "coordinator" for -1, "seg<N>" otherwise.
std::string to_string(SegmentId v);

/// A caller broke an operation's precondition (unknown transaction, releasing
/// a lock that is not held, ...).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Internal bookkeeping is inconsistent with the data it describes.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace htapsim
