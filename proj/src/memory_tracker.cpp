#include "flashattn/memory_tracker.hpp"

#include <atomic>

namespace flashattn {
namespace {

std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};

}  // namespace

void MemoryTracker::on_allocate(std::size_t bytes) noexcept {
  const auto now = g_current.fetch_add(static_cast<std::int64_t>(bytes), std::memory_order_relaxed) +
                   static_cast<std::int64_t>(bytes);
  auto peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void MemoryTracker::on_deallocate(std::size_t bytes) noexcept {
  g_current.fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}

std::int64_t MemoryTracker::current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }

std::int64_t MemoryTracker::peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }

void MemoryTracker::reset_peak() noexcept { g_peak.store(g_current.load(std::memory_order_relaxed)); }

PeakMemoryScope::PeakMemoryScope() noexcept : baseline_(MemoryTracker::current_bytes()) {
  MemoryTracker::reset_peak();
}

std::int64_t PeakMemoryScope::peak_above_baseline() const noexcept {
  return MemoryTracker::peak_bytes() - baseline_;
}

}  // namespace flashattn
