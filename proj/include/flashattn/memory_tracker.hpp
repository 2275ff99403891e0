#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>

namespace flashattn {

/// Process-wide accounting of bytes held by library containers (Matrix,
/// RowVector and scratch tiles). Only allocations routed through
/// TrackingAllocator are counted.
class MemoryTracker {
 public:
  static void on_allocate(std::size_t bytes) noexcept;
  static void on_deallocate(std::size_t bytes) noexcept;

  static std::int64_t current_bytes() noexcept;
  static std::int64_t peak_bytes() noexcept;
  /// Sets the peak to the current live byte count.
  static void reset_peak() noexcept;
};

/// Measures the peak number of bytes allocated above the live count at
/// construction time.
class PeakMemoryScope {
 public:
  PeakMemoryScope() noexcept;
  std::int64_t peak_above_baseline() const noexcept;
  std::int64_t baseline() const noexcept { return baseline_; }

 private:
  std::int64_t baseline_;
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    T* p = static_cast<T*>(::operator new(n * sizeof(T)));
    MemoryTracker::on_allocate(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace flashattn
