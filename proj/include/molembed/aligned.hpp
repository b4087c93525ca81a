#pragma once

#include <cstddef>
#include <cstdlib>
#include <new>
#include <vector>

namespace molembed {

/// 64-byte-aligned allocator. Numeric buffers that Eigen maps must share one
/// alignment across runs, otherwise vectorized reductions change their
/// summation order with the heap layout and results stop being reproducible.
template <typename T, size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

    T* allocate(size_t n) {
        if (n == 0) return nullptr;
        void* p = std::aligned_alloc(Align, ((n * sizeof(T) + Align - 1) / Align) * Align);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) noexcept { std::free(p); }

    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    bool operator==(const AlignedAllocator&) const noexcept { return true; }
    bool operator!=(const AlignedAllocator&) const noexcept { return false; }
};

/// Aligned double buffer used for every tensor/matrix payload.
using AVec = std::vector<double, AlignedAllocator<double>>;

}  // namespace molembed
