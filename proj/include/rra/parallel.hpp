#pragma once

#include <cstddef>
#include <functional>

namespace rra {

// Worker count used by path-parallel loops; 0 selects the hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(begin, end) over [0, n) split into fixed blocks of `block` indices.
// Block boundaries do not depend on the worker count; bodies must only write
// to their own index range.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t block = 512);

}  // namespace rra
