#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace burstforge {

// Shape or argument contract violated by the caller.
class shape_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A kernel produced or received non-finite values.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File parsing / serialization failure. Messages always name the offending
// byte position or field.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Intra-op worker count. 1 (the default) is the determinism reference mode;
// any count produces bitwise-identical results because work items never
// share outputs.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [begin, end) on the configured worker count.
void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t)>& fn);

}  // namespace burstforge
