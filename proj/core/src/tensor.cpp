#include "burstforge/tensor.hpp"

#include <cmath>

namespace burstforge {

bool all_finite(const Tensor& t) {
    for (float v : t.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor& t, const char* op) {
    if (!all_finite(t))
        throw numeric_error(std::string(op) + ": non-finite value in tensor " + t.shape_str());
}

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw shape_error(std::string(what) + ": expected rank " + std::to_string(rank) +
                          ", got " + t.shape_str());
}

void require_shape(const Tensor& t, const std::vector<int>& expect, const char* what) {
    if (t.shape() != expect) {
        Tensor probe;
        std::string want = "[";
        for (size_t i = 0; i < expect.size(); ++i) {
            if (i) want += ",";
            want += std::to_string(expect[i]);
        }
        want += "]";
        throw shape_error(std::string(what) + ": expected shape " + want + ", got " +
                          t.shape_str());
    }
}

}  // namespace burstforge
