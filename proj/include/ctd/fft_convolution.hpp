#pragma once

#include <span>
#include <vector>

namespace ctd {

// Full linear convolution c[p] = sum_j a[j] b[p - j], length a.size() + b.size() - 1,
// computed by zero-padding both sequences to a power of two (no circular wrap).
std::vector<double> linear_convolution(std::span<const double> a, std::span<const double> b);

}  // namespace ctd
