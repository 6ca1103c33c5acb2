#pragma once

// Published normalized attribution scores for TEP Fault 11 and
// Fault 8 tables, in schema order xmeas_1..xmeas_41, xmv_1..xmv_12.

#include <array>
#include <cstddef>

namespace faultlens::testing {

inline constexpr std::size_t kReferenceTableWidth = 53;

inline constexpr std::array<double, kReferenceTableWidth> kFault11Ig = {
    -0.48, -0.19, -0.25, -0.16, -0.16, -0.21, 0.01, -0.16,
    4.34, -0.18, -0.30, -0.19, -0.53, -0.18, -0.21, -0.08,
    -0.20, 0.01, -0.26, -0.15, 2.11, 0.23, -0.18, -0.20,
    -0.16, -0.15, -0.20, -0.24, -0.20, -0.36, -0.19, -0.18,
    -0.15, -0.28, -0.20, -0.23, -0.21, -0.22, -0.20, -0.20,
    -0.14, -0.40, -0.22, -0.74, -1.24, -0.20, -0.17, -0.14,
    -0.18, -0.20, 5.01, -0.26, -0.20,
};

inline constexpr std::array<double, kReferenceTableWidth> kFault11Shap = {
    0.08, -0.32, -0.33, -0.16, -0.27, -0.25, -0.29, -0.33,
    5.74, -0.19, 0.11, -0.32, -0.12, -0.31, -0.24, -0.11,
    -0.37, -0.10, -0.33, -0.08, 0.65, 0.35, -0.34, -0.23,
    -0.33, -0.31, -0.29, -0.23, -0.29, -0.19, -0.30, -0.32,
    -0.31, -0.14, -0.38, -0.34, -0.33, -0.30, -0.29, -0.34,
    -0.28, -0.32, -0.23, 0.01, 0.39, -0.32, -0.15, 0.09,
    0.09, -0.32, 4.00, -0.20, -0.32,
};

inline constexpr std::array<double, kReferenceTableWidth> kFault8Ig = {
    -0.27, -0.20, -0.28, -0.26, -0.20, -0.31, 0.38, 0.03,
    -0.39, 0.44, -1.31, -0.12, 0.16, -0.23, -0.37, 0.93,
    -0.29, 0.27, -0.18, -0.18, 6.37, -0.24, 0.39, -0.18,
    0.43, -0.10, -0.14, -0.36, 0.80, -0.31, 0.57, -0.19,
    -0.15, -0.40, -0.22, -0.33, -0.12, -0.20, -0.17, -0.19,
    -0.16, -0.60, -0.34, -0.79, -1.40, -0.18, 0.38, -0.29,
    -0.50, -0.18, 1.62, -0.25, -0.18,
};

inline constexpr std::array<double, kReferenceTableWidth> kFault8Shap = {
    0.98, -0.39, -0.34, -0.36, 0.18, 0.32, 0.38, -0.35,
    0.93, -0.37, -0.12, -0.37, 0.04, -0.39, -0.22, 0.33,
    -0.40, -3.19, -0.43, 5.04, 1.60, 2.28, -0.13, -0.27,
    0.09, -0.37, -0.18, -0.16, -0.03, -0.31, -0.18, -0.59,
    -0.37, -0.06, -0.37, -0.49, -0.39, -0.17, -0.47, -0.40,
    -0.42, -0.77, -0.32, 0.15, 0.48, -0.41, -0.22, 0.74,
    0.98, -0.41, 0.85, -0.53, -0.41,
};

}  // namespace faultlens::testing
