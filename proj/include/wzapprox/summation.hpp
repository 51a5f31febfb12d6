#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace wz {

/// Neumaier's variant of Kahan summation. Order-dependent but deterministic for a
/// fixed input order, which is all the Monte Carlo reductions rely on.
class CompensatedSum {
public:
    CompensatedSum& operator+=(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            correction_ += (sum_ - t) + x;
        } else {
            correction_ += (x - t) + sum_;
        }
        sum_ = t;
        return *this;
    }
    CompensatedSum& operator-=(double x) noexcept { return *this += -x; }

    double value() const noexcept { return sum_ + correction_; }

private:
    double sum_ = 0.0;
    double correction_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
    CompensatedSum s;
    for (double x : xs) s += x;
    return s.value();
}

/// Mean and standard error of the mean.
struct SampleStats {
    double mean = 0.0;
    double std_err = 0.0;
    std::size_t count = 0;
};

/// Two-pass mean/variance with compensated accumulation, in input order.
inline SampleStats summarize(std::span<const double> xs) noexcept {
    SampleStats out;
    out.count = xs.size();
    if (xs.empty()) return out;
    out.mean = compensated_sum(xs) / static_cast<double>(xs.size());
    if (xs.size() < 2) return out;
    CompensatedSum ss;
    for (double x : xs) {
        const double d = x - out.mean;
        ss += d * d;
    }
    const double var = ss.value() / static_cast<double>(xs.size() - 1);
    out.std_err = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

}  // namespace wz
