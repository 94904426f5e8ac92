#pragma once

#include <compare>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ltc {

/// Exact fraction over int64 with overflow checking. Always normalized:
/// gcd(num, den) == 1 and den > 0.
class Rational {
public:
    constexpr Rational() = default;
    constexpr Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT(implicit)
    Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

    std::int64_t num() const noexcept { return num_; }
    std::int64_t den() const noexcept { return den_; }

    friend Rational operator+(const Rational& a, const Rational& b) {
        return from_wide(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                         static_cast<__int128>(a.den_) * b.den_);
    }
    friend Rational operator-(const Rational& a, const Rational& b) {
        return from_wide(static_cast<__int128>(a.num_) * b.den_ - static_cast<__int128>(b.num_) * a.den_,
                         static_cast<__int128>(a.den_) * b.den_);
    }
    friend Rational operator*(const Rational& a, const Rational& b) {
        return from_wide(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.num_ == 0) throw std::domain_error("rational division by zero");
        return from_wide(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
    }
    Rational& operator+=(const Rational& o) { return *this = *this + o; }

    friend bool operator==(const Rational&, const Rational&) = default;
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        auto lhs = static_cast<__int128>(a.num_) * b.den_;
        auto rhs = static_cast<__int128>(b.num_) * a.den_;
        if (lhs < rhs) return std::strong_ordering::less;
        if (lhs > rhs) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }

    double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

    /// "n/d", or "n" when the denominator is 1.
    std::string str() const;
    static Rational parse(const std::string& text);

    /// Rounds value * 10^decimals half away from zero and returns the scaled
    /// integer (e.g. 0.685 with decimals=2 -> 69).
    std::int64_t round_scaled(int decimals) const;
    /// Decimal string rounded half away from zero, e.g. "56.8".
    std::string to_fixed(int decimals) const;

private:
    static Rational from_wide(__int128 n, __int128 d);
    void assign(std::int64_t n, std::int64_t d);

    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

}  // namespace ltc
