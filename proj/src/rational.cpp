#include "ltc/rational.hpp"

#include <limits>

namespace ltc {

namespace {

__int128 wide_gcd(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        auto t = a % b;
        a = b;
        b = t;
    }
    return a;
}

bool fits(__int128 v) {
    return v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max();
}

}  // namespace

Rational Rational::from_wide(__int128 n, __int128 d) {
    if (d == 0) throw std::domain_error("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    auto g = wide_gcd(n, d);
    if (g > 1) {
        n /= g;
        d /= g;
    }
    if (!fits(n) || !fits(d)) throw std::overflow_error("rational overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
}

void Rational::assign(std::int64_t n, std::int64_t d) { *this = from_wide(n, d); }

std::string Rational::str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational Rational::parse(const std::string& text) {
    auto slash = text.find('/');
    try {
        if (slash == std::string::npos) return Rational(std::stoll(text));
        return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
    } catch (const std::logic_error&) {
        throw std::invalid_argument("not a rational: " + text);
    }
}

std::int64_t Rational::round_scaled(int decimals) const {
    __int128 scale = 1;
    for (int i = 0; i < decimals; ++i) scale *= 10;
    __int128 n = static_cast<__int128>(num_) * scale;
    bool negative = n < 0;
    if (negative) n = -n;
    // floor(n/den + 1/2) on the magnitude, then restore the sign.
    __int128 q = (2 * n + den_) / (2 * static_cast<__int128>(den_));
    return static_cast<std::int64_t>(negative ? -q : q);
}

std::string Rational::to_fixed(int decimals) const {
    std::int64_t scaled = round_scaled(decimals);
    bool negative = scaled < 0;
    std::string digits = std::to_string(negative ? -scaled : scaled);
    if (decimals > 0) {
        if (digits.size() <= static_cast<std::size_t>(decimals)) {
            digits.insert(0, static_cast<std::size_t>(decimals) + 1 - digits.size(), '0');
        }
        digits.insert(digits.size() - static_cast<std::size_t>(decimals), ".");
    }
    return (negative ? "-" : "") + digits;
}

}  // namespace ltc
