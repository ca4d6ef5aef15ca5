#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowadam {

/// A named, contiguous slice of a parameter vector (e.g. the U factor).
struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const Segment&) const = default;
};

using Layout = std::vector<Segment>;

/**
 * Flat vector of trainable parameters with an immutable segment layout.
 *
 * The layout is shared between copies; arithmetic never changes it. Segments
 * are disjoint, contiguous and cover the whole vector.
 */
class ParamVector {
public:
    ParamVector() : layout_(std::make_shared<const Layout>()) {}

    explicit ParamVector(std::size_t n, double fill = 0.0)
        : data_(n, fill), layout_(single_segment(n)) {}

    explicit ParamVector(std::vector<double> data)
        : data_(std::move(data)), layout_(single_segment(data_.size())) {}

    ParamVector(std::initializer_list<double> values)
        : ParamVector(std::vector<double>(values)) {}

    ParamVector(std::vector<double> data, Layout layout)
        : data_(std::move(data)),
          layout_(std::make_shared<const Layout>(std::move(layout))) {
        validate_layout(*layout_, data_.size());
    }

    /// Zero vector sharing the layout of `like`.
    static ParamVector zeros_like(const ParamVector& like) {
        ParamVector out;
        out.data_.assign(like.size(), 0.0);
        out.layout_ = like.layout_;
        return out;
    }

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    const Layout& layout() const noexcept { return *layout_; }
    bool same_layout(const ParamVector& other) const noexcept {
        return layout_ == other.layout_ || *layout_ == *other.layout_;
    }

    const Segment& segment_info(const std::string& name) const {
        for (const auto& s : *layout_)
            if (s.name == name) return s;
        throw std::out_of_range("ParamVector: no segment named '" + name + "'");
    }

    std::span<double> segment(const std::string& name) {
        const auto& s = segment_info(name);
        return std::span<double>(data_).subspan(s.offset, s.length);
    }
    std::span<const double> segment(const std::string& name) const {
        const auto& s = segment_info(name);
        return std::span<const double>(data_).subspan(s.offset, s.length);
    }

    bool operator==(const ParamVector& other) const {
        return data_ == other.data_ && *layout_ == *other.layout_;
    }

    static void validate_layout(const Layout& layout, std::size_t n) {
        std::size_t expected = 0;
        for (const auto& s : layout) {
            if (s.offset != expected)
                throw std::invalid_argument("ParamVector: segment '" + s.name +
                                            "' is not contiguous with its predecessor");
            expected += s.length;
        }
        if (expected != n)
            throw std::invalid_argument("ParamVector: segments cover " + std::to_string(expected) +
                                        " of " + std::to_string(n) + " entries");
    }

private:
    static std::shared_ptr<const Layout> single_segment(std::size_t n) {
        return std::make_shared<const Layout>(Layout{Segment{"theta", 0, n}});
    }

    std::vector<double> data_;
    std::shared_ptr<const Layout> layout_;
};

/// Builds a layout from (name, length) pairs laid out back to back.
inline Layout make_layout(std::initializer_list<std::pair<std::string, std::size_t>> parts) {
    Layout layout;
    std::size_t offset = 0;
    for (const auto& [name, len] : parts) {
        layout.push_back(Segment{name, offset, len});
        offset += len;
    }
    return layout;
}

inline std::size_t layout_size(const Layout& layout) {
    return layout.empty() ? 0 : layout.back().offset + layout.back().length;
}

inline bool all_finite(std::span<const double> v) noexcept {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Euclidean norm. Throws on NaN/Inf, which only ever means corrupted state.
inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw std::domain_error("l2_norm: non-finite entry");
        s += x * x;
    }
    return std::sqrt(s);
}

inline double l2_norm(const ParamVector& v) { return l2_norm(v.values()); }

inline double max_abs(std::span<const double> v) noexcept {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// ||a - b||_2 without materializing the difference.
inline double distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (!std::isfinite(d)) throw std::domain_error("distance: non-finite entry");
        s += d * d;
    }
    return std::sqrt(s);
}

/// a*x + b*y elementwise; the result keeps the layout of x.
inline ParamVector axpby(double a, const ParamVector& x, double b, const ParamVector& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("axpby: length mismatch (" + std::to_string(x.size()) + " vs " +
                                    std::to_string(y.size()) + ")");
    ParamVector out = ParamVector::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

inline ParamVector scaled(const ParamVector& x, double a) {
    ParamVector out = ParamVector::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
    return out;
}

/// y += a*x in place.
inline void axpy_inplace(double a, const ParamVector& x, ParamVector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/**
 * Seeded random stream.
 *
 * Draws come from std::mt19937_64, whose output sequence is fixed by the C++
 * standard. The uniform and normal transforms are written out here because the
 * standard library distributions are implementation-defined.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t draws() const noexcept { return draws_; }

    std::uint64_t next_u64() {
        ++draws_;
        return engine_();
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phi = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(phi);
        has_spare_ = true;
        return r * std::cos(phi);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// +1 or -1 with equal probability.
    double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

    /// Independent child stream; the derivation is fixed so it reproduces anywhere.
    Rng fork(std::uint64_t tag) const {
        std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (tag + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline ParamVector gaussian_fill(Rng& rng, std::size_t n, double mean, double stddev) {
    if (n == 0) throw std::invalid_argument("gaussian_fill: n must be >= 1");
    if (!(stddev >= 0.0)) throw std::invalid_argument("gaussian_fill: stddev must be >= 0");
    ParamVector out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = rng.normal(mean, stddev);
    return out;
}

/// k distinct indices from [0, n), sorted ascending (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace flowadam
