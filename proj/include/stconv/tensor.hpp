#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stconv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

/// Dense N-dimensional array over a flat row-major buffer.
/// Model data uses the canonical 5-axis layout (N, C, T, H, W).
template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), S(0));
    }

    Tensor(Shape shape, S fill) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
    }

    Tensor(Shape shape, std::vector<S> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_))
            throw std::invalid_argument("tensor: buffer length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::int64_t extent(std::int64_t axis) const {
        if (axis < 0 || axis >= rank())
            throw std::invalid_argument("tensor: axis " + std::to_string(axis) +
                                        " out of range for rank " + std::to_string(rank()));
        return shape_[static_cast<std::size_t>(axis)];
    }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    template <typename... Ix>
    S& at(Ix... ix) {
        return data_[static_cast<std::size_t>(flat_index({static_cast<std::int64_t>(ix)...}))];
    }
    template <typename... Ix>
    const S& at(Ix... ix) const {
        return data_[static_cast<std::size_t>(flat_index({static_cast<std::int64_t>(ix)...}))];
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    /// Element (i0,...,ik) lives at ((i0*e1 + i1)*e2 + ...)*... row-major.
    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<std::int64_t>(idx.size()) != rank())
            throw std::invalid_argument("tensor: index rank " + std::to_string(idx.size()) +
                                        " does not match tensor rank " + std::to_string(rank()));
        std::int64_t flat = 0;
        std::int64_t axis = 0;
        for (auto i : idx) {
            const std::int64_t e = shape_[static_cast<std::size_t>(axis)];
            if (i < 0 || i >= e)
                throw std::out_of_range("tensor: index " + std::to_string(i) + " out of bounds for axis " +
                                        std::to_string(axis) + " with extent " + std::to_string(e));
            flat = flat * e + i;
            ++axis;
        }
        return flat;
    }

    template <typename T2>
    Tensor<T2> cast() const {
        Tensor<T2> out(shape_);
        for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<T2>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    void validate_shape() const {
        if (shape_.empty())
            throw std::invalid_argument("tensor: rank-0 shape not supported, use shape {1}");
        for (std::size_t i = 0; i < shape_.size(); ++i)
            if (shape_[i] < 1)
                throw std::invalid_argument("tensor: extent " + std::to_string(shape_[i]) +
                                            " on axis " + std::to_string(i) + " must be >= 1");
    }

    Shape shape_;
    std::vector<S> data_;
};

template <typename S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape() == b.shape();
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (!same_shape(a, b))
        throw std::invalid_argument("max_abs_diff: shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    double m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
    return same_shape(a, b) &&
           std::memcmp(a.data(), b.data(), sizeof(S) * static_cast<std::size_t>(a.size())) == 0;
}

/// Per-axis zero-padding amounts. Counts are validated non-negative at
/// construction; crop uses the same description for amounts removed.
struct AxisPad {
    std::int64_t before = 0;
    std::int64_t after = 0;
};

class PadSpec {
public:
    PadSpec() = default;

    PadSpec(std::initializer_list<AxisPad> axes) {
        for (const auto& a : axes) push(a);
    }

    static PadSpec none(std::int64_t rank) {
        PadSpec p;
        for (std::int64_t i = 0; i < rank; ++i) p.push({0, 0});
        return p;
    }

    void push(AxisPad a) {
        if (a.before < 0 || a.after < 0)
            throw std::invalid_argument("pad: negative count on axis " + std::to_string(axes_.size()));
        axes_.push_back(a);
    }

    std::int64_t rank() const { return static_cast<std::int64_t>(axes_.size()); }
    const AxisPad& operator[](std::int64_t axis) const { return axes_[static_cast<std::size_t>(axis)]; }
    std::int64_t total(std::int64_t axis) const {
        const auto& a = axes_[static_cast<std::size_t>(axis)];
        return a.before + a.after;
    }

    bool is_zero() const {
        for (const auto& a : axes_)
            if (a.before != 0 || a.after != 0) return false;
        return true;
    }

private:
    std::vector<AxisPad> axes_;
};

} // namespace stconv
