#pragma once

// Dense double tensor with optional gradient buffer. Handles share storage
// (shallow copies), which is what lets tape closures and optimizer state
// refer to the same parameter a model holds.

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowhunter {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public TensorError {
public:
    using TensorError::TensorError;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        check_shape(shape);
        auto s = std::make_shared<Storage>();
        s->shape = std::move(shape);
        s->data.assign(static_cast<std::size_t>(shape_numel(s->shape)), 0.0);
        return Tensor(std::move(s));
    }

    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.s_->data) x = value;
        t.ensure_finite("full");
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        check_shape(shape);
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_str(shape));
        }
        auto s = std::make_shared<Storage>();
        s->shape = std::move(shape);
        s->data = std::move(values);
        Tensor t(std::move(s));
        t.ensure_finite("tensor");
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor row(std::vector<double> v) {
        const auto n = static_cast<std::int64_t>(v.size());
        return from({1, n}, std::move(v));
    }

    bool defined() const { return static_cast<bool>(s_); }

    const Shape& shape() const { return storage().shape; }
    int rank() const { return static_cast<int>(storage().shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(storage().data.size()); }
    std::int64_t dim(int i) const { return storage().shape.at(static_cast<std::size_t>(i)); }

    // Handles have pointer semantics: a const Tensor is a const handle to
    // shared mutable storage, so accessors below are const like shared_ptr's.
    double* data() const { return storage().data.data(); }
    std::vector<double>& values() const { return storage().data; }

    double at(std::int64_t i) const { return storage().data.at(static_cast<std::size_t>(i)); }
    double at(std::int64_t i, std::int64_t j) const {
        require_rank(2, "at(i,j)");
        return s_->data[static_cast<std::size_t>(i * dim(1) + j)];
    }
    double at(std::int64_t b, std::int64_t i, std::int64_t j) const {
        require_rank(3, "at(b,i,j)");
        return s_->data[static_cast<std::size_t>((b * dim(1) + i) * dim(2) + j)];
    }

    bool has_grad() const { return defined() && !storage().grad.empty(); }

    // Allocates a zero gradient on first access.
    std::vector<double>& grad() const {
        auto& st = storage();
        if (st.grad.empty()) st.grad.assign(st.data.size(), 0.0);
        return st.grad;
    }

    const std::vector<double>* grad_if() const {
        if (!has_grad()) return nullptr;
        return &s_->grad;
    }

    void zero_grad() const {
        if (has_grad()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
    }

    void clear_grad() const {
        if (defined()) s_->grad.clear();
    }

    const std::string& name() const { return storage().name; }
    Tensor& set_name(std::string n) {
        storage().name = std::move(n);
        return *this;
    }

    // Identity of the underlying buffer, not of the handle.
    std::uintptr_t id() const { return reinterpret_cast<std::uintptr_t>(s_.get()); }
    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

    // Deep copy of values (gradient not copied).
    Tensor clone() const {
        return from(shape(), values());
    }

    void ensure_finite(const char* what) const {
        for (double x : storage().data) {
            if (!std::isfinite(x)) {
                throw TensorError(std::string(what) + ": non-finite value in tensor " +
                                  (s_->name.empty() ? shape_str(s_->shape) : s_->name));
            }
        }
    }

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad; // empty means "no gradient"
        std::string name;
    };

    explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}

    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor: empty shape");
        for (auto e : shape) {
            if (e <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(shape));
        }
    }

    Storage& storage() const {
        if (!s_) throw TensorError("tensor: use of undefined tensor");
        return *s_;
    }

    void require_rank(int r, const char* what) const {
        if (rank() != r) {
            throw ShapeError(std::string(what) + ": tensor has shape " + shape_str(shape()));
        }
    }

    std::shared_ptr<Storage> s_;
};

} // namespace flowhunter
