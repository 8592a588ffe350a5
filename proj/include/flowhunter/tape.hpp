#pragma once

// Reverse-mode autodiff over an explicit tape. Every op validates shapes,
// computes its output eagerly, and (when the tape is recording) pushes a
// backward closure. backward() replays the closures in reverse, accumulating
// into .grad() buffers. Forward values captured by closures must stay live
// and unmodified until backward runs: the intended discipline is
// forward -> backward -> optimizer step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace flowhunter {

class TapeError : public TensorError {
public:
    using TensorError::TensorError;
};

namespace detail {

using i64 = std::int64_t;

// C(m,n) += A(m,k) * B(k,n)
inline void gemm_nn(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (i64 p = 0; p < k; ++p) {
            const double ap = a[p];
            const double* b = B + p * n;
            for (i64 j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
inline void gemm_nt(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (i64 j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double acc = 0.0;
            for (i64 p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C(m,n) += A(k,m)^T * B(k,n)
inline void gemm_tn(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (i64 p = 0; p < k; ++p) {
            const double ap = A[p * m + i];
            const double* b = B + p * n;
            for (i64 j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

inline double clamp_unit(double v) {
    const double lo = 1e-12, hi = 1.0 - 1e-12;
    return v < lo ? lo : (v > hi ? hi : v);
}

inline bool strictly_inside_unit(double v) {
    return v > 1e-12 && v < 1.0 - 1e-12;
}

} // namespace detail

class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t num_ops() const { return ops_.size(); }

    void reset() {
        ops_.clear();
        produced_.clear();
        consumed_ = false;
    }

    // ---- matrix products -------------------------------------------------

    // (m,k)x(k,n), batched (B,m,k)x(B,k,n), or shared-right (B,m,k)x(k,n).
    Tensor matmul(const Tensor& a, const Tensor& b) {
        using detail::i64;
        if (a.rank() == 2 && b.rank() == 2) {
            require_inner(a.dim(1), b.dim(0), "matmul", a, b);
            const i64 m = a.dim(0), k = a.dim(1), n = b.dim(1);
            Tensor out = Tensor::zeros({m, n});
            detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
            out.ensure_finite("matmul");
            if (recording_) {
                record(out, [a, b, out, m, k, n]() mutable {
                    const auto* g = out.grad_if();
                    if (!g) return;
                    detail::gemm_nt(g->data(), b.data(), a.grad().data(), m, n, k);
                    detail::gemm_tn(a.data(), g->data(), b.grad().data(), k, m, n);
                });
            }
            return out;
        }
        if (a.rank() == 3 && b.rank() == 3) {
            if (a.dim(0) != b.dim(0)) {
                throw ShapeError("matmul: batch sizes disagree: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
            }
            require_inner(a.dim(2), b.dim(1), "matmul", a, b);
            const i64 bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
            Tensor out = Tensor::zeros({bs, m, n});
#pragma omp parallel for schedule(static)
            for (i64 s = 0; s < bs; ++s) {
                detail::gemm_nn(a.data() + s * m * k, b.data() + s * k * n,
                                out.data() + s * m * n, m, k, n);
            }
            out.ensure_finite("matmul");
            if (recording_) {
                record(out, [a, b, out, bs, m, k, n]() mutable {
                    const auto* g = out.grad_if();
                    if (!g) return;
                    double* da = a.grad().data();
                    double* db = b.grad().data();
#pragma omp parallel for schedule(static)
                    for (i64 s = 0; s < bs; ++s) {
                        const double* gs = g->data() + s * m * n;
                        detail::gemm_nt(gs, b.data() + s * k * n, da + s * m * k, m, n, k);
                        detail::gemm_tn(a.data() + s * m * k, gs, db + s * k * n, k, m, n);
                    }
                });
            }
            return out;
        }
        if (a.rank() == 3 && b.rank() == 2) {
            require_inner(a.dim(2), b.dim(0), "matmul", a, b);
            const i64 bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
            Tensor out = Tensor::zeros({bs, m, n});
            detail::gemm_nn(a.data(), b.data(), out.data(), bs * m, k, n);
            out.ensure_finite("matmul");
            if (recording_) {
                record(out, [a, b, out, bs, m, k, n]() mutable {
                    const auto* g = out.grad_if();
                    if (!g) return;
                    detail::gemm_nt(g->data(), b.data(), a.grad().data(), bs * m, n, k);
                    detail::gemm_tn(a.data(), g->data(), b.grad().data(), k, bs * m, n);
                });
            }
            return out;
        }
        throw ShapeError("matmul: unsupported ranks: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }

    // a * b^T over the last two axes: (m,k)x(n,k) or batched (B,m,k)x(B,n,k).
    Tensor matmul_nt(const Tensor& a, const Tensor& b) {
        using detail::i64;
        if (a.rank() == 2 && b.rank() == 2) {
            require_inner(a.dim(1), b.dim(1), "matmul_nt", a, b);
            const i64 m = a.dim(0), k = a.dim(1), n = b.dim(0);
            Tensor out = Tensor::zeros({m, n});
            detail::gemm_nt(a.data(), b.data(), out.data(), m, k, n);
            out.ensure_finite("matmul_nt");
            if (recording_) {
                record(out, [a, b, out, m, k, n]() mutable {
                    const auto* g = out.grad_if();
                    if (!g) return;
                    detail::gemm_nn(g->data(), b.data(), a.grad().data(), m, n, k);
                    detail::gemm_tn(g->data(), a.data(), b.grad().data(), n, m, k);
                });
            }
            return out;
        }
        if (a.rank() == 3 && b.rank() == 3) {
            if (a.dim(0) != b.dim(0)) {
                throw ShapeError("matmul_nt: batch sizes disagree: " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
            }
            require_inner(a.dim(2), b.dim(2), "matmul_nt", a, b);
            const i64 bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
            Tensor out = Tensor::zeros({bs, m, n});
#pragma omp parallel for schedule(static)
            for (i64 s = 0; s < bs; ++s) {
                detail::gemm_nt(a.data() + s * m * k, b.data() + s * n * k,
                                out.data() + s * m * n, m, k, n);
            }
            out.ensure_finite("matmul_nt");
            if (recording_) {
                record(out, [a, b, out, bs, m, k, n]() mutable {
                    const auto* g = out.grad_if();
                    if (!g) return;
                    double* da = a.grad().data();
                    double* db = b.grad().data();
#pragma omp parallel for schedule(static)
                    for (i64 s = 0; s < bs; ++s) {
                        const double* gs = g->data() + s * m * n;
                        detail::gemm_nn(gs, b.data() + s * n * k, da + s * m * k, m, n, k);
                        detail::gemm_tn(gs, a.data() + s * m * k, db + s * n * k, n, m, k);
                    }
                });
            }
            return out;
        }
        throw ShapeError("matmul_nt: unsupported ranks: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }

    // ---- elementwise -----------------------------------------------------

    Tensor add(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "add");
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
        out.ensure_finite("add");
        if (recording_) {
            record(out, [a, b, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                auto& db = b.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    da[i] += (*g)[i];
                    db[i] += (*g)[i];
                }
            });
        }
        return out;
    }

    Tensor sub(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "sub");
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
        out.ensure_finite("sub");
        if (recording_) {
            record(out, [a, b, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                auto& db = b.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    da[i] += (*g)[i];
                    db[i] -= (*g)[i];
                }
            });
        }
        return out;
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "mul");
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
        out.ensure_finite("mul");
        if (recording_) {
            record(out, [a, b, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                auto& db = b.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    da[i] += (*g)[i] * b.data()[i];
                    db[i] += (*g)[i] * a.data()[i];
                }
            });
        }
        return out;
    }

    Tensor scale(const Tensor& a, double c) {
        if (!std::isfinite(c)) throw TensorError("scale: non-finite factor");
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
        out.ensure_finite("scale");
        if (recording_) {
            record(out, [a, out, c]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i] * c;
            });
        }
        return out;
    }

    // x[..., j] + bias[j]; bias is rank-1 matching the last extent of x.
    Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
        if (bias.rank() != 1) {
            throw ShapeError("add_rowvec: bias must be rank-1, got " + shape_str(bias.shape()));
        }
        const auto n = x.dim(x.rank() - 1);
        if (bias.dim(0) != n) {
            throw ShapeError("add_rowvec: last extent of " + shape_str(x.shape()) +
                             " does not match bias " + shape_str(bias.shape()));
        }
        const auto rows = x.size() / n;
        Tensor out = Tensor::zeros(x.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = x.data() + r * n;
            double* o = out.data() + r * n;
            for (std::int64_t j = 0; j < n; ++j) o[j] = xr[j] + bias.data()[j];
        }
        out.ensure_finite("add_rowvec");
        if (recording_) {
            record(out, [x, bias, out, rows, n]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                auto& db = bias.grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g->data() + r * n;
                    double* dxr = dx.data() + r * n;
                    for (std::int64_t j = 0; j < n; ++j) {
                        dxr[j] += gr[j];
                        db[static_cast<std::size_t>(j)] += gr[j];
                    }
                }
            });
        }
        return out;
    }

    // ---- activations -----------------------------------------------------

    // Subgradient at 0 is 0.
    Tensor relu(const Tensor& a) {
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
        if (recording_) {
            record(out, [a, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    if (out.data()[i] > 0.0) da[i] += (*g)[i];
                }
            });
        }
        return out;
    }

    Tensor leaky_relu(const Tensor& a, double slope) {
        if (!(slope > 0.0 && slope < 1.0)) {
            throw TensorError("leaky_relu: slope must lie in (0,1)");
        }
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = a.data()[i];
            out.data()[i] = v > 0.0 ? v : slope * v;
        }
        out.ensure_finite("leaky_relu");
        if (recording_) {
            record(out, [a, out, slope]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    da[i] += (*g)[i] * (out.data()[i] > 0.0 ? 1.0 : slope);
                }
            });
        }
        return out;
    }

    Tensor sigmoid(const Tensor& a) {
        Tensor out = Tensor::zeros(a.shape());
        const auto n = a.size();
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = a.data()[i];
            if (v >= 0.0) {
                out.data()[i] = 1.0 / (1.0 + std::exp(-v));
            } else {
                const double e = std::exp(v);
                out.data()[i] = e / (1.0 + e);
            }
        }
        if (recording_) {
            record(out, [a, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                for (std::size_t i = 0; i < g->size(); ++i) {
                    const double s = out.data()[i];
                    da[i] += (*g)[i] * s * (1.0 - s);
                }
            });
        }
        return out;
    }

    // Softmax along the last axis with max subtraction; rows sum to 1.
    Tensor softmax_rows(const Tensor& a) {
        const auto n = a.dim(a.rank() - 1);
        const auto rows = a.size() / n;
        Tensor out = Tensor::zeros(a.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = a.data() + r * n;
            double* o = out.data() + r * n;
            double mx = xr[0];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                o[j] = std::exp(xr[j] - mx);
                sum += o[j];
            }
            for (std::int64_t j = 0; j < n; ++j) o[j] /= sum;
        }
        out.ensure_finite("softmax_rows");
        if (recording_) {
            record(out, [a, out, rows, n]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& da = a.grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g->data() + r * n;
                    const double* p = out.data() + r * n;
                    double* d = da.data() + r * n;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * p[j];
                    for (std::int64_t j = 0; j < n; ++j) d[j] += p[j] * (gr[j] - dot);
                }
            });
        }
        return out;
    }

    // ---- normalization and structure --------------------------------------

    // Normalizes along the sequence axis (the second-to-last): each channel c
    // of each sample is centered/scaled over its L positions with population
    // variance, then mapped through gain[c], bias[c].
    Tensor layer_norm_seq(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
        using detail::i64;
        if (x.rank() != 2 && x.rank() != 3) {
            throw ShapeError("layer_norm: input must be rank 2 or 3, got " + shape_str(x.shape()));
        }
        if (!(eps >= 0.0)) throw TensorError("layer_norm: eps must be >= 0");
        const i64 B = x.rank() == 3 ? x.dim(0) : 1;
        const i64 L = x.dim(x.rank() - 2);
        const i64 C = x.dim(x.rank() - 1);
        if (gain.rank() != 1 || gain.dim(0) != C || bias.rank() != 1 || bias.dim(0) != C) {
            throw ShapeError("layer_norm: gain/bias must be rank-1 of extent " + std::to_string(C) +
                             ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
        }
        Tensor out = Tensor::zeros(x.shape());
        auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
        auto inv_s = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * C));
        for (i64 b = 0; b < B; ++b) {
            for (i64 c = 0; c < C; ++c) {
                const double* xp = x.data() + b * L * C + c;
                double mu = 0.0;
                for (i64 i = 0; i < L; ++i) mu += xp[i * C];
                mu /= static_cast<double>(L);
                double var = 0.0;
                for (i64 i = 0; i < L; ++i) {
                    const double d = xp[i * C] - mu;
                    var += d * d;
                }
                var /= static_cast<double>(L);
                const double is = 1.0 / std::sqrt(var + eps);
                (*inv_s)[static_cast<std::size_t>(b * C + c)] = is;
                double* op = out.data() + b * L * C + c;
                double* xh = xhat->data() + b * L * C + c;
                const double gc = gain.data()[c], bc = bias.data()[c];
                for (i64 i = 0; i < L; ++i) {
                    const double h = (xp[i * C] - mu) * is;
                    xh[i * C] = h;
                    op[i * C] = gc * h + bc;
                }
            }
        }
        out.ensure_finite("layer_norm");
        if (recording_) {
            record(out, [x, gain, bias, out, xhat, inv_s, B, L, C]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                auto& dgain = gain.grad();
                auto& dbias = bias.grad();
                for (i64 b = 0; b < B; ++b) {
                    for (i64 c = 0; c < C; ++c) {
                        const double* gp = g->data() + b * L * C + c;
                        const double* xh = xhat->data() + b * L * C + c;
                        const double gc = gain.data()[c];
                        const double is = (*inv_s)[static_cast<std::size_t>(b * C + c)];
                        double m1 = 0.0, m2 = 0.0;
                        for (i64 i = 0; i < L; ++i) {
                            const double gh = gp[i * C] * gc;
                            m1 += gh;
                            m2 += gh * xh[i * C];
                            dgain[static_cast<std::size_t>(c)] += gp[i * C] * xh[i * C];
                            dbias[static_cast<std::size_t>(c)] += gp[i * C];
                        }
                        m1 /= static_cast<double>(L);
                        m2 /= static_cast<double>(L);
                        double* dxp = dx.data() + b * L * C + c;
                        for (i64 i = 0; i < L; ++i) {
                            const double gh = gp[i * C] * gc;
                            dxp[i * C] += (gh - m1 - xh[i * C] * m2) * is;
                        }
                    }
                }
            });
        }
        return out;
    }

    // [B,L,C] -> [B,C], mean over positions.
    Tensor mean_positions(const Tensor& x) {
        using detail::i64;
        if (x.rank() != 3) {
            throw ShapeError("mean_positions: input must be rank 3, got " + shape_str(x.shape()));
        }
        const i64 B = x.dim(0), L = x.dim(1), C = x.dim(2);
        Tensor out = Tensor::zeros({B, C});
        for (i64 b = 0; b < B; ++b) {
            double* o = out.data() + b * C;
            for (i64 i = 0; i < L; ++i) {
                const double* xp = x.data() + (b * L + i) * C;
                for (i64 c = 0; c < C; ++c) o[c] += xp[c];
            }
            for (i64 c = 0; c < C; ++c) o[c] /= static_cast<double>(L);
        }
        out.ensure_finite("mean_positions");
        if (recording_) {
            record(out, [x, out, B, L, C]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                const double inv = 1.0 / static_cast<double>(L);
                for (i64 b = 0; b < B; ++b) {
                    const double* gb = g->data() + b * C;
                    for (i64 i = 0; i < L; ++i) {
                        double* d = dx.data() + (b * L + i) * C;
                        for (i64 c = 0; c < C; ++c) d[c] += gb[c] * inv;
                    }
                }
            });
        }
        return out;
    }

    // Concatenation along the last axis; all parts share the leading extents.
    Tensor concat_cols(const std::vector<Tensor>& parts) {
        using detail::i64;
        if (parts.empty()) throw ShapeError("concat_cols: no inputs");
        const int r = parts[0].rank();
        if (r < 2) throw ShapeError("concat_cols: inputs must be rank >= 2");
        i64 total_last = 0;
        for (const auto& p : parts) {
            if (p.rank() != r) {
                throw ShapeError("concat_cols: rank mismatch: " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
            }
            for (int d = 0; d + 1 < r; ++d) {
                if (p.dim(d) != parts[0].dim(d)) {
                    throw ShapeError("concat_cols: leading extents disagree: " +
                                     shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
                }
            }
            total_last += p.dim(r - 1);
        }
        Shape out_shape = parts[0].shape();
        out_shape[static_cast<std::size_t>(r - 1)] = total_last;
        Tensor out = Tensor::zeros(out_shape);
        const i64 rows = out.size() / total_last;
        i64 off = 0;
        for (const auto& p : parts) {
            const i64 w = p.dim(r - 1);
            for (i64 row = 0; row < rows; ++row) {
                const double* src = p.data() + row * w;
                double* dst = out.data() + row * total_last + off;
                for (i64 j = 0; j < w; ++j) dst[j] = src[j];
            }
            off += w;
        }
        if (recording_) {
            record(out, [parts, out, rows, total_last]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                i64 off2 = 0;
                for (auto& p : parts) {
                    const i64 w = p.dim(p.rank() - 1);
                    auto& dp = p.grad();
                    for (i64 row = 0; row < rows; ++row) {
                        const double* gsrc = g->data() + row * total_last + off2;
                        double* dst = dp.data() + row * w;
                        for (i64 j = 0; j < w; ++j) dst[j] += gsrc[j];
                    }
                    off2 += w;
                }
            });
        }
        return out;
    }

    Tensor reshape(const Tensor& x, Shape new_shape) {
        if (shape_numel(new_shape) != x.size()) {
            throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(new_shape));
        }
        Tensor out = Tensor::zeros(new_shape);
        std::copy(x.data(), x.data() + x.size(), out.data());
        if (recording_) {
            record(out, [x, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                for (std::size_t i = 0; i < g->size(); ++i) dx[i] += (*g)[i];
            });
        }
        return out;
    }

    // Inverted dropout: kept entries scaled by 1/(1-p) so expectation is
    // preserved. p == 0 returns the input unchanged. Mask entries are drawn
    // in flat row-major order, one uniform per element.
    Tensor dropout(const Tensor& x, double p, SeededRng& rng) {
        if (!(p >= 0.0 && p < 1.0)) {
            throw TensorError("dropout: probability must lie in [0,1)");
        }
        if (p == 0.0) return x;
        const auto n = x.size();
        auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
        const double keep_scale = 1.0 / (1.0 - p);
        for (std::int64_t i = 0; i < n; ++i) {
            (*mask)[static_cast<std::size_t>(i)] = rng.uniform() >= p ? keep_scale : 0.0;
        }
        Tensor out = Tensor::zeros(x.shape());
        for (std::int64_t i = 0; i < n; ++i) {
            out.data()[i] = x.data()[i] * (*mask)[static_cast<std::size_t>(i)];
        }
        out.ensure_finite("dropout");
        if (recording_) {
            record(out, [x, out, mask]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                for (std::size_t i = 0; i < g->size(); ++i) dx[i] += (*g)[i] * (*mask)[i];
            });
        }
        return out;
    }

    // ---- reductions and losses --------------------------------------------

    Tensor sum(const Tensor& x) {
        double s = 0.0;
        for (std::int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
        Tensor out = Tensor::scalar(s);
        if (recording_) {
            record(out, [x, out]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                for (auto& d : dx) d += (*g)[0];
            });
        }
        return out;
    }

    Tensor mean(const Tensor& x) {
        double s = 0.0;
        for (std::int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
        const double inv = 1.0 / static_cast<double>(x.size());
        Tensor out = Tensor::scalar(s * inv);
        if (recording_) {
            record(out, [x, out, inv]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dx = x.grad();
                for (auto& d : dx) d += (*g)[0] * inv;
            });
        }
        return out;
    }

    // Mean negative log-likelihood of the true class; probs are rows of a
    // softmax output. log is clamped at 1e-12.
    Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
        using detail::i64;
        if (probs.rank() != 2) {
            throw ShapeError("cross_entropy: probabilities must be rank 2, got " +
                             shape_str(probs.shape()));
        }
        const i64 B = probs.dim(0), C = probs.dim(1);
        if (static_cast<i64>(labels.size()) != B) {
            throw TensorError("cross_entropy: " + std::to_string(labels.size()) +
                              " labels for " + std::to_string(B) + " rows");
        }
        double total = 0.0;
        for (i64 b = 0; b < B; ++b) {
            const int y = labels[static_cast<std::size_t>(b)];
            if (y < 0 || y >= C) {
                throw TensorError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(C) + ")");
            }
            total += -std::log(std::max(probs.at(b, y), 1e-12));
        }
        Tensor out = Tensor::scalar(total / static_cast<double>(B));
        if (recording_) {
            auto labels_copy = std::make_shared<std::vector<int>>(labels);
            record(out, [probs, out, labels_copy, B, C]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                auto& dp = probs.grad();
                const double go = (*g)[0];
                for (i64 b = 0; b < B; ++b) {
                    const int y = (*labels_copy)[static_cast<std::size_t>(b)];
                    const double p = probs.at(b, y);
                    if (p > 1e-12) {
                        dp[static_cast<std::size_t>(b * C + y)] +=
                            go * (-1.0 / (static_cast<double>(B) * p));
                    }
                }
            });
        }
        return out;
    }

    // mean(-log d_real) + mean(-log(1 - d_fake)), both clamped to
    // [1e-12, 1 - 1e-12]. Gradient is zero where the clamp is active.
    Tensor gan_disc_loss(const Tensor& d_real, const Tensor& d_fake) {
        const auto nr = d_real.size(), nf = d_fake.size();
        double total = 0.0;
        for (std::int64_t i = 0; i < nr; ++i) {
            total += -std::log(detail::clamp_unit(d_real.data()[i])) / static_cast<double>(nr);
        }
        for (std::int64_t i = 0; i < nf; ++i) {
            total += -std::log(1.0 - detail::clamp_unit(d_fake.data()[i])) / static_cast<double>(nf);
        }
        Tensor out = Tensor::scalar(total);
        if (recording_) {
            record(out, [d_real, d_fake, out, nr, nf]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                const double go = (*g)[0];
                auto& dr = d_real.grad();
                for (std::int64_t i = 0; i < nr; ++i) {
                    const double v = d_real.data()[i];
                    if (detail::strictly_inside_unit(v)) {
                        dr[static_cast<std::size_t>(i)] += go * (-1.0 / (static_cast<double>(nr) * v));
                    }
                }
                auto& df = d_fake.grad();
                for (std::int64_t i = 0; i < nf; ++i) {
                    const double v = d_fake.data()[i];
                    if (detail::strictly_inside_unit(v)) {
                        df[static_cast<std::size_t>(i)] +=
                            go * (1.0 / (static_cast<double>(nf) * (1.0 - v)));
                    }
                }
            });
        }
        return out;
    }

    // mean(-log d_fake), clamped as above (non-saturating generator loss).
    Tensor gan_gen_loss(const Tensor& d_fake) {
        const auto nf = d_fake.size();
        double total = 0.0;
        for (std::int64_t i = 0; i < nf; ++i) {
            total += -std::log(detail::clamp_unit(d_fake.data()[i])) / static_cast<double>(nf);
        }
        Tensor out = Tensor::scalar(total);
        if (recording_) {
            record(out, [d_fake, out, nf]() mutable {
                const auto* g = out.grad_if();
                if (!g) return;
                const double go = (*g)[0];
                auto& df = d_fake.grad();
                for (std::int64_t i = 0; i < nf; ++i) {
                    const double v = d_fake.data()[i];
                    if (detail::strictly_inside_unit(v)) {
                        df[static_cast<std::size_t>(i)] += go * (-1.0 / (static_cast<double>(nf) * v));
                    }
                }
            });
        }
        return out;
    }

    // ---- backward ----------------------------------------------------------

    void backward(const Tensor& loss) {
        if (!recording_) throw TapeError("backward: tape is not recording");
        if (consumed_) throw TapeError("backward: tape already backpropagated; build a new tape");
        if (loss.size() != 1) {
            throw TapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        if (produced_.find(loss.id()) == produced_.end()) {
            throw TapeError("backward: loss tensor was not produced by this tape");
        }
        Tensor seed = loss;
        seed.grad()[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        consumed_ = true;
    }

private:
    template <typename F>
    void record(const Tensor& out, F&& fn) {
        produced_.insert(out.id());
        ops_.emplace_back(std::forward<F>(fn));
    }

    static void require_inner(std::int64_t ka, std::int64_t kb, const char* op, const Tensor& a,
                              const Tensor& b) {
        if (ka != kb) {
            throw ShapeError(std::string(op) + ": inner dimensions disagree: " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.shape() != b.shape()) {
            throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
        }
    }

    std::vector<std::function<void()>> ops_;
    std::unordered_set<std::uintptr_t> produced_;
    bool recording_;
    bool consumed_ = false;
};

// New leaf holding the same values; no gradient path connects it back.
inline Tensor detach(const Tensor& x) { return x.clone(); }

} // namespace flowhunter
