#pragma once

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vqarat/tensor.hpp"

namespace vqarat {
namespace ops {

namespace detail {

inline bool any_requires_grad(const std::vector<Tensor>& inputs) {
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

// Records the op on the active tape when gradients are needed; otherwise
// the result is a plain constant (forward-only inference path).
template <typename MakeBackward>
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               MakeBackward&& make_backward) {
    Tape* tape = Tape::active();
    if (!tape || !any_requires_grad(inputs))
        return Tensor::leaf(std::move(shape), std::move(value), false);
    Tensor out = tape->record(std::move(shape), std::move(value), inputs, nullptr);
    out.node()->backward = make_backward(out.node().get());
    return out;
}

// C (m x n) += or = op(A) * op(B), row-major.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c, bool accumulate) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0,
                a, static_cast<int>(trans_a ? m : k),
                b, static_cast<int>(trans_b ? k : n),
                accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

inline void check_2d(const Tensor& t, const char* who) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(who) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// --- matmul: [m,k] x [k,n] -> [m,n] ---------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
    return detail::make_op({m, n}, std::move(out), {a, b}, [=](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o, m, n, k]() {
            // dA += dC * B^T ; dB += A^T * dC
            detail::gemm(false, true, m, k, n, o->grad.data(), bn->value.data(), an->grad.data(), true);
            detail::gemm(true, false, k, n, m, an->value.data(), o->grad.data(), bn->grad.data(), true);
        };
    });
}

// --- add: same shape, or bias [n] broadcast over rows of [m,n] ------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    bool bias = a.shape().size() == 2 && b.shape().size() == 1 && b.shape()[0] == a.shape()[1];
    if (!bias) detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.data());
    std::size_t n = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % n];
    return detail::make_op(a.shape(), std::move(out), {a, b}, [=](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o, n]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                an->grad[i] += o->grad[i];
                bn->grad[i % n] += o->grad[i];
            }
        };
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_op(a.shape(), std::move(out), {a, b}, [=](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                an->grad[i] += o->grad[i] * bn->value[i];
                bn->grad[i] += o->grad[i] * an->value[i];
            }
        };
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return detail::make_op(a.shape(), std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o, c]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * c;
        };
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

// --- exact GELU: 0.5 x (1 + erf(x / sqrt(2))) -----------------------------

inline Tensor gelu(const Tensor& a) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return detail::make_op(a.shape(), std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                double x = an->value[i];
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                an->grad[i] += o->grad[i] * (cdf + x * pdf);
            }
        };
    });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    return detail::make_op(a.shape(), std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * o->value[i];
        };
    });
}

// log with the input floored at `floor`; flat (zero) gradient in the
// clamped region.
inline Tensor log(const Tensor& a, double floor = 1e-12) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a.data()[i], floor));
    return detail::make_op(a.shape(), std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o, floor]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                if (an->value[i] > floor) an->grad[i] += o->grad[i] / an->value[i];
        };
    });
}

// --- layer normalization over the last axis, per row ----------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    detail::check_2d(x, "layer_norm");
    std::size_t m = x.shape()[0], n = x.shape()[1];
    if (gain.size() != n || bias.size() != n)
        throw std::invalid_argument("layer_norm: gain/bias length must equal row width " + std::to_string(n));
    std::vector<double> out(m * n), xhat(m * n), inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = x.data().data() + r * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mean) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gain.data()[j] + bias.data()[j];
        }
    }
    return detail::make_op(x.shape(), std::move(out), {x, gain, bias},
                           [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode* o) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        return [xn, gn, bn, o, m, n, xhat, inv_std]() {
            for (std::size_t r = 0; r < m; ++r) {
                const double* dy = o->grad.data() + r * n;
                const double* xh = xhat.data() + r * n;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    double dxhat = dy[j] * gn->value[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xh[j];
                    gn->grad[j] += dy[j] * xh[j];
                    bn->grad[j] += dy[j];
                }
                double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double dxhat = dy[j] * gn->value[j];
                    xn->grad[r * n + j] +=
                        inv_std[r] * (dxhat - inv_n * sum_dxhat - xh[j] * inv_n * sum_dxhat_xhat);
                }
            }
        };
    });
}

// --- embedding lookup: rows of table gathered by id -----------------------

inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
    detail::check_2d(table, "embedding");
    std::size_t v = table.shape()[0], d = table.shape()[1], m = ids.size();
    if (m == 0) throw std::invalid_argument("embedding: empty id list");
    for (std::size_t id : ids)
        if (id >= v) throw std::invalid_argument("embedding: id " + std::to_string(id) + " out of vocabulary");
    std::vector<double> out(m * d);
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(table.data().data() + ids[r] * d, d, out.data() + r * d);
    return detail::make_op({m, d}, std::move(out), {table}, [=](TensorNode* o) {
        auto tn = table.node();
        return [tn, o, ids, d]() {
            for (std::size_t r = 0; r < ids.size(); ++r)
                for (std::size_t j = 0; j < d; ++j)
                    tn->grad[ids[r] * d + j] += o->grad[r * d + j];
        };
    });
}

// --- softmax over the last axis (rows), max-subtracted --------------------

inline void softmax_rows(const double* in, double* out, std::size_t m, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = in + r * n;
        double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (out[r * n + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= z;
    }
}

inline Tensor softmax(const Tensor& logits) {
    if (logits.size() == 0) throw std::invalid_argument("softmax: empty input");
    std::size_t m = logits.shape().size() == 2 ? logits.shape()[0] : 1;
    std::size_t n = logits.size() / m;
    std::vector<double> out(logits.size());
    softmax_rows(logits.data().data(), out.data(), m, n);
    return detail::make_op(logits.shape(), std::move(out), {logits}, [=](TensorNode* o) {
        auto ln = logits.node();
        return [ln, o, m, n]() {
            // dx = (dy - <dy, y>_row) * y
            for (std::size_t r = 0; r < m; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += o->grad[r * n + j] * o->value[r * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    ln->grad[r * n + j] += (o->grad[r * n + j] - dot) * o->value[r * n + j];
            }
        };
    });
}

// --- fused softmax cross-entropy ------------------------------------------

// Per-row -log softmax(logits)[target]; returns [m] losses.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& targets) {
    detail::check_2d(logits, "cross_entropy");
    std::size_t m = logits.shape()[0], n = logits.shape()[1];
    if (targets.size() != m)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(m) + " rows");
    for (std::size_t t : targets)
        if (t >= n) throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " out of range " +
                                                std::to_string(n));
    std::vector<double> probs(m * n), out(m);
    softmax_rows(logits.data().data(), probs.data(), m, n);
    for (std::size_t r = 0; r < m; ++r)
        out[r] = -std::log(std::max(probs[r * n + targets[r]], std::numeric_limits<double>::min()));
    return detail::make_op({m}, std::move(out), {logits},
                           [=, probs = std::move(probs)](TensorNode* o) {
        auto ln = logits.node();
        return [ln, o, targets, probs, m, n]() {
            for (std::size_t r = 0; r < m; ++r) {
                double g = o->grad[r];
                for (std::size_t j = 0; j < n; ++j)
                    ln->grad[r * n + j] += g * (probs[r * n + j] - (j == targets[r] ? 1.0 : 0.0));
            }
        };
    });
}

// Scalar convenience form over a logit vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    if (logits.shape().size() != 1)
        throw std::invalid_argument("cross_entropy: expected logit vector, got " + shape_str(logits.shape()));
    std::size_t n = logits.size();
    if (target >= n)
        throw std::invalid_argument("cross_entropy: target " + std::to_string(target) + " out of range " +
                                    std::to_string(n));
    std::vector<double> probs(n), out(1);
    softmax_rows(logits.data().data(), probs.data(), 1, n);
    out[0] = -std::log(std::max(probs[target], std::numeric_limits<double>::min()));
    return detail::make_op({1}, std::move(out), {logits}, [=, probs = std::move(probs)](TensorNode* o) {
        auto ln = logits.node();
        return [ln, o, target, probs, n]() {
            for (std::size_t j = 0; j < n; ++j)
                ln->grad[j] += o->grad[0] * (probs[j] - (j == target ? 1.0 : 0.0));
        };
    });
}

// --- reductions -----------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    return detail::make_op({1}, {s}, {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o->grad[0];
        };
    });
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// --- concat (axis 0 = stack rows, axis 1 = widen rows) --------------------

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) detail::check_2d(p, "concat");
    std::size_t m = parts[0].shape()[0], n = parts[0].shape()[1];
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (axis == 0 && p.shape()[1] != n)
            throw std::invalid_argument("concat axis 0: column mismatch");
        if (axis == 1 && p.shape()[0] != m)
            throw std::invalid_argument("concat axis 1: row mismatch");
        total += axis == 0 ? p.shape()[0] : p.shape()[1];
    }
    Shape out_shape = axis == 0 ? Shape{total, n} : Shape{m, total};
    std::vector<double> out(numel(out_shape));
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t pm = p.shape()[0], pn = p.shape()[1];
        if (axis == 0) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + off * n);
            off += pm;
        } else {
            for (std::size_t r = 0; r < m; ++r)
                std::copy_n(p.data().data() + r * pn, pn, out.data() + r * total + off);
            off += pn;
        }
    }
    return detail::make_op(out_shape, std::move(out), parts, [=](TensorNode* o) {
        std::vector<std::shared_ptr<TensorNode>> nodes;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(axis == 0 ? p.shape()[0] : p.shape()[1]);
        }
        std::size_t ncols = axis == 0 ? n : total;
        return [nodes, widths, o, axis, m, n, ncols]() {
            std::size_t off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                auto& p = *nodes[k];
                if (axis == 0) {
                    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o->grad[off * n + i];
                    off += widths[k];
                } else {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            p.grad[r * widths[k] + j] += o->grad[r * ncols + off + j];
                    off += widths[k];
                }
            }
        };
    });
}

// --- transpose / slicing --------------------------------------------------

inline Tensor transpose(const Tensor& a) {
    detail::check_2d(a, "transpose");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) out[j * m + r] = a.data()[r * n + j];
    return detail::make_op({n, m}, std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o, m, n]() {
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < n; ++j) an->grad[r * n + j] += o->grad[j * m + r];
        };
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    detail::check_2d(a, "slice_cols");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    if (begin + count > n) throw std::invalid_argument("slice_cols: range out of bounds");
    std::vector<double> out(m * count);
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(a.data().data() + r * n + begin, count, out.data() + r * count);
    return detail::make_op({m, count}, std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o, m, n, begin, count]() {
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < count; ++j)
                    an->grad[r * n + begin + j] += o->grad[r * count + j];
        };
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    detail::check_2d(a, "slice_rows");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    if (begin + count > m) throw std::invalid_argument("slice_rows: range out of bounds");
    std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + (begin + count) * n);
    return detail::make_op({count, n}, std::move(out), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o, n, begin, count]() {
            for (std::size_t i = 0; i < count * n; ++i) an->grad[begin * n + i] += o->grad[i];
        };
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    return detail::make_op(std::move(shape), a.data(), {a}, [=](TensorNode* o) {
        auto an = a.node();
        return [an, o]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
        };
    });
}

}  // namespace ops
}  // namespace vqarat
