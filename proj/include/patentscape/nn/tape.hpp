#pragma once

// Reverse-mode gradient computation over a per-example tape. Every forward
// op appends a node with its value and a closure that routes the output
// gradient to the inputs; backward() replays the closures in reverse
// construction order. Parameters enter as external leaves, so their values
// are read in place and their gradients accumulate into caller-owned sinks
// (one sink per worker keeps batched training reproducible).

#include <cstdint>
#include <functional>
#include <vector>

#include "patentscape/detail/rng.hpp"
#include "patentscape/error.hpp"
#include "patentscape/nn/tensor.hpp"

namespace patentscape::nn {

class Tape {
public:
    using Id = std::size_t;

    Tape() = default;
    // backward closures capture `this`
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Constant leaf; no gradient flows into it.
    Id leaf(Tensor value) {
        return push(std::move(value), /*requires_grad=*/false);
    }

    // External leaf over caller-owned storage. grad_sink may be null for
    // frozen parameters; otherwise it must match value's shape.
    Id external(const Tensor* value, Tensor* grad_sink) {
        if (grad_sink && !value->same_shape(*grad_sink))
            throw InternalError("external leaf: grad sink shape mismatch");
        Node n;
        n.extern_value = value;
        n.extern_grad = grad_sink;
        n.requires_grad = grad_sink != nullptr;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    const Tensor& value(Id id) const {
        const Node& n = nodes_[id];
        return n.extern_value ? *n.extern_value : n.value;
    }

    // Gradient of an owned node (valid after backward()).
    const Tensor& grad(Id id) const { return nodes_[id].grad; }

    Id matmul(Id a, Id b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols != B.rows)
            throw InternalError("matmul: inner dimensions " + A.shape_str() + " vs " +
                                B.shape_str());
        Tensor C(A.rows, B.cols);
        matmul_into(A, B, C);
        Id out = push(std::move(C), needs(a) || needs(b));
        set_backward(out, [this, a, b, out] {
            const Tensor& A = value(a);
            const Tensor& B = value(b);
            const Tensor& dC = nodes_[out].grad;
            if (needs(a)) {  // dA += dC . B^T
                Tensor* dA = grad_target(a);
                for (std::size_t i = 0; i < A.rows; ++i) {
                    const double* dc = dC.row_ptr(i);
                    double* da = dA->row_ptr(i);
                    for (std::size_t j = 0; j < B.cols; ++j) {
                        const double d = dc[j];
                        if (d == 0.0) continue;
                        const double* brow = B.row_ptr(0) + j;  // column j of B
                        for (std::size_t k = 0; k < A.cols; ++k) da[k] += d * brow[k * B.cols];
                    }
                }
            }
            if (needs(b)) {  // dB += A^T . dC
                Tensor* dB = grad_target(b);
                for (std::size_t k = 0; k < A.rows; ++k) {
                    const double* arow = A.row_ptr(k);
                    const double* dc = dC.row_ptr(k);
                    for (std::size_t i = 0; i < A.cols; ++i) {
                        const double av = arow[i];
                        if (av == 0.0) continue;
                        double* db = dB->row_ptr(i);
                        for (std::size_t j = 0; j < B.cols; ++j) db[j] += av * dc[j];
                    }
                }
            }
        });
        return out;
    }

    Id add(Id a, Id b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        check_same_shape(A, B, "add");
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        Id out = push(std::move(C), needs(a) || needs(b));
        set_backward(out, [this, a, b, out] {
            const Tensor& dC = nodes_[out].grad;
            if (needs(a)) accumulate(a, dC);
            if (needs(b)) accumulate(b, dC);
        });
        return out;
    }

    // [m x n] + broadcast [1 x n]
    Id add_bias(Id a, Id bias) {
        const Tensor& A = value(a);
        const Tensor& B = value(bias);
        if (B.rows != 1 || B.cols != A.cols)
            throw InternalError("add_bias: bias " + B.shape_str() + " for " + A.shape_str());
        Tensor C = A;
        for (std::size_t i = 0; i < A.rows; ++i) {
            double* crow = C.row_ptr(i);
            for (std::size_t j = 0; j < A.cols; ++j) crow[j] += B.data[j];
        }
        Id out = push(std::move(C), needs(a) || needs(bias));
        set_backward(out, [this, a, bias, out] {
            const Tensor& dC = nodes_[out].grad;
            if (needs(a)) accumulate(a, dC);
            if (needs(bias)) {
                Tensor* dB = grad_target(bias);
                for (std::size_t i = 0; i < dC.rows; ++i) {
                    const double* drow = dC.row_ptr(i);
                    for (std::size_t j = 0; j < dC.cols; ++j) dB->data[j] += drow[j];
                }
            }
        });
        return out;
    }

    Id scale(Id a, double s) {
        Tensor C = value(a);
        for (auto& x : C.data) x *= s;
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, s, out] {
            if (!needs(a)) return;
            Tensor* dA = grad_target(a);
            const Tensor& dC = nodes_[out].grad;
            for (std::size_t i = 0; i < dC.size(); ++i) dA->data[i] += s * dC.data[i];
        });
        return out;
    }

    Id relu(Id a) {
        Tensor C = value(a);
        for (auto& x : C.data) x = x > 0.0 ? x : 0.0;
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out] {
            if (!needs(a)) return;
            const Tensor& A = value(a);
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < dC.size(); ++i)
                if (A.data[i] > 0.0) dA->data[i] += dC.data[i];
        });
        return out;
    }

    Id sigmoid(Id a) {
        Tensor C = value(a);
        for (auto& x : C.data) x = 1.0 / (1.0 + std::exp(-x));
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out] {
            if (!needs(a)) return;
            const Tensor& Y = nodes_[out].value;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < dC.size(); ++i)
                dA->data[i] += dC.data[i] * Y.data[i] * (1.0 - Y.data[i]);
        });
        return out;
    }

    // Row softmax over attendable columns; masked columns get probability
    // exactly zero. attendable may be empty (all columns attendable), and
    // must contain at least one true entry otherwise.
    Id softmax_rows(Id a, std::vector<std::uint8_t> attendable = {}) {
        const Tensor& A = value(a);
        if (!attendable.empty() && attendable.size() != A.cols)
            throw InternalError("softmax_rows: mask length mismatch");
        if (!attendable.empty() &&
            std::find(attendable.begin(), attendable.end(), std::uint8_t(1)) == attendable.end())
            throw InternalError("softmax_rows: mask excludes every column");
        Tensor C(A.rows, A.cols);
        auto on = [&attendable](std::size_t j) {
            return attendable.empty() || attendable[j] != 0;
        };
        for (std::size_t i = 0; i < A.rows; ++i) {
            const double* arow = A.row_ptr(i);
            double* crow = C.row_ptr(i);
            double max_v = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < A.cols; ++j)
                if (on(j)) max_v = std::max(max_v, arow[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < A.cols; ++j) {
                crow[j] = on(j) ? std::exp(arow[j] - max_v) : 0.0;
                denom += crow[j];
            }
            for (std::size_t j = 0; j < A.cols; ++j) crow[j] /= denom;
        }
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out, attendable = std::move(attendable)] {
            if (!needs(a)) return;
            const Tensor& Y = nodes_[out].value;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < Y.rows; ++i) {
                const double* y = Y.row_ptr(i);
                const double* dy = dC.row_ptr(i);
                double* da = dA->row_ptr(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < Y.cols; ++j) dot += dy[j] * y[j];
                for (std::size_t j = 0; j < Y.cols; ++j) {
                    if (!attendable.empty() && attendable[j] == 0) continue;
                    da[j] += y[j] * (dy[j] - dot);
                }
            }
        });
        return out;
    }

    // Row-wise layer normalization with scale gamma and shift beta (both [1 x n]).
    Id layer_norm(Id a, Id gamma, Id beta, double eps) {
        const Tensor& A = value(a);
        const Tensor& G = value(gamma);
        const Tensor& B = value(beta);
        if (G.rows != 1 || G.cols != A.cols || B.rows != 1 || B.cols != A.cols)
            throw InternalError("layer_norm: scale/shift shape mismatch");
        const std::size_t n = A.cols;
        Tensor C(A.rows, n);
        Tensor xhat(A.rows, n);       // kept for backward
        Tensor inv_std(A.rows, 1);
        for (std::size_t i = 0; i < A.rows; ++i) {
            const double* x = A.row_ptr(i);
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += x[j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std.data[i] = inv;
            double* xh = xhat.row_ptr(i);
            double* c = C.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) {
                xh[j] = (x[j] - mean) * inv;
                c[j] = G.data[j] * xh[j] + B.data[j];
            }
        }
        Id out = push(std::move(C), needs(a) || needs(gamma) || needs(beta));
        set_backward(out, [this, a, gamma, beta, out, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)] {
            const Tensor& G = value(gamma);
            const Tensor& dC = nodes_[out].grad;
            const std::size_t n = dC.cols;
            if (needs(gamma) || needs(beta)) {
                Tensor* dG = needs(gamma) ? grad_target(gamma) : nullptr;
                Tensor* dB = needs(beta) ? grad_target(beta) : nullptr;
                for (std::size_t i = 0; i < dC.rows; ++i) {
                    const double* dy = dC.row_ptr(i);
                    const double* xh = xhat.row_ptr(i);
                    for (std::size_t j = 0; j < n; ++j) {
                        if (dG) dG->data[j] += dy[j] * xh[j];
                        if (dB) dB->data[j] += dy[j];
                    }
                }
            }
            if (needs(a)) {
                Tensor* dA = grad_target(a);
                for (std::size_t i = 0; i < dC.rows; ++i) {
                    const double* dy = dC.row_ptr(i);
                    const double* xh = xhat.row_ptr(i);
                    double* da = dA->row_ptr(i);
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = dy[j] * G.data[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                    }
                    mean_dxhat /= static_cast<double>(n);
                    mean_dxhat_xhat /= static_cast<double>(n);
                    const double inv = inv_std.data[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = dy[j] * G.data[j];
                        da[j] += inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
            }
        });
        return out;
    }

    Id transpose(Id a) {
        const Tensor& A = value(a);
        Tensor C(A.cols, A.rows);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = 0; j < A.cols; ++j) C.at(j, i) = A.at(i, j);
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out] {
            if (!needs(a)) return;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < dC.rows; ++i)
                for (std::size_t j = 0; j < dC.cols; ++j) dA->at(j, i) += dC.at(i, j);
        });
        return out;
    }

    Id slice_cols(Id a, std::size_t begin, std::size_t end) {
        const Tensor& A = value(a);
        if (begin >= end || end > A.cols) throw InternalError("slice_cols: bad range");
        Tensor C(A.rows, end - begin);
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t j = begin; j < end; ++j) C.at(i, j - begin) = A.at(i, j);
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out, begin] {
            if (!needs(a)) return;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < dC.rows; ++i)
                for (std::size_t j = 0; j < dC.cols; ++j) dA->at(i, begin + j) += dC.at(i, j);
        });
        return out;
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw InternalError("concat_cols: no inputs");
        const std::size_t rows = value(parts[0]).rows;
        std::size_t cols = 0;
        bool any_grad = false;
        for (Id p : parts) {
            if (value(p).rows != rows) throw InternalError("concat_cols: row mismatch");
            cols += value(p).cols;
            any_grad = any_grad || needs(p);
        }
        Tensor C(rows, cols);
        std::size_t offset = 0;
        for (Id p : parts) {
            const Tensor& P = value(p);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < P.cols; ++j) C.at(i, offset + j) = P.at(i, j);
            offset += P.cols;
        }
        Id out = push(std::move(C), any_grad);
        set_backward(out, [this, parts, out] {
            const Tensor& dC = nodes_[out].grad;
            std::size_t offset = 0;
            for (Id p : parts) {
                const Tensor& P = value(p);
                if (needs(p)) {
                    Tensor* dP = grad_target(p);
                    for (std::size_t i = 0; i < dC.rows; ++i)
                        for (std::size_t j = 0; j < P.cols; ++j)
                            dP->at(i, j) += dC.at(i, offset + j);
                }
                offset += P.cols;
            }
        });
        return out;
    }

    // Embedding lookup: rows of `table` selected by id. Backward
    // scatter-adds into the corresponding rows of the gradient sink.
    Id gather_rows(Id table, std::vector<std::uint32_t> ids) {
        const Tensor& T = value(table);
        Tensor C(ids.size(), T.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= T.rows) throw InternalError("gather_rows: id out of range");
            std::copy_n(T.row_ptr(ids[i]), T.cols, C.row_ptr(i));
        }
        Id out = push(std::move(C), needs(table));
        set_backward(out, [this, table, out, ids = std::move(ids)] {
            if (!needs(table)) return;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dT = grad_target(table);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double* src = dC.row_ptr(i);
                double* dst = dT->row_ptr(ids[i]);
                for (std::size_t j = 0; j < dC.cols; ++j) dst[j] += src[j];
            }
        });
        return out;
    }

    Id row(Id a, std::size_t r) {
        const Tensor& A = value(a);
        if (r >= A.rows) throw InternalError("row: index out of range");
        Tensor C(1, A.cols);
        std::copy_n(A.row_ptr(r), A.cols, C.data.data());
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out, r] {
            if (!needs(a)) return;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t j = 0; j < dC.cols; ++j) dA->at(r, j) += dC.data[j];
        });
        return out;
    }

    // Inverted dropout; a no-op when rate == 0.
    Id dropout(Id a, double rate, detail::Rng& rng) {
        if (rate <= 0.0) return a;
        if (rate >= 1.0) throw InternalError("dropout rate must be < 1");
        const Tensor& A = value(a);
        Tensor mask(A.rows, A.cols);
        const double keep_scale = 1.0 / (1.0 - rate);
        for (auto& m : mask.data) m = rng.real() >= rate ? keep_scale : 0.0;
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= mask.data[i];
        Id out = push(std::move(C), needs(a));
        set_backward(out, [this, a, out, mask = std::move(mask)] {
            if (!needs(a)) return;
            const Tensor& dC = nodes_[out].grad;
            Tensor* dA = grad_target(a);
            for (std::size_t i = 0; i < dC.size(); ++i) dA->data[i] += dC.data[i] * mask.data[i];
        });
        return out;
    }

    // Binary cross-entropy of a [1 x 1] probability against label y, with
    // the probability clamped to [eps, 1 - eps]. pos_weight scales the
    // positive-class term (1.0 = plain BCE).
    Id bce_loss(Id p, double y, double eps = 1e-7, double pos_weight = 1.0) {
        const Tensor& P = value(p);
        if (P.rows != 1 || P.cols != 1) throw InternalError("bce_loss expects a [1x1] probability");
        const double raw = P.data[0];
        const double clamped = std::min(std::max(raw, eps), 1.0 - eps);
        Tensor C(1, 1);
        C.data[0] = -(pos_weight * y * std::log(clamped) + (1.0 - y) * std::log(1.0 - clamped));
        Id out = push(std::move(C), needs(p));
        set_backward(out, [this, p, out, y, eps, pos_weight] {
            if (!needs(p)) return;
            const double raw = value(p).data[0];
            if (raw < eps || raw > 1.0 - eps) return;  // clamped: zero slope
            const double d = -pos_weight * y / raw + (1.0 - y) / (1.0 - raw);
            grad_target(p)->data[0] += nodes_[out].grad.data[0] * d;
        });
        return out;
    }

    // Seeds the loss gradient and propagates in reverse construction order.
    void backward(Id loss, double seed = 1.0) {
        if (nodes_[loss].extern_value) throw InternalError("backward on an external leaf");
        if (!nodes_[loss].requires_grad)
            throw InternalError("backward on a node with no gradient path");
        for (auto& n : nodes_) {
            if (n.requires_grad && !n.extern_value) {
                n.grad.rows = n.value.rows;
                n.grad.cols = n.value.cols;
                n.grad.data.assign(n.value.size(), 0.0);
            }
        }
        nodes_[loss].grad.data[0] = seed;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backward_fn && nodes_[i].requires_grad) nodes_[i].backward_fn();
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        const Tensor* extern_value = nullptr;
        Tensor* extern_grad = nullptr;
        bool requires_grad = false;
        std::function<void()> backward_fn;
    };

    static void matmul_into(const Tensor& A, const Tensor& B, Tensor& C) {
        // (i, k, j) ordering: the inner loop walks rows of B and C contiguously
        for (std::size_t i = 0; i < A.rows; ++i) {
            double* crow = C.row_ptr(i);
            const double* arow = A.row_ptr(i);
            for (std::size_t k = 0; k < A.cols; ++k) {
                const double av = arow[k];
                if (av == 0.0) continue;
                const double* brow = B.row_ptr(k);
                for (std::size_t j = 0; j < B.cols; ++j) crow[j] += av * brow[j];
            }
        }
    }

    Id push(Tensor value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void set_backward(Id id, std::function<void()> fn) {
        if (nodes_[id].requires_grad) nodes_[id].backward_fn = std::move(fn);
    }

    bool needs(Id id) const { return nodes_[id].requires_grad; }

    Tensor* grad_target(Id id) {
        Node& n = nodes_[id];
        return n.extern_grad ? n.extern_grad : &n.grad;
    }

    void accumulate(Id id, const Tensor& delta) {
        Tensor* g = grad_target(id);
        for (std::size_t i = 0; i < delta.size(); ++i) g->data[i] += delta.data[i];
    }

    std::vector<Node> nodes_;
};

}  // namespace patentscape::nn
