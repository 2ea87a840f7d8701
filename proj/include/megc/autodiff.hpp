#pragma once

// Reverse-mode autodiff over NCHW tensors: define-by-run graph with a
// linear tape, direct convolutions, bilinear resize, channel concat and
// the loss heads needed by the MEGC objective. No normalization layers
// anywhere, so per-sample results are independent of batch composition.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "megc/tensor.hpp"

namespace megc::ad {

// Deterministic helper: partitions [0,n) into contiguous chunks, one per
// worker, each writing a disjoint output range. Bitwise-identical to the
// serial loop for any worker count.
inline void parallel_for(int n, const std::function<void(int, int)>& body) {
    static const int workers = []() {
        unsigned hc = std::thread::hardware_concurrency();
        return static_cast<int>(hc == 0 ? 1 : std::min(hc, 4u));
    }();
    if (workers <= 1 || n < 2) {
        body(0, n);
        return;
    }
    const int k = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(k));
    const int chunk = (n + k - 1) / k;
    for (int t = 0; t < k; ++t) {
        int lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

// A named trainable tensor plus its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter(std::string n, Tensor<T> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct Node;

template <typename T>
using Value = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;  // set on parameter leaves
    std::vector<Value<T>> parents;
    std::function<void(Node<T>&)> backprop;  // adds into parents' grads

    void ensure_grad() {
        if (grad.shape() != val.shape()) grad = Tensor<T>(val.shape());
    }
};

template <typename T>
class Graph {
public:
    Value<T> constant(Tensor<T> v) {
        auto node = std::make_shared<Node<T>>();
        node->val = std::move(v);
        tape_.push_back(node);
        return node;
    }

    Value<T> input(Tensor<T> v, bool requires_grad = false) {
        auto node = std::make_shared<Node<T>>();
        node->val = std::move(v);
        node->requires_grad = requires_grad;
        if (requires_grad) node->ensure_grad();
        tape_.push_back(node);
        return node;
    }

    Value<T> param(Parameter<T>& p) {
        auto node = std::make_shared<Node<T>>();
        node->val = p.value;
        node->requires_grad = p.trainable;
        node->param = &p;
        if (node->requires_grad) node->ensure_grad();
        tape_.push_back(node);
        return node;
    }

    Value<T> make(Tensor<T> v, std::vector<Value<T>> parents,
                  std::function<void(Node<T>&)> backprop) {
        auto node = std::make_shared<Node<T>>();
        node->val = std::move(v);
        for (const auto& p : parents) node->requires_grad |= p->requires_grad;
        if (node->requires_grad) {
            node->parents = std::move(parents);
            node->backprop = std::move(backprop);
            node->ensure_grad();
        }
        tape_.push_back(node);
        return node;
    }

    // Backpropagates from a scalar loss, then flushes leaf gradients into
    // their Parameters.
    void backward(const Value<T>& loss) {
        require(loss->val.size() == 1, ErrorCategory::shape, "backward needs a scalar loss");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.requires_grad && n.backprop) n.backprop(n);
        }
        for (const auto& node : tape_) {
            if (node->param && node->param->trainable) node->param->grad.add_(node->grad);
        }
    }

    std::size_t size() const { return tape_.size(); }

private:
    std::vector<Value<T>> tape_;
};

namespace op {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Output range [o0, o1) for one kernel tap such that o*stride - pad + k
// stays inside [0, in). Keeps the hot loops branch-free. Mind the floor
// semantics: the upper bound numerator can go negative on 1x1 inputs.
inline void tap_range(int in, int out, int stride, int pad, int k, int& o0, int& o1) {
    const int lo = pad - k;  // need o*stride >= lo
    o0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    const int hi = in - 1 - k + pad;  // need o*stride <= hi
    o1 = hi < 0 ? 0 : std::min(out, hi / stride + 1);
    if (o1 < o0) o1 = o0;
}

// Scratch layout descriptor for one im2col'ed sample: rows are kernel taps
// (k = (j*kh + ky)*kw + kx), columns are output positions (p = oy*ow + ox).
struct ConvDims {
    int ic, oc, kh, kw, ih, iw, oh, ow, stride, pad;
    int K() const { return ic * kh * kw; }
    int P() const { return oh * ow; }
};

inline constexpr std::size_t kGemmChunk = 1024;  // p-chunk kept L1-resident

// OUT[m][p] = init[m] + sum_k A[m][k] * B[k][p] for m in [m_lo, m_hi).
// Eight rows per pass, accumulators chunked so they stay in L1 while the
// k loop streams B.
template <typename T>
void gemm_axpy_rows(int m_lo, int m_hi, std::size_t K, std::size_t P, const T* A, std::size_t lda,
                    const T* B, const T* init, T* OUT) {
    T acc[8][kGemmChunk];
    int m = m_lo;
    for (; m + 8 <= m_hi; m += 8) {
        for (std::size_t pc = 0; pc < P; pc += kGemmChunk) {
            const std::size_t len = std::min(kGemmChunk, P - pc);
            for (int b = 0; b < 8; ++b)
                std::fill(acc[b], acc[b] + len, init ? init[static_cast<std::size_t>(m + b)] : T(0));
            for (std::size_t k = 0; k < K; ++k) {
                const T* bp = B + k * P + pc;
                const T v0 = A[static_cast<std::size_t>(m + 0) * lda + k];
                const T v1 = A[static_cast<std::size_t>(m + 1) * lda + k];
                const T v2 = A[static_cast<std::size_t>(m + 2) * lda + k];
                const T v3 = A[static_cast<std::size_t>(m + 3) * lda + k];
                const T v4 = A[static_cast<std::size_t>(m + 4) * lda + k];
                const T v5 = A[static_cast<std::size_t>(m + 5) * lda + k];
                const T v6 = A[static_cast<std::size_t>(m + 6) * lda + k];
                const T v7 = A[static_cast<std::size_t>(m + 7) * lda + k];
                for (std::size_t p = 0; p < len; ++p) {
                    const T c = bp[p];
                    acc[0][p] += v0 * c;
                    acc[1][p] += v1 * c;
                    acc[2][p] += v2 * c;
                    acc[3][p] += v3 * c;
                    acc[4][p] += v4 * c;
                    acc[5][p] += v5 * c;
                    acc[6][p] += v6 * c;
                    acc[7][p] += v7 * c;
                }
            }
            for (int b = 0; b < 8; ++b)
                std::copy(acc[b], acc[b] + len, OUT + static_cast<std::size_t>(m + b) * P + pc);
        }
    }
    for (; m < m_hi; ++m) {
        T* orow = OUT + static_cast<std::size_t>(m) * P;
        std::fill(orow, orow + P, init ? init[static_cast<std::size_t>(m)] : T(0));
        for (std::size_t k = 0; k < K; ++k) {
            const T v = A[static_cast<std::size_t>(m) * lda + k];
            const T* bp = B + k * P;
            for (std::size_t p = 0; p < P; ++p) orow[p] += v * bp[p];
        }
    }
}

// OUT[m][n] += sum_p A[m][p] * B[n][p] for m in [m_lo, m_hi). Eight A rows
// per pass; B is streamed chunk by chunk while the A chunks stay hot.
template <typename T>
void gemm_dot_rows(int m_lo, int m_hi, std::size_t N, std::size_t P, const T* A, const T* B,
                   T* OUT, std::size_t ldo) {
    int m = m_lo;
    std::vector<T> local(8 * N);
    for (; m + 8 <= m_hi; m += 8) {
        std::fill(local.begin(), local.end(), T(0));
        for (std::size_t pc = 0; pc < P; pc += kGemmChunk) {
            const std::size_t len = std::min(kGemmChunk, P - pc);
            const T* a0 = A + static_cast<std::size_t>(m + 0) * P + pc;
            const T* a1 = A + static_cast<std::size_t>(m + 1) * P + pc;
            const T* a2 = A + static_cast<std::size_t>(m + 2) * P + pc;
            const T* a3 = A + static_cast<std::size_t>(m + 3) * P + pc;
            const T* a4 = A + static_cast<std::size_t>(m + 4) * P + pc;
            const T* a5 = A + static_cast<std::size_t>(m + 5) * P + pc;
            const T* a6 = A + static_cast<std::size_t>(m + 6) * P + pc;
            const T* a7 = A + static_cast<std::size_t>(m + 7) * P + pc;
            for (std::size_t n = 0; n < N; ++n) {
                const T* bp = B + n * P + pc;
                T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
                T s4 = T(0), s5 = T(0), s6 = T(0), s7 = T(0);
                for (std::size_t p = 0; p < len; ++p) {
                    const T c = bp[p];
                    s0 += a0[p] * c;
                    s1 += a1[p] * c;
                    s2 += a2[p] * c;
                    s3 += a3[p] * c;
                    s4 += a4[p] * c;
                    s5 += a5[p] * c;
                    s6 += a6[p] * c;
                    s7 += a7[p] * c;
                }
                local[0 * N + n] += s0;
                local[1 * N + n] += s1;
                local[2 * N + n] += s2;
                local[3 * N + n] += s3;
                local[4 * N + n] += s4;
                local[5 * N + n] += s5;
                local[6 * N + n] += s6;
                local[7 * N + n] += s7;
            }
        }
        for (int b = 0; b < 8; ++b)
            for (std::size_t n = 0; n < N; ++n)
                OUT[static_cast<std::size_t>(m + b) * ldo + n] += local[static_cast<std::size_t>(b) * N + n];
    }
    for (; m < m_hi; ++m) {
        const T* arow = A + static_cast<std::size_t>(m) * P;
        for (std::size_t n = 0; n < N; ++n) {
            const T* bp = B + n * P;
            T s = T(0);
            for (std::size_t p = 0; p < P; ++p) s += arow[p] * bp[p];
            OUT[static_cast<std::size_t>(m) * ldo + n] += s;
        }
    }
}

template <typename T>
void im2col(const ConvDims& d, const T* input_planes, T* col) {
    const std::size_t P = static_cast<std::size_t>(d.P());
    std::fill(col, col + static_cast<std::size_t>(d.K()) * P, T(0));
    for (int j = 0; j < d.ic; ++j) {
        const T* ip = input_planes + static_cast<std::size_t>(j) * d.ih * d.iw;
        for (int ky = 0; ky < d.kh; ++ky) {
            int oy0, oy1;
            tap_range(d.ih, d.oh, d.stride, d.pad, ky, oy0, oy1);
            for (int kx = 0; kx < d.kw; ++kx) {
                int ox0, ox1;
                tap_range(d.iw, d.ow, d.stride, d.pad, kx, ox0, ox1);
                T* dst = col + (static_cast<std::size_t>(j) * d.kh * d.kw +
                                static_cast<std::size_t>(ky) * d.kw + kx) * P;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const T* irow =
                        ip + static_cast<std::size_t>(oy * d.stride - d.pad + ky) * d.iw - d.pad + kx;
                    T* drow = dst + static_cast<std::size_t>(oy) * d.ow;
                    if (d.stride == 1)
                        std::copy(irow + ox0, irow + ox1, drow + ox0);
                    else
                        for (int ox = ox0; ox < ox1; ++ox) drow[ox] = irow[ox * d.stride];
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds col rows back into input gradients.
// Partitioned by input channel, so taps never race across workers.
template <typename T>
void col2im_add(const ConvDims& d, const T* col, T* grad_planes) {
    const std::size_t P = static_cast<std::size_t>(d.P());
    parallel_for(d.ic, [&](int j_lo, int j_hi) {
        for (int j = j_lo; j < j_hi; ++j) {
            T* xp = grad_planes + static_cast<std::size_t>(j) * d.ih * d.iw;
            for (int ky = 0; ky < d.kh; ++ky) {
                int oy0, oy1;
                tap_range(d.ih, d.oh, d.stride, d.pad, ky, oy0, oy1);
                for (int kx = 0; kx < d.kw; ++kx) {
                    int ox0, ox1;
                    tap_range(d.iw, d.ow, d.stride, d.pad, kx, ox0, ox1);
                    const T* src = col + (static_cast<std::size_t>(j) * d.kh * d.kw +
                                          static_cast<std::size_t>(ky) * d.kw + kx) * P;
                    for (int oy = oy0; oy < oy1; ++oy) {
                        T* xrow = xp + static_cast<std::size_t>(oy * d.stride - d.pad + ky) * d.iw -
                                  d.pad + kx;
                        const T* srow = src + static_cast<std::size_t>(oy) * d.ow;
                        if (d.stride == 1)
                            for (int ox = ox0; ox < ox1; ++ox) xrow[ox] += srow[ox];
                        else
                            for (int ox = ox0; ox < ox1; ++ox) xrow[ox * d.stride] += srow[ox];
                    }
                }
            }
        }
    });
}

// 2-D convolution, square kernels, zero padding. Weight layout
// (oc, ic, kh, kw), bias (oc). Lowered to im2col + dense row operations so
// the hot loops stream contiguously.
template <typename T>
Value<T> conv2d(Graph<T>& g, const Value<T>& x, const Value<T>& weight, const Value<T>& bias,
                int stride, int pad) {
    const Tensor<T>& in = x->val;
    const Tensor<T>& w = weight->val;
    const Tensor<T>& b = bias->val;
    const int oc = w.n(), ic = w.c(), kh = w.h(), kw = w.w();
    require(in.c() == ic, ErrorCategory::shape,
            concat("conv2d: input channels ", in.c(), " != weight channels ", ic));
    require(b.size() == static_cast<std::size_t>(oc), ErrorCategory::shape, "conv2d: bias size mismatch");
    const int oh = (in.h() + 2 * pad - kh) / stride + 1;
    const int ow = (in.w() + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, ErrorCategory::shape, "conv2d: output would be empty");

    const ConvDims dims{ic, oc, kh, kw, in.h(), in.w(), oh, ow, stride, pad};
    const std::size_t K = static_cast<std::size_t>(dims.K());
    const std::size_t P = static_cast<std::size_t>(dims.P());

    // Keep the lowered inputs around for the backward pass.
    auto cols = std::make_shared<std::vector<std::vector<T>>>(static_cast<std::size_t>(in.n()));
    Tensor<T> out(in.n(), oc, oh, ow);
    for (int i = 0; i < in.n(); ++i) {
        auto& col = (*cols)[static_cast<std::size_t>(i)];
        col.resize(K * P);
        im2col(dims, in.plane(i, 0), col.data());
        parallel_for(oc, [&](int o_lo, int o_hi) {
            gemm_axpy_rows(o_lo, o_hi, K, P, w.data(), K, col.data(), b.data(), out.plane(i, 0));
        });
    }

    const bool keep_cols = x->requires_grad || weight->requires_grad;
    if (!keep_cols) cols->clear();

    return g.make(std::move(out), {x, weight, bias}, [x, weight, bias, dims, cols](Node<T>& n) {
        const Tensor<T>& gout = n.grad;
        const Tensor<T>& w2 = weight->val;
        const std::size_t K = static_cast<std::size_t>(dims.K());
        const std::size_t P = static_cast<std::size_t>(dims.P());

        if (bias->requires_grad) {
            for (int o = 0; o < dims.oc; ++o) {
                T acc = T(0);
                for (int i = 0; i < gout.n(); ++i) {
                    const T* gp = gout.plane(i, o);
                    for (std::size_t p = 0; p < P; ++p) acc += gp[p];
                }
                bias->grad[static_cast<std::size_t>(o)] += acc;
            }
        }
        if (weight->requires_grad) {
            parallel_for(dims.oc, [&](int o_lo, int o_hi) {
                for (int i = 0; i < gout.n(); ++i)
                    gemm_dot_rows(o_lo, o_hi, K, P, gout.plane(i, 0),
                                  (*cols)[static_cast<std::size_t>(i)].data(), weight->grad.data(), K);
            });
        }
        if (x->requires_grad) {
            // Transposed weights so dcol rows index k contiguously.
            std::vector<T> wt(K * static_cast<std::size_t>(dims.oc));
            for (int o = 0; o < dims.oc; ++o)
                for (std::size_t k = 0; k < K; ++k)
                    wt[k * static_cast<std::size_t>(dims.oc) + static_cast<std::size_t>(o)] =
                        w2.plane(o, 0)[k];
            std::vector<T> dcol(K * P);
            for (int i = 0; i < gout.n(); ++i) {
                parallel_for(static_cast<int>(K), [&](int k_lo, int k_hi) {
                    gemm_axpy_rows(k_lo, k_hi, static_cast<std::size_t>(dims.oc), P, wt.data(),
                                   static_cast<std::size_t>(dims.oc), gout.plane(i, 0),
                                   static_cast<const T*>(nullptr), dcol.data());
                });
                col2im_add(dims, dcol.data(), x->grad.plane(i, 0));
            }
        }
    });
}

template <typename T>
Value<T> relu(Graph<T>& g, const Value<T>& x) {
    Tensor<T> out = x->val;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < T(0)) out[i] = T(0);
    return g.make(std::move(out), {x}, [x](Node<T>& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (x->val[i] > T(0)) x->grad[i] += n.grad[i];
    });
}

template <typename T>
Value<T> sigmoid(Graph<T>& g, const Value<T>& x) {
    Tensor<T> out = x->val;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(out[i]);
        out[i] = static_cast<T>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                         : std::exp(v) / (1.0 + std::exp(v)));
    }
    return g.make(std::move(out), {x}, [x](Node<T>& n) {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const T s = n.val[i];
            x->grad[i] += n.grad[i] * s * (T(1) - s);
        }
    });
}

// Precomputed 1-D interpolation taps (half-pixel-center convention).
struct ResizeTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline ResizeTaps resize_taps(int in, int out) {
    ResizeTaps t;
    t.lo.resize(static_cast<std::size_t>(out));
    t.hi.resize(static_cast<std::size_t>(out));
    t.frac.resize(static_cast<std::size_t>(out));
    const double s = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double f = (o + 0.5) * s - 0.5;
        int i0 = static_cast<int>(std::floor(f));
        t.frac[static_cast<std::size_t>(o)] = f - i0;
        t.lo[static_cast<std::size_t>(o)] = std::clamp(i0, 0, in - 1);
        t.hi[static_cast<std::size_t>(o)] = std::clamp(i0 + 1, 0, in - 1);
    }
    return t;
}

template <typename T>
Value<T> bilinear_resize(Graph<T>& g, const Value<T>& x, int out_h, int out_w) {
    const Tensor<T>& in = x->val;
    if (in.h() == out_h && in.w() == out_w) return x;
    auto ty = std::make_shared<ResizeTaps>(resize_taps(in.h(), out_h));
    auto tx = std::make_shared<ResizeTaps>(resize_taps(in.w(), out_w));
    Tensor<T> out(in.n(), in.c(), out_h, out_w);
    for (int i = 0; i < in.n(); ++i)
        for (int j = 0; j < in.c(); ++j) {
            const T* ip = in.plane(i, j);
            T* op_ = out.plane(i, j);
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ty->lo[static_cast<std::size_t>(oy)], y1 = ty->hi[static_cast<std::size_t>(oy)];
                const double fy = ty->frac[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = tx->lo[static_cast<std::size_t>(ox)], x1 = tx->hi[static_cast<std::size_t>(ox)];
                    const double fx = tx->frac[static_cast<std::size_t>(ox)];
                    const double v00 = ip[static_cast<std::size_t>(y0) * in.w() + x0];
                    const double v01 = ip[static_cast<std::size_t>(y0) * in.w() + x1];
                    const double v10 = ip[static_cast<std::size_t>(y1) * in.w() + x0];
                    const double v11 = ip[static_cast<std::size_t>(y1) * in.w() + x1];
                    op_[static_cast<std::size_t>(oy) * out_w + ox] =
                        static_cast<T>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                                       (v10 * (1 - fx) + v11 * fx) * fy);
                }
            }
        }
    return g.make(std::move(out), {x}, [x, ty, tx, out_h, out_w](Node<T>& n) {
        if (!x->requires_grad) return;
        const int iw = x->val.w();
        for (int i = 0; i < x->val.n(); ++i)
            for (int j = 0; j < x->val.c(); ++j) {
                T* xg = x->grad.plane(i, j);
                const T* gp = n.grad.plane(i, j);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ty->lo[static_cast<std::size_t>(oy)], y1 = ty->hi[static_cast<std::size_t>(oy)];
                    const double fy = ty->frac[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int x0 = tx->lo[static_cast<std::size_t>(ox)], x1 = tx->hi[static_cast<std::size_t>(ox)];
                        const double fx = tx->frac[static_cast<std::size_t>(ox)];
                        const double gv = gp[static_cast<std::size_t>(oy) * out_w + ox];
                        xg[static_cast<std::size_t>(y0) * iw + x0] += static_cast<T>(gv * (1 - fx) * (1 - fy));
                        xg[static_cast<std::size_t>(y0) * iw + x1] += static_cast<T>(gv * fx * (1 - fy));
                        xg[static_cast<std::size_t>(y1) * iw + x0] += static_cast<T>(gv * (1 - fx) * fy);
                        xg[static_cast<std::size_t>(y1) * iw + x1] += static_cast<T>(gv * fx * fy);
                    }
                }
            }
    });
}

template <typename T>
Value<T> concat_channels(Graph<T>& g, const std::vector<Value<T>>& xs) {
    require(!xs.empty(), ErrorCategory::shape, "concat of zero tensors");
    const int n = xs[0]->val.n(), h = xs[0]->val.h(), w = xs[0]->val.w();
    int c = 0;
    for (const auto& x : xs) {
        require(x->val.n() == n && x->val.h() == h && x->val.w() == w, ErrorCategory::shape,
                "concat_channels: spatial/batch mismatch");
        c += x->val.c();
    }
    Tensor<T> out(n, c, h, w);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        int off = 0;
        for (const auto& x : xs) {
            for (int j = 0; j < x->val.c(); ++j)
                std::copy(x->val.plane(i, j), x->val.plane(i, j) + hw, out.plane(i, off + j));
            off += x->val.c();
        }
    }
    return g.make(std::move(out), xs, [xs, hw](Node<T>& n2) {
        for (int i = 0; i < n2.val.n(); ++i) {
            int off = 0;
            for (const auto& x : xs) {
                if (x->requires_grad)
                    for (int j = 0; j < x->val.c(); ++j) {
                        const T* gp = n2.grad.plane(i, off + j);
                        T* xg = x->grad.plane(i, j);
                        for (std::size_t k = 0; k < hw; ++k) xg[k] += gp[k];
                    }
                off += x->val.c();
            }
        }
    });
}

template <typename T>
Value<T> sub(Graph<T>& g, const Value<T>& a, const Value<T>& b) {
    require(a->val.shape() == b->val.shape(), ErrorCategory::shape, "sub: shape mismatch");
    Tensor<T> out = a->val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->val[i];
    return g.make(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) add_into(a->grad, n.grad);
        if (b->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
    });
}

// Identity forward; backward zeroes the gradient of samples whose gate is
// closed. Implements the per-sample "no gradient backpropagation" rule for
// invalid cues without touching forward values.
template <typename T>
Value<T> gate_gradient(Graph<T>& g, const Value<T>& x, std::vector<bool> open) {
    require(static_cast<int>(open.size()) == x->val.n(), ErrorCategory::shape,
            "gate_gradient: one flag per sample required");
    Tensor<T> out = x->val;
    auto mask = std::make_shared<std::vector<bool>>(std::move(open));
    return g.make(std::move(out), {x}, [x, mask](Node<T>& n) {
        if (!x->requires_grad) return;
        const std::size_t per = n.val.size() / static_cast<std::size_t>(n.val.n());
        for (int i = 0; i < n.val.n(); ++i) {
            if (!(*mask)[static_cast<std::size_t>(i)]) continue;
            const T* gp = n.grad.data() + per * static_cast<std::size_t>(i);
            T* xg = x->grad.data() + per * static_cast<std::size_t>(i);
            for (std::size_t k = 0; k < per; ++k) xg[k] += gp[k];
        }
    });
}

template <typename T>
Value<T> global_avg_pool(Graph<T>& g, const Value<T>& x) {
    const Tensor<T>& in = x->val;
    Tensor<T> out(in.n(), in.c(), 1, 1);
    const std::size_t hw = static_cast<std::size_t>(in.h()) * in.w();
    for (int i = 0; i < in.n(); ++i)
        for (int j = 0; j < in.c(); ++j) {
            double acc = 0.0;
            const T* p = in.plane(i, j);
            for (std::size_t k = 0; k < hw; ++k) acc += static_cast<double>(p[k]);
            out.at(i, j, 0, 0) = static_cast<T>(acc / static_cast<double>(hw));
        }
    return g.make(std::move(out), {x}, [x, hw](Node<T>& n) {
        if (!x->requires_grad) return;
        for (int i = 0; i < x->val.n(); ++i)
            for (int j = 0; j < x->val.c(); ++j) {
                const T gv = n.grad.at(i, j, 0, 0) / static_cast<T>(hw);
                T* xg = x->grad.plane(i, j);
                for (std::size_t k = 0; k < hw; ++k) xg[k] += gv;
            }
    });
}

// Fully connected layer on (n, c, 1, 1) inputs. Weight (out, in, 1, 1),
// bias (out). Output (n, out, 1, 1).
template <typename T>
Value<T> linear(Graph<T>& g, const Value<T>& x, const Value<T>& weight, const Value<T>& bias) {
    const Tensor<T>& in = x->val;
    const Tensor<T>& w = weight->val;
    require(in.h() == 1 && in.w() == 1, ErrorCategory::shape, "linear expects (n,c,1,1) input");
    require(w.c() == in.c(), ErrorCategory::shape, "linear: weight in-features mismatch");
    const int nf = w.n();
    Tensor<T> out(in.n(), nf, 1, 1);
    for (int i = 0; i < in.n(); ++i)
        for (int o = 0; o < nf; ++o) {
            double acc = static_cast<double>(bias->val[static_cast<std::size_t>(o)]);
            for (int j = 0; j < in.c(); ++j)
                acc += static_cast<double>(w.at(o, j, 0, 0)) * static_cast<double>(in.at(i, j, 0, 0));
            out.at(i, o, 0, 0) = static_cast<T>(acc);
        }
    return g.make(std::move(out), {x, weight, bias}, [x, weight, bias](Node<T>& n) {
        const int nf = weight->val.n(), c = weight->val.c();
        for (int i = 0; i < n.val.n(); ++i)
            for (int o = 0; o < nf; ++o) {
                const T gv = n.grad.at(i, o, 0, 0);
                if (bias->requires_grad) bias->grad[static_cast<std::size_t>(o)] += gv;
                for (int j = 0; j < c; ++j) {
                    if (weight->requires_grad)
                        weight->grad.at(o, j, 0, 0) += gv * x->val.at(i, j, 0, 0);
                    if (x->requires_grad)
                        x->grad.at(i, j, 0, 0) += gv * weight->val.at(o, j, 0, 0);
                }
            }
    });
}

// Mean over the batch of -log softmax(logits)[label]. Logits (n, k, 1, 1).
template <typename T>
Value<T> softmax_cross_entropy(Graph<T>& g, const Value<T>& logits, std::vector<int> labels) {
    const Tensor<T>& in = logits->val;
    require(in.h() == 1 && in.w() == 1, ErrorCategory::shape, "softmax_ce expects (n,k,1,1) logits");
    require(static_cast<int>(labels.size()) == in.n(), ErrorCategory::shape,
            "softmax_ce: one label per sample required");
    const int n = in.n(), k = in.c();
    auto probs = std::make_shared<Tensor<T>>(in.shape());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
                ErrorCategory::shape, "softmax_ce: label out of range");
        double mx = -1e300;
        for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(in.at(i, j, 0, 0)));
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(in.at(i, j, 0, 0)) - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < k; ++j)
            probs->at(i, j, 0, 0) = static_cast<T>(std::exp(static_cast<double>(in.at(i, j, 0, 0)) - lse));
        loss -= static_cast<double>(in.at(i, labels[static_cast<std::size_t>(i)], 0, 0)) - lse;
    }
    Tensor<T> out(1, 1, 1, 1);
    out[0] = static_cast<T>(loss / n);
    auto lab = std::make_shared<std::vector<int>>(std::move(labels));
    return g.make(std::move(out), {logits}, [logits, probs, lab](Node<T>& nd) {
        if (!logits->requires_grad) return;
        const int n = logits->val.n(), k = logits->val.c();
        const T gv = nd.grad[0];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                T delta = (j == (*lab)[static_cast<std::size_t>(i)]) ? T(1) : T(0);
                logits->grad.at(i, j, 0, 0) += gv * (probs->at(i, j, 0, 0) - delta) / static_cast<T>(n);
            }
    });
}

// (1/N) * sum over valid samples of the pixel-sum squared error. N is the
// full batch size; invalid samples contribute nothing to value or
// gradient. Optional variants: per-pixel mean norm, valid-count divisor.
template <typename T>
Value<T> masked_map_mse(Graph<T>& g, const Value<T>& pred, const Tensor<T>& gt,
                        const std::vector<bool>& validity, bool pixel_mean = false,
                        bool divide_by_valid = false) {
    const Tensor<T>& p = pred->val;
    require(p.shape() == gt.shape(), ErrorCategory::shape,
            concat("map mse: pred ", p.shape().str(), " vs gt ", gt.shape().str()));
    require(static_cast<int>(validity.size()) == p.n(), ErrorCategory::shape,
            "map mse: one validity flag per sample required");
    const int n = p.n();
    const std::size_t per = p.size() / static_cast<std::size_t>(n);
    int valid = 0;
    for (bool v : validity) valid += v ? 1 : 0;
    double denom = divide_by_valid ? std::max(valid, 1) : n;
    if (pixel_mean) denom *= static_cast<double>(per);

    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!validity[static_cast<std::size_t>(i)]) continue;
        const T* pp = p.data() + per * static_cast<std::size_t>(i);
        const T* gp = gt.data() + per * static_cast<std::size_t>(i);
        double acc = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            const double d = static_cast<double>(pp[k]) - static_cast<double>(gp[k]);
            acc += d * d;
        }
        loss += acc;
    }
    Tensor<T> out(1, 1, 1, 1);
    out[0] = static_cast<T>(loss / denom);
    auto gtc = std::make_shared<Tensor<T>>(gt);
    auto mask = std::make_shared<std::vector<bool>>(validity);
    return g.make(std::move(out), {pred}, [pred, gtc, mask, per, denom](Node<T>& nd) {
        if (!pred->requires_grad) return;
        const T gv = nd.grad[0];
        for (int i = 0; i < pred->val.n(); ++i) {
            if (!(*mask)[static_cast<std::size_t>(i)]) continue;
            const T* pp = pred->val.data() + per * static_cast<std::size_t>(i);
            const T* gp = gtc->data() + per * static_cast<std::size_t>(i);
            T* pg = pred->grad.data() + per * static_cast<std::size_t>(i);
            for (std::size_t k = 0; k < per; ++k)
                pg[k] += static_cast<T>(gv * 2.0 * (static_cast<double>(pp[k]) - static_cast<double>(gp[k])) / denom);
        }
    });
}

// coeffs . scalars, as a scalar node.
template <typename T>
Value<T> weighted_sum(Graph<T>& g, const std::vector<Value<T>>& scalars,
                      const std::vector<double>& coeffs) {
    require(scalars.size() == coeffs.size() && !scalars.empty(), ErrorCategory::shape,
            "weighted_sum: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        require(scalars[i]->val.size() == 1, ErrorCategory::shape, "weighted_sum needs scalars");
        acc += coeffs[i] * static_cast<double>(scalars[i]->val[0]);
    }
    Tensor<T> out(1, 1, 1, 1);
    out[0] = static_cast<T>(acc);
    auto cf = std::make_shared<std::vector<double>>(coeffs);
    return g.make(std::move(out), scalars, [scalars, cf](Node<T>& nd) {
        for (std::size_t i = 0; i < scalars.size(); ++i)
            if (scalars[i]->requires_grad)
                scalars[i]->grad[0] += static_cast<T>(static_cast<double>(nd.grad[0]) * (*cf)[i]);
    });
}

}  // namespace op

// He-normal initialization for a conv/linear weight tensor.
template <typename T>
void he_init(Tensor<T>& w, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(w.c()) * w.h() * w.w();
    fill_normal(w, rng, std::sqrt(2.0 / std::max(1.0, fan_in)));
}

}  // namespace megc::ad
