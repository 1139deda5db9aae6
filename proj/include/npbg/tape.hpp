#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "npbg/blas.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

namespace detail {

// 2x2 box average, shared by the tensor op and the anti-aliased rasterizer so
// both paths produce bitwise identical values. Kept out-of-line for that
// reason: one instantiation, one code path.
template <typename T>
[[gnu::noinline]] std::vector<T> box_down2(const std::vector<T>& src, int64_t channels, int64_t h,
                                           int64_t w) {
    const int64_t ho = h / 2, wo = w / 2;
    std::vector<T> out(static_cast<size_t>(channels * ho * wo));
    for (int64_t c = 0; c < channels; ++c) {
        const T* plane = src.data() + c * h * w;
        T* oplane = out.data() + c * ho * wo;
        for (int64_t y = 0; y < ho; ++y) {
            const T* r0 = plane + (2 * y) * w;
            const T* r1 = plane + (2 * y + 1) * w;
            for (int64_t x = 0; x < wo; ++x)
                oplane[y * wo + x] =
                    ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1])) * T(0.25);
        }
    }
    return out;
}

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline T elu_scalar(T x) {
    return x > T(0) ? x : std::expm1(x);
}

}  // namespace detail

struct Conv2dDims {
    int64_t cin, h, w, cout, k, ho, wo;
    int stride, padding;
};

/// Reverse-mode tape. Ops are methods; each call computes the forward value,
/// validates finiteness, and (when an input requires grad) records a backward
/// closure. The tape is single-owner and single-threaded; backward visits
/// closures in exact reverse execution order and accumulates additively, so a
/// tensor consumed twice receives the sum of both contributions.
template <typename T>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- elementwise suite ---

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("add", a, b, [](T x, T y) { return x + y; },
                         /*da=*/[](T, T, T g) { return g; },
                         /*db=*/[](T, T, T g) { return g; });
    }

    Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("sub", a, b, [](T x, T y) { return x - y; },
                         [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        return binary_op("mul", a, b, [](T x, T y) { return x * y; },
                         [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
    }

    Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
        ensure_open();
        Tensor<T> out = Tensor<T>::zeros(x.shape);
        const auto& xv = *x.store;
        auto& ov = *out.store;
        for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * s;
        check_finite("scalar_mul", ov);
        if (tracked(x)) {
            mark(out);
            auto xs = x.store;
            auto os = out.store;
            nodes_.push_back([this, xs, os, s] {
                auto* go = grad_out(os.get());
                if (!go) return;
                auto& gx = grad_acc(xs.get(), xs->size());
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i] * s;
            });
        }
        return out;
    }

    Tensor<T> relu(const Tensor<T>& x) {
        return unary_op("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                        [](T v, T, T g) { return v > T(0) ? g : T(0); });
    }

    Tensor<T> elu(const Tensor<T>& x) {
        return unary_op("elu", x, [](T v) { return detail::elu_scalar(v); },
                        [](T v, T o, T g) { return v > T(0) ? g : g * (o + T(1)); });
    }

    Tensor<T> sigmoid(const Tensor<T>& x) {
        return unary_op("sigmoid", x, [](T v) { return detail::sigmoid_scalar(v); },
                        [](T, T o, T g) { return g * o * (T(1) - o); });
    }

    Tensor<T> abs(const Tensor<T>& x) {
        return unary_op("abs", x, [](T v) { return std::fabs(v); },
                        [](T v, T, T g) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
    }

    Tensor<T> mean(const Tensor<T>& x) {
        ensure_open();
        if (x.numel() == 0) throw std::runtime_error("mean: empty tensor");
        T acc = T(0);
        for (T v : *x.store) acc += v;
        const T inv_n = T(1) / static_cast<T>(x.numel());
        Tensor<T> out({1}, {acc * inv_n});
        check_finite("mean", *out.store);
        if (tracked(x)) {
            mark(out);
            auto xs = x.store;
            auto os = out.store;
            nodes_.push_back([this, xs, os, inv_n] {
                auto* go = grad_out(os.get());
                if (!go) return;
                auto& gx = grad_acc(xs.get(), xs->size());
                const T g = (*go)[0] * inv_n;
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
            });
        }
        return out;
    }

    // --- structured ops ---

    Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
        ensure_open();
        require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be rank-3 [C,H,W]");
        require(a.shape[1] == b.shape[1] && a.shape[2] == b.shape[2],
                "concat_channels: spatial extents differ, " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape));
        const int64_t c1 = a.shape[0], c2 = b.shape[0], hw = a.shape[1] * a.shape[2];
        Tensor<T> out = Tensor<T>::zeros({c1 + c2, a.shape[1], a.shape[2]});
        std::memcpy(out.store->data(), a.store->data(), sizeof(T) * c1 * hw);
        std::memcpy(out.store->data() + c1 * hw, b.store->data(), sizeof(T) * c2 * hw);
        const bool na = tracked(a), nb = tracked(b);
        if (na || nb) {
            mark(out);
            auto as = a.store;
            auto bs = b.store;
            auto os = out.store;
            nodes_.push_back([this, as, bs, os, c1, c2, hw, na, nb] {
                auto* go = grad_out(os.get());
                if (!go) return;
                if (na) {
                    auto& ga = grad_acc(as.get(), as->size());
                    for (int64_t i = 0; i < c1 * hw; ++i) ga[i] += (*go)[i];
                }
                if (nb) {
                    auto& gb = grad_acc(bs.get(), bs->size());
                    for (int64_t i = 0; i < c2 * hw; ++i) gb[i] += (*go)[c1 * hw + i];
                }
            });
        }
        return out;
    }

    Tensor<T> downsample2x(const Tensor<T>& x) {
        ensure_open();
        require(x.rank() == 3, "downsample2x: input must be rank-3 [C,H,W]");
        const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        require(h % 2 == 0 && w % 2 == 0, "downsample2x: odd extents " + shape_str(x.shape));
        Tensor<T> out({c, h / 2, w / 2}, detail::box_down2(*x.store, c, h, w));
        check_finite("downsample2x", *out.store);
        if (tracked(x)) {
            mark(out);
            auto xs = x.store;
            auto os = out.store;
            nodes_.push_back([this, xs, os, c, h, w] {
                auto* go = grad_out(os.get());
                if (!go) return;
                auto& gx = grad_acc(xs.get(), xs->size());
                const int64_t ho = h / 2, wo = w / 2;
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t y = 0; y < ho; ++y)
                        for (int64_t x2 = 0; x2 < wo; ++x2) {
                            const T g = (*go)[(ch * ho + y) * wo + x2] * T(0.25);
                            gx[(ch * h + 2 * y) * w + 2 * x2] += g;
                            gx[(ch * h + 2 * y) * w + 2 * x2 + 1] += g;
                            gx[(ch * h + 2 * y + 1) * w + 2 * x2] += g;
                            gx[(ch * h + 2 * y + 1) * w + 2 * x2 + 1] += g;
                        }
            });
        }
        return out;
    }

    Tensor<T> upsample2x(const Tensor<T>& x) {
        ensure_open();
        require(x.rank() == 3, "upsample2x: input must be rank-3 [C,H,W]");
        const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
        Tensor<T> out = Tensor<T>::zeros({c, 2 * h, 2 * w});
        const auto& xv = *x.store;
        auto& ov = *out.store;
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x2 = 0; x2 < w; ++x2) {
                    const T v = xv[(ch * h + y) * w + x2];
                    const int64_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * x2;
                    ov[base] = v;
                    ov[base + 1] = v;
                    ov[base + 2 * w] = v;
                    ov[base + 2 * w + 1] = v;
                }
        if (tracked(x)) {
            mark(out);
            auto xs = x.store;
            auto os = out.store;
            nodes_.push_back([this, xs, os, c, h, w] {
                auto* go = grad_out(os.get());
                if (!go) return;
                auto& gx = grad_acc(xs.get(), xs->size());
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t y = 0; y < h; ++y)
                        for (int64_t x2 = 0; x2 < w; ++x2) {
                            const int64_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * x2;
                            gx[(ch * h + y) * w + x2] += ((*go)[base] + (*go)[base + 1]) +
                                                         ((*go)[base + 2 * w] + (*go)[base + 2 * w + 1]);
                        }
            });
        }
        return out;
    }

    /// Cross-correlation with square odd kernel. Output extents must divide
    /// exactly: (H + 2*padding - k) must be a multiple of stride.
    Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                     int padding) {
        ensure_open();
        const Conv2dDims d = conv_dims("conv2d", x, w, b, stride, padding);
        std::vector<T> col = im2col(*x.store, d);
        Tensor<T> out = Tensor<T>::zeros({d.cout, d.ho, d.wo});
        const int64_t n = d.ho * d.wo, kk = d.cin * d.k * d.k;
        detail::gemm_rm(false, false, static_cast<int>(d.cout), static_cast<int>(n),
                        static_cast<int>(kk), w.store->data(), static_cast<int>(kk), col.data(),
                        static_cast<int>(n), T(0), out.store->data(), static_cast<int>(n));
        for (int64_t co = 0; co < d.cout; ++co) {
            const T bias = (*b.store)[co];
            T* row = out.store->data() + co * n;
            for (int64_t i = 0; i < n; ++i) row[i] += bias;
        }
        check_finite("conv2d", *out.store);
        const bool nx = tracked(x), nw = tracked(w), nb = tracked(b);
        if (nx || nw || nb) {
            mark(out);
            auto xs = x.store;
            auto ws = w.store;
            auto bs = b.store;
            auto os = out.store;
            auto colp = std::make_shared<std::vector<T>>(std::move(col));
            nodes_.push_back([this, xs, ws, bs, os, colp, d, nx, nw, nb] {
                auto* go = grad_out(os.get());
                if (!go) return;
                conv_backward(*go, *xs, *ws, *colp, d, nx ? &grad_acc(xs.get(), xs->size()) : nullptr,
                              nw ? &grad_acc(ws.get(), ws->size()) : nullptr,
                              nb ? &grad_acc(bs.get(), bs->size()) : nullptr);
            });
        }
        return out;
    }

    /// out = ELU(conv(x; feature)) * sigmoid(conv(x; gate)). Both branches share
    /// kernel geometry; the im2col buffer is computed once.
    Tensor<T> gated_conv(const Tensor<T>& x, const Tensor<T>& wf, const Tensor<T>& bf,
                         const Tensor<T>& wg, const Tensor<T>& bg, int stride, int padding) {
        ensure_open();
        require(wf.shape == wg.shape, "gated_conv: feature/gate weight shapes differ, " +
                                          shape_str(wf.shape) + " vs " + shape_str(wg.shape));
        require(bf.shape == bg.shape, "gated_conv: feature/gate bias shapes differ");
        const Conv2dDims d = conv_dims("gated_conv", x, wf, bf, stride, padding);
        std::vector<T> col = im2col(*x.store, d);
        const int64_t n = d.ho * d.wo, kk = d.cin * d.k * d.k;
        std::vector<T> fpre(d.cout * n), gpre(d.cout * n);
        detail::gemm_rm(false, false, static_cast<int>(d.cout), static_cast<int>(n),
                        static_cast<int>(kk), wf.store->data(), static_cast<int>(kk), col.data(),
                        static_cast<int>(n), T(0), fpre.data(), static_cast<int>(n));
        detail::gemm_rm(false, false, static_cast<int>(d.cout), static_cast<int>(n),
                        static_cast<int>(kk), wg.store->data(), static_cast<int>(kk), col.data(),
                        static_cast<int>(n), T(0), gpre.data(), static_cast<int>(n));
        std::vector<T> fact(d.cout * n), gact(d.cout * n);
        Tensor<T> out = Tensor<T>::zeros({d.cout, d.ho, d.wo});
        auto& ov = *out.store;
        for (int64_t co = 0; co < d.cout; ++co) {
            const T biasf = (*bf.store)[co], biasg = (*bg.store)[co];
            for (int64_t i = co * n; i < (co + 1) * n; ++i) {
                fpre[i] += biasf;
                gpre[i] += biasg;
                fact[i] = detail::elu_scalar(fpre[i]);
                gact[i] = detail::sigmoid_scalar(gpre[i]);
                ov[i] = fact[i] * gact[i];
            }
        }
        check_finite("gated_conv", ov);
        const bool nx = tracked(x), nwf = tracked(wf), nbf = tracked(bf), nwg = tracked(wg),
                   nbg = tracked(bg);
        if (nx || nwf || nbf || nwg || nbg) {
            mark(out);
            auto xs = x.store;
            auto wfs = wf.store;
            auto bfs = bf.store;
            auto wgs = wg.store;
            auto bgs = bg.store;
            auto os = out.store;
            auto colp = std::make_shared<std::vector<T>>(std::move(col));
            auto fprep = std::make_shared<std::vector<T>>(std::move(fpre));
            auto factp = std::make_shared<std::vector<T>>(std::move(fact));
            auto gactp = std::make_shared<std::vector<T>>(std::move(gact));
            nodes_.push_back([this, xs, wfs, bfs, wgs, bgs, os, colp, fprep, factp, gactp, d, n, kk,
                              nx, nwf, nbf, nwg, nbg] {
                auto* go = grad_out(os.get());
                if (!go) return;
                std::vector<T> df(d.cout * n), dg(d.cout * n);
                for (int64_t i = 0; i < d.cout * n; ++i) {
                    const T g = (*gactp)[i];
                    const T delu = (*fprep)[i] > T(0) ? T(1) : (*factp)[i] + T(1);
                    df[i] = (*go)[i] * g * delu;
                    dg[i] = (*go)[i] * (*factp)[i] * g * (T(1) - g);
                }
                std::vector<T>* gx = nx ? &grad_acc(xs.get(), xs->size()) : nullptr;
                std::vector<T> dcol;
                if (gx) dcol.assign(kk * n, T(0));
                branch_backward(df, *wfs, *colp, d, dcol,
                                nwf ? &grad_acc(wfs.get(), wfs->size()) : nullptr,
                                nbf ? &grad_acc(bfs.get(), bfs->size()) : nullptr, T(0));
                branch_backward(dg, *wgs, *colp, d, dcol,
                                nwg ? &grad_acc(wgs.get(), wgs->size()) : nullptr,
                                nbg ? &grad_acc(bgs.get(), bgs->size()) : nullptr, T(1));
                if (gx) col2im_acc(dcol, d, *gx);
            });
        }
        return out;
    }

    // --- backward ---

    void backward(const Tensor<T>& loss) {
        ensure_open();
        if (loss.numel() != 1)
            throw std::runtime_error("backward: loss must be scalar, got shape " +
                                     shape_str(loss.shape));
        if (!tracked_.count(loss.store.get()))
            throw std::runtime_error("backward: loss was not produced under this tape");
        grads_[loss.store.get()] = {T(1)};
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
        consumed_ = true;
    }

    bool has_grad(const Tensor<T>& t) const { return grads_.count(t.store.get()) != 0; }

    const std::vector<T>& grad_of(const Tensor<T>& t) const {
        auto it = grads_.find(t.store.get());
        if (it == grads_.end())
            throw std::runtime_error("grad_of: no gradient recorded for tensor");
        return it->second;
    }

    bool consumed() const { return consumed_; }

    /// Gradient accumulator for an arbitrary storage key; used by the
    /// rasterizer bridge to scatter into descriptor rows.
    std::vector<T>& grad_acc(const void* key, size_t numel) {
        auto it = grads_.find(key);
        if (it == grads_.end())
            it = grads_.emplace(key, std::vector<T>(numel, T(0))).first;
        return it->second;
    }

    std::vector<T>* grad_out(const void* key) {
        auto it = grads_.find(key);
        return it == grads_.end() ? nullptr : &it->second;
    }

    bool tracked(const Tensor<T>& t) const { return t.requires_grad; }

    void mark(Tensor<T>& out) {
        out.requires_grad = true;
        tracked_.insert(out.store.get());
    }

    void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }

    void ensure_open() const {
        if (consumed_) throw std::runtime_error("tape already consumed by backward");
    }

  private:
    static void require(bool cond, const std::string& msg) {
        if (!cond) throw std::runtime_error(msg);
    }

    template <typename FwdFn, typename GradFn>
    Tensor<T> unary_op(const char* name, const Tensor<T>& x, FwdFn fwd, GradFn grad) {
        ensure_open();
        Tensor<T> out = Tensor<T>::zeros(x.shape);
        const auto& xv = *x.store;
        auto& ov = *out.store;
        for (size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
        check_finite(name, ov);
        if (tracked(x)) {
            mark(out);
            auto xs = x.store;
            auto os = out.store;
            nodes_.push_back([this, xs, os, grad] {
                auto* go = grad_out(os.get());
                if (!go) return;
                auto& gx = grad_acc(xs.get(), xs->size());
                for (size_t i = 0; i < gx.size(); ++i)
                    gx[i] += grad((*xs)[i], (*os)[i], (*go)[i]);
            });
        }
        return out;
    }

    template <typename FwdFn, typename GradA, typename GradB>
    Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd,
                        GradA grad_a, GradB grad_b) {
        ensure_open();
        require(a.shape == b.shape, std::string(name) + ": shape mismatch " + shape_str(a.shape) +
                                        " vs " + shape_str(b.shape));
        Tensor<T> out = Tensor<T>::zeros(a.shape);
        const auto& av = *a.store;
        const auto& bv = *b.store;
        auto& ov = *out.store;
        for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[i]);
        check_finite(name, ov);
        const bool na = tracked(a), nb = tracked(b);
        if (na || nb) {
            mark(out);
            auto as = a.store;
            auto bs = b.store;
            auto os = out.store;
            nodes_.push_back([this, as, bs, os, grad_a, grad_b, na, nb] {
                auto* go = grad_out(os.get());
                if (!go) return;
                if (na) {
                    auto& ga = grad_acc(as.get(), as->size());
                    for (size_t i = 0; i < ga.size(); ++i)
                        ga[i] += grad_a((*as)[i], (*bs)[i], (*go)[i]);
                }
                if (nb) {
                    auto& gb = grad_acc(bs.get(), bs->size());
                    for (size_t i = 0; i < gb.size(); ++i)
                        gb[i] += grad_b((*as)[i], (*bs)[i], (*go)[i]);
                }
            });
        }
        return out;
    }

    static Conv2dDims conv_dims(const char* name, const Tensor<T>& x, const Tensor<T>& w,
                                const Tensor<T>& b, int stride, int padding) {
        require(x.rank() == 3, std::string(name) + ": input must be rank-3 [C,H,W], got " +
                                   shape_str(x.shape));
        require(w.rank() == 4, std::string(name) + ": weight must be rank-4 [Cout,Cin,k,k], got " +
                                   shape_str(w.shape));
        require(b.rank() == 1 && b.shape[0] == w.shape[0],
                std::string(name) + ": bias extent " + shape_str(b.shape) +
                    " does not match output channels " + std::to_string(w.shape[0]));
        require(w.shape[2] == w.shape[3], std::string(name) + ": kernel must be square, got " +
                                              shape_str(w.shape));
        require(w.shape[2] % 2 == 1,
                std::string(name) + ": kernel size must be odd, got " + std::to_string(w.shape[2]));
        require(w.shape[1] == x.shape[0],
                std::string(name) + ": input channels " + std::to_string(x.shape[0]) +
                    " do not match weight in-channels " + std::to_string(w.shape[1]));
        require(stride >= 1, std::string(name) + ": stride must be >= 1");
        require(padding >= 0, std::string(name) + ": padding must be >= 0");
        Conv2dDims d;
        d.cin = x.shape[0];
        d.h = x.shape[1];
        d.w = x.shape[2];
        d.cout = w.shape[0];
        d.k = w.shape[2];
        d.stride = stride;
        d.padding = padding;
        const int64_t eh = d.h + 2 * padding - d.k, ew = d.w + 2 * padding - d.k;
        require(eh >= 0 && ew >= 0, std::string(name) + ": kernel larger than padded input");
        require(eh % stride == 0, std::string(name) + ": height " + std::to_string(d.h) +
                                      " does not yield an integral output extent");
        require(ew % stride == 0, std::string(name) + ": width " + std::to_string(d.w) +
                                      " does not yield an integral output extent");
        d.ho = eh / stride + 1;
        d.wo = ew / stride + 1;
        return d;
    }

    static std::vector<T> im2col(const std::vector<T>& x, const Conv2dDims& d) {
        const int64_t n = d.ho * d.wo;
        std::vector<T> col(static_cast<size_t>(d.cin * d.k * d.k * n), T(0));
        for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t ky = 0; ky < d.k; ++ky)
                for (int64_t kx = 0; kx < d.k; ++kx) {
                    T* row = col.data() + ((c * d.k + ky) * d.k + kx) * n;
                    for (int64_t y = 0; y < d.ho; ++y) {
                        const int64_t sy = y * d.stride - d.padding + ky;
                        if (sy < 0 || sy >= d.h) continue;
                        const T* src = x.data() + (c * d.h + sy) * d.w;
                        for (int64_t ox = 0; ox < d.wo; ++ox) {
                            const int64_t sx = ox * d.stride - d.padding + kx;
                            if (sx >= 0 && sx < d.w) row[y * d.wo + ox] = src[sx];
                        }
                    }
                }
        return col;
    }

    static void col2im_acc(const std::vector<T>& dcol, const Conv2dDims& d, std::vector<T>& gx) {
        const int64_t n = d.ho * d.wo;
        for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t ky = 0; ky < d.k; ++ky)
                for (int64_t kx = 0; kx < d.k; ++kx) {
                    const T* row = dcol.data() + ((c * d.k + ky) * d.k + kx) * n;
                    for (int64_t y = 0; y < d.ho; ++y) {
                        const int64_t sy = y * d.stride - d.padding + ky;
                        if (sy < 0 || sy >= d.h) continue;
                        T* dst = gx.data() + (c * d.h + sy) * d.w;
                        for (int64_t ox = 0; ox < d.wo; ++ox) {
                            const int64_t sx = ox * d.stride - d.padding + kx;
                            if (sx >= 0 && sx < d.w) dst[sx] += row[y * d.wo + ox];
                        }
                    }
                }
    }

    // dOut -> (dW, dB) for one conv branch; accumulates W^T * dOut into dcol
    // (beta selects fresh vs accumulate) when the input gradient is needed.
    void branch_backward(const std::vector<T>& dout, const std::vector<T>& w,
                         const std::vector<T>& col, const Conv2dDims& d, std::vector<T>& dcol,
                         std::vector<T>* gw, std::vector<T>* gb, T beta) {
        const int64_t n = d.ho * d.wo, kk = d.cin * d.k * d.k;
        if (gb)
            for (int64_t co = 0; co < d.cout; ++co) {
                T acc = T(0);
                for (int64_t i = 0; i < n; ++i) acc += dout[co * n + i];
                (*gb)[co] += acc;
            }
        if (gw)
            detail::gemm_rm(false, true, static_cast<int>(d.cout), static_cast<int>(kk),
                            static_cast<int>(n), dout.data(), static_cast<int>(n), col.data(),
                            static_cast<int>(n), T(1), gw->data(), static_cast<int>(kk));
        if (!dcol.empty())
            detail::gemm_rm(true, false, static_cast<int>(kk), static_cast<int>(n),
                            static_cast<int>(d.cout), w.data(), static_cast<int>(kk), dout.data(),
                            static_cast<int>(n), beta, dcol.data(), static_cast<int>(n));
    }

    void conv_backward(const std::vector<T>& go, const std::vector<T>& x, const std::vector<T>& w,
                       const std::vector<T>& col, const Conv2dDims& d, std::vector<T>* gx,
                       std::vector<T>* gw, std::vector<T>* gb) {
        (void)x;
        std::vector<T> dcol;
        if (gx) dcol.assign(d.cin * d.k * d.k * d.ho * d.wo, T(0));
        branch_backward(go, w, col, d, dcol, gw, gb, T(0));
        if (gx) col2im_acc(dcol, d, *gx);
    }

    std::vector<std::function<void()>> nodes_;
    std::unordered_map<const void*, std::vector<T>> grads_;
    std::unordered_set<const void*> tracked_;
    bool consumed_ = false;
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

}  // namespace npbg
