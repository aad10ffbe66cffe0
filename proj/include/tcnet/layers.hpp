#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "tcnet/error.hpp"
#include "tcnet/rng.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// Convolution geometry. Extents are per spatial axis; output_padding applies to
// transposed convolutions only.
struct ConvSpec {
    std::vector<int> kernel;
    std::vector<int> stride;
    std::vector<int> padding;
    std::vector<int> output_padding;
    int in_channels = 0;
    int out_channels = 0;

    static ConvSpec square2d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0, int out_pad = 0) {
        return ConvSpec{{k, k}, {stride, stride}, {pad, pad}, {out_pad, out_pad}, in_ch, out_ch};
    }
    static ConvSpec cube3d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0, int out_pad = 0) {
        return ConvSpec{{k, k, k}, {stride, stride, stride}, {pad, pad, pad}, {out_pad, out_pad, out_pad},
                        in_ch, out_ch};
    }

    void validate(int spatial_rank, bool transposed) const {
        if (in_channels <= 0 || out_channels <= 0)
            throw ConfigError("conv spec: channel counts must be positive");
        auto check_len = [&](const std::vector<int>& v, const char* what) {
            if (static_cast<int>(v.size()) != spatial_rank)
                throw ConfigError(std::string("conv spec: ") + what + " must have one entry per spatial axis");
        };
        check_len(kernel, "kernel");
        check_len(stride, "stride");
        check_len(padding, "padding");
        if (transposed) check_len(output_padding, "output_padding");
        for (int a = 0; a < spatial_rank; ++a) {
            if (kernel[a] <= 0 || kernel[a] % 2 == 0 || kernel[a] > 15)
                throw ConfigError("conv spec: kernel extent on axis " + std::to_string(a) +
                                  " must be odd, positive and at most 15, got " +
                                  std::to_string(kernel[a]));
            if (stride[a] <= 0) throw ConfigError("conv spec: stride must be positive");
            if (padding[a] < 0) throw ConfigError("conv spec: padding must be nonnegative");
            if (transposed && output_padding[a] < 0)
                throw ConfigError("conv spec: output_padding must be nonnegative");
        }
    }

    int conv_out_extent(int in, int axis, const char* op) const {
        const int out = (in + 2 * padding[axis] - kernel[axis]) / stride[axis] + 1;
        if (in + 2 * padding[axis] < kernel[axis] || out <= 0)
            throw DimensionError(std::string(op) + ": spatial axis " + std::to_string(axis) + " extent " +
                                 std::to_string(in) + " too small for kernel " + std::to_string(kernel[axis]) +
                                 " with padding " + std::to_string(padding[axis]));
        return out;
    }

    int transposed_out_extent(int in, int axis, const char* op) const {
        const int out = (in - 1) * stride[axis] - 2 * padding[axis] + kernel[axis] + output_padding[axis];
        if (out <= 0)
            throw DimensionError(std::string(op) + ": computed output extent " + std::to_string(out) +
                                 " on axis " + std::to_string(axis) + " is nonpositive");
        return out;
    }
};

template <class T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&, bool /*trainable*/)>;

// Kaiming-normal fill: fan-in scaling with ReLU gain.
template <class T>
void kaiming_fill(Tensor<T>& w, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

namespace detail {

inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// Output index range [lo, hi) with 0 <= o*stride + k - pad < in.
inline void tap_range(int in, int out, int stride, int pad, int k, int& lo, int& hi) {
    lo = std::max(0, div_ceil(pad - k, stride));
    hi = std::min(out, div_ceil(in + pad - k, stride));
    if (hi < lo) hi = lo;
}

// Per-kernel-offset tap ranges, precomputed once per call so the divisions
// stay out of the hot loops.
struct TapRanges {
    int lo[16];
    int hi[16];
};

inline TapRanges make_tap_ranges(int in, int out, int stride, int pad, int k) {
    TapRanges t{};
    for (int i = 0; i < k; ++i) tap_range(in, out, stride, pad, i, t.lo[i], t.hi[i]);
    return t;
}

template <class T>
inline T dot_span(const T* __restrict a, const T* __restrict b, int k) {
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < k; ++i) acc += a[i] * b[i];
    return acc;
}

template <class T>
inline void axpy_span(T* __restrict y, const T* __restrict x, T a, int k) {
#pragma omp simd
    for (int i = 0; i < k; ++i) y[i] += a * x[i];
}

// 4-way channel blocks amortize the reduction epilogues and the patch-row
// loads; essential for shallow contraction axes (few input channels).
template <class T>
inline void dot4_span(const T* __restrict w0, const T* __restrict w1, const T* __restrict w2,
                      const T* __restrict w3, const T* __restrict c, int k, T out[4]) {
    T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
    for (int i = 0; i < k; ++i) {
        const T v = c[i];
        a0 += w0[i] * v;
        a1 += w1[i] * v;
        a2 += w2[i] * v;
        a3 += w3[i] * v;
    }
    out[0] = a0;
    out[1] = a1;
    out[2] = a2;
    out[3] = a3;
}

// y += a0*x0 + a1*x1 + a2*x2 + a3*x3
template <class T>
inline void axpy4_span(T* __restrict y, const T* __restrict x0, const T* __restrict x1,
                       const T* __restrict x2, const T* __restrict x3, T a0, T a1, T a2, T a3,
                       int k) {
#pragma omp simd
    for (int i = 0; i < k; ++i) y[i] += a0 * x0[i] + a1 * x1[i] + a2 * x2[i] + a3 * x3[i];
}

// yj += aj * c for four destination rows sharing one source row
template <class T>
inline void waxpy4_span(T* __restrict y0, T* __restrict y1, T* __restrict y2, T* __restrict y3,
                        const T* __restrict c, T a0, T a1, T a2, T a3, int k) {
#pragma omp simd
    for (int i = 0; i < k; ++i) {
        const T v = c[i];
        y0[i] += a0 * v;
        y1[i] += a1 * v;
        y2[i] += a2 * v;
        y3[i] += a3 * v;
    }
}

// Splits x into (batch, channels, spatial extents...); accepts batched and
// unbatched layouts.
template <class T>
int split_batch(const Tensor<T>& x, int spatial_rank, const char* op, int& channels,
                std::vector<int>& spatial) {
    const int r = x.rank();
    int n = 1;
    int base = 0;
    if (r == spatial_rank + 2) {
        n = x.shape[0];
        base = 1;
    } else if (r != spatial_rank + 1) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(spatial_rank + 1) + " or " +
                             std::to_string(spatial_rank + 2) + " input, got " + shape_string(x.shape));
    }
    channels = x.shape[base];
    spatial.assign(x.shape.begin() + base + 1, x.shape.end());
    return n;
}

template <class T>
Tensor<T> make_like_rank(const Tensor<T>& ref, int n, std::vector<int> tail) {
    std::vector<int> s;
    if (ref.rank() == static_cast<int>(tail.size())) {
        s = std::move(tail); // unbatched in, unbatched out
    } else {
        s.reserve(tail.size() + 1);
        s.push_back(n);
        s.insert(s.end(), tail.begin(), tail.end());
    }
    return Tensor<T>(std::move(s));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Conv2d: weight [Co, Ci, kh, kw], input [N, Ci, H, W] (or [Ci, H, W]).
// Internally lowered to patch rows (one receptive field per output position,
// padding zero-filled) so every hot loop contracts over the contiguous
// Ci*kh*kw axis.
// ---------------------------------------------------------------------------
template <class T>
struct Conv2d {
    ConvSpec spec;
    std::string name = "conv2d";
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> x_cache;
    std::vector<T> col_scratch, gcol_scratch;

    void build(Rng& rng) {
        spec.validate(2, false);
        weight = Tensor<T>({spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1]});
        bias = Tensor<T>({spec.out_channels});
        kaiming_fill(weight, spec.in_channels * spec.kernel[0] * spec.kernel[1], rng);
        weight.ensure_grad();
        bias.ensure_grad();
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", weight, true);
        fn(prefix + ".bias", bias, true);
    }

    void lower_rows(const Tensor<T>& x, int n, int ci, int h, int w, int oh, int ow,
                    std::vector<T>& col) const {
        const int kh = spec.kernel[0], kw = spec.kernel[1];
        const int sh = spec.stride[0], sw = spec.stride[1];
        const int ph = spec.padding[0], pw = spec.padding[1];
        const int cik = ci * kh * kw;
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * oh * ow;
        col.resize(static_cast<std::size_t>(rows) * cik);
        const T* __restrict xp = x.ptr();
        T* __restrict cp = col.data();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / (oh * ow));
            const int s = static_cast<int>(r % (oh * ow));
            const int oy = s / ow, ox = s % ow;
            T* dst = cp + r * cik;
            for (int ic = 0; ic < ci; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * ci + ic) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * sh + ky - ph;
                    if (iy < 0 || iy >= h) {
                        for (int kx = 0; kx < kw; ++kx) *dst++ = T(0);
                        continue;
                    }
                    const T* xrow = xin + iy * w;
                    const int base = ox * sw - pw;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = base + kx;
                        *dst++ = (ix >= 0 && ix < w) ? xrow[ix] : T(0);
                    }
                }
            }
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "conv2d", ci, sp);
        if (ci != spec.in_channels)
            throw DimensionError("conv2d: channel axis mismatch: input has " + std::to_string(ci) +
                                 " channels, spec expects " + std::to_string(spec.in_channels));
        const int h = sp[0], w = sp[1];
        const int oh = spec.conv_out_extent(h, 0, "conv2d");
        const int ow = spec.conv_out_extent(w, 1, "conv2d");
        const int co = spec.out_channels;
        const int cik = ci * spec.kernel[0] * spec.kernel[1];
        const int os = oh * ow;
        Tensor<T> out = detail::make_like_rank(x, n, {co, oh, ow});

        lower_rows(x, n, ci, h, w, oh, ow, col_scratch);
        const T* __restrict cp = col_scratch.data();
        const T* __restrict wp = weight.ptr();
        const T* __restrict bp = bias.ptr();
        T* __restrict op = out.ptr();
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * os;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / os);
            const int s = static_cast<int>(r % os);
            const T* crow = cp + r * cik;
            T* obase = op + static_cast<std::size_t>(in) * co * os + s;
            int oc = 0;
            for (; oc + 4 <= co; oc += 4) {
                const T* w0 = wp + static_cast<std::size_t>(oc) * cik;
                T d4[4];
                detail::dot4_span(w0, w0 + cik, w0 + 2 * cik, w0 + 3 * cik, crow, cik, d4);
                for (int j = 0; j < 4; ++j)
                    obase[static_cast<std::size_t>(oc + j) * os] = bp[oc + j] + d4[j];
            }
            for (; oc < co; ++oc)
                obase[static_cast<std::size_t>(oc) * os] =
                    bp[oc] + detail::dot_span(wp + static_cast<std::size_t>(oc) * cik, crow, cik);
        }
        x_cache = x;
        TCNET_DEBUG_CHECK_FINITE(out, name.c_str());
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const Tensor<T>& x = x_cache;
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "conv2d", ci, sp);
        const int h = sp[0], w = sp[1];
        const int co = spec.out_channels;
        int gc = 0;
        std::vector<int> gsp;
        detail::split_batch(gout, 2, "conv2d", gc, gsp);
        const int oh = gsp[0], ow = gsp[1];
        const int kh = spec.kernel[0], kw = spec.kernel[1];
        const int sh = spec.stride[0], sw = spec.stride[1];
        const int ph = spec.padding[0], pw = spec.padding[1];
        const int cik = ci * kh * kw;
        const int os = oh * ow;
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * os;

        weight.ensure_grad();
        bias.ensure_grad();
        lower_rows(x, n, ci, h, w, oh, ow, col_scratch);
        const T* __restrict cp = col_scratch.data();
        const T* __restrict gp = gout.ptr();
        const T* __restrict wp = weight.ptr();
        T* __restrict wg = weight.grad_ptr();
        T* __restrict bg = bias.grad_ptr();

        // weight and bias gradients: one pass over the patch rows per channel
        const int oc_blocks = (co + 3) / 4;
#pragma omp parallel for schedule(static)
        for (int blk = 0; blk < oc_blocks; ++blk) {
            const int oc0 = blk * 4;
            if (oc0 + 4 <= co) {
                T* w0 = wg + static_cast<std::size_t>(oc0) * cik;
                T* w1 = w0 + cik;
                T* w2 = w1 + cik;
                T* w3 = w2 + cik;
                T b0 = 0, b1 = 0, b2 = 0, b3 = 0;
                for (std::ptrdiff_t r = 0; r < rows; ++r) {
                    const int in = static_cast<int>(r / os);
                    const int s = static_cast<int>(r % os);
                    const T* gbase = gp + static_cast<std::size_t>(in) * co * os + s;
                    const T g0 = gbase[static_cast<std::size_t>(oc0) * os];
                    const T g1 = gbase[static_cast<std::size_t>(oc0 + 1) * os];
                    const T g2 = gbase[static_cast<std::size_t>(oc0 + 2) * os];
                    const T g3 = gbase[static_cast<std::size_t>(oc0 + 3) * os];
                    b0 += g0;
                    b1 += g1;
                    b2 += g2;
                    b3 += g3;
                    detail::waxpy4_span(w0, w1, w2, w3, cp + r * cik, g0, g1, g2, g3, cik);
                }
                bg[oc0] += b0;
                bg[oc0 + 1] += b1;
                bg[oc0 + 2] += b2;
                bg[oc0 + 3] += b3;
            } else {
                for (int oc = oc0; oc < co; ++oc) {
                    T* wrow = wg + static_cast<std::size_t>(oc) * cik;
                    T bacc = 0;
                    for (std::ptrdiff_t r = 0; r < rows; ++r) {
                        const int in = static_cast<int>(r / os);
                        const int s = static_cast<int>(r % os);
                        const T g = gp[(static_cast<std::size_t>(in) * co + oc) * os + s];
                        bacc += g;
                        detail::axpy_span(wrow, cp + r * cik, g, cik);
                    }
                    bg[oc] += bacc;
                }
            }
        }

        // input gradient: per-row combination of weight rows, then fold the
        // patch rows back onto the input grid
        gcol_scratch.assign(static_cast<std::size_t>(rows) * cik, T(0));
        T* __restrict gcp = gcol_scratch.data();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / os);
            const int s = static_cast<int>(r % os);
            T* grow = gcp + r * cik;
            const T* gbase = gp + static_cast<std::size_t>(in) * co * os + s;
            int oc = 0;
            for (; oc + 4 <= co; oc += 4) {
                const T* w0 = wp + static_cast<std::size_t>(oc) * cik;
                detail::axpy4_span(grow, w0, w0 + cik, w0 + 2 * cik, w0 + 3 * cik,
                                   gbase[static_cast<std::size_t>(oc) * os],
                                   gbase[static_cast<std::size_t>(oc + 1) * os],
                                   gbase[static_cast<std::size_t>(oc + 2) * os],
                                   gbase[static_cast<std::size_t>(oc + 3) * os], cik);
            }
            for (; oc < co; ++oc)
                detail::axpy_span(grow, wp + static_cast<std::size_t>(oc) * cik,
                                  gbase[static_cast<std::size_t>(oc) * os], cik);
        }
        Tensor<T> gin = detail::make_like_rank(x, n, {ci, h, w});
        T* __restrict gip = gin.ptr();
#pragma omp parallel for schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int s = 0; s < os; ++s) {
                const int oy = s / ow, ox = s % ow;
                const T* src = gcp + (static_cast<std::ptrdiff_t>(in) * os + s) * cik;
                for (int ic = 0; ic < ci; ++ic) {
                    T* gi = gip + (static_cast<std::size_t>(in) * ci + ic) * h * w;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * sh + ky - ph;
                        if (iy < 0 || iy >= h) continue;
                        T* girow = gi + iy * w;
                        const T* srow = src + (ic * kh + ky) * kw;
                        const int base = ox * sw - pw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = base + kx;
                            if (ix >= 0 && ix < w) girow[ix] += srow[kx];
                        }
                    }
                }
            }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Conv3d: weight [Co, Ci, kd, kh, kw], input [N, Ci, D, H, W] (or unbatched).
// Same patch-row lowering as Conv2d.
// ---------------------------------------------------------------------------
template <class T>
struct Conv3d {
    ConvSpec spec;
    std::string name = "conv3d";
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> x_cache;
    std::vector<T> col_scratch, gcol_scratch;

    void build(Rng& rng) {
        spec.validate(3, false);
        weight = Tensor<T>(
            {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]});
        bias = Tensor<T>({spec.out_channels});
        kaiming_fill(weight, spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2], rng);
        weight.ensure_grad();
        bias.ensure_grad();
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", weight, true);
        fn(prefix + ".bias", bias, true);
    }

    void lower_rows(const Tensor<T>& x, int n, int ci, int d, int h, int w, int od, int oh, int ow,
                    std::vector<T>& col) const {
        const int kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
        const int sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
        const int pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
        const int cik = ci * kd * kh * kw;
        const int os = od * oh * ow;
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * os;
        col.resize(static_cast<std::size_t>(rows) * cik);
        const T* __restrict xp = x.ptr();
        T* __restrict cp = col.data();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / os);
            const int s = static_cast<int>(r % os);
            const int oz = s / (oh * ow);
            const int oy = (s / ow) % oh;
            const int ox = s % ow;
            T* dst = cp + r * cik;
            for (int ic = 0; ic < ci; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * ci + ic) * d * h * w;
                for (int kz = 0; kz < kd; ++kz) {
                    const int iz = oz * sd + kz - pd;
                    if (iz < 0 || iz >= d) {
                        for (int i = 0; i < kh * kw; ++i) *dst++ = T(0);
                        continue;
                    }
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * sh + ky - ph;
                        if (iy < 0 || iy >= h) {
                            for (int kx = 0; kx < kw; ++kx) *dst++ = T(0);
                            continue;
                        }
                        const T* xrow = xin + (static_cast<std::size_t>(iz) * h + iy) * w;
                        const int base = ox * sw - pw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = base + kx;
                            *dst++ = (ix >= 0 && ix < w) ? xrow[ix] : T(0);
                        }
                    }
                }
            }
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 3, "conv3d", ci, sp);
        if (ci != spec.in_channels)
            throw DimensionError("conv3d: channel axis mismatch: input has " + std::to_string(ci) +
                                 " channels, spec expects " + std::to_string(spec.in_channels));
        const int d = sp[0], h = sp[1], w = sp[2];
        const int od = spec.conv_out_extent(d, 0, "conv3d");
        const int oh = spec.conv_out_extent(h, 1, "conv3d");
        const int ow = spec.conv_out_extent(w, 2, "conv3d");
        const int co = spec.out_channels;
        const int cik = ci * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
        const int os = od * oh * ow;
        Tensor<T> out = detail::make_like_rank(x, n, {co, od, oh, ow});

        lower_rows(x, n, ci, d, h, w, od, oh, ow, col_scratch);
        const T* __restrict cp = col_scratch.data();
        const T* __restrict wp = weight.ptr();
        const T* __restrict bp = bias.ptr();
        T* __restrict op = out.ptr();
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * os;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / os);
            const int s = static_cast<int>(r % os);
            const T* crow = cp + r * cik;
            T* obase = op + static_cast<std::size_t>(in) * co * os + s;
            int oc = 0;
            for (; oc + 4 <= co; oc += 4) {
                const T* w0 = wp + static_cast<std::size_t>(oc) * cik;
                T d4[4];
                detail::dot4_span(w0, w0 + cik, w0 + 2 * cik, w0 + 3 * cik, crow, cik, d4);
                for (int j = 0; j < 4; ++j)
                    obase[static_cast<std::size_t>(oc + j) * os] = bp[oc + j] + d4[j];
            }
            for (; oc < co; ++oc)
                obase[static_cast<std::size_t>(oc) * os] =
                    bp[oc] + detail::dot_span(wp + static_cast<std::size_t>(oc) * cik, crow, cik);
        }
        x_cache = x;
        TCNET_DEBUG_CHECK_FINITE(out, name.c_str());
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const Tensor<T>& x = x_cache;
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 3, "conv3d", ci, sp);
        const int d = sp[0], h = sp[1], w = sp[2];
        const int co = spec.out_channels;
        int gc = 0;
        std::vector<int> gsp;
        detail::split_batch(gout, 3, "conv3d", gc, gsp);
        const int od = gsp[0], oh = gsp[1], ow = gsp[2];
        const int kd = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
        const int sd = spec.stride[0], sh = spec.stride[1], sw = spec.stride[2];
        const int pd = spec.padding[0], ph = spec.padding[1], pw = spec.padding[2];
        const int cik = ci * kd * kh * kw;
        const int os = od * oh * ow;
        const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(n) * os;

        weight.ensure_grad();
        bias.ensure_grad();
        lower_rows(x, n, ci, d, h, w, od, oh, ow, col_scratch);
        const T* __restrict cp = col_scratch.data();
        const T* __restrict gp = gout.ptr();
        const T* __restrict wp = weight.ptr();
        T* __restrict wg = weight.grad_ptr();
        T* __restrict bg = bias.grad_ptr();

        const int oc_blocks = (co + 3) / 4;
#pragma omp parallel for schedule(static)
        for (int blk = 0; blk < oc_blocks; ++blk) {
            const int oc0 = blk * 4;
            if (oc0 + 4 <= co) {
                T* w0 = wg + static_cast<std::size_t>(oc0) * cik;
                T* w1 = w0 + cik;
                T* w2 = w1 + cik;
                T* w3 = w2 + cik;
                T b0 = 0, b1 = 0, b2 = 0, b3 = 0;
                for (std::ptrdiff_t r = 0; r < rows; ++r) {
                    const int in = static_cast<int>(r / os);
                    const int s = static_cast<int>(r % os);
                    const T* gbase = gp + static_cast<std::size_t>(in) * co * os + s;
                    const T g0 = gbase[static_cast<std::size_t>(oc0) * os];
                    const T g1 = gbase[static_cast<std::size_t>(oc0 + 1) * os];
                    const T g2 = gbase[static_cast<std::size_t>(oc0 + 2) * os];
                    const T g3 = gbase[static_cast<std::size_t>(oc0 + 3) * os];
                    b0 += g0;
                    b1 += g1;
                    b2 += g2;
                    b3 += g3;
                    detail::waxpy4_span(w0, w1, w2, w3, cp + r * cik, g0, g1, g2, g3, cik);
                }
                bg[oc0] += b0;
                bg[oc0 + 1] += b1;
                bg[oc0 + 2] += b2;
                bg[oc0 + 3] += b3;
            } else {
                for (int oc = oc0; oc < co; ++oc) {
                    T* wrow = wg + static_cast<std::size_t>(oc) * cik;
                    T bacc = 0;
                    for (std::ptrdiff_t r = 0; r < rows; ++r) {
                        const int in = static_cast<int>(r / os);
                        const int s = static_cast<int>(r % os);
                        const T g = gp[(static_cast<std::size_t>(in) * co + oc) * os + s];
                        bacc += g;
                        detail::axpy_span(wrow, cp + r * cik, g, cik);
                    }
                    bg[oc] += bacc;
                }
            }
        }

        gcol_scratch.assign(static_cast<std::size_t>(rows) * cik, T(0));
        T* __restrict gcp = gcol_scratch.data();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t r = 0; r < rows; ++r) {
            const int in = static_cast<int>(r / os);
            const int s = static_cast<int>(r % os);
            T* grow = gcp + r * cik;
            const T* gbase = gp + static_cast<std::size_t>(in) * co * os + s;
            int oc = 0;
            for (; oc + 4 <= co; oc += 4) {
                const T* w0 = wp + static_cast<std::size_t>(oc) * cik;
                detail::axpy4_span(grow, w0, w0 + cik, w0 + 2 * cik, w0 + 3 * cik,
                                   gbase[static_cast<std::size_t>(oc) * os],
                                   gbase[static_cast<std::size_t>(oc + 1) * os],
                                   gbase[static_cast<std::size_t>(oc + 2) * os],
                                   gbase[static_cast<std::size_t>(oc + 3) * os], cik);
            }
            for (; oc < co; ++oc)
                detail::axpy_span(grow, wp + static_cast<std::size_t>(oc) * cik,
                                  gbase[static_cast<std::size_t>(oc) * os], cik);
        }
        Tensor<T> gin = detail::make_like_rank(x, n, {ci, d, h, w});
        T* __restrict gip = gin.ptr();
#pragma omp parallel for schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int s = 0; s < os; ++s) {
                const int oz = s / (oh * ow);
                const int oy = (s / ow) % oh;
                const int ox = s % ow;
                const T* src = gcp + (static_cast<std::ptrdiff_t>(in) * os + s) * cik;
                for (int ic = 0; ic < ci; ++ic) {
                    T* gi = gip + (static_cast<std::size_t>(in) * ci + ic) * d * h * w;
                    for (int kz = 0; kz < kd; ++kz) {
                        const int iz = oz * sd + kz - pd;
                        if (iz < 0 || iz >= d) continue;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * sh + ky - ph;
                            if (iy < 0 || iy >= h) continue;
                            T* girow = gi + (static_cast<std::size_t>(iz) * h + iy) * w;
                            const T* srow = src + ((ic * kd + kz) * kh + ky) * kw;
                            const int base = ox * sw - pw;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = base + kx;
                                if (ix >= 0 && ix < w) girow[ix] += srow[kx];
                            }
                        }
                    }
                }
            }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// TransposedConv2d: weight [Ci, Co, kh, kw]; adjoint of strided conv2d.
// Output extent per axis: (in-1)*stride - 2*padding + kernel + output_padding.
// ---------------------------------------------------------------------------
template <class T>
struct TransposedConv2d {
    ConvSpec spec;
    std::string name = "transposed_conv2d";
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> x_cache;

    void build(Rng& rng) {
        spec.validate(2, true);
        weight = Tensor<T>({spec.in_channels, spec.out_channels, spec.kernel[0], spec.kernel[1]});
        bias = Tensor<T>({spec.out_channels});
        kaiming_fill(weight, spec.in_channels * spec.kernel[0] * spec.kernel[1], rng);
        weight.ensure_grad();
        bias.ensure_grad();
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", weight, true);
        fn(prefix + ".bias", bias, true);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "transposed_conv2d", ci, sp);
        if (ci != spec.in_channels)
            throw DimensionError("transposed_conv2d: channel axis mismatch: input has " + std::to_string(ci) +
                                 " channels, spec expects " + std::to_string(spec.in_channels));
        const int h = sp[0], w = sp[1];
        const int oh = spec.transposed_out_extent(h, 0, "transposed_conv2d");
        const int ow = spec.transposed_out_extent(w, 1, "transposed_conv2d");
        const int co = spec.out_channels;
        Tensor<T> out = detail::make_like_rank(x, n, {co, oh, ow});

        const int kh = spec.kernel[0], kw = spec.kernel[1];
        const int sh = spec.stride[0], sw = spec.stride[1];
        const int ph = spec.padding[0], pw = spec.padding[1];
        const T* __restrict xp = x.ptr();
        const T* __restrict wp = weight.ptr();
        const T* __restrict bp = bias.ptr();
        T* __restrict op = out.ptr();

#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int oc = 0; oc < co; ++oc) {
                T* o = op + (static_cast<std::size_t>(in) * co + oc) * oh * ow;
                const T bv = bp[oc];
                for (int i = 0; i < oh * ow; ++i) o[i] = bv;
                for (int ic = 0; ic < ci; ++ic) {
                    const T* xin = xp + (static_cast<std::size_t>(in) * ci + ic) * h * w;
                    const T* wk = wp + (static_cast<std::size_t>(ic) * co + oc) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int ylo, yhi;
                        detail::tap_range(oh, h, sh, ph, ky, ylo, yhi);
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wv = wk[ky * kw + kx];
                            int xlo, xhi;
                            detail::tap_range(ow, w, sw, pw, kx, xlo, xhi);
                            for (int iy = ylo; iy < yhi; ++iy) {
                                const T* xrow = xin + iy * w;
                                T* orow = o + (iy * sh + ky - ph) * ow;
                                for (int ix = xlo; ix < xhi; ++ix)
                                    orow[ix * sw + kx - pw] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
        x_cache = x;
        TCNET_DEBUG_CHECK_FINITE(out, name.c_str());
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const Tensor<T>& x = x_cache;
        int ci = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "transposed_conv2d", ci, sp);
        const int h = sp[0], w = sp[1];
        const int co = spec.out_channels;
        int gc = 0;
        std::vector<int> gsp;
        detail::split_batch(gout, 2, "transposed_conv2d", gc, gsp);
        const int oh = gsp[0], ow = gsp[1];

        const int kh = spec.kernel[0], kw = spec.kernel[1];
        const int sh = spec.stride[0], sw = spec.stride[1];
        const int ph = spec.padding[0], pw = spec.padding[1];

        Tensor<T> gin = detail::make_like_rank(x, n, {ci, h, w});
        weight.ensure_grad();
        bias.ensure_grad();
        const T* __restrict gp = gout.ptr();
        const T* __restrict xp = x.ptr();
        const T* __restrict wp = weight.ptr();
        T* __restrict gip = gin.ptr();
        T* __restrict wg = weight.grad_ptr();
        T* __restrict bg = bias.grad_ptr();

        // input gradient: gather from gout
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < ci; ++ic) {
                T* gi = gip + (static_cast<std::size_t>(in) * ci + ic) * h * w;
                for (int oc = 0; oc < co; ++oc) {
                    const T* go = gp + (static_cast<std::size_t>(in) * co + oc) * oh * ow;
                    const T* wk = wp + (static_cast<std::size_t>(ic) * co + oc) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int ylo, yhi;
                        detail::tap_range(oh, h, sh, ph, ky, ylo, yhi);
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wv = wk[ky * kw + kx];
                            int xlo, xhi;
                            detail::tap_range(ow, w, sw, pw, kx, xlo, xhi);
                            for (int iy = ylo; iy < yhi; ++iy) {
                                T* girow = gi + iy * w;
                                const T* grow = go + (iy * sh + ky - ph) * ow;
                                for (int ix = xlo; ix < xhi; ++ix)
                                    girow[ix] += wv * grow[ix * sw + kx - pw];
                            }
                        }
                    }
                }
            }
        }

        // weight and bias gradients
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < co; ++oc) {
            T bsum = 0;
            for (int in = 0; in < n; ++in) {
                const T* go = gp + (static_cast<std::size_t>(in) * co + oc) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) bsum += go[i];
            }
            bg[oc] += bsum;
            for (int ic = 0; ic < ci; ++ic) {
                T* wk = wg + (static_cast<std::size_t>(ic) * co + oc) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    int ylo, yhi;
                    detail::tap_range(oh, h, sh, ph, ky, ylo, yhi);
                    for (int kx = 0; kx < kw; ++kx) {
                        int xlo, xhi;
                        detail::tap_range(ow, w, sw, pw, kx, xlo, xhi);
                        T acc = 0;
                        for (int in = 0; in < n; ++in) {
                            const T* xin = xp + (static_cast<std::size_t>(in) * ci + ic) * h * w;
                            const T* go = gp + (static_cast<std::size_t>(in) * co + oc) * oh * ow;
                            for (int iy = ylo; iy < yhi; ++iy) {
                                const T* xrow = xin + iy * w;
                                const T* grow = go + (iy * sh + ky - ph) * ow;
                                for (int ix = xlo; ix < xhi; ++ix)
                                    acc += xrow[ix] * grow[ix * sw + kx - pw];
                            }
                        }
                        wk[ky * kw + kx] += acc;
                    }
                }
            }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Pooling. Only the stride == window mode is supported; extents must divide.
// ---------------------------------------------------------------------------
template <class T>
struct MaxPool2d {
    int window_h = 2, window_w = 2;
    std::string name = "max_pool2d";
    std::vector<int> argmax_cache;
    std::vector<int> in_shape_cache;

    MaxPool2d() = default;
    MaxPool2d(int window, int stride) : window_h(window), window_w(window) {
        if (stride != window) throw ConfigError("max_pool2d: only stride == window is supported");
        if (window <= 0) throw ConfigError("max_pool2d: window must be positive");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "max_pool2d", c, sp);
        const int h = sp[0], w = sp[1];
        if (h % window_h != 0)
            throw DimensionError("max_pool2d: height " + std::to_string(h) + " not divisible by window " +
                                 std::to_string(window_h));
        if (w % window_w != 0)
            throw DimensionError("max_pool2d: width " + std::to_string(w) + " not divisible by window " +
                                 std::to_string(window_w));
        const int oh = h / window_h, ow = w / window_w;
        Tensor<T> out = detail::make_like_rank(x, n, {c, oh, ow});
        argmax_cache.assign(out.numel(), 0);
        in_shape_cache = x.shape;

        const T* __restrict xp = x.ptr();
        T* __restrict op = out.ptr();
        int* __restrict am = argmax_cache.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * c + ic) * h * w;
                const std::size_t obase = (static_cast<std::size_t>(in) * c + ic) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        T best = xin[(oy * window_h) * w + ox * window_w];
                        int best_idx = (oy * window_h) * w + ox * window_w;
                        for (int wy = 0; wy < window_h; ++wy) {
                            for (int wx = 0; wx < window_w; ++wx) {
                                const int idx = (oy * window_h + wy) * w + ox * window_w + wx;
                                // strict > keeps the first row-major maximum on ties
                                if (xin[idx] > best) {
                                    best = xin[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        op[obase + oy * ow + ox] = best;
                        am[obase + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 2, "max_pool2d", c, sp);
        const int h = sp[0], w = sp[1];
        const int oh = h / window_h, ow = w / window_w;
        const T* __restrict gp = gout.ptr();
        T* __restrict gip = gin.ptr();
        const int* __restrict am = argmax_cache.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const std::size_t obase = (static_cast<std::size_t>(in) * c + ic) * oh * ow;
                T* gi = gip + (static_cast<std::size_t>(in) * c + ic) * h * w;
                for (int i = 0; i < oh * ow; ++i) gi[am[obase + i]] += gp[obase + i];
            }
        }
        return gin;
    }
};

namespace detail {

// Strict pairwise reduction (base case 2): summing k identical values stays
// exact whenever k is a power of two, so average pooling reproduces
// patch-constant maps bit-exactly at every extent the network uses.
template <class T>
T pairwise_sum(const T* v, int n) {
    if (n == 1) return v[0];
    if (n == 2) return v[0] + v[1];
    const int half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

} // namespace detail

template <class T>
struct AvgPool2d {
    int window_h = 2, window_w = 2;
    std::string name = "avg_pool2d";
    std::vector<int> in_shape_cache;

    AvgPool2d() = default;
    AvgPool2d(int wh, int ww) : window_h(wh), window_w(ww) {
        if (wh <= 0 || ww <= 0) throw ConfigError("avg_pool2d: window must be positive");
    }
    AvgPool2d(int window, int stride, bool) : AvgPool2d(window, window) {
        if (stride != window) throw ConfigError("avg_pool2d: only stride == window is supported");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "avg_pool2d", c, sp);
        const int h = sp[0], w = sp[1];
        if (h % window_h != 0)
            throw DimensionError("avg_pool2d: height " + std::to_string(h) + " not divisible by window " +
                                 std::to_string(window_h));
        if (w % window_w != 0)
            throw DimensionError("avg_pool2d: width " + std::to_string(w) + " not divisible by window " +
                                 std::to_string(window_w));
        const int oh = h / window_h, ow = w / window_w;
        Tensor<T> out = detail::make_like_rank(x, n, {c, oh, ow});
        in_shape_cache = x.shape;
        const T inv = T(1) / static_cast<T>(window_h * window_w);
        const T* __restrict xp = x.ptr();
        T* __restrict op = out.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * c + ic) * h * w;
                T* o = op + (static_cast<std::size_t>(in) * c + ic) * oh * ow;
                std::vector<T> window(static_cast<std::size_t>(window_h) * window_w);
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        for (int wy = 0; wy < window_h; ++wy) {
                            const T* xrow = xin + (oy * window_h + wy) * w + ox * window_w;
                            std::copy_n(xrow, window_w, window.data() + wy * window_w);
                        }
                        o[oy * ow + ox] =
                            detail::pairwise_sum(window.data(), window_h * window_w) * inv;
                    }
                }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 2, "avg_pool2d", c, sp);
        const int h = sp[0], w = sp[1];
        const int oh = h / window_h, ow = w / window_w;
        const T inv = T(1) / static_cast<T>(window_h * window_w);
        const T* __restrict gp = gout.ptr();
        T* __restrict gip = gin.ptr();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const T* go = gp + (static_cast<std::size_t>(in) * c + ic) * oh * ow;
                T* gi = gip + (static_cast<std::size_t>(in) * c + ic) * h * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const T gv = go[oy * ow + ox] * inv;
                        for (int wy = 0; wy < window_h; ++wy) {
                            T* girow = gi + (oy * window_h + wy) * w + ox * window_w;
                            for (int wx = 0; wx < window_w; ++wx) girow[wx] += gv;
                        }
                    }
            }
        }
        return gin;
    }
};

// Max pooling over depth/height/width with per-axis window == stride.
template <class T>
struct MaxPool3d {
    int window_d = 1, window_h = 2, window_w = 2;
    std::string name = "max_pool3d";
    std::vector<int> argmax_cache;
    std::vector<int> in_shape_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 3, "max_pool3d", c, sp);
        const int d = sp[0], h = sp[1], w = sp[2];
        if (d % window_d != 0) throw DimensionError("max_pool3d: depth not divisible by window");
        if (h % window_h != 0) throw DimensionError("max_pool3d: height not divisible by window");
        if (w % window_w != 0) throw DimensionError("max_pool3d: width not divisible by window");
        const int od = d / window_d, oh = h / window_h, ow = w / window_w;
        Tensor<T> out = detail::make_like_rank(x, n, {c, od, oh, ow});
        argmax_cache.assign(out.numel(), 0);
        in_shape_cache = x.shape;
        const T* __restrict xp = x.ptr();
        T* __restrict op = out.ptr();
        int* __restrict am = argmax_cache.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * c + ic) * d * h * w;
                const std::size_t obase = (static_cast<std::size_t>(in) * c + ic) * od * oh * ow;
                for (int oz = 0; oz < od; ++oz)
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            int best_idx = (oz * window_d * h + oy * window_h) * w + ox * window_w;
                            T best = xin[best_idx];
                            for (int wz = 0; wz < window_d; ++wz)
                                for (int wy = 0; wy < window_h; ++wy)
                                    for (int wx = 0; wx < window_w; ++wx) {
                                        const int idx = ((oz * window_d + wz) * h + oy * window_h + wy) * w +
                                                        ox * window_w + wx;
                                        if (xin[idx] > best) {
                                            best = xin[idx];
                                            best_idx = idx;
                                        }
                                    }
                            op[obase + (oz * oh + oy) * ow + ox] = best;
                            am[obase + (oz * oh + oy) * ow + ox] = best_idx;
                        }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 3, "max_pool3d", c, sp);
        const int d = sp[0], h = sp[1], w = sp[2];
        const int od = d / window_d, oh = h / window_h, ow = w / window_w;
        const T* __restrict gp = gout.ptr();
        T* __restrict gip = gin.ptr();
        const int* __restrict am = argmax_cache.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (int in = 0; in < n; ++in) {
            for (int ic = 0; ic < c; ++ic) {
                const std::size_t obase = (static_cast<std::size_t>(in) * c + ic) * od * oh * ow;
                T* gi = gip + (static_cast<std::size_t>(in) * c + ic) * d * h * w;
                for (int i = 0; i < od * oh * ow; ++i) gi[am[obase + i]] += gp[obase + i];
            }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

// Per-channel spatial mean: [N, C, H, W] -> [N, C] (or [C, H, W] -> [C]).
template <class T>
struct GlobalAvgPool {
    std::string name = "global_avg_pool";
    std::vector<int> in_shape_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "global_avg_pool", c, sp);
        const int hw = sp[0] * sp[1];
        in_shape_cache = x.shape;
        Tensor<T> out(x.rank() == 3 ? std::vector<int>{c} : std::vector<int>{n, c});
        const T inv = T(1) / static_cast<T>(hw);
        const T* xp = x.ptr();
        T* op = out.ptr();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * c + ic) * hw;
                T acc = 0;
                for (int i = 0; i < hw; ++i) acc += xin[i];
                op[in * c + ic] = acc * inv;
            }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 2, "global_avg_pool", c, sp);
        const int hw = sp[0] * sp[1];
        const T inv = T(1) / static_cast<T>(hw);
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T gv = gp[in * c + ic] * inv;
                T* gi = gip + (static_cast<std::size_t>(in) * c + ic) * hw;
                for (int i = 0; i < hw; ++i) gi[i] += gv;
            }
        return gin;
    }
};

// Pixelwise mean over channels: [N, C, H, W] -> [N, 1, H, W].
template <class T>
struct ChannelMean {
    std::string name = "channel_mean";
    std::vector<int> in_shape_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "channel_mean", c, sp);
        const int hw = sp[0] * sp[1];
        in_shape_cache = x.shape;
        Tensor<T> out = detail::make_like_rank(x, n, {1, sp[0], sp[1]});
        const T inv = T(1) / static_cast<T>(c);
        const T* xp = x.ptr();
        T* op = out.ptr();
        for (int in = 0; in < n; ++in) {
            T* o = op + static_cast<std::size_t>(in) * hw;
            const T* xin = xp + static_cast<std::size_t>(in) * c * hw;
            for (int i = 0; i < hw; ++i) o[i] = 0;
            for (int ic = 0; ic < c; ++ic) {
                const T* xc = xin + static_cast<std::size_t>(ic) * hw;
                for (int i = 0; i < hw; ++i) o[i] += xc[i];
            }
            for (int i = 0; i < hw; ++i) o[i] *= inv;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 2, "channel_mean", c, sp);
        const int hw = sp[0] * sp[1];
        const T inv = T(1) / static_cast<T>(c);
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        for (int in = 0; in < n; ++in) {
            const T* go = gp + static_cast<std::size_t>(in) * hw;
            T* gi = gip + static_cast<std::size_t>(in) * c * hw;
            for (int ic = 0; ic < c; ++ic) {
                T* gc = gi + static_cast<std::size_t>(ic) * hw;
                for (int i = 0; i < hw; ++i) gc[i] += go[i] * inv;
            }
        }
        return gin;
    }
};

// Mean over the depth axis: [N, C, D, H, W] -> [N, C, H, W].
template <class T>
struct DepthMean {
    std::string name = "depth_mean";
    std::vector<int> in_shape_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 3, "depth_mean", c, sp);
        const int d = sp[0], hw = sp[1] * sp[2];
        in_shape_cache = x.shape;
        Tensor<T> out = detail::make_like_rank(x, n, {c, sp[1], sp[2]});
        const T inv = T(1) / static_cast<T>(d);
        const T* xp = x.ptr();
        T* op = out.ptr();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T* xin = xp + (static_cast<std::size_t>(in) * c + ic) * d * hw;
                T* o = op + (static_cast<std::size_t>(in) * c + ic) * hw;
                for (int i = 0; i < hw; ++i) o[i] = 0;
                for (int iz = 0; iz < d; ++iz) {
                    const T* xz = xin + static_cast<std::size_t>(iz) * hw;
                    for (int i = 0; i < hw; ++i) o[i] += xz[i];
                }
                for (int i = 0; i < hw; ++i) o[i] *= inv;
            }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 3, "depth_mean", c, sp);
        const int d = sp[0], hw = sp[1] * sp[2];
        const T inv = T(1) / static_cast<T>(d);
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T* go = gp + (static_cast<std::size_t>(in) * c + ic) * hw;
                T* gi = gip + (static_cast<std::size_t>(in) * c + ic) * d * hw;
                for (int iz = 0; iz < d; ++iz) {
                    T* gz = gi + static_cast<std::size_t>(iz) * hw;
                    for (int i = 0; i < hw; ++i) gz[i] += go[i] * inv;
                }
            }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Dense: weight [M, K], input [N, K] or [K].
// ---------------------------------------------------------------------------
template <class T>
struct Dense {
    int in_features = 0, out_features = 0;
    std::string name = "dense";
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> x_cache;

    void build(int in_f, int out_f, Rng& rng) {
        if (in_f <= 0 || out_f <= 0) throw ConfigError("dense: feature counts must be positive");
        in_features = in_f;
        out_features = out_f;
        weight = Tensor<T>({out_f, in_f});
        bias = Tensor<T>({out_f});
        kaiming_fill(weight, in_f, rng);
        weight.ensure_grad();
        bias.ensure_grad();
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", weight, true);
        fn(prefix + ".bias", bias, true);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int n = x.rank() == 2 ? x.shape[0] : 1;
        const int k = x.rank() == 2 ? x.shape[1] : x.shape[0];
        if (x.rank() > 2 || k != in_features)
            throw DimensionError("dense: feature axis mismatch: input " + shape_string(x.shape) +
                                 ", expected " + std::to_string(in_features) + " features");
        Tensor<T> out(x.rank() == 2 ? std::vector<int>{n, out_features} : std::vector<int>{out_features});
        const T* xp = x.ptr();
        const T* wp = weight.ptr();
        const T* bp = bias.ptr();
        T* op = out.ptr();
        for (int in = 0; in < n; ++in) {
            const T* xr = xp + static_cast<std::size_t>(in) * k;
            T* o = op + static_cast<std::size_t>(in) * out_features;
            for (int m = 0; m < out_features; ++m) {
                const T* wr = wp + static_cast<std::size_t>(m) * k;
                T acc = bp[m];
                for (int i = 0; i < k; ++i) acc += wr[i] * xr[i];
                o[m] = acc;
            }
        }
        x_cache = x;
        TCNET_DEBUG_CHECK_FINITE(out, name.c_str());
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const Tensor<T>& x = x_cache;
        const int n = x.rank() == 2 ? x.shape[0] : 1;
        const int k = in_features;
        Tensor<T> gin(x.shape);
        weight.ensure_grad();
        bias.ensure_grad();
        const T* gp = gout.ptr();
        const T* xp = x.ptr();
        const T* wp = weight.ptr();
        T* gip = gin.ptr();
        T* wg = weight.grad_ptr();
        T* bg = bias.grad_ptr();
        for (int in = 0; in < n; ++in) {
            const T* go = gp + static_cast<std::size_t>(in) * out_features;
            const T* xr = xp + static_cast<std::size_t>(in) * k;
            T* gi = gip + static_cast<std::size_t>(in) * k;
            for (int m = 0; m < out_features; ++m) {
                const T gv = go[m];
                const T* wr = wp + static_cast<std::size_t>(m) * k;
                T* wgr = wg + static_cast<std::size_t>(m) * k;
                bg[m] += gv;
                for (int i = 0; i < k; ++i) {
                    gi[i] += gv * wr[i];
                    wgr[i] += gv * xr[i];
                }
            }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------
template <class T>
struct ReLU {
    std::string name = "relu";
    Tensor<T> x_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> out(x.shape);
        const T* xp = x.ptr();
        T* op = out.ptr();
        const std::size_t m = x.numel();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
            op[i] = xp[i] > T(0) ? xp[i] : T(0);
        x_cache = x;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(x_cache.shape);
        const T* xp = x_cache.ptr();
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        const std::size_t m = gin.numel();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
            gip[i] = xp[i] > T(0) ? gp[i] : T(0);
        return gin;
    }
};

template <class T>
struct Sigmoid {
    std::string name = "sigmoid";
    Tensor<T> y_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        Tensor<T> out(x.shape);
        const T* xp = x.ptr();
        T* op = out.ptr();
        const std::size_t m = x.numel();
        for (std::size_t i = 0; i < m; ++i) op[i] = T(1) / (T(1) + std::exp(-xp[i]));
        y_cache = out;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(y_cache.shape);
        const T* yp = y_cache.ptr();
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        const std::size_t m = gin.numel();
        for (std::size_t i = 0; i < m; ++i) gip[i] = gp[i] * yp[i] * (T(1) - yp[i]);
        return gin;
    }
};

// Inverted dropout: eval mode is identity; training scales survivors by 1/(1-p).
template <class T>
struct Dropout {
    double p = 0.0;
    std::string name = "dropout";
    Rng rng;
    std::vector<T> mask_cache;
    bool was_training = false;

    Dropout() = default;
    explicit Dropout(double rate, std::uint64_t seed = 0) : p(rate), rng(seed) {
        if (rate < 0.0 || rate >= 1.0)
            throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        was_training = training && p > 0.0;
        if (!was_training) return x;
        Tensor<T> out(x.shape);
        mask_cache.assign(x.numel(), T(0));
        const T scale = static_cast<T>(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < x.numel(); ++i) {
            if (!rng.bernoulli(p)) mask_cache[i] = scale;
            out.data[i] = x.data[i] * mask_cache[i];
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!was_training) return gout;
        Tensor<T> gin(gout.shape);
        for (std::size_t i = 0; i < gout.numel(); ++i) gin.data[i] = gout.data[i] * mask_cache[i];
        return gin;
    }
};

// ---------------------------------------------------------------------------
// BatchNorm over channel axis 1 of [N, C, ...]; works for 2D and 3D maps and
// plain [N, C] features. Training mode uses batch statistics, eval mode the
// running estimates (also the frozen-stats mode gradient checks rely on).
// ---------------------------------------------------------------------------
template <class T>
struct BatchNorm {
    int channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    std::string name = "batch_norm";
    Tensor<T> scale, shift;
    Tensor<T> running_mean, running_var;
    // caches
    Tensor<T> xhat_cache;
    std::vector<T> inv_std_cache;
    bool trained_mode_cache = false;

    void build(int c, double eps_ = 1e-5, double momentum_ = 0.1) {
        if (c <= 0) throw ConfigError("batch_norm: channel count must be positive");
        if (eps_ <= 0) throw ConfigError("batch_norm: epsilon must be positive");
        if (momentum_ < 0 || momentum_ > 1) throw ConfigError("batch_norm: momentum must lie in [0, 1]");
        channels = c;
        eps = eps_;
        momentum = momentum_;
        scale = Tensor<T>::full({c}, T(1));
        shift = Tensor<T>({c});
        running_mean = Tensor<T>({c});
        running_var = Tensor<T>::full({c}, T(1));
        scale.ensure_grad();
        shift.ensure_grad();
    }

    void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".scale", scale, true);
        fn(prefix + ".shift", shift, true);
        fn(prefix + ".running_mean", running_mean, false);
        fn(prefix + ".running_var", running_var, false);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (x.rank() < 2 || x.shape[1] != channels)
            throw DimensionError("batch_norm: channel axis mismatch: input " + shape_string(x.shape) +
                                 ", expected " + std::to_string(channels) + " channels on axis 1");
        const int n = x.shape[0];
        std::size_t spatial = 1;
        for (int a = 2; a < x.rank(); ++a) spatial *= static_cast<std::size_t>(x.shape[a]);
        const std::size_t per_channel = static_cast<std::size_t>(n) * spatial;

        Tensor<T> out(x.shape);
        xhat_cache = Tensor<T>(x.shape);
        inv_std_cache.assign(channels, T(0));
        trained_mode_cache = training;
        const T* xp = x.ptr();
        T* op = out.ptr();
        T* xh = xhat_cache.ptr();

#pragma omp parallel for schedule(static)
        for (int c = 0; c < channels; ++c) {
            T mean, var;
            if (training) {
                T sum = 0, sq = 0;
                for (int in = 0; in < n; ++in) {
                    const T* xc = xp + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) {
                        sum += xc[i];
                        sq += xc[i] * xc[i];
                    }
                }
                mean = sum / static_cast<T>(per_channel);
                var = sq / static_cast<T>(per_channel) - mean * mean;
                if (var < T(0)) var = T(0);
                running_mean.data[c] =
                    static_cast<T>((1.0 - momentum) * running_mean.data[c] + momentum * mean);
                running_var.data[c] =
                    static_cast<T>((1.0 - momentum) * running_var.data[c] + momentum * var);
            } else {
                mean = running_mean.data[c];
                var = running_var.data[c];
            }
            const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
            inv_std_cache[c] = inv_std;
            const T g = scale.data[c], b = shift.data[c];
            for (int in = 0; in < n; ++in) {
                const T* xc = xp + (static_cast<std::size_t>(in) * channels + c) * spatial;
                T* oc = op + (static_cast<std::size_t>(in) * channels + c) * spatial;
                T* hc = xh + (static_cast<std::size_t>(in) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const T h = (xc[i] - mean) * inv_std;
                    hc[i] = h;
                    oc[i] = g * h + b;
                }
            }
        }
        TCNET_DEBUG_CHECK_FINITE(out, name.c_str());
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        const int n = gout.shape[0];
        std::size_t spatial = 1;
        for (int a = 2; a < gout.rank(); ++a) spatial *= static_cast<std::size_t>(gout.shape[a]);
        const std::size_t per_channel = static_cast<std::size_t>(n) * spatial;
        Tensor<T> gin(gout.shape);
        scale.ensure_grad();
        shift.ensure_grad();
        const T* gp = gout.ptr();
        const T* xh = xhat_cache.ptr();
        T* gip = gin.ptr();

#pragma omp parallel for schedule(static)
        for (int c = 0; c < channels; ++c) {
            T gsum = 0, ghsum = 0;
            for (int in = 0; in < n; ++in) {
                const T* gc = gp + (static_cast<std::size_t>(in) * channels + c) * spatial;
                const T* hc = xh + (static_cast<std::size_t>(in) * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    gsum += gc[i];
                    ghsum += gc[i] * hc[i];
                }
            }
            scale.grad[c] += ghsum;
            shift.grad[c] += gsum;
            const T g = scale.data[c];
            const T inv_std = inv_std_cache[c];
            if (trained_mode_cache) {
                const T inv_m = T(1) / static_cast<T>(per_channel);
                for (int in = 0; in < n; ++in) {
                    const T* gc = gp + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    const T* hc = xh + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    T* gi = gip + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i)
                        gi[i] += g * inv_std * (gc[i] - gsum * inv_m - hc[i] * ghsum * inv_m);
                }
            } else {
                for (int in = 0; in < n; ++in) {
                    const T* gc = gp + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    T* gi = gip + (static_cast<std::size_t>(in) * channels + c) * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) gi[i] += g * inv_std * gc[i];
                }
            }
        }
        return gin;
    }
};

// Nearest-neighbour 2x upsampling (decoder fallback when MDU is ablated).
template <class T>
struct NearestUpsample2x {
    std::string name = "nearest_upsample_2x";
    std::vector<int> in_shape_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(x, 2, "nearest_upsample_2x", c, sp);
        const int h = sp[0], w = sp[1];
        in_shape_cache = x.shape;
        Tensor<T> out = detail::make_like_rank(x, n, {c, 2 * h, 2 * w});
        const T* xp = x.ptr();
        T* op = out.ptr();
        for (int nc = 0; nc < n * c; ++nc) {
            const T* xin = xp + static_cast<std::size_t>(nc) * h * w;
            T* o = op + static_cast<std::size_t>(nc) * 4 * h * w;
            for (int y = 0; y < h; ++y)
                for (int x2 = 0; x2 < w; ++x2) {
                    const T v = xin[y * w + x2];
                    T* r0 = o + (2 * y) * 2 * w + 2 * x2;
                    T* r1 = r0 + 2 * w;
                    r0[0] = r0[1] = r1[0] = r1[1] = v;
                }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> gin(in_shape_cache);
        int c = 0;
        std::vector<int> sp;
        const int n = detail::split_batch(gin, 2, "nearest_upsample_2x", c, sp);
        const int h = sp[0], w = sp[1];
        const T* gp = gout.ptr();
        T* gip = gin.ptr();
        for (int nc = 0; nc < n * c; ++nc) {
            const T* go = gp + static_cast<std::size_t>(nc) * 4 * h * w;
            T* gi = gip + static_cast<std::size_t>(nc) * h * w;
            for (int y = 0; y < h; ++y)
                for (int x2 = 0; x2 < w; ++x2) {
                    const T* r0 = go + (2 * y) * 2 * w + 2 * x2;
                    const T* r1 = r0 + 2 * w;
                    gi[y * w + x2] += r0[0] + r0[1] + r1[0] + r1[1];
                }
        }
        return gin;
    }
};

// ---------------------------------------------------------------------------
// Channel concatenation helpers (axis 1 of batched tensors, axis 0 otherwise).
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank())
        throw DimensionError("concat_channels: rank mismatch " + shape_string(a.shape) + " vs " +
                             shape_string(b.shape));
    const int axis = a.rank() >= 2 ? 1 : 0;
    std::vector<int> shape = a.shape;
    for (int i = 0; i < a.rank(); ++i) {
        if (i == axis) continue;
        if (a.shape[i] != b.shape[i])
            throw DimensionError("concat_channels: axis " + std::to_string(i) + " mismatch " +
                                 shape_string(a.shape) + " vs " + shape_string(b.shape));
    }
    shape[axis] = a.shape[axis] + b.shape[axis];
    Tensor<T> out(shape);
    std::size_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.shape[i]);
    std::size_t inner = 1;
    for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.shape[i]);
    const std::size_t ca = static_cast<std::size_t>(a.shape[axis]) * inner;
    const std::size_t cb = static_cast<std::size_t>(b.shape[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.ptr() + o * ca, ca, out.ptr() + o * (ca + cb));
        std::copy_n(b.ptr() + o * cb, cb, out.ptr() + o * (ca + cb) + ca);
    }
    return out;
}

template <class T>
void split_channels(const Tensor<T>& g, int channels_a, Tensor<T>& ga, Tensor<T>& gb) {
    const int axis = g.rank() >= 2 ? 1 : 0;
    std::vector<int> sa = g.shape, sb = g.shape;
    sa[axis] = channels_a;
    sb[axis] = g.shape[axis] - channels_a;
    ga = Tensor<T>(sa);
    gb = Tensor<T>(sb);
    std::size_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(g.shape[i]);
    std::size_t inner = 1;
    for (int i = axis + 1; i < g.rank(); ++i) inner *= static_cast<std::size_t>(g.shape[i]);
    const std::size_t ca = static_cast<std::size_t>(channels_a) * inner;
    const std::size_t cb = static_cast<std::size_t>(sb[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(g.ptr() + o * (ca + cb), ca, ga.ptr() + o * ca);
        std::copy_n(g.ptr() + o * (ca + cb) + ca, cb, gb.ptr() + o * cb);
    }
}

} // namespace tcnet
