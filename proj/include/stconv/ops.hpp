#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "stconv/autodiff.hpp"
#include "stconv/rng.hpp"
#include "stconv/tensor.hpp"

namespace stconv {

enum class Mode { train, eval };

using Stride3 = std::array<std::int64_t, 3>;

namespace detail {

inline void check_rank(const char* op, const char* name, std::int64_t got, std::int64_t want) {
    if (got != want)
        throw std::invalid_argument(std::string(op) + ": " + name + " must have rank " +
                                    std::to_string(want) + ", got " + std::to_string(got));
}

/// floor((in + before + after - k) / stride) + 1, rejected when empty.
inline std::int64_t conv_out_extent(const char* op, std::int64_t axis, std::int64_t in,
                                    std::int64_t k, std::int64_t stride, const AxisPad& pad) {
    if (stride < 1)
        throw std::invalid_argument(std::string(op) + ": stride " + std::to_string(stride) +
                                    " on axis " + std::to_string(axis) + " must be >= 1");
    const std::int64_t span = in + pad.before + pad.after - k;
    if (span < 0)
        throw std::invalid_argument(std::string(op) + ": kernel extent " + std::to_string(k) +
                                    " exceeds padded input " + std::to_string(in + pad.before + pad.after) +
                                    " on axis " + std::to_string(axis));
    return span / stride + 1;
}

template <typename S>
Tensor<S> pad_tensor(const Tensor<S>& x, const PadSpec& spec) {
    if (spec.rank() != x.rank())
        throw std::invalid_argument("pad: spec rank " + std::to_string(spec.rank()) +
                                    " does not match tensor rank " + std::to_string(x.rank()));
    if (spec.is_zero()) return x;
    const std::int64_t rank = x.rank();
    Shape os(static_cast<std::size_t>(rank));
    for (std::int64_t a = 0; a < rank; ++a) os[static_cast<std::size_t>(a)] = x.extent(a) + spec.total(a);
    Tensor<S> out(os);

    std::vector<std::int64_t> ostrides(static_cast<std::size_t>(rank), 1);
    for (std::int64_t a = rank - 2; a >= 0; --a)
        ostrides[static_cast<std::size_t>(a)] =
            ostrides[static_cast<std::size_t>(a + 1)] * os[static_cast<std::size_t>(a + 1)];

    const std::int64_t row = x.extent(rank - 1);
    const std::int64_t rows = x.size() / row;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank - 1), 0);
    const S* src = x.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t off = spec[rank - 1].before;
        for (std::int64_t a = 0; a < rank - 1; ++a)
            off += (idx[static_cast<std::size_t>(a)] + spec[a].before) * ostrides[static_cast<std::size_t>(a)];
        std::memcpy(out.data() + off, src, sizeof(S) * static_cast<std::size_t>(row));
        src += row;
        for (std::int64_t a = rank - 2; a >= 0; --a) {
            if (++idx[static_cast<std::size_t>(a)] < x.extent(a)) break;
            idx[static_cast<std::size_t>(a)] = 0;
        }
    }
    return out;
}

template <typename S>
Tensor<S> crop_tensor(const Tensor<S>& x, const PadSpec& spec) {
    if (spec.rank() != x.rank())
        throw std::invalid_argument("crop: spec rank " + std::to_string(spec.rank()) +
                                    " does not match tensor rank " + std::to_string(x.rank()));
    if (spec.is_zero()) return x;
    const std::int64_t rank = x.rank();
    Shape os(static_cast<std::size_t>(rank));
    for (std::int64_t a = 0; a < rank; ++a) {
        const std::int64_t e = x.extent(a) - spec.total(a);
        if (e < 1)
            throw std::invalid_argument("crop: amounts on axis " + std::to_string(a) +
                                        " consume extent " + std::to_string(x.extent(a)));
        os[static_cast<std::size_t>(a)] = e;
    }
    Tensor<S> out(os);

    std::vector<std::int64_t> xstrides(static_cast<std::size_t>(rank), 1);
    for (std::int64_t a = rank - 2; a >= 0; --a)
        xstrides[static_cast<std::size_t>(a)] =
            xstrides[static_cast<std::size_t>(a + 1)] * x.extent(a + 1);

    const std::int64_t row = os[static_cast<std::size_t>(rank - 1)];
    const std::int64_t rows = out.size() / row;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank - 1), 0);
    S* dst = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t off = spec[rank - 1].before;
        for (std::int64_t a = 0; a < rank - 1; ++a)
            off += (idx[static_cast<std::size_t>(a)] + spec[a].before) * xstrides[static_cast<std::size_t>(a)];
        std::memcpy(dst, x.data() + off, sizeof(S) * static_cast<std::size_t>(row));
        dst += row;
        for (std::int64_t a = rank - 2; a >= 0; --a) {
            if (++idx[static_cast<std::size_t>(a)] < os[static_cast<std::size_t>(a)]) break;
            idx[static_cast<std::size_t>(a)] = 0;
        }
    }
    return out;
}

template <typename S>
Tensor<S> reverse_tensor(const Tensor<S>& x, std::int64_t axis) {
    const std::int64_t n = x.extent(axis); // bounds-checked
    std::int64_t inner = 1;
    for (std::int64_t a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);
    const std::int64_t outer = x.size() / (n * inner);
    Tensor<S> out(x.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
        const S* src = x.data() + o * n * inner;
        S* dst = out.data() + o * n * inner;
        for (std::int64_t i = 0; i < n; ++i)
            std::memcpy(dst + (n - 1 - i) * inner, src + i * inner,
                        sizeof(S) * static_cast<std::size_t>(inner));
    }
    return out;
}

/// Expands a (T,H,W) pad description to the full 5-axis layout.
inline PadSpec pad5(const PadSpec& thw) {
    if (thw.rank() != 3)
        throw std::invalid_argument("conv: pad must describe the 3 trailing axes, got rank " +
                                    std::to_string(thw.rank()));
    PadSpec p;
    p.push({0, 0});
    p.push({0, 0});
    p.push(thw[0]);
    p.push(thw[1]);
    p.push(thw[2]);
    return p;
}

template <typename S>
void conv3d_validate(const char* op, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                     std::int64_t cin_axis) {
    check_rank(op, "input", x.rank(), 5);
    check_rank(op, "weights", w.rank(), 5);
    check_rank(op, "bias", b.rank(), 1);
    const std::int64_t cin = w.extent(cin_axis);
    const std::int64_t cout = w.extent(1 - cin_axis);
    if (x.extent(1) != cin)
        throw std::invalid_argument(std::string(op) + ": input channels " + std::to_string(x.extent(1)) +
                                    " != kernel input channels " + std::to_string(cin));
    if (b.extent(0) != cout)
        throw std::invalid_argument(std::string(op) + ": bias extent " + std::to_string(b.extent(0)) +
                                    " != output channels " + std::to_string(cout));
}

template <typename S>
Tensor<S> conv3d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                         const Stride3& stride, const PadSpec& pad) {
    conv3d_validate("conv3d", x, w, b, 1);
    const std::int64_t N = x.extent(0), Cin = x.extent(1);
    const std::int64_t Cout = w.extent(0), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
    const std::int64_t To = conv_out_extent("conv3d", 0, x.extent(2), kt, stride[0], pad[0]);
    const std::int64_t Ho = conv_out_extent("conv3d", 1, x.extent(3), kh, stride[1], pad[1]);
    const std::int64_t Wo = conv_out_extent("conv3d", 2, x.extent(4), kw, stride[2], pad[2]);

    const Tensor<S> xp = pad_tensor(x, pad5(pad));
    const std::int64_t Tp = xp.extent(2), Hp = xp.extent(3), Wp = xp.extent(4);
    Tensor<S> out({N, Cout, To, Ho, Wo});
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];

    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            S* ob = out.data() + ((n * Cout + co) * To) * Ho * Wo;
            const S bias = b[co];
            for (std::int64_t i = 0; i < To * Ho * Wo; ++i) ob[i] = bias;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const S* xb = xp.data() + ((n * Cin + ci) * Tp) * Hp * Wp;
                const S* wb = w.data() + (((co * Cin + ci) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            const S wv = wb[(it * kh + ih) * kw + iw];
                            for (std::int64_t to = 0; to < To; ++to) {
                                const S* xt = xb + (to * st + it) * Hp * Wp;
                                S* ot = ob + to * Ho * Wo;
                                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                                    const S* src = xt + (ho * sh + ih) * Wp + iw;
                                    S* dst = ot + ho * Wo;
                                    if (sw == 1)
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) dst[wo] += wv * src[wo];
                                    else
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) dst[wo] += wv * src[wo * sw];
                                }
                            }
                        }
            }
        }
    }
    return out;
}

template <typename S>
Tensor<S> conv3d_input_grad(const Tensor<S>& gout, const Tensor<S>& w, const Stride3& stride,
                            const PadSpec& pad, const Shape& in_shape) {
    const std::int64_t N = gout.extent(0), Cout = gout.extent(1);
    const std::int64_t To = gout.extent(2), Ho = gout.extent(3), Wo = gout.extent(4);
    const std::int64_t Cin = w.extent(1), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];
    const std::int64_t Tp = in_shape[2] + pad.total(0);
    const std::int64_t Hp = in_shape[3] + pad.total(1);
    const std::int64_t Wp = in_shape[4] + pad.total(2);

    Tensor<S> gxp({N, Cin, Tp, Hp, Wp});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
            const S* gb = gout.data() + ((n * Cout + co) * To) * Ho * Wo;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                S* xb = gxp.data() + ((n * Cin + ci) * Tp) * Hp * Wp;
                const S* wb = w.data() + (((co * Cin + ci) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            const S wv = wb[(it * kh + ih) * kw + iw];
                            for (std::int64_t to = 0; to < To; ++to) {
                                S* xt = xb + (to * st + it) * Hp * Wp;
                                const S* gt = gb + to * Ho * Wo;
                                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                                    S* dst = xt + (ho * sh + ih) * Wp + iw;
                                    const S* g = gt + ho * Wo;
                                    if (sw == 1)
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) dst[wo] += wv * g[wo];
                                    else
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) dst[wo * sw] += wv * g[wo];
                                }
                            }
                        }
            }
        }
    PadSpec unpad;
    unpad.push({0, 0});
    unpad.push({0, 0});
    unpad.push(pad[0]);
    unpad.push(pad[1]);
    unpad.push(pad[2]);
    return crop_tensor(gxp, unpad);
}

template <typename S>
Tensor<S> conv3d_weight_grad(const Tensor<S>& gout, const Tensor<S>& x, const Stride3& stride,
                             const PadSpec& pad, const Shape& w_shape) {
    const std::int64_t N = gout.extent(0), Cout = gout.extent(1);
    const std::int64_t To = gout.extent(2), Ho = gout.extent(3), Wo = gout.extent(4);
    const std::int64_t Cin = w_shape[1], kt = w_shape[2], kh = w_shape[3], kw = w_shape[4];
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];

    const Tensor<S> xp = pad_tensor(x, pad5(pad));
    const std::int64_t Tp = xp.extent(2), Hp = xp.extent(3), Wp = xp.extent(4);
    Tensor<S> gw(w_shape);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
            const S* gb = gout.data() + ((n * Cout + co) * To) * Ho * Wo;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const S* xb = xp.data() + ((n * Cin + ci) * Tp) * Hp * Wp;
                S* wb = gw.data() + (((co * Cin + ci) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            S acc = 0;
                            for (std::int64_t to = 0; to < To; ++to) {
                                const S* xt = xb + (to * st + it) * Hp * Wp;
                                const S* gt = gb + to * Ho * Wo;
                                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                                    const S* src = xt + (ho * sh + ih) * Wp + iw;
                                    const S* g = gt + ho * Wo;
                                    if (sw == 1)
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) acc += g[wo] * src[wo];
                                    else
                                        for (std::int64_t wo = 0; wo < Wo; ++wo) acc += g[wo] * src[wo * sw];
                                }
                            }
                            wb[(it * kh + ih) * kw + iw] += acc;
                        }
            }
        }
    return gw;
}

/// Sum over every axis except channels (axis 1).
template <typename S>
Tensor<S> channel_sum(const Tensor<S>& g) {
    const std::int64_t N = g.extent(0), C = g.extent(1);
    const std::int64_t inner = g.size() / (N * C);
    Tensor<S> out({C});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const S* p = g.data() + (n * C + c) * inner;
            S acc = 0;
            for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
            out[c] += acc;
        }
    return out;
}

template <typename S>
Tensor<S> convt3d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                          const Stride3& stride, const PadSpec& pad, const Stride3& opad) {
    conv3d_validate("conv_transpose3d", x, w, b, 0);
    if (pad.rank() != 3)
        throw std::invalid_argument("conv_transpose3d: pad must describe the 3 trailing axes");
    const std::int64_t N = x.extent(0), Cin = x.extent(1);
    const std::int64_t Cout = w.extent(1), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
    const std::int64_t Ti = x.extent(2), Hi = x.extent(3), Wi = x.extent(4);
    const std::int64_t k[3] = {kt, kh, kw};
    const std::int64_t in[3] = {Ti, Hi, Wi};
    std::int64_t full[3], outx[3];
    for (int a = 0; a < 3; ++a) {
        if (stride[static_cast<std::size_t>(a)] < 1)
            throw std::invalid_argument("conv_transpose3d: stride must be >= 1 on axis " + std::to_string(a));
        if (opad[static_cast<std::size_t>(a)] < 0 || opad[static_cast<std::size_t>(a)] >= stride[static_cast<std::size_t>(a)])
            throw std::invalid_argument("conv_transpose3d: output_pad must satisfy 0 <= output_pad < stride on axis " +
                                        std::to_string(a));
        full[a] = (in[a] - 1) * stride[static_cast<std::size_t>(a)] + k[a] + opad[static_cast<std::size_t>(a)];
        outx[a] = full[a] - pad.total(a);
        if (outx[a] < 1)
            throw std::invalid_argument("conv_transpose3d: output extent " + std::to_string(outx[a]) +
                                        " on axis " + std::to_string(a) + " must be >= 1");
    }

    Tensor<S> fullbuf({N, Cout, full[0], full[1], full[2]});
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];
    const std::int64_t Hf = full[1], Wf = full[2];
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const S* xb = x.data() + ((n * Cin + ci) * Ti) * Hi * Wi;
            for (std::int64_t co = 0; co < Cout; ++co) {
                S* fb = fullbuf.data() + ((n * Cout + co) * full[0]) * Hf * Wf;
                const S* wb = w.data() + (((ci * Cout + co) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            const S wv = wb[(it * kh + ih) * kw + iw];
                            for (std::int64_t ti = 0; ti < Ti; ++ti) {
                                const S* xt = xb + ti * Hi * Wi;
                                S* ft = fb + (ti * st + it) * Hf * Wf;
                                for (std::int64_t hi = 0; hi < Hi; ++hi) {
                                    const S* src = xt + hi * Wi;
                                    S* dst = ft + (hi * sh + ih) * Wf + iw;
                                    if (sw == 1)
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) dst[wi] += wv * src[wi];
                                    else
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) dst[wi * sw] += wv * src[wi];
                                }
                            }
                        }
            }
        }

    PadSpec unpad;
    unpad.push({0, 0});
    unpad.push({0, 0});
    unpad.push(pad[0]);
    unpad.push(pad[1]);
    unpad.push(pad[2]);
    Tensor<S> out = crop_tensor(fullbuf, unpad);
    const std::int64_t inner = out.size() / (N * Cout);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co) {
            S* p = out.data() + (n * Cout + co) * inner;
            const S bias = b[co];
            for (std::int64_t i = 0; i < inner; ++i) p[i] += bias;
        }
    return out;
}

template <typename S>
Tensor<S> convt3d_input_grad(const Tensor<S>& gout, const Tensor<S>& w, const Stride3& stride,
                             const PadSpec& pad, const Shape& in_shape) {
    const std::int64_t N = in_shape[0], Cin = in_shape[1];
    const std::int64_t Ti = in_shape[2], Hi = in_shape[3], Wi = in_shape[4];
    const std::int64_t Cout = w.extent(1), kt = w.extent(2), kh = w.extent(3), kw = w.extent(4);
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];

    const Tensor<S> gf = pad_tensor(gout, pad5(pad));
    const std::int64_t Tf = gf.extent(2), Hf = gf.extent(3), Wf = gf.extent(4);
    (void)Tf;
    Tensor<S> gin({N, Cin, Ti, Hi, Wi});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            S* xb = gin.data() + ((n * Cin + ci) * Ti) * Hi * Wi;
            for (std::int64_t co = 0; co < Cout; ++co) {
                const S* fb = gf.data() + ((n * Cout + co) * gf.extent(2)) * Hf * Wf;
                const S* wb = w.data() + (((ci * Cout + co) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            const S wv = wb[(it * kh + ih) * kw + iw];
                            for (std::int64_t ti = 0; ti < Ti; ++ti) {
                                S* xt = xb + ti * Hi * Wi;
                                const S* ft = fb + (ti * st + it) * Hf * Wf;
                                for (std::int64_t hi = 0; hi < Hi; ++hi) {
                                    S* dst = xt + hi * Wi;
                                    const S* src = ft + (hi * sh + ih) * Wf + iw;
                                    if (sw == 1)
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) dst[wi] += wv * src[wi];
                                    else
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) dst[wi] += wv * src[wi * sw];
                                }
                            }
                        }
            }
        }
    return gin;
}

template <typename S>
Tensor<S> convt3d_weight_grad(const Tensor<S>& gout, const Tensor<S>& x, const Stride3& stride,
                              const PadSpec& pad, const Shape& w_shape) {
    const std::int64_t N = x.extent(0), Cin = x.extent(1);
    const std::int64_t Ti = x.extent(2), Hi = x.extent(3), Wi = x.extent(4);
    const std::int64_t Cout = w_shape[1], kt = w_shape[2], kh = w_shape[3], kw = w_shape[4];
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];

    const Tensor<S> gf = pad_tensor(gout, pad5(pad));
    const std::int64_t Hf = gf.extent(3), Wf = gf.extent(4);
    Tensor<S> gw(w_shape);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const S* xb = x.data() + ((n * Cin + ci) * Ti) * Hi * Wi;
            for (std::int64_t co = 0; co < Cout; ++co) {
                const S* fb = gf.data() + ((n * Cout + co) * gf.extent(2)) * Hf * Wf;
                S* wb = gw.data() + (((ci * Cout + co) * kt) * kh) * kw;
                for (std::int64_t it = 0; it < kt; ++it)
                    for (std::int64_t ih = 0; ih < kh; ++ih)
                        for (std::int64_t iw = 0; iw < kw; ++iw) {
                            S acc = 0;
                            for (std::int64_t ti = 0; ti < Ti; ++ti) {
                                const S* xt = xb + ti * Hi * Wi;
                                const S* ft = fb + (ti * st + it) * Hf * Wf;
                                for (std::int64_t hi = 0; hi < Hi; ++hi) {
                                    const S* src = xt + hi * Wi;
                                    const S* g = ft + (hi * sh + ih) * Wf + iw;
                                    if (sw == 1)
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) acc += src[wi] * g[wi];
                                    else
                                        for (std::int64_t wi = 0; wi < Wi; ++wi) acc += src[wi] * g[wi * sw];
                                }
                            }
                            wb[(it * kh + ih) * kw + iw] += acc;
                        }
            }
        }
    return gw;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> conv3d(const Var<S>& x, const Var<S>& w, const Var<S>& b, const Stride3& stride,
              const PadSpec& pad) {
    Tensor<S> y = detail::conv3d_forward(x.value(), w.value(), b.value(), stride, pad);
    return make_op<S>(std::move(y), "conv3d", {x, w, b}, [stride, pad](Node<S>& n) {
        const auto& xin = n.inputs[0];
        const auto& win = n.inputs[1];
        const auto& bin = n.inputs[2];
        if (xin->requires_grad)
            xin->accumulate(detail::conv3d_input_grad(n.grad, win->value, stride, pad, xin->value.shape()));
        if (win->requires_grad)
            win->accumulate(detail::conv3d_weight_grad(n.grad, xin->value, stride, pad, win->value.shape()));
        if (bin->requires_grad) bin->accumulate(detail::channel_sum(n.grad));
    });
}

template <typename S>
Var<S> conv_transpose3d(const Var<S>& x, const Var<S>& w, const Var<S>& b, const Stride3& stride,
                        const PadSpec& pad, const Stride3& opad) {
    Tensor<S> y = detail::convt3d_forward(x.value(), w.value(), b.value(), stride, pad, opad);
    return make_op<S>(std::move(y), "conv_transpose3d", {x, w, b}, [stride, pad](Node<S>& n) {
        const auto& xin = n.inputs[0];
        const auto& win = n.inputs[1];
        const auto& bin = n.inputs[2];
        if (xin->requires_grad)
            xin->accumulate(detail::convt3d_input_grad(n.grad, win->value, stride, pad, xin->value.shape()));
        if (win->requires_grad)
            win->accumulate(detail::convt3d_weight_grad(n.grad, xin->value, stride, pad, win->value.shape()));
        if (bin->requires_grad) bin->accumulate(detail::channel_sum(n.grad));
    });
}

template <typename S>
Var<S> pad(const Var<S>& x, const PadSpec& spec) {
    Tensor<S> y = detail::pad_tensor(x.value(), spec);
    return make_op<S>(std::move(y), "pad", {x}, [spec](Node<S>& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(detail::crop_tensor(n.grad, spec));
    });
}

template <typename S>
Var<S> crop(const Var<S>& x, const PadSpec& spec) {
    Tensor<S> y = detail::crop_tensor(x.value(), spec);
    return make_op<S>(std::move(y), "crop", {x}, [spec](Node<S>& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(detail::pad_tensor(n.grad, spec));
    });
}

template <typename S>
Var<S> reverse_axis(const Var<S>& x, std::int64_t axis) {
    Tensor<S> y = detail::reverse_tensor(x.value(), axis);
    return make_op<S>(std::move(y), "reverse_axis", {x}, [axis](Node<S>& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(detail::reverse_tensor(n.grad, axis));
    });
}

/// Concatenation along the time axis (axis 2 of the canonical layout).
template <typename S>
Var<S> concat_time(const Var<S>& a, const Var<S>& b) {
    const Tensor<S>& av = a.value();
    const Tensor<S>& bv = b.value();
    detail::check_rank("concat_time", "lhs", av.rank(), 5);
    detail::check_rank("concat_time", "rhs", bv.rank(), 5);
    for (std::int64_t ax : {std::int64_t(0), std::int64_t(1), std::int64_t(3), std::int64_t(4)})
        if (av.extent(ax) != bv.extent(ax))
            throw std::invalid_argument("concat_time: extent mismatch on axis " + std::to_string(ax) + ": " +
                                        std::to_string(av.extent(ax)) + " vs " + std::to_string(bv.extent(ax)));
    const std::int64_t N = av.extent(0), C = av.extent(1);
    const std::int64_t Ta = av.extent(2), Tb = bv.extent(2);
    const std::int64_t hw = av.extent(3) * av.extent(4);
    Tensor<S> y({N, C, Ta + Tb, av.extent(3), av.extent(4)});
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        std::memcpy(y.data() + nc * (Ta + Tb) * hw, av.data() + nc * Ta * hw,
                    sizeof(S) * static_cast<std::size_t>(Ta * hw));
        std::memcpy(y.data() + nc * (Ta + Tb) * hw + Ta * hw, bv.data() + nc * Tb * hw,
                    sizeof(S) * static_cast<std::size_t>(Tb * hw));
    }
    return make_op<S>(std::move(y), "concat_time", {a, b}, [Ta, Tb](Node<S>& n) {
        PadSpec head{{0, 0}, {0, 0}, {0, Tb}, {0, 0}, {0, 0}};
        PadSpec tail{{0, 0}, {0, 0}, {Ta, 0}, {0, 0}, {0, 0}};
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(detail::crop_tensor(n.grad, head));
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(detail::crop_tensor(n.grad, tail));
    });
}

/// x >= 0 ? x : slope * x. The subgradient at exactly 0 takes the positive
/// branch (slope 1).
template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
    if (!(slope >= S(0) && slope < S(1)))
        throw std::invalid_argument("leaky_relu: slope must lie in [0,1)");
    const Tensor<S>& xv = x.value();
    Tensor<S> y(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) y[i] = xv[i] >= S(0) ? xv[i] : slope * xv[i];
    return make_op<S>(std::move(y), "leaky_relu", {x}, [slope](Node<S>& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor<S>& xv = n.inputs[0]->value;
        Tensor<S> gx(xv.shape());
        for (std::int64_t i = 0; i < xv.size(); ++i)
            gx[i] = n.grad[i] * (xv[i] >= S(0) ? S(1) : slope);
        n.inputs[0]->accumulate(gx);
    });
}

template <typename S>
struct BatchNormState {
    Tensor<S> running_mean;
    Tensor<S> running_var;
    bool ready = false;
};

/// Per-channel normalization over (N,T,H,W). Train mode uses batch statistics
/// (biased variance) and folds them into the running averages; eval mode uses
/// the running statistics only.
template <typename S>
Var<S> batch_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, BatchNormState<S>& state,
                  Mode mode, S momentum, S eps) {
    const Tensor<S>& xv = x.value();
    detail::check_rank("batch_norm", "input", xv.rank(), 5);
    const std::int64_t N = xv.extent(0), C = xv.extent(1);
    const std::int64_t inner = xv.size() / (N * C);
    if (gamma.value().size() != C || beta.value().size() != C)
        throw std::invalid_argument("batch_norm: scale/shift extent " + std::to_string(gamma.value().size()) +
                                    " != channel count " + std::to_string(C));

    std::vector<S> mean(static_cast<std::size_t>(C), S(0));
    std::vector<S> istd(static_cast<std::size_t>(C), S(0));
    if (mode == Mode::train) {
        const S m = static_cast<S>(N * inner);
        for (std::int64_t c = 0; c < C; ++c) {
            S acc = 0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* p = xv.data() + (n * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
            }
            const S mu = acc / m;
            S vacc = 0;
            for (std::int64_t n = 0; n < N; ++n) {
                const S* p = xv.data() + (n * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) {
                    const S d = p[i] - mu;
                    vacc += d * d;
                }
            }
            const S var = vacc / m;
            mean[static_cast<std::size_t>(c)] = mu;
            istd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var + eps);
            if (state.running_mean.empty()) {
                state.running_mean = Tensor<S>({C});
                state.running_var = Tensor<S>({C}, S(1));
            }
            state.running_mean[c] = (S(1) - momentum) * state.running_mean[c] + momentum * mu;
            state.running_var[c] = (S(1) - momentum) * state.running_var[c] + momentum * var;
        }
        state.ready = true;
    } else {
        if (!state.ready)
            throw std::logic_error("batch_norm: eval mode before any statistics were recorded");
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = state.running_mean[c];
            istd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(state.running_var[c] + eps);
        }
    }

    Tensor<S> xhat(xv.shape());
    Tensor<S> y(xv.shape());
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const S* p = xv.data() + (n * C + c) * inner;
            S* xh = xhat.data() + (n * C + c) * inner;
            S* yo = y.data() + (n * C + c) * inner;
            const S mu = mean[static_cast<std::size_t>(c)];
            const S is = istd[static_cast<std::size_t>(c)];
            const S g = gamma.value()[c];
            const S bta = beta.value()[c];
            for (std::int64_t i = 0; i < inner; ++i) {
                xh[i] = (p[i] - mu) * is;
                yo[i] = g * xh[i] + bta;
            }
        }

    return make_op<S>(std::move(y), "batch_norm", {x, gamma, beta},
                      [mode, xhat = std::move(xhat), istd = std::move(istd), N, C, inner](Node<S>& n) {
                          const auto& xin = n.inputs[0];
                          const auto& gin = n.inputs[1];
                          const auto& bin = n.inputs[2];
                          const S m = static_cast<S>(N * inner);
                          std::vector<S> dg(static_cast<std::size_t>(C), S(0));
                          std::vector<S> db(static_cast<std::size_t>(C), S(0));
                          for (std::int64_t nn = 0; nn < N; ++nn)
                              for (std::int64_t c = 0; c < C; ++c) {
                                  const S* g = n.grad.data() + (nn * C + c) * inner;
                                  const S* xh = xhat.data() + (nn * C + c) * inner;
                                  S sg = 0, sb = 0;
                                  for (std::int64_t i = 0; i < inner; ++i) {
                                      sg += g[i] * xh[i];
                                      sb += g[i];
                                  }
                                  dg[static_cast<std::size_t>(c)] += sg;
                                  db[static_cast<std::size_t>(c)] += sb;
                              }
                          if (gin->requires_grad) {
                              Tensor<S> t({C});
                              for (std::int64_t c = 0; c < C; ++c) t[c] = dg[static_cast<std::size_t>(c)];
                              gin->accumulate(t);
                          }
                          if (bin->requires_grad) {
                              Tensor<S> t({C});
                              for (std::int64_t c = 0; c < C; ++c) t[c] = db[static_cast<std::size_t>(c)];
                              bin->accumulate(t);
                          }
                          if (xin->requires_grad) {
                              Tensor<S> gx(xin->value.shape());
                              for (std::int64_t nn = 0; nn < N; ++nn)
                                  for (std::int64_t c = 0; c < C; ++c) {
                                      const S* g = n.grad.data() + (nn * C + c) * inner;
                                      const S* xh = xhat.data() + (nn * C + c) * inner;
                                      S* out = gx.data() + (nn * C + c) * inner;
                                      const S gam = gin->value[c];
                                      const S is = istd[static_cast<std::size_t>(c)];
                                      const S mg = db[static_cast<std::size_t>(c)] / m;
                                      const S mgx = dg[static_cast<std::size_t>(c)] / m;
                                      if (mode == Mode::train)
                                          for (std::int64_t i = 0; i < inner; ++i)
                                              out[i] = gam * is * (g[i] - mg - xh[i] * mgx);
                                      else
                                          for (std::int64_t i = 0; i < inner; ++i) out[i] = gam * is * g[i];
                                  }
                              xin->accumulate(gx);
                          }
                      });
}

/// Train mode zeroes elements with probability `rate` and rescales survivors
/// by 1/(1-rate). Masks replay exactly from (seed, layer_id, step).
template <typename S>
Var<S> dropout(const Var<S>& x, S rate, Mode mode, std::uint64_t seed, std::uint64_t layer_id,
               std::uint64_t step) {
    if (!(rate >= S(0) && rate < S(1)))
        throw std::invalid_argument("dropout: rate must lie in [0,1)");
    if (mode == Mode::eval || rate == S(0)) return x;

    const CounterStream stream(seed, layer_id, step);
    const Tensor<S>& xv = x.value();
    const S inv = S(1) / (S(1) - rate);
    Tensor<S> y(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i)
        y[i] = stream.uniform(i) >= static_cast<double>(rate) ? xv[i] * inv : S(0);
    return make_op<S>(std::move(y), "dropout", {x}, [stream, rate, inv](Node<S>& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor<S> gx(n.grad.shape());
        for (std::int64_t i = 0; i < gx.size(); ++i)
            gx[i] = stream.uniform(i) >= static_cast<double>(rate) ? n.grad[i] * inv : S(0);
        n.inputs[0]->accumulate(gx);
    });
}

/// Mean of squared differences over all elements.
template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Var<S>& target) {
    const Tensor<S>& p = pred.value();
    const Tensor<S>& t = target.value();
    if (!same_shape(p, t))
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                                    shape_str(t.shape()));
    double acc = 0;
    for (std::int64_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += d * d;
    }
    Tensor<S> y({1});
    y[0] = static_cast<S>(acc / static_cast<double>(p.size()));
    return make_op<S>(std::move(y), "mse_loss", {pred, target}, [](Node<S>& n) {
        const auto& pin = n.inputs[0];
        const auto& tin = n.inputs[1];
        if (!pin->requires_grad) return;
        const S g0 = n.grad[0];
        const S scale = S(2) / static_cast<S>(pin->value.size());
        Tensor<S> gp(pin->value.shape());
        for (std::int64_t i = 0; i < gp.size(); ++i)
            gp[i] = g0 * scale * (pin->value[i] - tin->value[i]);
        pin->accumulate(gp);
    });
}

template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Tensor<S>& target) {
    return mse_loss(pred, Var<S>::constant(target));
}

/// Elementwise product (test and diagnostic use).
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    const Tensor<S>& av = a.value();
    const Tensor<S>& bv = b.value();
    if (!same_shape(av, bv))
        throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                                    shape_str(bv.shape()));
    Tensor<S> y(av.shape());
    for (std::int64_t i = 0; i < av.size(); ++i) y[i] = av[i] * bv[i];
    return make_op<S>(std::move(y), "mul", {a, b}, [](Node<S>& n) {
        const auto& ain = n.inputs[0];
        const auto& bin = n.inputs[1];
        if (ain->requires_grad) {
            Tensor<S> g(ain->value.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bin->value[i];
            ain->accumulate(g);
        }
        if (bin->requires_grad) {
            Tensor<S> g(bin->value.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * ain->value[i];
            bin->accumulate(g);
        }
    });
}

template <typename S>
Var<S> sum_all(const Var<S>& x) {
    double acc = 0;
    for (std::int64_t i = 0; i < x.value().size(); ++i) acc += static_cast<double>(x.value()[i]);
    Tensor<S> y({1});
    y[0] = static_cast<S>(acc);
    return make_op<S>(std::move(y), "sum_all", {x}, [](Node<S>& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor<S> g(n.inputs[0]->value.shape(), n.grad[0]);
        n.inputs[0]->accumulate(g);
    });
}

} // namespace stconv
