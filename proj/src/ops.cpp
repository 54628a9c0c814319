#include "xlearner/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "xlearner/simd/kernels.hpp"

namespace xl::ops {
namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void check_rank(const Var<T>& x, std::size_t rank, const char* op) {
    require(x.value().rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                          shape_str(x.shape()));
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    simd::active_kernels<T>().axpy(T(1), src.data(), dst.data(), src.numel());
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    accumulate(out, b.value());
    return ag::make_result<T>(std::move(out), {a, b}, [](ag::Node<T>& n) {
        for (std::size_t i = 0; i < 2; ++i)
            if (auto* g = ag::parent_grad(n, i)) accumulate(*g, n.grad);
    });
}

template <class T>
Var<T> sum(std::span<const Var<T>> terms) {
    require(!terms.empty(), "sum: no terms");
    Tensor<T> out = terms[0].value();
    for (std::size_t i = 1; i < terms.size(); ++i) {
        check_same_shape(terms[0], terms[i], "sum");
        accumulate(out, terms[i].value());
    }
    std::vector<Var<T>> parents(terms.begin(), terms.end());
    return ag::make_result<T>(std::move(out), std::move(parents), [](ag::Node<T>& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i)
            if (auto* g = ag::parent_grad(n, i)) accumulate(*g, n.grad);
    });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= factor;
    return ag::make_result<T>(std::move(out), {x}, [factor](ag::Node<T>& n) {
        if (auto* g = ag::parent_grad(n, 0)) simd::active_kernels<T>().axpy(factor, n.grad.data(), g->data(), g->numel());
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return ag::make_result<T>(std::move(out), {x}, [](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        const T* y = n.value.data();
        for (std::size_t i = 0; i < g->numel(); ++i)
            if (y[i] > T(0)) (*g)[i] += n.grad[i];
    });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dArgs args) {
    check_rank(x, 4, "conv2d");
    check_rank(weight, 4, "conv2d weight");
    const std::size_t batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::size_t cout = weight.shape()[0], k = weight.shape()[2];
    require(weight.shape()[1] == cin && weight.shape()[3] == k,
            "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    require(args.stride >= 1, "conv2d: stride must be >= 1");
    require(h + 2 * args.padding >= k && w + 2 * args.padding >= k,
            "conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
    if (bias.defined()) require(bias.numel() == cout, "conv2d: bias size mismatch");

    const std::size_t s = args.stride, pad = args.padding;
    const std::size_t ho = (h + 2 * pad - k) / s + 1, wo = (w + 2 * pad - k) / s + 1;
    const std::size_t hw_out = ho * wo, n_cols = batch * hw_out, ckk = cin * k * k;

    auto col = std::make_shared<std::vector<T>>(ckk * n_cols, T(0));
    const T* xp = x.value().data();
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t kh = 0; kh < k; ++kh) {
            for (std::size_t kw = 0; kw < k; ++kw) {
                T* row = col->data() + ((c * k + kh) * k + kw) * n_cols;
                for (std::size_t b = 0; b < batch; ++b) {
                    const T* plane = xp + (b * cin + c) * h * w;
                    T* dst = row + b * hw_out;
                    for (std::size_t oh = 0; oh < ho; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + kh) - static_cast<std::ptrdiff_t>(pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ow = 0; ow < wo; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + kw) - static_cast<std::ptrdiff_t>(pad);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            dst[oh * wo + ow] = plane[ih * w + iw];
                        }
                    }
                }
            }
        }
    }

    std::vector<T> out_mat(cout * n_cols);
    simd::active_kernels<T>().gemm(false, false, cout, n_cols, ckk, T(1), weight.value().data(), ckk,
                                   col->data(), n_cols, T(0), out_mat.data(), n_cols);

    Tensor<T> out({batch, cout, ho, wo});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            const T bv = bias.defined() ? bias.value()[co] : T(0);
            const T* src = out_mat.data() + co * n_cols + b * hw_out;
            T* dst = out.data() + (b * cout + co) * hw_out;
            for (std::size_t i = 0; i < hw_out; ++i) dst[i] = src[i] + bv;
        }
    }

    std::vector<Var<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return ag::make_result<T>(std::move(out), std::move(parents), [=](ag::Node<T>& n) {
        const auto& kern = simd::active_kernels<T>();
        std::vector<T> dout(cout * n_cols);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < cout; ++co)
                std::copy_n(n.grad.data() + (b * cout + co) * hw_out, hw_out, dout.data() + co * n_cols + b * hw_out);

        if (auto* gw = ag::parent_grad(n, 1))
            kern.gemm(false, true, cout, ckk, n_cols, T(1), dout.data(), n_cols, col->data(), n_cols, T(1),
                      gw->data(), ckk);
        if (n.parents.size() > 2) {
            if (auto* gb = ag::parent_grad(n, 2)) {
                for (std::size_t co = 0; co < cout; ++co) {
                    T acc = 0;
                    const T* row = dout.data() + co * n_cols;
                    for (std::size_t i = 0; i < n_cols; ++i) acc += row[i];
                    (*gb)[co] += acc;
                }
            }
        }
        if (auto* gx = ag::parent_grad(n, 0)) {
            std::vector<T> dcol(ckk * n_cols);
            kern.gemm(true, false, ckk, n_cols, cout, T(1), n.parents[1]->value.data(), ckk, dout.data(), n_cols,
                      T(0), dcol.data(), n_cols);
            T* gxp = gx->data();
            for (std::size_t c = 0; c < cin; ++c) {
                for (std::size_t kh = 0; kh < k; ++kh) {
                    for (std::size_t kw = 0; kw < k; ++kw) {
                        const T* row = dcol.data() + ((c * k + kh) * k + kw) * n_cols;
                        for (std::size_t b = 0; b < batch; ++b) {
                            T* plane = gxp + (b * cin + c) * h * w;
                            const T* src = row + b * hw_out;
                            for (std::size_t oh = 0; oh < ho; ++oh) {
                                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + kh) - static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t ow = 0; ow < wo; ++ow) {
                                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + kw) - static_cast<std::ptrdiff_t>(pad);
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                                    plane[ih * w + iw] += src[oh * wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                  Tensor<T>* running_var, BatchNormArgs args) {
    check_rank(x, 4, "batch_norm");
    const std::size_t batch = x.shape()[0], channels = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    require(gamma.numel() == channels && beta.numel() == channels,
            "batch_norm: affine size mismatch for input " + shape_str(x.shape()));
    const std::size_t count = batch * hw;
    require(count > 0, "batch_norm: empty input");

    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    auto invstd = std::make_shared<std::vector<T>>(channels);
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();

    for (std::size_t c = 0; c < channels; ++c) {
        double mean, var;
        if (args.training) {
            double s = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xp + (b * channels + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            mean = s / static_cast<double>(count);
            double ss = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xp + (b * channels + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mean;
                    ss += d * d;
                }
            }
            var = ss / static_cast<double>(count);
            if (running_mean && running_var) {
                const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
                (*running_mean)[c] = static_cast<T>((1.0 - args.momentum) * (*running_mean)[c] + args.momentum * mean);
                (*running_var)[c] = static_cast<T>((1.0 - args.momentum) * (*running_var)[c] + args.momentum * unbiased);
            }
        } else {
            require(running_mean && running_var, "batch_norm: inference mode needs running statistics");
            mean = (*running_mean)[c];
            var = (*running_var)[c];
        }
        const T is = static_cast<T>(1.0 / std::sqrt(var + args.eps));
        (*invstd)[c] = is;
        const T g = gamma.value()[c], bt = beta.value()[c], m = static_cast<T>(mean);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const T xh = (xp[off + i] - m) * is;
                (*xhat)[off + i] = xh;
                out[off + i] = g * xh + bt;
            }
        }
    }

    const bool training = args.training;
    return ag::make_result<T>(std::move(out), {x, gamma, beta}, [=](ag::Node<T>& n) {
        const T* gamma_v = n.parents[1]->value.data();
        auto* gx = ag::parent_grad(n, 0);
        auto* gg = ag::parent_grad(n, 1);
        auto* gb = ag::parent_grad(n, 2);
        for (std::size_t c = 0; c < channels; ++c) {
            double sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t off = (b * channels + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_dy += n.grad[off + i];
                    sum_dy_xhat += static_cast<double>(n.grad[off + i]) * (*xhat)[off + i];
                }
            }
            if (gg) (*gg)[c] += static_cast<T>(sum_dy_xhat);
            if (gb) (*gb)[c] += static_cast<T>(sum_dy);
            if (!gx) continue;
            const T scale_c = gamma_v[c] * (*invstd)[c];
            if (training) {
                const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
                const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(count));
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t off = (b * channels + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i)
                        (*gx)[off + i] += scale_c * (n.grad[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xhat);
                }
            } else {
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t off = (b * channels + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) (*gx)[off + i] += scale_c * n.grad[off + i];
                }
            }
        }
    });
}

template <class T>
Var<T> max_pool2d(const Var<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
    check_rank(x, 4, "max_pool2d");
    const std::size_t batch = x.shape()[0], ch = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    require(h + 2 * padding >= kernel && w + 2 * padding >= kernel, "max_pool2d: input smaller than window");
    const std::size_t ho = (h + 2 * padding - kernel) / stride + 1, wo = (w + 2 * padding - kernel) / stride + 1;
    Tensor<T> out({batch, ch, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    const T* xp = x.value().data();
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const T* plane = xp + bc * h * w;
        for (std::size_t oh = 0; oh < ho; ++oh) {
            for (std::size_t ow = 0; ow < wo; ++ow) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t kh = 0; kh < kernel; ++kh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(padding);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kw = 0; kw < kernel; ++kw) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - static_cast<std::ptrdiff_t>(padding);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t idx = static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (bc * ho + oh) * wo + ow;
                out[o] = best;
                (*argmax)[o] = bc * h * w + best_idx;
            }
        }
    }
    return ag::make_result<T>(std::move(out), {x}, [argmax](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t i = 0; i < argmax->size(); ++i) (*g)[(*argmax)[i]] += n.grad[i];
    });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    check_rank(x, 4, "global_avg_pool");
    const std::size_t batch = x.shape()[0], ch = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out({batch, ch});
    const T* xp = x.value().data();
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += xp[bc * hw + i];
        out[bc] = static_cast<T>(s / static_cast<double>(hw));
    }
    return ag::make_result<T>(std::move(out), {x}, [hw](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        const T inv = T(1) / static_cast<T>(hw);
        for (std::size_t bc = 0; bc < n.grad.numel(); ++bc) {
            const T v = n.grad[bc] * inv;
            for (std::size_t i = 0; i < hw; ++i) (*g)[bc * hw + i] += v;
        }
    });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    check_rank(x, 2, "linear");
    check_rank(weight, 2, "linear weight");
    const std::size_t batch = x.shape()[0], in = x.shape()[1], outf = weight.shape()[0];
    require(weight.shape()[1] == in, "linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
    Tensor<T> out({batch, outf});
    simd::active_kernels<T>().gemm(false, true, batch, outf, in, T(1), x.value().data(), in, weight.value().data(),
                                   in, T(0), out.data(), outf);
    if (bias.defined()) {
        require(bias.numel() == outf, "linear: bias size mismatch");
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < outf; ++o) out[b * outf + o] += bias.value()[o];
    }
    std::vector<Var<T>> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return ag::make_result<T>(std::move(out), std::move(parents), [=](ag::Node<T>& n) {
        const auto& kern = simd::active_kernels<T>();
        if (auto* gx = ag::parent_grad(n, 0))
            kern.gemm(false, false, batch, in, outf, T(1), n.grad.data(), outf, n.parents[1]->value.data(), in, T(1),
                      gx->data(), in);
        if (auto* gw = ag::parent_grad(n, 1))
            kern.gemm(true, false, outf, in, batch, T(1), n.grad.data(), outf, n.parents[0]->value.data(), in, T(1),
                      gw->data(), in);
        if (n.parents.size() > 2) {
            if (auto* gb = ag::parent_grad(n, 2))
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < outf; ++o) (*gb)[o] += n.grad[b * outf + o];
        }
    });
}

template <class T>
Var<T> upsample_nearest2x(const Var<T>& x) {
    check_rank(x, 4, "upsample_nearest2x");
    const std::size_t bc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor<T> out({x.shape()[0], x.shape()[1], 2 * h, 2 * w});
    const T* xp = x.value().data();
    for (std::size_t p = 0; p < bc; ++p)
        for (std::size_t oh = 0; oh < 2 * h; ++oh)
            for (std::size_t ow = 0; ow < 2 * w; ++ow)
                out[(p * 2 * h + oh) * 2 * w + ow] = xp[(p * h + oh / 2) * w + ow / 2];
    return ag::make_result<T>(std::move(out), {x}, [bc, h, w](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t p = 0; p < bc; ++p)
            for (std::size_t oh = 0; oh < 2 * h; ++oh)
                for (std::size_t ow = 0; ow < 2 * w; ++ow)
                    (*g)[(p * h + oh / 2) * w + ow / 2] += n.grad[(p * 2 * h + oh) * 2 * w + ow];
    });
}

namespace {
struct Tap {
    std::size_t i0, i1;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        std::size_t i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}
}  // namespace

template <class T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    check_rank(x, 4, "upsample_bilinear");
    require(out_h > 0 && out_w > 0, "upsample_bilinear: empty output");
    const std::size_t bc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    auto ty = std::make_shared<std::vector<Tap>>(bilinear_taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(bilinear_taps(w, out_w));
    Tensor<T> out({x.shape()[0], x.shape()[1], out_h, out_w});
    const T* xp = x.value().data();
    for (std::size_t p = 0; p < bc; ++p) {
        const T* plane = xp + p * h * w;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
            const Tap& a = (*ty)[oh];
            for (std::size_t ow = 0; ow < out_w; ++ow) {
                const Tap& b = (*tx)[ow];
                const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
                const T top = plane[a.i0 * w + b.i0] * (T(1) - fx) + plane[a.i0 * w + b.i1] * fx;
                const T bot = plane[a.i1 * w + b.i0] * (T(1) - fx) + plane[a.i1 * w + b.i1] * fx;
                out[(p * out_h + oh) * out_w + ow] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return ag::make_result<T>(std::move(out), {x}, [=](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t p = 0; p < bc; ++p) {
            T* plane = g->data() + p * h * w;
            for (std::size_t oh = 0; oh < out_h; ++oh) {
                const Tap& a = (*ty)[oh];
                const T fy = static_cast<T>(a.frac);
                for (std::size_t ow = 0; ow < out_w; ++ow) {
                    const Tap& b = (*tx)[ow];
                    const T fx = static_cast<T>(b.frac);
                    const T gv = n.grad[(p * out_h + oh) * out_w + ow];
                    plane[a.i0 * w + b.i0] += gv * (T(1) - fy) * (T(1) - fx);
                    plane[a.i0 * w + b.i1] += gv * (T(1) - fy) * fx;
                    plane[a.i1 * w + b.i0] += gv * fy * (T(1) - fx);
                    plane[a.i1 * w + b.i1] += gv * fy * fx;
                }
            }
        }
    });
}

namespace {
// Softmax cross-entropy over `classes` values spaced `stride` apart.
// Returns the loss and writes softmax probabilities into `prob`.
template <class T>
double softmax_xent(const T* logits, std::size_t classes, std::size_t stride, std::int32_t label, T* prob) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c * stride]));
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(logits[c * stride]) - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t c = 0; c < classes; ++c)
        prob[c * stride] = static_cast<T>(std::exp(static_cast<double>(logits[c * stride]) - log_z));
    return log_z - static_cast<double>(logits[static_cast<std::size_t>(label) * stride]);
}

void check_label(std::int32_t label, std::size_t classes) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
        throw std::out_of_range("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
                                " classes");
}
}  // namespace

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels) {
    check_rank(logits, 2, "cross_entropy");
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    require(labels.size() == batch, "cross_entropy: expected " + std::to_string(batch) + " labels, got " +
                                        std::to_string(labels.size()));
    auto prob = std::make_shared<Tensor<T>>(logits.shape());
    double total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        check_label(labels[b], classes);
        total += softmax_xent(logits.value().data() + b * classes, classes, 1, labels[b], prob->data() + b * classes);
    }
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(batch)));
    return ag::make_result<T>(std::move(out), {logits}, [=](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        const T scale_v = n.grad[0] / static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < classes; ++c) {
                const T onehot = static_cast<std::int32_t>(c) == lab[b] ? T(1) : T(0);
                (*g)[b * classes + c] += scale_v * ((*prob)[b * classes + c] - onehot);
            }
    });
}

template <class T>
Var<T> pixel_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels) {
    check_rank(logits, 4, "pixel_cross_entropy");
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1],
                      hw = logits.shape()[2] * logits.shape()[3];
    require(labels.size() == batch * hw, "pixel_cross_entropy: label count mismatch");
    auto prob = std::make_shared<Tensor<T>>(logits.shape());
    double total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* base = logits.value().data() + b * classes * hw;
        T* pbase = prob->data() + b * classes * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            const std::int32_t y = labels[b * hw + i];
            check_label(y, classes);
            total += softmax_xent(base + i, classes, hw, y, pbase + i);
        }
    }
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    const std::size_t count = batch * hw;
    Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(count)));
    return ag::make_result<T>(std::move(out), {logits}, [=](ag::Node<T>& n) {
        auto* g = ag::parent_grad(n, 0);
        if (!g) return;
        const T scale_v = n.grad[0] / static_cast<T>(count);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < classes; ++c)
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t idx = (b * classes + c) * hw + i;
                    const T onehot = lab[b * hw + i] == static_cast<std::int32_t>(c) ? T(1) : T(0);
                    (*g)[idx] += scale_v * ((*prob)[idx] - onehot);
                }
    });
}

template <class T>
Var<T> sum_squared_diff(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "sum_squared_diff");
    const T total = simd::active_kernels<T>().squared_distance(a.value().data(), b.value().data(), a.numel());
    return ag::make_result<T>(Tensor<T>({1}, total), {a, b}, [](ag::Node<T>& n) {
        const T gs = n.grad[0];
        const Tensor<T>& av = n.parents[0]->value;
        const Tensor<T>& bv = n.parents[1]->value;
        auto* ga = ag::parent_grad(n, 0);
        auto* gb = ag::parent_grad(n, 1);
        for (std::size_t i = 0; i < av.numel(); ++i) {
            const T d = T(2) * gs * (av[i] - bv[i]);
            if (ga) (*ga)[i] += d;
            if (gb) (*gb)[i] -= d;
        }
    });
}

template <class T>
Var<T> scalar_sum(std::span<const Var<T>> scalars, T factor) {
    require(!scalars.empty(), "scalar_sum: no terms");
    T total = 0;
    for (const auto& s : scalars) {
        require(s.numel() == 1, "scalar_sum: non-scalar term " + shape_str(s.shape()));
        total += s.item();
    }
    std::vector<Var<T>> parents(scalars.begin(), scalars.end());
    return ag::make_result<T>(Tensor<T>({1}, total * factor), std::move(parents), [factor](ag::Node<T>& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i)
            if (auto* g = ag::parent_grad(n, i)) (*g)[0] += n.grad[0] * factor;
    });
}

#define XL_INSTANTIATE_OPS(T)                                                                                  \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                        \
    template Var<T> sum(std::span<const Var<T>>);                                                             \
    template Var<T> scale(const Var<T>&, T);                                                                  \
    template Var<T> relu(const Var<T>&);                                                                      \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dArgs);                          \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>*, Tensor<T>*,          \
                               BatchNormArgs);                                                                \
    template Var<T> max_pool2d(const Var<T>&, std::size_t, std::size_t, std::size_t);                         \
    template Var<T> global_avg_pool(const Var<T>&);                                                           \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                      \
    template Var<T> upsample_nearest2x(const Var<T>&);                                                        \
    template Var<T> upsample_bilinear(const Var<T>&, std::size_t, std::size_t);                               \
    template Var<T> cross_entropy(const Var<T>&, std::span<const std::int32_t>);                              \
    template Var<T> pixel_cross_entropy(const Var<T>&, std::span<const std::int32_t>);                        \
    template Var<T> sum_squared_diff(const Var<T>&, const Var<T>&);                                           \
    template Var<T> scalar_sum(std::span<const Var<T>>, T);

XL_INSTANTIATE_OPS(float)
XL_INSTANTIATE_OPS(double)

}  // namespace xl::ops
