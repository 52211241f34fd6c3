#include "htlmine/ops.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace htl {

namespace {

void require(bool ok, const std::string & msg) {
    if (!ok) {
        throw dimension_error(msg);
    }
}

void validate_class_weights(const std::vector<double> & w, int64_t num_classes) {
    if (int64_t(w.size()) != num_classes) {
        throw validation_error("class_weights length " + std::to_string(w.size()) +
                               " does not match class count " + std::to_string(num_classes));
    }
    bool any_positive = false;
    for (double v : w) {
        if (v < 0.0) {
            throw validation_error("class_weights must be nonnegative");
        }
        if (v > 0.0) {
            any_positive = true;
        }
    }
    if (!any_positive) {
        throw validation_error("class_weights must contain a positive entry");
    }
}

} // namespace

tensor_ptr conv2d(const tensor_ptr & input, const tensor_ptr & weight,
                  const tensor_ptr & bias, int stride, int padding,
                  grad_tape * tape) {
    require(input->shape.size() == 4, "conv2d input must be 4-d, got " + shape_str(input->shape));
    require(weight->shape.size() == 4, "conv2d weight must be 4-d, got " + shape_str(weight->shape));
    const int64_t N = input->dim(0), Cin = input->dim(1), H = input->dim(2), W = input->dim(3);
    const int64_t Cout = weight->dim(0), kH = weight->dim(2), kW = weight->dim(3);
    require(weight->dim(1) == Cin,
            "conv2d channel mismatch: input axis 1 is " + std::to_string(Cin) +
                ", weight axis 1 is " + std::to_string(weight->dim(1)));
    require(bias->shape.size() == 1 && bias->dim(0) == Cout,
            "conv2d bias must be [" + std::to_string(Cout) + "], got " + shape_str(bias->shape));
    require(stride >= 1, "conv2d stride must be >= 1");
    require(padding >= 0, "conv2d padding must be >= 0");
    require(kH <= H + 2 * padding && kW <= W + 2 * padding,
            "conv2d kernel " + shape_str({kH, kW}) + " exceeds padded input " +
                shape_str({H + 2 * padding, W + 2 * padding}));

    const int64_t OH = (H + 2 * padding - kH) / stride + 1;
    const int64_t OW = (W + 2 * padding - kW) / stride + 1;
    auto out = make_tensor({N, Cout, OH, OW});
    out->requires_grad = input->requires_grad || weight->requires_grad || bias->requires_grad;

    const double * x = input->data.data();
    const double * w = weight->data.data();
    const double * b = bias->data.data();
    double * y = out->data.data();
    const int pad = padding;

    if (stride == 1) {
        // Row-contiguous accumulation; per-output reduction order is
        // (ci, kh, kw) regardless of thread count.
        parallel_for(N * Cout, [&](int64_t idx) {
            const int64_t n = idx / Cout, co = idx % Cout;
            double * out_plane = y + idx * OH * OW;
            for (int64_t i = 0; i < OH * OW; ++i) {
                out_plane[i] = b[co];
            }
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double * in_plane = x + (n * Cin + ci) * H * W;
                const double * w_plane = w + (co * Cin + ci) * kH * kW;
                for (int64_t kh = 0; kh < kH; ++kh) {
                    const int64_t oh_lo = std::max<int64_t>(0, pad - kh);
                    const int64_t oh_hi = std::min<int64_t>(OH, H + pad - kh);
                    for (int64_t kw = 0; kw < kW; ++kw) {
                        const double wv = w_plane[kh * kW + kw];
                        const int64_t ow_lo = std::max<int64_t>(0, pad - kw);
                        const int64_t ow_hi = std::min<int64_t>(OW, W + pad - kw);
                        for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const double * in_row = in_plane + (oh - pad + kh) * W + kw - pad;
                            double * out_row = out_plane + oh * OW;
                            for (int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                                out_row[ow] += wv * in_row[ow];
                            }
                        }
                    }
                }
            }
        });
    } else {
        parallel_for(N * Cout, [&](int64_t idx) {
            const int64_t n = idx / Cout, co = idx % Cout;
            double * out_plane = y + idx * OH * OW;
            for (int64_t oh = 0; oh < OH; ++oh) {
                for (int64_t ow = 0; ow < OW; ++ow) {
                    double acc = b[co];
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        for (int64_t kh = 0; kh < kH; ++kh) {
                            const int64_t ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= H) {
                                continue;
                            }
                            for (int64_t kw = 0; kw < kW; ++kw) {
                                const int64_t iw = ow * stride - pad + kw;
                                if (iw < 0 || iw >= W) {
                                    continue;
                                }
                                acc += w[((co * Cin + ci) * kH + kh) * kW + kw] *
                                       x[((n * Cin + ci) * H + ih) * W + iw];
                            }
                        }
                    }
                    out_plane[oh * OW + ow] = acc;
                }
            }
        });
    }

    if (tape != nullptr && out->requires_grad) {
        tape->record([input, weight, bias, out, stride, pad, N, Cin, H, W, Cout, kH, kW, OH, OW] {
            const double * dy = out->grad.data();
            const double * x = input->data.data();
            const double * w = weight->data.data();

            if (bias->requires_grad) {
                bias->ensure_grad();
                double * db = bias->grad.data();
                parallel_for(Cout, [&](int64_t co) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) {
                        const double * dy_plane = dy + (n * Cout + co) * OH * OW;
                        for (int64_t i = 0; i < OH * OW; ++i) {
                            acc += dy_plane[i];
                        }
                    }
                    db[co] += acc;
                });
            }

            if (weight->requires_grad) {
                weight->ensure_grad();
                double * dw = weight->grad.data();
                parallel_for(Cout * Cin, [&](int64_t idx) {
                    const int64_t co = idx / Cin, ci = idx % Cin;
                    double * dw_plane = dw + idx * kH * kW;
                    for (int64_t kh = 0; kh < kH; ++kh) {
                        for (int64_t kw = 0; kw < kW; ++kw) {
                            double acc = 0.0;
                            for (int64_t n = 0; n < N; ++n) {
                                const double * in_plane = x + (n * Cin + ci) * H * W;
                                const double * dy_plane = dy + (n * Cout + co) * OH * OW;
                                for (int64_t oh = 0; oh < OH; ++oh) {
                                    const int64_t ih = oh * stride - pad + kh;
                                    if (ih < 0 || ih >= H) {
                                        continue;
                                    }
                                    const double * in_row = in_plane + ih * W;
                                    const double * dy_row = dy_plane + oh * OW;
                                    for (int64_t ow = 0; ow < OW; ++ow) {
                                        const int64_t iw = ow * stride - pad + kw;
                                        if (iw < 0 || iw >= W) {
                                            continue;
                                        }
                                        acc += in_row[iw] * dy_row[ow];
                                    }
                                }
                            }
                            dw_plane[kh * kW + kw] += acc;
                        }
                    }
                });
            }

            if (input->requires_grad) {
                input->ensure_grad();
                double * dx = input->grad.data();
                parallel_for(N * Cin, [&](int64_t idx) {
                    const int64_t n = idx / Cin, ci = idx % Cin;
                    double * dx_plane = dx + idx * H * W;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const double * dy_plane = dy + (n * Cout + co) * OH * OW;
                        const double * w_plane = w + (co * Cin + ci) * kH * kW;
                        for (int64_t kh = 0; kh < kH; ++kh) {
                            for (int64_t kw = 0; kw < kW; ++kw) {
                                const double wv = w_plane[kh * kW + kw];
                                for (int64_t oh = 0; oh < OH; ++oh) {
                                    const int64_t ih = oh * stride - pad + kh;
                                    if (ih < 0 || ih >= H) {
                                        continue;
                                    }
                                    double * dx_row = dx_plane + ih * W;
                                    const double * dy_row = dy_plane + oh * OW;
                                    for (int64_t ow = 0; ow < OW; ++ow) {
                                        const int64_t iw = ow * stride - pad + kw;
                                        if (iw < 0 || iw >= W) {
                                            continue;
                                        }
                                        dx_row[iw] += wv * dy_row[ow];
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

tensor_ptr relu(const tensor_ptr & input, grad_tape * tape) {
    auto out = make_tensor(input->shape);
    out->requires_grad = input->requires_grad;
    const int64_t n = input->numel();
    const double * x = input->data.data();
    double * y = out->data.data();
    for (int64_t i = 0; i < n; ++i) {
        y[i] = x[i] > 0.0 ? x[i] : 0.0;
    }
    if (tape != nullptr && out->requires_grad) {
        tape->record([input, out, n] {
            input->ensure_grad();
            const double * x = input->data.data();
            const double * dy = out->grad.data();
            double * dx = input->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                if (x[i] > 0.0) {
                    dx[i] += dy[i];
                }
            }
        });
    }
    return out;
}

tensor_ptr maxpool2d(const tensor_ptr & input, int window, int stride, grad_tape * tape) {
    require(input->shape.size() == 4, "maxpool2d input must be 4-d, got " + shape_str(input->shape));
    require(window == stride, "maxpool2d supports non-overlapping pooling only (window == stride)");
    const int64_t N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    if (H % stride != 0 || W % stride != 0) {
        throw dimension_error("maxpool2d spatial dims " + shape_str({H, W}) +
                              " not divisible by stride " + std::to_string(stride));
    }
    const int64_t OH = H / stride, OW = W / stride;
    auto out = make_tensor({N, C, OH, OW});
    out->requires_grad = input->requires_grad;

    // argmax indices are recorded only when a tape wants them
    auto argmax = std::make_shared<std::vector<int64_t>>();
    const bool record = tape != nullptr && out->requires_grad;
    if (record) {
        argmax->assign(size_t(out->numel()), 0);
    }

    const double * x = input->data.data();
    double * y = out->data.data();
    parallel_for(N * C, [&](int64_t plane) {
        const double * in_plane = x + plane * H * W;
        double * out_plane = y + plane * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                double best = -1e300;
                int64_t best_idx = 0;
                for (int64_t dh = 0; dh < window; ++dh) {
                    for (int64_t dw = 0; dw < window; ++dw) {
                        const int64_t idx = (oh * stride + dh) * W + ow * stride + dw;
                        if (in_plane[idx] > best) {
                            best = in_plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out_plane[oh * OW + ow] = best;
                if (record) {
                    (*argmax)[size_t(plane * OH * OW + oh * OW + ow)] = plane * H * W + best_idx;
                }
            }
        }
    });

    if (record) {
        tape->record([input, out, argmax] {
            input->ensure_grad();
            const double * dy = out->grad.data();
            double * dx = input->grad.data();
            for (size_t i = 0; i < argmax->size(); ++i) {
                dx[(*argmax)[i]] += dy[i];
            }
        });
    }
    return out;
}

tensor_ptr upsample_nearest(const tensor_ptr & input, int factor, grad_tape * tape) {
    require(input->shape.size() == 4, "upsample input must be 4-d, got " + shape_str(input->shape));
    require(factor >= 1, "upsample factor must be >= 1");
    const int64_t N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    const int64_t OH = H * factor, OW = W * factor;
    auto out = make_tensor({N, C, OH, OW});
    out->requires_grad = input->requires_grad;

    const double * x = input->data.data();
    double * y = out->data.data();
    parallel_for(N * C, [&](int64_t plane) {
        const double * in_plane = x + plane * H * W;
        double * out_plane = y + plane * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
            const double * in_row = in_plane + (oh / factor) * W;
            double * out_row = out_plane + oh * OW;
            for (int64_t ow = 0; ow < OW; ++ow) {
                out_row[ow] = in_row[ow / factor];
            }
        }
    });

    if (tape != nullptr && out->requires_grad) {
        tape->record([input, out, factor, N, C, H, W, OH, OW] {
            input->ensure_grad();
            const double * dy = out->grad.data();
            double * dx = input->grad.data();
            parallel_for(N * C, [&](int64_t plane) {
                const double * dy_plane = dy + plane * OH * OW;
                double * dx_plane = dx + plane * H * W;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const double * dy_row = dy_plane + oh * OW;
                    double * dx_row = dx_plane + (oh / factor) * W;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        dx_row[ow / factor] += dy_row[ow];
                    }
                }
            });
        });
    }
    return out;
}

tensor_ptr concat_channels(const tensor_ptr & a, const tensor_ptr & b, grad_tape * tape) {
    require(a->shape.size() == 4 && b->shape.size() == 4, "concat_channels expects 4-d tensors");
    require(a->dim(0) == b->dim(0), "concat_channels batch mismatch: " +
                                        std::to_string(a->dim(0)) + " vs " + std::to_string(b->dim(0)));
    require(a->dim(2) == b->dim(2) && a->dim(3) == b->dim(3),
            "concat_channels spatial mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    const int64_t N = a->dim(0), Ca = a->dim(1), Cb = b->dim(1), H = a->dim(2), W = a->dim(3);
    auto out = make_tensor({N, Ca + Cb, H, W});
    out->requires_grad = a->requires_grad || b->requires_grad;

    const int64_t plane = H * W;
    for (int64_t n = 0; n < N; ++n) {
        std::copy_n(a->data.data() + n * Ca * plane, Ca * plane,
                    out->data.data() + n * (Ca + Cb) * plane);
        std::copy_n(b->data.data() + n * Cb * plane, Cb * plane,
                    out->data.data() + (n * (Ca + Cb) + Ca) * plane);
    }

    if (tape != nullptr && out->requires_grad) {
        tape->record([a, b, out, N, Ca, Cb, plane] {
            const double * dy = out->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    const double * src = dy + n * (Ca + Cb) * plane;
                    double * dst = a->grad.data() + n * Ca * plane;
                    for (int64_t i = 0; i < Ca * plane; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    const double * src = dy + (n * (Ca + Cb) + Ca) * plane;
                    double * dst = b->grad.data() + n * Cb * plane;
                    for (int64_t i = 0; i < Cb * plane; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
        });
    }
    return out;
}

tensor_ptr linear(const tensor_ptr & input, const tensor_ptr & weight,
                  const tensor_ptr & bias, grad_tape * tape) {
    require(input->shape.size() == 2, "linear input must be 2-d, got " + shape_str(input->shape));
    require(weight->shape.size() == 2, "linear weight must be 2-d");
    const int64_t N = input->dim(0), F = input->dim(1), O = weight->dim(0);
    require(weight->dim(1) == F, "linear feature mismatch: input axis 1 is " + std::to_string(F) +
                                     ", weight axis 1 is " + std::to_string(weight->dim(1)));
    require(bias->shape.size() == 1 && bias->dim(0) == O, "linear bias must be [" + std::to_string(O) + "]");

    auto out = make_tensor({N, O});
    out->requires_grad = input->requires_grad || weight->requires_grad || bias->requires_grad;
    const double * x = input->data.data();
    const double * w = weight->data.data();
    const double * b = bias->data.data();
    double * y = out->data.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t o = 0; o < O; ++o) {
            double acc = b[o];
            for (int64_t f = 0; f < F; ++f) {
                acc += w[o * F + f] * x[n * F + f];
            }
            y[n * O + o] = acc;
        }
    }

    if (tape != nullptr && out->requires_grad) {
        tape->record([input, weight, bias, out, N, F, O] {
            const double * dy = out->grad.data();
            const double * x = input->data.data();
            const double * w = weight->data.data();
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int64_t o = 0; o < O; ++o) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) {
                        acc += dy[n * O + o];
                    }
                    bias->grad[o] += acc;
                }
            }
            if (weight->requires_grad) {
                weight->ensure_grad();
                for (int64_t o = 0; o < O; ++o) {
                    for (int64_t f = 0; f < F; ++f) {
                        double acc = 0.0;
                        for (int64_t n = 0; n < N; ++n) {
                            acc += dy[n * O + o] * x[n * F + f];
                        }
                        weight->grad[o * F + f] += acc;
                    }
                }
            }
            if (input->requires_grad) {
                input->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t f = 0; f < F; ++f) {
                        double acc = 0.0;
                        for (int64_t o = 0; o < O; ++o) {
                            acc += dy[n * O + o] * w[o * F + f];
                        }
                        input->grad[n * F + f] += acc;
                    }
                }
            }
        });
    }
    return out;
}

tensor_ptr global_avg_pool(const tensor_ptr & input, grad_tape * tape) {
    require(input->shape.size() == 4, "global_avg_pool input must be 4-d");
    const int64_t N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
    auto out = make_tensor({N, C});
    out->requires_grad = input->requires_grad;
    const double inv = 1.0 / double(H * W);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double * plane = input->data.data() + nc * H * W;
        double acc = 0.0;
        for (int64_t i = 0; i < H * W; ++i) {
            acc += plane[i];
        }
        out->data[nc] = acc * inv;
    }
    if (tape != nullptr && out->requires_grad) {
        tape->record([input, out, N, C, H, W, inv] {
            input->ensure_grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const double g = out->grad[nc] * inv;
                double * dplane = input->grad.data() + nc * H * W;
                for (int64_t i = 0; i < H * W; ++i) {
                    dplane[i] += g;
                }
            }
        });
    }
    return out;
}

std::vector<double> softmax_pixelwise(const tensor & logits) {
    const int64_t N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    std::vector<double> probs(logits.data.size());
    const int64_t plane = H * W;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t p = 0; p < plane; ++p) {
            double m = -1e300;
            for (int64_t c = 0; c < C; ++c) {
                m = std::max(m, logits.data[(n * C + c) * plane + p]);
            }
            double z = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                z += std::exp(logits.data[(n * C + c) * plane + p] - m);
            }
            for (int64_t c = 0; c < C; ++c) {
                probs[(n * C + c) * plane + p] = std::exp(logits.data[(n * C + c) * plane + p] - m) / z;
            }
        }
    }
    return probs;
}

std::vector<double> softmax_rows(const tensor & logits) {
    const int64_t N = logits.dim(0), C = logits.dim(1);
    std::vector<double> probs(logits.data.size());
    for (int64_t n = 0; n < N; ++n) {
        double m = -1e300;
        for (int64_t c = 0; c < C; ++c) {
            m = std::max(m, logits.data[n * C + c]);
        }
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            z += std::exp(logits.data[n * C + c] - m);
        }
        for (int64_t c = 0; c < C; ++c) {
            probs[n * C + c] = std::exp(logits.data[n * C + c] - m) / z;
        }
    }
    return probs;
}

tensor_ptr weighted_cross_entropy(const tensor_ptr & logits, const tensor_ptr & target,
                                  const std::vector<double> & class_weights,
                                  grad_tape * tape) {
    require(logits->shape.size() == 4, "weighted_cross_entropy logits must be 4-d");
    const int64_t N = logits->dim(0), C = logits->dim(1), H = logits->dim(2), W = logits->dim(3);
    require(target->shape.size() == 3 && target->dim(0) == N && target->dim(1) == H &&
                target->dim(2) == W,
            "weighted_cross_entropy target must be [N,H,W] matching logits, got " +
                shape_str(target->shape));
    validate_class_weights(class_weights, C);

    const int64_t plane = H * W;
    const int64_t pixels = N * plane;
    std::vector<int> tclass(static_cast<size_t>(pixels));
    for (int64_t i = 0; i < pixels; ++i) {
        const double tv = target->data[size_t(i)];
        const int ti = int(tv);
        if (double(ti) != tv || ti < 0 || ti >= C) {
            throw validation_error("target class " + std::to_string(tv) +
                                   " out of range [0," + std::to_string(C) + ") at pixel " +
                                   std::to_string(i));
        }
        tclass[size_t(i)] = ti;
    }

    double loss = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t p = 0; p < plane; ++p) {
            const int tc = tclass[size_t(n * plane + p)];
            const double wc = class_weights[size_t(tc)];
            if (wc == 0.0) {
                continue;   // exact zero contribution, avoids 0 * log(0)
            }
            double m = -1e300;
            for (int64_t c = 0; c < C; ++c) {
                m = std::max(m, logits->data[(n * C + c) * plane + p]);
            }
            double z = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                z += std::exp(logits->data[(n * C + c) * plane + p] - m);
            }
            const double log_p = logits->data[(n * C + tc) * plane + p] - m - std::log(z);
            loss -= wc * log_p;
        }
    }
    loss /= double(pixels);

    auto out = make_tensor({1}, {loss});
    out->requires_grad = logits->requires_grad;
    verify_finite(*out, "weighted_cross_entropy");

    if (tape != nullptr && logits->requires_grad) {
        auto tc_keep = std::make_shared<std::vector<int>>(std::move(tclass));
        auto weights = class_weights;
        tape->record([logits, out, tc_keep, weights, N, C, plane, pixels] {
            logits->ensure_grad();
            const double g = out->grad[0] / double(pixels);
            parallel_for(N, [&](int64_t n) {
                std::vector<double> p_row(static_cast<size_t>(C));
                for (int64_t p = 0; p < plane; ++p) {
                    const int tc = (*tc_keep)[size_t(n * plane + p)];
                    const double wc = weights[size_t(tc)];
                    if (wc == 0.0) {
                        continue;
                    }
                    double m = -1e300;
                    for (int64_t c = 0; c < C; ++c) {
                        m = std::max(m, logits->data[(n * C + c) * plane + p]);
                    }
                    double z = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        p_row[size_t(c)] = std::exp(logits->data[(n * C + c) * plane + p] - m);
                        z += p_row[size_t(c)];
                    }
                    for (int64_t c = 0; c < C; ++c) {
                        const double prob = p_row[size_t(c)] / z;
                        const double delta = (c == tc) ? 1.0 : 0.0;
                        logits->grad[(n * C + c) * plane + p] += g * wc * (prob - delta);
                    }
                }
            });
        });
    }
    return out;
}

tensor_ptr cross_entropy_classification(const tensor_ptr & logits,
                                        const std::vector<int> & targets,
                                        const std::vector<double> & class_weights,
                                        grad_tape * tape) {
    require(logits->shape.size() == 2, "cross_entropy_classification logits must be 2-d");
    const int64_t N = logits->dim(0), C = logits->dim(1);
    require(int64_t(targets.size()) == N, "targets length must match batch");
    validate_class_weights(class_weights, C);
    for (int t : targets) {
        if (t < 0 || t >= C) {
            throw validation_error("target class " + std::to_string(t) + " out of range [0," +
                                   std::to_string(C) + ")");
        }
    }

    double loss = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        const int tc = targets[size_t(n)];
        const double wc = class_weights[size_t(tc)];
        if (wc == 0.0) {
            continue;
        }
        double m = -1e300;
        for (int64_t c = 0; c < C; ++c) {
            m = std::max(m, logits->data[n * C + c]);
        }
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            z += std::exp(logits->data[n * C + c] - m);
        }
        loss -= wc * (logits->data[n * C + tc] - m - std::log(z));
    }
    loss /= double(N);

    auto out = make_tensor({1}, {loss});
    out->requires_grad = logits->requires_grad;
    verify_finite(*out, "cross_entropy_classification");

    if (tape != nullptr && logits->requires_grad) {
        auto tgt = targets;
        auto weights = class_weights;
        tape->record([logits, out, tgt, weights, N, C] {
            logits->ensure_grad();
            const double g = out->grad[0] / double(N);
            for (int64_t n = 0; n < N; ++n) {
                const int tc = tgt[size_t(n)];
                const double wc = weights[size_t(tc)];
                if (wc == 0.0) {
                    continue;
                }
                double m = -1e300;
                for (int64_t c = 0; c < C; ++c) {
                    m = std::max(m, logits->data[n * C + c]);
                }
                double z = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    z += std::exp(logits->data[n * C + c] - m);
                }
                for (int64_t c = 0; c < C; ++c) {
                    const double prob = std::exp(logits->data[n * C + c] - m) / z;
                    const double delta = (c == tc) ? 1.0 : 0.0;
                    logits->grad[n * C + c] += g * wc * (prob - delta);
                }
            }
        });
    }
    return out;
}

} // namespace htl
