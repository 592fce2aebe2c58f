#pragma once

#include "relight/tensor.hpp"

namespace relight::kernels {

// Raw dense kernels shared by the float training path and the double
// gradient-check path. Backward kernels accumulate into their destination.
//
// conv:   x (n, ci, hx, wx), w (co, ci, k, k), y (n, co, hy, wy)
//         hy = (hx + 2p - k) / s + 1   (floor)
// deconv: x (n, ci, hx, wx), w (ci, co, k, k), y (n, co, hy, wy)
//         hy = (hx - 1) * s - 2p + k
// deconv is the exact transpose of the conv linear map; with a shared weight
// buffer the two satisfy <conv(x), y> == <x, deconv(y)>.

template <typename T>
void conv2d_forward(const T* x, Shape xs, const T* w, const T* bias, int co, int k,
                    int stride, int pad, T* y, Shape ys);

template <typename T>
void conv2d_backward(const T* x, Shape xs, const T* w, int co, int k, int stride, int pad,
                     const T* dy, Shape ys, T* dx, T* dw, T* dbias);

template <typename T>
void deconv2d_forward(const T* x, Shape xs, const T* w, const T* bias, int co, int k,
                      int stride, int pad, T* y, Shape ys);

template <typename T>
void deconv2d_backward(const T* x, Shape xs, const T* w, int co, int k, int stride, int pad,
                       const T* dy, Shape ys, T* dx, T* dw, T* dbias);

// Per-(sample, channel) normalization to zero mean / unit variance over the
// spatial extent. Degenerate 1x1 maps pass through unchanged. inv_std must
// hold n*c entries; it is filled by the forward and consumed by the backward.
template <typename T>
void instance_norm_forward(const T* x, Shape xs, T eps, T* y, T* inv_std);

template <typename T>
void instance_norm_backward(const T* y, Shape xs, const T* inv_std, const T* dy, T* dx);

}  // namespace relight::kernels
