#include "relight/kernels.hpp"

#include <malloc.h>

#include <cmath>
#include <cstring>
#include <vector>

// Lets GCC vectorize the dot-product reductions without -ffast-math.
#define RELIGHT_SIMD_REDUCE _Pragma("omp simd reduction(+ : acc)")

namespace relight::kernels {

namespace {

// Activation buffers run hundreds of KB; left at the default thresholds,
// glibc serves each one through mmap/munmap and the graph spends its time in
// page faults rather than arithmetic.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  return true;
}();

// Valid output range for index o such that o*stride + k_off lands inside
// [0, in_limit). k_off = kernel_offset - padding, possibly negative.
inline void stride_range(int k_off, int stride, int in_limit, int out_limit, int& lo, int& hi) {
  lo = k_off >= 0 ? 0 : (-k_off + stride - 1) / stride;
  const int num = in_limit - 1 - k_off;
  hi = num < 0 ? 0 : num / stride + 1;
  if (hi > out_limit) hi = out_limit;
  if (lo > hi) lo = hi;
}

template <typename T>
void axpy(T* dst, const T* src, T w, int n) {
  for (int i = 0; i < n; ++i) dst[i] += w * src[i];
}

template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc = 0;
  RELIGHT_SIMD_REDUCE
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Scratch for row-padded images; one per scalar type, single-threaded use.
template <typename T>
std::vector<T>& scratch(int which) {
  thread_local std::vector<T> bufs[3];
  return bufs[which];
}

// Copies one image (ci, hx, wx) into rows padded with `pad` zero columns on
// both sides. Vertical bounds stay explicit in the loops.
template <typename T>
void pad_rows(const T* x, int ci, int hx, int wx, int pad, std::vector<T>& out) {
  const int stride = wx + 2 * pad;
  out.assign(size_t(ci) * hx * stride, T(0));
  for (int c = 0; c < ci; ++c)
    for (int y = 0; y < hx; ++y)
      std::memcpy(out.data() + (size_t(c) * hx + y) * stride + pad,
                  x + (size_t(c) * hx + y) * wx, sizeof(T) * wx);
}

// ---------------------------------------------------------------------------
// stride-1 convolution over row-padded input.
//
// Writes y[oc][oy][0..wy) = bias + sum_{ci,ky,kx} w * xpad[ci][oy+ky-?][...].
// `accumulate` keeps the existing y values instead of the bias (used by the
// backward-input pass, which is itself a stride-1 conv with a flipped
// kernel).

template <typename T>
void conv_s1_rows(const T* xpad, int ci, int hx, int wx, int pad, const T* w, const T* bias,
                  int co, int k, T* y, int hy, int wy, bool accumulate) {
  const int xstride = wx + 2 * pad;
  std::vector<T>& accv = scratch<T>(2);
  accv.resize(wy);
  T* acc = accv.data();
  for (int oc = 0; oc < co; ++oc) {
    T* ychan = y + size_t(oc) * hy * wy;
    for (int oy = 0; oy < hy; ++oy) {
      T* yrow = ychan + size_t(oy) * wy;
      if (accumulate) {
        std::memcpy(acc, yrow, sizeof(T) * wy);
      } else {
        const T b = bias ? bias[oc] : T(0);
        for (int i = 0; i < wy; ++i) acc[i] = b;
      }
      for (int ic = 0; ic < ci; ++ic) {
        const T* wc = w + (size_t(oc) * ci + ic) * k * k;
        const T* xchan = xpad + size_t(ic) * hx * xstride;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= hx) continue;
          // xpad row starts at ix = -pad, so tap kx reads offset ox + kx
          const T* xrow = xchan + size_t(iy) * xstride;
          const T* wrow = wc + ky * k;
          int kx = 0;
          for (; kx + 4 <= k; kx += 4) {
            const T w0 = wrow[kx], w1 = wrow[kx + 1], w2 = wrow[kx + 2], w3 = wrow[kx + 3];
            const T* s = xrow + kx;
            for (int i = 0; i < wy; ++i)
              acc[i] += w0 * s[i] + w1 * s[i + 1] + w2 * s[i + 2] + w3 * s[i + 3];
          }
          for (; kx < k; ++kx) axpy(acc, xrow + kx, wrow[kx], wy);
        }
      }
      std::memcpy(yrow, acc, sizeof(T) * wy);
    }
  }
}

// Tiny-spatial stride-1 path: pixel-major im2col so the contraction axis
// (ci * k * k) is contiguous. Row-structured loops are overhead-bound when
// the output row holds only a handful of pixels.
template <typename T>
void im2col_pixel_major(const T* xpad, int ci, int hx, int wx, int pad, int k, int hy, int wy,
                        std::vector<T>& col) {
  const int xstride = wx + 2 * pad;
  const int K = ci * k * k;
  col.assign(size_t(hy) * wy * K, T(0));
  for (int oy = 0; oy < hy; ++oy)
    for (int ox = 0; ox < wy; ++ox) {
      T* dst = col.data() + (size_t(oy) * wy + ox) * K;
      for (int ic = 0; ic < ci; ++ic)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - pad;
          T* seg = dst + (ic * k + ky) * k;
          if (iy < 0 || iy >= hx) continue;  // stays zero
          std::memcpy(seg, xpad + (size_t(ic) * hx + iy) * xstride + ox, sizeof(T) * k);
        }
    }
}

template <typename T>
void conv_s1_small_forward(const std::vector<T>& col, const T* w, const T* bias, int co, int K,
                           int pixels, T* y) {
  for (int oc = 0; oc < co; ++oc) {
    const T* wrow = w + size_t(oc) * K;
    T* yc = y + size_t(oc) * pixels;
    const T b = bias ? bias[oc] : T(0);
    for (int p = 0; p < pixels; ++p) yc[p] = b + dot(wrow, col.data() + size_t(p) * K, K);
  }
}

// Generic gather for strided convolutions.
template <typename T>
void conv_forward_generic(const T* x, Shape xs, const T* w, const T* bias, int co, int k,
                          int stride, int pad, T* y, Shape ys, int n) {
  const int ci = xs.c, hx = xs.h, wx = xs.w, hy = ys.h, wy = ys.w;
  const int64_t xch = int64_t(hx) * wx, ych = int64_t(hy) * wy;
  const T* xn = x + int64_t(n) * ci * xch;
  T* yn = y + int64_t(n) * co * ych;
  for (int oc = 0; oc < co; ++oc) {
    T* yc = yn + int64_t(oc) * ych;
    const T b = bias ? bias[oc] : T(0);
    for (int64_t i = 0; i < ych; ++i) yc[i] = b;
    for (int ic = 0; ic < ci; ++ic) {
      const T* xc = xn + int64_t(ic) * xch;
      const T* wc = w + (int64_t(oc) * ci + ic) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        int oy_lo, oy_hi;
        stride_range(ky - pad, stride, hx, hy, oy_lo, oy_hi);
        for (int oy = oy_lo; oy < oy_hi; ++oy) {
          const T* xrow = xc + int64_t(oy * stride + ky - pad) * wx;
          T* yrow = yc + int64_t(oy) * wy;
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wc[ky * k + kx];
            int ox_lo, ox_hi;
            stride_range(kx - pad, stride, wx, wy, ox_lo, ox_hi);
            const T* xs_ = xrow + kx - pad;
            for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xs_[int64_t(ox) * stride];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// stride-2 machinery. Deinterleaving the fine-grid rows by column parity
// turns every strided access into a contiguous one: with padded column
// u = v + pad, tap kq touches phase (kq & 1) at index o + (kq >> 1).

// phases[c][y][parity][j] holds fine column v = 2j + parity - pad.
template <typename T>
void build_phases(const T* x, int c, int h, int w, int pad, int halfw, std::vector<T>& out) {
  out.assign(size_t(c) * h * 2 * halfw, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const T* row = x + (size_t(ch) * h + y) * w;
      T* even = out.data() + ((size_t(ch) * h + y) * 2 + 0) * halfw;
      T* odd = even + halfw;
      for (int v = 0; v < w; ++v) {
        const int u = v + pad;
        (u & 1 ? odd : even)[u >> 1] = row[v];
      }
    }
}

inline int phase_halfw(int w_fine, int pad) { return (w_fine + 2 * pad) / 2 + 1; }

// dst[dc][oy][0..wo) (+)= sum w[(dc*c_src+sc)k^2 + ...] * fine phases of src.
// Serves the strided conv forward and the deconv input gradient.
template <typename T>
void gather_s2(const T* phases, int c_src, int h_fine, int halfw, int pad, const T* w,
               const T* bias, int c_dst, int k, T* dst, int ho, int wo, bool accumulate) {
  std::vector<T>& accv = scratch<T>(2);
  accv.resize(wo);
  T* acc = accv.data();
  for (int dc = 0; dc < c_dst; ++dc) {
    T* dchan = dst + size_t(dc) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      T* drow = dchan + size_t(oy) * wo;
      if (accumulate) {
        std::memcpy(acc, drow, sizeof(T) * wo);
      } else {
        const T b = bias ? bias[dc] : T(0);
        for (int i = 0; i < wo; ++i) acc[i] = b;
      }
      for (int sc = 0; sc < c_src; ++sc) {
        const T* wc = w + (size_t(dc) * c_src + sc) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const int fy = 2 * oy + ky - pad;
          if (fy < 0 || fy >= h_fine) continue;
          const T* base = phases + ((size_t(sc) * h_fine + fy) * 2) * halfw;
          const T* wrow = wc + ky * k;
          for (int kx = 0; kx < k; ++kx)
            axpy(acc, base + (kx & 1) * halfw + (kx >> 1), wrow[kx], wo);
        }
      }
      std::memcpy(drow, acc, sizeof(T) * wo);
    }
  }
}

// Fine-grid scatter: dst[dc] += sum over coarse src rows through the weights.
// Serves the strided conv input gradient and the deconv forward.
template <typename T>
void scatter_s2(const T* src, int c_src, int hc, int wc_len, const T* w, int c_dst, int k,
                int pad, T* dst, int hf, int wf, int halfw) {
  std::vector<T>& accv = scratch<T>(2);
  for (int dc = 0; dc < c_dst; ++dc) {
    accv.assign(size_t(hf) * 2 * halfw, T(0));
    for (int sc = 0; sc < c_src; ++sc) {
      const T* schan = src + size_t(sc) * hc * wc_len;
      const T* wc = w + (size_t(sc) * c_dst + dc) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const T* wrow = wc + ky * k;
        for (int oy = 0; oy < hc; ++oy) {
          const int fy = 2 * oy + ky - pad;
          if (fy < 0 || fy >= hf) continue;
          const T* srow = schan + size_t(oy) * wc_len;
          T* base = accv.data() + (size_t(fy) * 2) * halfw;
          for (int kx = 0; kx < k; ++kx)
            axpy(base + (kx & 1) * halfw + (kx >> 1), srow, wrow[kx], wc_len);
        }
      }
    }
    T* dchan = dst + size_t(dc) * hf * wf;
    for (int y = 0; y < hf; ++y) {
      const T* base = accv.data() + (size_t(y) * 2) * halfw;
      T* drow = dchan + size_t(y) * wf;
      for (int v = 0; v < wf; ++v) {
        const int u = v + pad;
        drow[v] += base[(u & 1) * halfw + (u >> 1)];
      }
    }
  }
}

// dw[(a*c_fine+b)k^2 + ...] += dots of coarse rows against fine phases.
template <typename T>
void dw_s2(const T* coarse, int c_coarse, int hc, int wc_len, const T* phases, int c_fine,
           int hf, int halfw, int pad, int k, T* dw) {
  for (int a = 0; a < c_coarse; ++a) {
    const T* cchan = coarse + size_t(a) * hc * wc_len;
    for (int b = 0; b < c_fine; ++b) {
      T* dwc = dw + (size_t(a) * c_fine + b) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        T* dwrow = dwc + ky * k;
        for (int oy = 0; oy < hc; ++oy) {
          const int fy = 2 * oy + ky - pad;
          if (fy < 0 || fy >= hf) continue;
          const T* crow = cchan + size_t(oy) * wc_len;
          const T* base = phases + ((size_t(b) * hf + fy) * 2) * halfw;
          for (int kx = 0; kx < k; ++kx)
            dwrow[kx] += dot(crow, base + (kx & 1) * halfw + (kx >> 1), wc_len);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Strided convolutions whose coarse grid holds only a handful of pixels
// (deep encoder/decoder stages: many channels, 4x4..8x8 maps). Row-level
// loops degenerate there, so work per kernel tap is expressed over the
// channel axis instead: weights pack into per-tap (coarse_ch x fine_ch)
// blocks and the fine grid gathers into pixel-major (P x fine_ch) slabs.
//
// Shared relation, both conv and deconv: coarse[a][oy][ox] pairs with
// fine[b][oy*s + ky - p][ox*s + kx - p]; the weight entry lives at
// (a * c_fine + b) * k^2 + ky * k + kx in both layouts.

template <typename T>
void pack_weight_taps(const T* w, int c_coarse, int c_fine, int k, std::vector<T>& out) {
  const int k2 = k * k;
  out.resize(size_t(k2) * c_coarse * c_fine);
  for (int a = 0; a < c_coarse; ++a)
    for (int b = 0; b < c_fine; ++b) {
      const T* src = w + (size_t(a) * c_fine + b) * k2;
      for (int t = 0; t < k2; ++t) out[(size_t(t) * c_coarse + a) * c_fine + b] = src[t];
    }
}

// Gathers fine[b][fy][fx] for one tap into (P x c_fine); out-of-range pixels
// become zero rows. valid[pix] marks in-range pixels for the scatter pass.
template <typename T>
void gather_tap(const T* fine, int c_fine, int hf, int wf, int hc, int wc_len, int stride,
                int ky_off, int kx_off, std::vector<T>& out, std::vector<uint8_t>& valid) {
  const int P = hc * wc_len;
  out.assign(size_t(P) * c_fine, T(0));
  valid.assign(P, 0);
  for (int oy = 0; oy < hc; ++oy) {
    const int fy = oy * stride + ky_off;
    if (fy < 0 || fy >= hf) continue;
    for (int ox = 0; ox < wc_len; ++ox) {
      const int fx = ox * stride + kx_off;
      if (fx < 0 || fx >= wf) continue;
      const int pix = oy * wc_len + ox;
      valid[pix] = 1;
      T* dst = out.data() + size_t(pix) * c_fine;
      const T* src = fine + size_t(fy) * wf + fx;
      const size_t chan_stride = size_t(hf) * wf;
      for (int b = 0; b < c_fine; ++b) dst[b] = src[size_t(b) * chan_stride];
    }
  }
}

// coarse[a][pix] (+)= sum_b wtap[a][b] * ftap[pix][b]  (conv fwd, deconv dX)
template <typename T>
void small_strided_out_coarse(const T* x_fine, int c_fine, int hf, int wf, const T* w,
                              const T* bias, int c_coarse, int k, int stride, int pad,
                              T* coarse, int hc, int wc_len, bool accumulate) {
  const int P = hc * wc_len;
  std::vector<T>& wtaps = scratch<T>(0);
  pack_weight_taps(w, c_coarse, c_fine, k, wtaps);
  std::vector<T>& ftap = scratch<T>(1);
  thread_local std::vector<uint8_t> valid;
  if (!accumulate) {
    for (int a = 0; a < c_coarse; ++a) {
      const T b = bias ? bias[a] : T(0);
      T* row = coarse + size_t(a) * P;
      for (int p = 0; p < P; ++p) row[p] = b;
    }
  }
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx) {
      gather_tap(x_fine, c_fine, hf, wf, hc, wc_len, stride, ky - pad, kx - pad, ftap, valid);
      const T* wt = wtaps.data() + size_t(ky * k + kx) * c_coarse * c_fine;
      for (int a = 0; a < c_coarse; ++a) {
        const T* wrow = wt + size_t(a) * c_fine;
        T* crow = coarse + size_t(a) * P;
        for (int p = 0; p < P; ++p) {
          if (!valid[p]) continue;
          crow[p] += dot(wrow, ftap.data() + size_t(p) * c_fine, c_fine);
        }
      }
    }
}

// fine (+)= scatter of coarse through the taps  (conv dX, deconv fwd)
template <typename T>
void small_strided_out_fine(const T* coarse, int c_coarse, int hc, int wc_len, const T* w,
                            int c_fine, int k, int stride, int pad, T* fine, int hf, int wf) {
  const int P = hc * wc_len;
  std::vector<T>& wtaps = scratch<T>(0);
  pack_weight_taps(w, c_coarse, c_fine, k, wtaps);
  std::vector<T>& facc = scratch<T>(1);
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx) {
      facc.assign(size_t(P) * c_fine, T(0));
      const T* wt = wtaps.data() + size_t(ky * k + kx) * c_coarse * c_fine;
      for (int a = 0; a < c_coarse; ++a) {
        const T* wrow = wt + size_t(a) * c_fine;
        const T* crow = coarse + size_t(a) * P;
        for (int p = 0; p < P; ++p) {
          const T cv = crow[p];
          if (cv != T(0)) axpy(facc.data() + size_t(p) * c_fine, wrow, cv, c_fine);
        }
      }
      const int ky_off = ky - pad, kx_off = kx - pad;
      const size_t chan_stride = size_t(hf) * wf;
      for (int oy = 0; oy < hc; ++oy) {
        const int fy = oy * stride + ky_off;
        if (fy < 0 || fy >= hf) continue;
        for (int ox = 0; ox < wc_len; ++ox) {
          const int fx = ox * stride + kx_off;
          if (fx < 0 || fx >= wf) continue;
          const T* src = facc.data() + size_t(oy * wc_len + ox) * c_fine;
          T* dst = fine + size_t(fy) * wf + fx;
          for (int b = 0; b < c_fine; ++b) dst[size_t(b) * chan_stride] += src[b];
        }
      }
    }
}

// dw[a][b][tap] += sum_pix coarse[a][pix] * fine_tap[pix][b]
template <typename T>
void small_strided_dw(const T* coarse, int c_coarse, int hc, int wc_len, const T* fine,
                      int c_fine, int hf, int wf, int k, int stride, int pad, T* dw) {
  const int P = hc * wc_len;
  std::vector<T>& ftap = scratch<T>(0);
  thread_local std::vector<uint8_t> valid;
  std::vector<T>& acc = scratch<T>(1);
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx) {
      gather_tap(fine, c_fine, hf, wf, hc, wc_len, stride, ky - pad, kx - pad, ftap, valid);
      acc.assign(size_t(c_coarse) * c_fine, T(0));
      for (int a = 0; a < c_coarse; ++a) {
        const T* crow = coarse + size_t(a) * P;
        T* arow = acc.data() + size_t(a) * c_fine;
        for (int p = 0; p < P; ++p) {
          const T cv = crow[p];
          if (cv != T(0) && valid[p]) axpy(arow, ftap.data() + size_t(p) * c_fine, cv, c_fine);
        }
      }
      const int tap = ky * k + kx;
      for (int a = 0; a < c_coarse; ++a) {
        const T* arow = acc.data() + size_t(a) * c_fine;
        for (int b = 0; b < c_fine; ++b) dw[(size_t(a) * c_fine + b) * k * k + tap] += arow[b];
      }
    }
}

// Flip a conv weight (co, ci, k, k) into the (ci, co, k, k) 180-degree-rotated
// form whose stride-1 conv computes the input gradient.
template <typename T>
void flip_weight(const T* w, int co, int ci, int k, std::vector<T>& out) {
  out.resize(size_t(co) * ci * k * k);
  for (int oc = 0; oc < co; ++oc)
    for (int ic = 0; ic < ci; ++ic)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          out[((size_t(ic) * co + oc) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
              w[((size_t(oc) * ci + ic) * k + ky) * k + kx];
}

}  // namespace

template <typename T>
void conv2d_forward(const T* x, Shape xs, const T* w, const T* bias, int co, int k,
                    int stride, int pad, T* y, Shape ys) {
  const int64_t xch = int64_t(xs.h) * xs.w, ych = int64_t(ys.h) * ys.w;
  const bool small = int64_t(ys.h) * ys.w <= 64;
  const bool small_strided = int64_t(ys.h) * ys.w <= 256;
  for (int n = 0; n < xs.n; ++n) {
    if (stride == 1) {
      auto& xpad = scratch<T>(0);
      pad_rows(x + int64_t(n) * xs.c * xch, xs.c, xs.h, xs.w, pad, xpad);
      if (small) {
        auto& col = scratch<T>(1);
        im2col_pixel_major(xpad.data(), xs.c, xs.h, xs.w, pad, k, ys.h, ys.w, col);
        conv_s1_small_forward(col, w, bias, co, xs.c * k * k, ys.h * ys.w,
                              y + int64_t(n) * co * ych);
      } else {
        conv_s1_rows(xpad.data(), xs.c, xs.h, xs.w, pad, w, bias, co, k,
                     y + int64_t(n) * co * ych, ys.h, ys.w, false);
      }
    } else if (small_strided) {
      small_strided_out_coarse(x + int64_t(n) * xs.c * xch, xs.c, xs.h, xs.w, w, bias, co, k,
                               stride, pad, y + int64_t(n) * co * ych, ys.h, ys.w, false);
    } else if (stride == 2) {
      const int halfw = phase_halfw(xs.w, pad);
      auto& phases = scratch<T>(0);
      build_phases(x + int64_t(n) * xs.c * xch, xs.c, xs.h, xs.w, pad, halfw, phases);
      gather_s2(phases.data(), xs.c, xs.h, halfw, pad, w, bias, co, k,
                y + int64_t(n) * co * ych, ys.h, ys.w, false);
    } else {
      conv_forward_generic(x, xs, w, bias, co, k, stride, pad, y, ys, n);
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, Shape xs, const T* w, int co, int k, int stride, int pad,
                     const T* dy, Shape ys, T* dx, T* dw, T* dbias) {
  const int ci = xs.c, hx = xs.h, wx = xs.w, hy = ys.h, wy = ys.w;
  const int64_t xch = int64_t(hx) * wx, ych = int64_t(hy) * wy;

  if (dbias) {
    for (int n = 0; n < ys.n; ++n)
      for (int oc = 0; oc < co; ++oc) {
        const T* dyc = dy + (int64_t(n) * co + oc) * ych;
        T acc = 0;
        RELIGHT_SIMD_REDUCE
        for (int64_t i = 0; i < ych; ++i) acc += dyc[i];
        dbias[oc] += acc;
      }
  }

  if (stride == 1 && int64_t(hy) * wy <= 64) {
    // Tiny-spatial path: everything contracts along the contiguous
    // (ci * k * k) axis of the pixel-major column matrix.
    const int K = ci * k * k;
    const int pixels = hy * wy;
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      auto& xpad = scratch<T>(0);
      pad_rows(x + int64_t(n) * ci * xch, ci, hx, wx, pad, xpad);
      auto& col = scratch<T>(1);
      im2col_pixel_major(xpad.data(), ci, hx, wx, pad, k, hy, wy, col);
      if (dw) {
        for (int oc = 0; oc < co; ++oc) {
          const T* dyc = dyn + int64_t(oc) * ych;
          T* dwrow = dw + size_t(oc) * K;  // (co, ci, k, k) is row-major in K
          for (int p = 0; p < pixels; ++p) axpy(dwrow, col.data() + size_t(p) * K, dyc[p], K);
        }
      }
      if (dx) {
        auto& dxcol = scratch<T>(2);
        dxcol.assign(size_t(pixels) * K, T(0));
        for (int oc = 0; oc < co; ++oc) {
          const T* dyc = dyn + int64_t(oc) * ych;
          const T* wrow = w + size_t(oc) * K;
          for (int p = 0; p < pixels; ++p) axpy(dxcol.data() + size_t(p) * K, wrow, dyc[p], K);
        }
        // col2im accumulate
        T* dxn = dx + int64_t(n) * ci * xch;
        for (int oy = 0; oy < hy; ++oy)
          for (int ox = 0; ox < wy; ++ox) {
            const T* src = dxcol.data() + (size_t(oy) * wy + ox) * K;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= hx) continue;
                const T* seg = src + (ic * k + ky) * k;
                T* dxrow = dxn + (size_t(ic) * hx + iy) * wx;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox + kx - pad;
                  if (ix >= 0 && ix < wx) dxrow[ix] += seg[kx];
                }
              }
          }
      }
    }
    return;
  }

  if (stride == 1) {
    // dX: stride-1 conv of dY with the flipped kernel, pad k-1-pad.
    std::vector<T> wflip;
    if (dx) flip_weight(w, co, ci, k, wflip);
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      if (dx) {
        auto& dypad = scratch<T>(0);
        pad_rows(dyn, co, hy, wy, k - 1 - pad, dypad);
        conv_s1_rows(dypad.data(), co, hy, wy, k - 1 - pad, wflip.data(), (const T*)nullptr,
                     ci, k, dx + int64_t(n) * ci * xch, hx, wx, true);
      }
      if (dw) {
        auto& xpad = scratch<T>(1);
        pad_rows(x + int64_t(n) * ci * xch, ci, hx, wx, pad, xpad);
        const int xstride = wx + 2 * pad;
        std::vector<T>& accv = scratch<T>(2);
        accv.resize(k);
        T* acc = accv.data();
        for (int ic = 0; ic < ci; ++ic) {
          const T* xchan = xpad.data() + size_t(ic) * hx * xstride;
          for (int oc = 0; oc < co; ++oc) {
            const T* dyc = dyn + int64_t(oc) * ych;
            T* dwc = dw + (int64_t(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ++ky) {
              const int shift = ky - pad;
              const int oy_lo = shift < 0 ? -shift : 0;
              const int oy_hi = hy < hx - shift ? hy : hx - shift;
              // correlation form: dy acts as the kernel, k-wide accumulator
              // row stays hot, four dy taps share each accumulator pass
              std::memcpy(acc, dwc + ky * k, sizeof(T) * k);
              for (int oy = oy_lo; oy < oy_hi; ++oy) {
                const T* dyrow = dyc + int64_t(oy) * wy;
                const T* xrow = xchan + size_t(oy + shift) * xstride;
                int i = 0;
                for (; i + 4 <= wy; i += 4) {
                  const T d0 = dyrow[i], d1 = dyrow[i + 1], d2 = dyrow[i + 2],
                          d3 = dyrow[i + 3];
                  const T* s = xrow + i;
                  for (int kx = 0; kx < k; ++kx)
                    acc[kx] += d0 * s[kx] + d1 * s[kx + 1] + d2 * s[kx + 2] + d3 * s[kx + 3];
                }
                for (; i < wy; ++i) {
                  const T d = dyrow[i];
                  const T* s = xrow + i;
                  for (int kx = 0; kx < k; ++kx) acc[kx] += d * s[kx];
                }
              }
              std::memcpy(dwc + ky * k, acc, sizeof(T) * k);
            }
          }
        }
      }
    }
    return;
  }

  if (stride >= 2 && int64_t(hy) * wy <= 256) {
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      if (dw)
        small_strided_dw(dyn, co, hy, wy, x + int64_t(n) * ci * xch, ci, hx, wx, k, stride,
                         pad, dw);
      if (dx)
        small_strided_out_fine(dyn, co, hy, wy, w, ci, k, stride, pad,
                               dx + int64_t(n) * ci * xch, hx, wx);
    }
    return;
  }

  if (stride == 2) {
    const int halfw = phase_halfw(wx, pad);
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      if (dw) {
        auto& phases = scratch<T>(0);
        build_phases(x + int64_t(n) * ci * xch, ci, hx, wx, pad, halfw, phases);
        dw_s2(dyn, co, hy, wy, phases.data(), ci, hx, halfw, pad, k, dw);
      }
      if (dx)
        scatter_s2(dyn, co, hy, wy, w, ci, k, pad, dx + int64_t(n) * ci * xch, hx, wx, halfw);
    }
    return;
  }

  // generic strided backward
  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x + int64_t(n) * ci * xch;
    const T* dyn = dy + int64_t(n) * co * ych;
    T* dxn = dx ? dx + int64_t(n) * ci * xch : nullptr;
    for (int oc = 0; oc < co; ++oc) {
      const T* dyc = dyn + int64_t(oc) * ych;
      for (int ic = 0; ic < ci; ++ic) {
        const T* xc = xn + int64_t(ic) * xch;
        T* dxc = dxn ? dxn + int64_t(ic) * xch : nullptr;
        const T* wc = w + (int64_t(oc) * ci + ic) * k * k;
        T* dwc = dw ? dw + (int64_t(oc) * ci + ic) * k * k : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          int oy_lo, oy_hi;
          stride_range(ky - pad, stride, hx, hy, oy_lo, oy_hi);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * stride + ky - pad;
            const T* dyrow = dyc + int64_t(oy) * wy;
            const T* xrow = xc + int64_t(iy) * wx;
            T* dxrow = dxc ? dxc + int64_t(iy) * wx : nullptr;
            for (int kx = 0; kx < k; ++kx) {
              int ox_lo, ox_hi;
              stride_range(kx - pad, stride, wx, wy, ox_lo, ox_hi);
              const int off = kx - pad;
              if (dxrow) {
                const T wv = wc[ky * k + kx];
                for (int ox = ox_lo; ox < ox_hi; ++ox)
                  dxrow[int64_t(ox) * stride + off] += wv * dyrow[ox];
              }
              if (dwc) {
                T acc = 0;
                for (int ox = ox_lo; ox < ox_hi; ++ox)
                  acc += dyrow[ox] * xrow[int64_t(ox) * stride + off];
                dwc[ky * k + kx] += acc;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void deconv2d_forward(const T* x, Shape xs, const T* w, const T* bias, int co, int k,
                      int stride, int pad, T* y, Shape ys) {
  const int ci = xs.c, hx = xs.h, wx = xs.w, hy = ys.h, wy = ys.w;
  const int64_t xch = int64_t(hx) * wx, ych = int64_t(hy) * wy;

  if (stride == k && pad == 0) {
    // Non-overlapping tiles: every input pixel owns a k x k output block.
    for (int n = 0; n < xs.n; ++n) {
      const T* xn = x + int64_t(n) * ci * xch;
      T* yn = y + int64_t(n) * co * ych;
      for (int oc = 0; oc < co; ++oc) {
        T* yc = yn + int64_t(oc) * ych;
        const T b = bias ? bias[oc] : T(0);
        for (int64_t i = 0; i < ych; ++i) yc[i] = b;
        for (int ic = 0; ic < ci; ++ic) {
          const T* xc = xn + int64_t(ic) * xch;
          const T* wc = w + (int64_t(ic) * co + oc) * k * k;
          for (int iy = 0; iy < hx; ++iy)
            for (int ix = 0; ix < wx; ++ix) {
              const T xv = xc[int64_t(iy) * wx + ix];
              for (int ky = 0; ky < k; ++ky) {
                T* yrow = yc + int64_t(iy * k + ky) * wy + int64_t(ix) * k;
                const T* wrow = wc + ky * k;
                for (int kx = 0; kx < k; ++kx) yrow[kx] += wrow[kx] * xv;
              }
            }
        }
      }
    }
    return;
  }

  if (stride >= 2 && int64_t(hx) * wx <= 256) {
    for (int n = 0; n < xs.n; ++n) {
      T* yn = y + int64_t(n) * co * ych;
      for (int oc = 0; oc < co; ++oc) {
        const T b = bias ? bias[oc] : T(0);
        T* yc = yn + int64_t(oc) * ych;
        for (int64_t i = 0; i < ych; ++i) yc[i] = b;
      }
      small_strided_out_fine(x + int64_t(n) * ci * xch, ci, hx, wx, w, co, k, stride, pad, yn,
                             hy, wy);
    }
    return;
  }

  if (stride == 2) {
    const int halfw = phase_halfw(wy, pad);
    for (int n = 0; n < xs.n; ++n) {
      T* yn = y + int64_t(n) * co * ych;
      for (int oc = 0; oc < co; ++oc) {
        const T b = bias ? bias[oc] : T(0);
        T* yc = yn + int64_t(oc) * ych;
        for (int64_t i = 0; i < ych; ++i) yc[i] = b;
      }
      scatter_s2(x + int64_t(n) * ci * xch, ci, hx, wx, w, co, k, pad, yn, hy, wy, halfw);
    }
    return;
  }

  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x + int64_t(n) * ci * xch;
    T* yn = y + int64_t(n) * co * ych;
    for (int oc = 0; oc < co; ++oc) {
      T* yc = yn + int64_t(oc) * ych;
      const T b = bias ? bias[oc] : T(0);
      for (int64_t i = 0; i < ych; ++i) yc[i] = b;
      for (int ic = 0; ic < ci; ++ic) {
        const T* xc = xn + int64_t(ic) * xch;
        const T* wc = w + (int64_t(ic) * co + oc) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int iy_lo, iy_hi;
          stride_range(ky - pad, stride, hy, hx, iy_lo, iy_hi);
          for (int iy = iy_lo; iy < iy_hi; ++iy) {
            const T* xrow = xc + int64_t(iy) * wx;
            T* yrow = yc + int64_t(iy * stride + ky - pad) * wy;
            for (int kx = 0; kx < k; ++kx) {
              const T wv = wc[ky * k + kx];
              int ix_lo, ix_hi;
              stride_range(kx - pad, stride, wy, wx, ix_lo, ix_hi);
              const int off = kx - pad;
              if (stride == 1) {
                T* d = yrow + off;
                for (int ix = ix_lo; ix < ix_hi; ++ix) d[ix] += wv * xrow[ix];
              } else {
                for (int ix = ix_lo; ix < ix_hi; ++ix)
                  yrow[int64_t(ix) * stride + off] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void deconv2d_backward(const T* x, Shape xs, const T* w, int co, int k, int stride, int pad,
                       const T* dy, Shape ys, T* dx, T* dw, T* dbias) {
  const int ci = xs.c, hx = xs.h, wx = xs.w, hy = ys.h, wy = ys.w;
  const int64_t xch = int64_t(hx) * wx, ych = int64_t(hy) * wy;
  if (dbias) {
    for (int n = 0; n < ys.n; ++n)
      for (int oc = 0; oc < co; ++oc) {
        const T* dyc = dy + (int64_t(n) * co + oc) * ych;
        T acc = 0;
        RELIGHT_SIMD_REDUCE
        for (int64_t i = 0; i < ych; ++i) acc += dyc[i];
        dbias[oc] += acc;
      }
  }

  if (stride == k && pad == 0) {
    // Tile layout: contiguous k-wide reads per input pixel.
    for (int n = 0; n < xs.n; ++n) {
      const T* xn = x + int64_t(n) * ci * xch;
      const T* dyn = dy + int64_t(n) * co * ych;
      T* dxn = dx ? dx + int64_t(n) * ci * xch : nullptr;
      for (int ic = 0; ic < ci; ++ic) {
        const T* xc = xn + int64_t(ic) * xch;
        T* dxc = dxn ? dxn + int64_t(ic) * xch : nullptr;
        for (int oc = 0; oc < co; ++oc) {
          const T* dyc = dyn + int64_t(oc) * ych;
          const T* wc = w + (int64_t(ic) * co + oc) * k * k;
          T* dwc = dw ? dw + (int64_t(ic) * co + oc) * k * k : nullptr;
          for (int iy = 0; iy < hx; ++iy)
            for (int ix = 0; ix < wx; ++ix) {
              const T xv = xc[int64_t(iy) * wx + ix];
              T grad = 0;
              for (int ky = 0; ky < k; ++ky) {
                const T* dyrow = dyc + int64_t(iy * k + ky) * wy + int64_t(ix) * k;
                const T* wrow = wc + ky * k;
                T* dwrow = dwc ? dwc + ky * k : nullptr;
                if (dxc) {
                  T acc = 0;
                  RELIGHT_SIMD_REDUCE
                  for (int kx = 0; kx < k; ++kx) acc += wrow[kx] * dyrow[kx];
                  grad += acc;
                }
                if (dwrow)
                  for (int kx = 0; kx < k; ++kx) dwrow[kx] += xv * dyrow[kx];
              }
              if (dxc) dxc[int64_t(iy) * wx + ix] += grad;
            }
        }
      }
    }
    return;
  }

  if (stride >= 2 && int64_t(hx) * wx <= 256) {
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      if (dx)
        small_strided_out_coarse(dyn, co, hy, wy, w, (const T*)nullptr, ci, k, stride, pad,
                                 dx + int64_t(n) * ci * xch, hx, wx, true);
      if (dw)
        small_strided_dw(x + int64_t(n) * ci * xch, ci, hx, wx, dyn, co, hy, wy, k, stride,
                         pad, dw);
    }
    return;
  }

  if (stride == 2) {
    const int halfw = phase_halfw(wy, pad);
    for (int n = 0; n < xs.n; ++n) {
      const T* dyn = dy + int64_t(n) * co * ych;
      auto& phases = scratch<T>(0);
      build_phases(dyn, co, hy, wy, pad, halfw, phases);
      if (dx)
        gather_s2(phases.data(), co, hy, halfw, pad, w, (const T*)nullptr, ci, k,
                  dx + int64_t(n) * ci * xch, hx, wx, true);
      if (dw)
        dw_s2(x + int64_t(n) * ci * xch, ci, hx, wx, phases.data(), co, hy, halfw, pad, k, dw);
    }
    return;
  }

  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x + int64_t(n) * ci * xch;
    const T* dyn = dy + int64_t(n) * co * ych;
    T* dxn = dx ? dx + int64_t(n) * ci * xch : nullptr;
    for (int ic = 0; ic < ci; ++ic) {
      const T* xc = xn + int64_t(ic) * xch;
      T* dxc = dxn ? dxn + int64_t(ic) * xch : nullptr;
      for (int oc = 0; oc < co; ++oc) {
        const T* dyc = dyn + int64_t(oc) * ych;
        const T* wc = w + (int64_t(ic) * co + oc) * k * k;
        T* dwc = dw ? dw + (int64_t(ic) * co + oc) * k * k : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          int iy_lo, iy_hi;
          stride_range(ky - pad, stride, hy, hx, iy_lo, iy_hi);
          for (int iy = iy_lo; iy < iy_hi; ++iy) {
            const T* dyrow = dyc + int64_t(iy * stride + ky - pad) * wy;
            const T* xrow = xc + int64_t(iy) * wx;
            T* dxrow = dxc ? dxc + int64_t(iy) * wx : nullptr;
            for (int kx = 0; kx < k; ++kx) {
              int ix_lo, ix_hi;
              stride_range(kx - pad, stride, wy, wx, ix_lo, ix_hi);
              const int off = kx - pad;
              if (dxrow) {
                const T wv = wc[ky * k + kx];
                if (stride == 1) {
                  const T* s = dyrow + off;
                  for (int ix = ix_lo; ix < ix_hi; ++ix) dxrow[ix] += wv * s[ix];
                } else {
                  for (int ix = ix_lo; ix < ix_hi; ++ix)
                    dxrow[ix] += wv * dyrow[int64_t(ix) * stride + off];
                }
              }
              if (dwc) {
                T acc = 0;
                if (stride == 1) {
                  const T* s = dyrow + off;
                  RELIGHT_SIMD_REDUCE
                  for (int ix = ix_lo; ix < ix_hi; ++ix) acc += xrow[ix] * s[ix];
                } else {
                  for (int ix = ix_lo; ix < ix_hi; ++ix)
                    acc += xrow[ix] * dyrow[int64_t(ix) * stride + off];
                }
                dwc[ky * k + kx] += acc;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void instance_norm_forward(const T* x, Shape xs, T eps, T* y, T* inv_std) {
  const int64_t hw = int64_t(xs.h) * xs.w;
  const int64_t planes = int64_t(xs.n) * xs.c;
  if (hw == 1) {
    for (int64_t p = 0; p < planes; ++p) {
      y[p] = x[p];
      inv_std[p] = T(1);
    }
    return;
  }
  for (int64_t p = 0; p < planes; ++p) {
    const T* xc = x + p * hw;
    T* yc = y + p * hw;
    T acc = 0;
    RELIGHT_SIMD_REDUCE
    for (int64_t i = 0; i < hw; ++i) acc += xc[i];
    const T mean = acc / T(hw);
    acc = 0;
    RELIGHT_SIMD_REDUCE
    for (int64_t i = 0; i < hw; ++i) acc += (xc[i] - mean) * (xc[i] - mean);
    const T var = acc / T(hw);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[p] = is;
    for (int64_t i = 0; i < hw; ++i) yc[i] = (xc[i] - mean) * is;
  }
}

template <typename T>
void instance_norm_backward(const T* y, Shape xs, const T* inv_std, const T* dy, T* dx) {
  const int64_t hw = int64_t(xs.h) * xs.w;
  const int64_t planes = int64_t(xs.n) * xs.c;
  if (hw == 1) {
    for (int64_t p = 0; p < planes; ++p) dx[p] += dy[p];
    return;
  }
  for (int64_t p = 0; p < planes; ++p) {
    const T* yc = y + p * hw;
    const T* dyc = dy + p * hw;
    T* dxc = dx + p * hw;
    T acc = 0;
    RELIGHT_SIMD_REDUCE
    for (int64_t i = 0; i < hw; ++i) acc += dyc[i];
    const T m_dy = acc / T(hw);
    acc = 0;
    RELIGHT_SIMD_REDUCE
    for (int64_t i = 0; i < hw; ++i) acc += dyc[i] * yc[i];
    const T m_dyy = acc / T(hw);
    const T is = inv_std[p];
    for (int64_t i = 0; i < hw; ++i) dxc[i] += is * (dyc[i] - m_dy - yc[i] * m_dyy);
  }
}

#define RELIGHT_INSTANTIATE(T)                                                                  \
  template void conv2d_forward<T>(const T*, Shape, const T*, const T*, int, int, int, int, T*, \
                                  Shape);                                                       \
  template void conv2d_backward<T>(const T*, Shape, const T*, int, int, int, int, const T*,    \
                                   Shape, T*, T*, T*);                                         \
  template void deconv2d_forward<T>(const T*, Shape, const T*, const T*, int, int, int, int,   \
                                    T*, Shape);                                                \
  template void deconv2d_backward<T>(const T*, Shape, const T*, int, int, int, int, const T*,  \
                                     Shape, T*, T*, T*);                                       \
  template void instance_norm_forward<T>(const T*, Shape, T, T*, T*);                          \
  template void instance_norm_backward<T>(const T*, Shape, const T*, const T*, T*);

RELIGHT_INSTANTIATE(float)
RELIGHT_INSTANTIATE(double)

}  // namespace relight::kernels
