#pragma once

#include "deepfusion/tensor.hpp"

namespace deepfusion::detail {

inline Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

// c[m x n] += a[m x k] * b[k x n], all row-major with explicit leading
// strides; c must be zeroed by the caller. Every c element accumulates in
// ascending k order, so the result is bit-identical to the naive triple
// loop (the build pins -ffp-contract=off to keep that exact).
inline void gemm_accumulate(const double* a, Index lda, const double* b,
                            Index ldb, double* c, Index ldc, Index m, Index k,
                            Index n) {
  for (Index i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (Index p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * ldb;
      for (Index j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// Stage-1 tile accumulation: both partial products (gate and up) for one
// output tile, sharing each x element load. accg/accu are tm x tn scratch,
// zeroed here; the k reduction runs ascending, chunked by tile_k purely as
// loop fission (accumulators persist across chunks).
inline void fused_tile_accumulate(const double* x, Index ldx, const double* wg,
                                  Index ldwg, const double* wu, Index ldwu,
                                  double* accg, double* accu, Index tm,
                                  Index tn, Index k_total, Index tile_k) {
  for (Index i = 0; i < tm * tn; ++i) {
    accg[i] = 0.0;
    accu[i] = 0.0;
  }
  for (Index k0 = 0; k0 < k_total; k0 += tile_k) {
    const Index k1 = std::min(k0 + tile_k, k_total);
    for (Index ti = 0; ti < tm; ++ti) {
      const double* xrow = x + ti * ldx;
      double* grow = accg + ti * tn;
      double* urow = accu + ti * tn;
      for (Index p = k0; p < k1; ++p) {
        const double xv = xrow[p];
        const double* wgrow = wg + p * ldwg;
        const double* wurow = wu + p * ldwu;
        for (Index tj = 0; tj < tn; ++tj) {
          grow[tj] += xv * wgrow[tj];
          urow[tj] += xv * wurow[tj];
        }
      }
    }
  }
}

}  // namespace deepfusion::detail
