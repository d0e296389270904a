#include "bln/kernels.hpp"

#include <immintrin.h>

// AVX2/FMA variants. Elementwise kernels are bit-identical to the scalar
// reference (same per-element operation); dot/gemm_nt accumulate in vector
// lanes and therefore agree with the scalar reference only up to rounding.

namespace bln::kernels::avx2 {

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}
}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double* y, double a, const double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] = a * x[i] + y[i];  // fma tail to match vector body
}

#define BLN_EW_BINOP(name, vexpr, sexpr)                                      \
    void name(double* out, const double* a, const double* b, std::size_t n) { \
        std::size_t i = 0;                                                    \
        for (; i + 4 <= n; i += 4) {                                          \
            __m256d va = _mm256_loadu_pd(a + i);                              \
            __m256d vb = _mm256_loadu_pd(b + i);                              \
            _mm256_storeu_pd(out + i, vexpr);                                 \
        }                                                                     \
        for (; i < n; ++i) out[i] = sexpr;                                    \
    }

BLN_EW_BINOP(add, _mm256_add_pd(va, vb), a[i] + b[i])
BLN_EW_BINOP(sub, _mm256_sub_pd(va, vb), a[i] - b[i])
BLN_EW_BINOP(mul, _mm256_mul_pd(va, vb), a[i] * b[i])
BLN_EW_BINOP(div, _mm256_div_pd(va, vb), a[i] / b[i])
#undef BLN_EW_BINOP

#define BLN_EW_SCALOP(name, vexpr, sexpr)                                 \
    void name(double* out, const double* a, double s, std::size_t n) {    \
        const __m256d vs = _mm256_set1_pd(s);                             \
        (void)vs;                                                         \
        std::size_t i = 0;                                                \
        for (; i + 4 <= n; i += 4) {                                      \
            __m256d va = _mm256_loadu_pd(a + i);                          \
            _mm256_storeu_pd(out + i, vexpr);                             \
        }                                                                 \
        for (; i < n; ++i) out[i] = sexpr;                                \
    }

BLN_EW_SCALOP(add_scalar, _mm256_add_pd(va, vs), a[i] + s)
BLN_EW_SCALOP(sub_scalar, _mm256_sub_pd(va, vs), a[i] - s)
BLN_EW_SCALOP(rsub_scalar, _mm256_sub_pd(vs, va), s - a[i])
BLN_EW_SCALOP(mul_scalar, _mm256_mul_pd(va, vs), a[i] * s)
BLN_EW_SCALOP(div_scalar, _mm256_div_pd(va, vs), a[i] / s)
BLN_EW_SCALOP(rdiv_scalar, _mm256_div_pd(vs, va), s / a[i])
#undef BLN_EW_SCALOP

void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            axpy(C + i * n, A[i * k + p], B + p * n, n);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            C[i * n + j] += dot(A + i * k, B + j * k, k);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            axpy(C + p * n, A[i * k + p], B + i * n, n);
}

}  // namespace bln::kernels::avx2
