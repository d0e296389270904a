#pragma once

#include <cstddef>

// Data-parallel inner loops used by the tensor engine. Every kernel exists
// as a scalar reference implementation and (when the binary was built with
// AVX2 support) an AVX2/FMA variant. The active backend is picked once at
// startup from cpuid and can be forced with the BLN_KERNELS environment
// variable ("scalar" or "avx2") or set_backend().
//
// Reductions (dot, gemm_nt) accumulate in a different order in the AVX2
// variant, so the two backends agree only up to rounding; elementwise
// kernels are bit-identical. Within one backend all kernels are
// deterministic.

namespace bln::kernels {

enum class Backend { scalar, avx2 };

Backend backend();
void set_backend(Backend b);   // throws if avx2 requested but unsupported
bool avx2_supported();
const char* backend_name();

double dot(const double* a, const double* b, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);  // y += a*x

void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void div(double* out, const double* a, const double* b, std::size_t n);

void add_scalar(double* out, const double* a, double s, std::size_t n);
void sub_scalar(double* out, const double* a, double s, std::size_t n);       // a - s
void rsub_scalar(double* out, const double* a, double s, std::size_t n);      // s - a
void mul_scalar(double* out, const double* a, double s, std::size_t n);
void div_scalar(double* out, const double* a, double s, std::size_t n);       // a / s
void rdiv_scalar(double* out, const double* a, double s, std::size_t n);      // s / a

// Row-major matrix products, all accumulating into C.
// gemm_nn: C[m x n] += A[m x k] * B[k x n]         (i,k,j axpy form)
// gemm_nt: C[m x n] += A[m x k] * B[n x k]^T       (dot form)
// gemm_tn: C[k x n] += A[m x k]^T * B[m x n]       (instance-major accumulation)
void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void div(double* out, const double* a, const double* b, std::size_t n);
void add_scalar(double* out, const double* a, double s, std::size_t n);
void sub_scalar(double* out, const double* a, double s, std::size_t n);
void rsub_scalar(double* out, const double* a, double s, std::size_t n);
void mul_scalar(double* out, const double* a, double s, std::size_t n);
void div_scalar(double* out, const double* a, double s, std::size_t n);
void rdiv_scalar(double* out, const double* a, double s, std::size_t n);
void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
}  // namespace scalar

#if defined(BLN_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void div(double* out, const double* a, const double* b, std::size_t n);
void add_scalar(double* out, const double* a, double s, std::size_t n);
void sub_scalar(double* out, const double* a, double s, std::size_t n);
void rsub_scalar(double* out, const double* a, double s, std::size_t n);
void mul_scalar(double* out, const double* a, double s, std::size_t n);
void div_scalar(double* out, const double* a, double s, std::size_t n);
void rdiv_scalar(double* out, const double* a, double s, std::size_t n);
void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const double* A, const double* B, double* C);
}  // namespace avx2
#endif

}  // namespace bln::kernels
