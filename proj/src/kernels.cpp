#include "bln/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace bln::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double* y, double a, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void add_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
}
void sub_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - s;
}
void rsub_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = s - a[i];
}
void mul_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void div_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / s;
}
void rdiv_scalar(double* out, const double* a, double s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = s / a[i];
}

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
    // i (instance) outermost: accumulation order matches summing
    // per-instance outer products one instance at a time.
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            axpy(C + p * n, A[i * k + p], B + i * n, n);
}

}  // namespace scalar

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double*, double, const double*, std::size_t);
    void (*add)(double*, const double*, const double*, std::size_t);
    void (*sub)(double*, const double*, const double*, std::size_t);
    void (*mul)(double*, const double*, const double*, std::size_t);
    void (*div)(double*, const double*, const double*, std::size_t);
    void (*add_scalar)(double*, const double*, double, std::size_t);
    void (*sub_scalar)(double*, const double*, double, std::size_t);
    void (*rsub_scalar)(double*, const double*, double, std::size_t);
    void (*mul_scalar)(double*, const double*, double, std::size_t);
    void (*div_scalar)(double*, const double*, double, std::size_t);
    void (*rdiv_scalar)(double*, const double*, double, std::size_t);
    void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
    void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
    void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
};

constexpr Table kScalar = {
    scalar::dot, scalar::axpy,
    scalar::add, scalar::sub, scalar::mul, scalar::div,
    scalar::add_scalar, scalar::sub_scalar, scalar::rsub_scalar,
    scalar::mul_scalar, scalar::div_scalar, scalar::rdiv_scalar,
    scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn,
};

#if defined(BLN_HAVE_AVX2)
constexpr Table kAvx2 = {
    avx2::dot, avx2::axpy,
    avx2::add, avx2::sub, avx2::mul, avx2::div,
    avx2::add_scalar, avx2::sub_scalar, avx2::rsub_scalar,
    avx2::mul_scalar, avx2::div_scalar, avx2::rdiv_scalar,
    avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn,
};
#endif

bool cpu_has_avx2() {
#if defined(BLN_HAVE_AVX2) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_initial() {
    if (const char* env = std::getenv("BLN_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Backend::avx2;
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = pick_initial();

const Table& table() {
#if defined(BLN_HAVE_AVX2)
    return g_backend == Backend::avx2 ? kAvx2 : kScalar;
#else
    return kScalar;
#endif
}

}  // namespace

Backend backend() { return g_backend; }

bool avx2_supported() { return cpu_has_avx2(); }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !cpu_has_avx2())
        throw std::runtime_error("kernels: avx2 backend not supported on this CPU/build");
    g_backend = b;
}

const char* backend_name() { return g_backend == Backend::avx2 ? "avx2" : "scalar"; }

double dot(const double* a, const double* b, std::size_t n) { return table().dot(a, b, n); }
void axpy(double* y, double a, const double* x, std::size_t n) { table().axpy(y, a, x, n); }
void add(double* out, const double* a, const double* b, std::size_t n) { table().add(out, a, b, n); }
void sub(double* out, const double* a, const double* b, std::size_t n) { table().sub(out, a, b, n); }
void mul(double* out, const double* a, const double* b, std::size_t n) { table().mul(out, a, b, n); }
void div(double* out, const double* a, const double* b, std::size_t n) { table().div(out, a, b, n); }
void add_scalar(double* out, const double* a, double s, std::size_t n) { table().add_scalar(out, a, s, n); }
void sub_scalar(double* out, const double* a, double s, std::size_t n) { table().sub_scalar(out, a, s, n); }
void rsub_scalar(double* out, const double* a, double s, std::size_t n) { table().rsub_scalar(out, a, s, n); }
void mul_scalar(double* out, const double* a, double s, std::size_t n) { table().mul_scalar(out, a, s, n); }
void div_scalar(double* out, const double* a, double s, std::size_t n) { table().div_scalar(out, a, s, n); }
void rdiv_scalar(double* out, const double* a, double s, std::size_t n) { table().rdiv_scalar(out, a, s, n); }
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
    table().gemm_nn(m, k, n, A, B, C);
}
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
    table().gemm_nt(m, k, n, A, B, C);
}
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B, double* C) {
    table().gemm_tn(m, k, n, A, B, C);
}

}  // namespace bln::kernels
