#include "gemm.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#ifdef SASNET_USE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace sasnet::blas {

namespace {

std::atomic<bool> g_fast32{false};
std::atomic<int> g_threads{0};
std::once_flag g_init_once;

int default_threads() {
    if (const char* env = std::getenv("SASNET_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

void apply_threads(int n) {
#ifdef SASNET_USE_CBLAS
    openblas_set_num_threads(n);
#else
    (void)n;
#endif
}

void ensure_init() {
    std::call_once(g_init_once, [] {
        int n = default_threads();
        g_threads.store(n);
        apply_threads(n);
    });
}

// Direct GEMM for small problems (and the fallback when no CBLAS is
// available). Blocked over K for locality; summation order along K is fixed.
void gemm_fallback(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                   const double* a, int lda, const double* b, int ldb, double beta,
                   double* c, int ldc) {
    auto at = [&](int i, int p) { return trans_a ? a[(std::size_t)p * lda + i] : a[(std::size_t)i * lda + p]; };
    auto bt = [&](int p, int j) { return trans_b ? b[(std::size_t)j * ldb + p] : b[(std::size_t)p * ldb + j]; };
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            c[(std::size_t)i * ldc + j] *= beta;
    const int kb = 64;
    for (int p0 = 0; p0 < k; p0 += kb) {
        int p1 = p0 + kb < k ? p0 + kb : k;
        for (int i = 0; i < m; ++i) {
            double* crow = c + (std::size_t)i * ldc;
            for (int p = p0; p < p1; ++p) {
                double av = alpha * at(i, p);
                if (av == 0.0) continue;
                if (!trans_b) {
                    const double* brow = b + (std::size_t)p * ldb;
                    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
                } else {
                    for (int j = 0; j < n; ++j) crow[j] += av * bt(p, j);
                }
            }
        }
    }
}

// Below this many multiply-adds the BLAS threading handshake costs more than
// the arithmetic.
constexpr long long kSmallGemmMacs = 1 << 16;

} // namespace

void set_threads(int n) {
    ensure_init();
    if (n < 1) n = 1;
    g_threads.store(n);
    apply_threads(n);
}

int threads() {
    ensure_init();
    return g_threads.load();
}

void set_fast32(bool on) { g_fast32.store(on); }
bool fast32() { return g_fast32.load(); }

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
    ensure_init();
    if (static_cast<long long>(m) * n * k < kSmallGemmMacs) {
        gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
#ifdef SASNET_USE_CBLAS
    if (g_fast32.load()) {
        thread_local std::vector<float> fa, fb, fc;
        std::size_t na = trans_a ? (std::size_t)k * lda : (std::size_t)m * lda;
        std::size_t nb = trans_b ? (std::size_t)n * ldb : (std::size_t)k * ldb;
        std::size_t nc = (std::size_t)m * ldc;
        fa.resize(na);
        fb.resize(nb);
        fc.resize(nc);
        for (std::size_t i = 0; i < na; ++i) fa[i] = static_cast<float>(a[i]);
        for (std::size_t i = 0; i < nb; ++i) fb[i] = static_cast<float>(b[i]);
        if (beta != 0.0)
            for (std::size_t i = 0; i < nc; ++i) fc[i] = static_cast<float>(c[i]);
        cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                    trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                    static_cast<float>(alpha), fa.data(), lda, fb.data(), ldb,
                    static_cast<float>(beta), fc.data(), ldc);
        for (std::size_t i = 0; i < nc; ++i) c[i] = static_cast<double>(fc[i]);
        return;
    }
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
#else
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
}

} // namespace sasnet::blas
