#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>
#include <vector>

#include "wah/kernels.hpp"
#include "wah/rng.hpp"

using namespace wah;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.next_normal();
    return v;
}

// textbook triple loop, no blocking, no vectorization hints
std::vector<double> naive_nn(const std::vector<double>& a, const std::vector<double>& b, int m,
                             int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = s;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul variants agree with the naive oracle") {
    const int m = 17, k = 23, n = 13;
    auto a = random_vec(static_cast<size_t>(m) * k, 1);
    auto b = random_vec(static_cast<size_t>(k) * n, 2);
    auto expected = naive_nn(a, b, m, k, n);

    std::vector<double> c(static_cast<size_t>(m) * n);
    kernels::matmul_nn(a.data(), k, b.data(), n, c.data(), n, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    // nt: feed b transposed
    std::vector<double> bt(static_cast<size_t>(n) * k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
    kernels::matmul_nt(a.data(), k, bt.data(), k, c.data(), n, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    // tn: feed a transposed
    std::vector<double> at(static_cast<size_t>(k) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
    kernels::matmul_tn(at.data(), m, b.data(), n, c.data(), n, m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("openmp kernels are bit-identical to the serial references") {
    const int m = 301, k = 77, n = 129;
    auto a = random_vec(static_cast<size_t>(m) * k, 3);
    auto b = random_vec(static_cast<size_t>(n) * k, 4);

    std::vector<double> c1(static_cast<size_t>(m) * n), c2 = c1;
    kernels::matmul_nt_serial(a.data(), k, b.data(), k, c1.data(), n, m, k, n);
    kernels::matmul_nt(a.data(), k, b.data(), k, c2.data(), n, m, k, n);
    CHECK(c1 == c2);

    auto b2 = random_vec(static_cast<size_t>(k) * n, 5);
    kernels::matmul_nn_serial(a.data(), k, b2.data(), n, c1.data(), n, m, k, n);
    kernels::matmul_nn(a.data(), k, b2.data(), n, c2.data(), n, m, k, n);
    CHECK(c1 == c2);

    auto at = random_vec(static_cast<size_t>(k) * m, 6);
    kernels::matmul_tn_serial(at.data(), m, b2.data(), n, c1.data(), n, m, k, n);
    kernels::matmul_tn(at.data(), m, b2.data(), n, c2.data(), n, m, k, n);
    CHECK(c1 == c2);

    auto x = random_vec(static_cast<size_t>(m) * n, 7);
    auto y = x;
    kernels::softmax_rows_serial(x.data(), n, m, n);
    kernels::softmax_rows(y.data(), n, m, n);
    CHECK(x == y);
}

TEST_CASE("results do not depend on the thread count") {
    const int m = 97, k = 64, n = 64;
    auto a = random_vec(static_cast<size_t>(m) * k, 8);
    auto b = random_vec(static_cast<size_t>(n) * k, 9);
    std::vector<double> c1(static_cast<size_t>(m) * n), c2 = c1;

    int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::matmul_nt(a.data(), k, b.data(), k, c1.data(), n, m, k, n);
    omp_set_num_threads(saved);
    kernels::matmul_nt(a.data(), k, b.data(), k, c2.data(), n, m, k, n);
    CHECK(c1 == c2);
}

TEST_CASE("softmax rows are normalized") {
    const int m = 8, n = 200;
    auto x = random_vec(static_cast<size_t>(m) * n, 10);
    kernels::softmax_rows(x.data(), n, m, n);
    for (int i = 0; i < m; ++i) {
        double sum = 0;
        for (int j = 0; j < n; ++j) {
            CHECK(x[i * n + j] >= 0.0);
            sum += x[i * n + j];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}
