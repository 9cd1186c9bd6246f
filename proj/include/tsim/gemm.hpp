#pragma once

namespace tsim {

// Dense double GEMM kernels. Each output element is a fixed-order dot
// product, so the parallel variants are bitwise identical to the serial
// references for any thread count; the serial versions are kept for testing
// and for the kernel benchmark.

// C(m,n) = A(m,k) * B(n,k)^T   (+= when accumulate)
void gemm_nt_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate = false);
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate = false);

// C(m,n) = A(m,k) * B(k,n)
void gemm_nn_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate = false);
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate = false);

// C(m,n) = A(k,m)^T * B(k,n)
void gemm_tn_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate = false);
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n,
             bool accumulate = false);

}  // namespace tsim
