#pragma once

// LAPACK tridiagonal solver (general, partial pivoting).
extern "C" void dgtsv_(const int* n, const int* nrhs, double* dl, double* d, double* du, double* b, const int* ldb,
                       int* info);
