#pragma once

#include <complex>
#include <vector>

namespace kam::detail {

// In-place unnormalized complex DFTs (FFTW). forward uses e^{-2πi}, backward
// e^{+2πi}. Plan creation is serialized internally.
void fft3d(std::vector<std::complex<double>>& data, int n, bool forward);
void fft2d(std::vector<std::complex<double>>& data, int ny, int nx, bool forward);

// Signed frequency of FFT index i on an n-point axis.
inline int signedFrequency(int i, int n) { return i <= (n - 1) / 2 ? i : i - n; }
inline int wrapIndex(int f, int n) { return ((f % n) + n) % n; }

} // namespace kam::detail
