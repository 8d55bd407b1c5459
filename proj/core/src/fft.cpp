#include "fft.hpp"

#include <fftw3.h>

#include <mutex>

namespace kam::detail {
namespace {

std::mutex& plannerMutex() {
    static std::mutex m;
    return m;
}

void execute(std::vector<std::complex<double>>& data, int rank, const int* dims, bool forward) {
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard lock(plannerMutex());
        plan = fftw_plan_dft(rank, dims, ptr, ptr, forward ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard lock(plannerMutex());
    fftw_destroy_plan(plan);
}

} // namespace

void fft3d(std::vector<std::complex<double>>& data, int n, bool forward) {
    const int dims[3] = {n, n, n};
    execute(data, 3, dims, forward);
}

void fft2d(std::vector<std::complex<double>>& data, int ny, int nx, bool forward) {
    const int dims[2] = {ny, nx};
    execute(data, 2, dims, forward);
}

} // namespace kam::detail
