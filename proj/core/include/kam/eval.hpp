#pragma once

#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <vector>

namespace kam {

// Best rigid alignment of b onto a, allowing the mirror image: the aligned
// coefficients are rotate(hand == −1 ? invert(b) : b, rotation).
struct Alignment {
    Rotation rotation;
    int hand = 1;
    double correlation = 0.0;
};

struct AlignOptions {
    double gridResolution = 0.15;
    // Local refinements started from the best grid points of each hand.
    int refinements = 3;
    bool allowReflection = true;
};

Alignment alignGlobally(const VolumeCoefficients& a, const VolumeCoefficients& b, const AlignOptions& options = {});

// Applies an alignment to b.
VolumeCoefficients applyAlignment(const VolumeCoefficients& b, const Alignment& alignment);

// Fourier shell correlation on integer shells round(|f|) of the N³ grid.
struct FscCurve {
    std::vector<double> frequencies;   // cycles per voxel, shell / N
    std::vector<double> values;        // NaN where a shell has no power
    std::vector<long long> counts;     // voxels per shell
};

// Shells whose power in either grid is below kEmptyShellPower times that
// grid's largest shell power are reported as NaN. nShells ≤ 0 uses N/2.
inline constexpr double kEmptyShellPower = 1e-20;
FscCurve fsc(const VolumeGrid& a, const VolumeGrid& b, int nShells = 0);

struct Resolution {
    double angstrom = 0.0;
    double frequency = 0.0;   // cycles per voxel
    // The curve never dropped to the threshold; angstrom is 2 · voxelSize.
    bool nyquistLimited = false;
};

// First crossing of the threshold, linearly interpolated between shells.
Resolution resolutionAtThreshold(const FscCurve& curve, double threshold, double voxelSize);

} // namespace kam
