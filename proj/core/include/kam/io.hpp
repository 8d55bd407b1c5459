#pragma once

#include "kam/autocorr.hpp"
#include "kam/projector.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace kam::io {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// MRC2014, mode 2, little-endian. data is x fastest, then y, then z.
struct MrcData {
    int nx = 0, ny = 0, nz = 0;
    double voxelSize = 1.0;
    std::vector<float> data;
};

MrcData readMrc(const std::filesystem::path& path);
// isStack selects space group 0 (image stack) instead of 1 (volume).
void writeMrc(const std::filesystem::path& path, const MrcData& mrc, bool isStack = false);

// Cubic volume; throws ParameterError for non-cubic maps.
VolumeGrid readVolume(const std::filesystem::path& path);
void writeVolume(const std::filesystem::path& path, const VolumeGrid& grid);

std::vector<RealImage> readImageStack(const std::filesystem::path& path, double* voxelSize = nullptr);
void writeImageStack(const std::filesystem::path& path, const std::vector<RealImage>& images, double voxelSize = 1.0);

// Text coefficients: "kamcoef v1 L=<L> c=<c> R=<R>", one line per S(l), then
// the rows of every block.
void writeCoefficients(const std::filesystem::path& path, const VolumeCoefficients& coeffs);
VolumeCoefficients readCoefficients(const std::filesystem::path& path);

// Text spectrum: "kamcl v1 L=<L>" followed by optional c=<c> R=<R>, then per
// degree a line "l S(l)" and the S(l) rows of C_l. c and R fall back to the
// given defaults when absent from the header.
void writeSpectrum(const std::filesystem::path& path, const ClSpectrum& spectrum);
ClSpectrum readSpectrum(const std::filesystem::path& path, double defaultBandlimit = 0.0, double defaultRadius = 0.0);

// Binary polar images: magic "KAMPOL1\0", uint32 nRings, uint32 nPhi,
// float64 c, float64 radii[nRings], then per image nRings × nPhi complex
// values as interleaved float64 pairs, ring-major. The image count follows
// from the file size.
void writePolarImages(const std::filesystem::path& path, const std::vector<FourierSliceImage>& images);
std::vector<FourierSliceImage> readPolarImages(const std::filesystem::path& path);

// Radial profile: "kamprof v1 rings=<n> c=<c>", then "k value" lines.
void writeProfile(const std::filesystem::path& path, const std::vector<double>& radii, const std::vector<double>& values,
                  double bandlimit);
std::vector<double> readProfile(const std::filesystem::path& path, std::vector<double>* radii = nullptr);

// Rotations: "kamrot v1 n=<n>", then "w x y z" lines.
void writeRotations(const std::filesystem::path& path, const std::vector<Rotation>& rotations);
std::vector<Rotation> readRotations(const std::filesystem::path& path);

// Plain key=value lines.
void writeKeyValues(const std::filesystem::path& path, const KeyValues& values);
KeyValues readKeyValues(const std::filesystem::path& path);

// FNV-1a 64-bit hash of a file's bytes, as 16 hex digits.
std::string fileChecksum(const std::filesystem::path& path);

// Shortest decimal form that reads back as the same double.
std::string formatDouble(double v);

} // namespace kam::io
