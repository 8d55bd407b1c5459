#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace kam::cli {

enum ExitCode : int { Ok = 0, Usage = 2, Io = 3, Numerical = 4 };

struct RunConfig {
    std::string subcommand;

    // basis
    int maxDegree = 6;
    double bandlimit = 0.25;
    double supportRadius = 0.0;   // 0: floor(N/2)
    int size = 65;                // N, voxels per side
    double voxelSize = 1.0;       // Å

    // simulate
    int count = 2;
    double snr = std::numeric_limits<double>::infinity();
    double spectrumNoise = 0.0;   // relative perturbation of the written C_l
    bool writeMrc = false;
    bool profileFromImages = false;
    double defocus = 0.0;         // Å; 0 disables the CTF
    double voltage = 300.0;
    double sphericalAberration = 2.7;
    double amplitudeContrast = 0.07;

    // reconstruct
    std::string spectrumPath;
    std::string imagesPath;
    std::string profilePath;
    int first = 0;
    int second = 1;
    double gridResolution = 0.15;
    int starts = 8;
    int candidates = 5;
    int maxIterations = 200;
    int refineIterations = 300;
    double gradTol = 1e-10;
    bool unweighted = false;

    // evaluate
    std::string inputA;
    std::string inputB;
    double fscThreshold = 0.5;
    bool allowReflection = true;
    bool noAlign = false;

    // expand
    std::string volumePath;
    double maxCondition = 1e8;

    std::uint64_t seed = 1;
    int threads = 0;              // 0: KAM_THREADS or hardware concurrency
    std::string output;

    // Range checks; throws ParameterError.
    void validate() const;
};

int cmdSimulate(const RunConfig& config, std::ostream& out);
int cmdReconstruct(const RunConfig& config, std::ostream& out);
int cmdEvaluate(const RunConfig& config, std::ostream& out);
int cmdExpand(const RunConfig& config, std::ostream& out);

// Parses arguments, dispatches, and maps errors onto exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace kam::cli
