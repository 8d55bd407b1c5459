#include "kam/cli.hpp"

#include "kam/autocorr.hpp"
#include "kam/error.hpp"
#include "kam/eval.hpp"
#include "kam/io.hpp"
#include "kam/parallel.hpp"
#include "kam/projector.hpp"
#include "kam/retrieval.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace kam::cli {

namespace fs = std::filesystem;
using io::formatDouble;

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw ParameterError(message);
}

double radiusOf(const RunConfig& c, int n) {
    return c.supportRadius > 0.0 ? c.supportRadius : std::floor(n / 2.0);
}

fs::path outputDir(const RunConfig& c) {
    const fs::path dir = c.output.empty() ? fs::path(".") : fs::path(c.output);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    return dir;
}

std::string utcTimestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

io::MrcData toMrc(const VolumeGrid& grid) {
    io::MrcData m;
    m.nx = m.ny = m.nz = grid.size;
    m.voxelSize = grid.voxelSize;
    m.data.assign(grid.data.begin(), grid.data.end());
    return m;
}

void applyThreads(const RunConfig& c) {
    if (c.threads > 0) setThreadCount(c.threads);
}

void addBasisKeys(io::KeyValues& kv, const BasisSpec& b) {
    kv.emplace_back("L", std::to_string(b.maxDegree));
    kv.emplace_back("c", formatDouble(b.bandlimit));
    kv.emplace_back("R", formatDouble(b.supportRadius));
    std::string s;
    for (int l = 0; l <= b.maxDegree; ++l) s += (l ? "," : "") + std::to_string(b.size(l));
    kv.emplace_back("truncation", s);
}

} // namespace

void RunConfig::validate() const {
    require(maxDegree >= 0 && maxDegree <= 40, "--L must be in [0, 40]");
    require(bandlimit > 0.0 && bandlimit <= 0.5, "--c must be in (0, 0.5]");
    require(supportRadius >= 0.0 && std::isfinite(supportRadius), "--R must be non-negative");
    require(size >= 3 && size <= 1024, "--N must be in [3, 1024]");
    require(voxelSize > 0.0 && std::isfinite(voxelSize), "--voxel-size must be positive");
    require(count >= 1, "--n must be at least 1");
    require(snr > 0.0, "--snr must be positive (inf for clean images)");
    require(spectrumNoise >= 0.0 && std::isfinite(spectrumNoise), "--spectrum-noise must be non-negative");
    require(defocus >= 0.0 && std::isfinite(defocus), "--defocus must be non-negative");
    require(voltage > 0.0, "--voltage must be positive");
    require(sphericalAberration >= 0.0, "--cs must be non-negative");
    require(amplitudeContrast >= 0.0 && amplitudeContrast < 1.0, "--amplitude-contrast must be in [0, 1)");
    require(first >= 0 && second >= 0 && first != second, "--first and --second must be distinct image indices");
    require(gridResolution > 0.0 && gridResolution <= 1.0, "--grid-res must be in (0, 1]");
    require(starts >= 1 && starts <= 10000, "--starts must be in [1, 10000]");
    require(candidates >= 1 && candidates <= 1000, "--candidates must be in [1, 1000]");
    require(maxIterations >= 1 && refineIterations >= 1, "iteration limits must be positive");
    require(gradTol >= 0.0 && gradTol < 1.0, "--grad-tol must be in [0, 1)");
    require(fscThreshold > 0.0 && fscThreshold < 1.0, "--fsc-threshold must be in (0, 1)");
    require(maxCondition > 1.0, "--max-condition must exceed 1");
    require(threads >= 0 && threads <= 4096, "--threads must be in [0, 4096]");
}

int cmdSimulate(const RunConfig& c, std::ostream& out) {
    c.validate();
    applyThreads(c);
    const BasisSpec basis = BasisSpec::make(c.bandlimit, radiusOf(c, c.size), c.maxDegree);
    require(c.size >= 2 * basis.supportRadius, "--N must be at least 2R");
    const fs::path dir = outputDir(c);

    const VolumeCoefficients phantom = randomCoefficients(basis, deriveSeed(c.seed, 0));
    const std::vector<Rotation> rotations = sampleUniformRotations(static_cast<std::size_t>(c.count), deriveSeed(c.seed, 1));
    const PolarGridSpec grid = PolarGridSpec::forBasis(basis);
    CtfParams ctf;
    ctf.defocus = c.defocus;
    ctf.voltage = c.voltage;
    ctf.sphericalAberration = c.sphericalAberration;
    ctf.amplitudeContrast = c.amplitudeContrast;
    ctf.voxelSize = c.voxelSize;
    const bool useCtf = c.defocus > 0.0;

    const std::uint64_t noiseSeed = deriveSeed(c.seed, 3);
    std::vector<FourierSliceImage> images(rotations.size());
    parallelFor(images.size(), [&](std::size_t k) {
        FourierSliceImage im = projectClean(phantom, rotations[k], grid);
        if (useCtf) im = applyCtf(im, ctf);
        images[k] = addNoise(im, c.snr, deriveSeed(noiseSeed, k));
    });

    ClSpectrum spectrum = clFromCoefficients(phantom);
    if (c.spectrumNoise > 0.0) spectrum = perturbSpectrum(spectrum, c.spectrumNoise, deriveSeed(c.seed, 2));

    std::vector<double> profile;
    if (c.profileFromImages) {
        profile = radialAverageProfile(images);
    } else {
        VolumeCoefficients iso(basis);
        iso.block(0) = phantom.block(0);
        FourierSliceImage im = projectClean(iso, Rotation::identity(), grid);
        if (useCtf) im = applyCtf(im, ctf);
        for (int r = 0; r < grid.rings(); ++r) profile.push_back(im.values(r, 0).real());
    }

    io::writeCoefficients(dir / "phantom.kamcoef", phantom);
    io::writeSpectrum(dir / "spectrum.kamcl", spectrum);
    io::writePolarImages(dir / "images.kampol", images);
    io::writeProfile(dir / "profile.kamprof", grid.radii, profile, grid.bandlimit);
    io::writeRotations(dir / "rotations.kamrot", rotations);

    std::vector<std::pair<std::string, std::string>> files = {
        {"phantom.kamcoef", "kamcoef v1"},
        {"spectrum.kamcl", "kamcl v1"},
        {"images.kampol", "KAMPOL1"},
        {"profile.kamprof", "kamprof v1"},
        {"rotations.kamrot", "kamrot v1"},
    };
    if (c.writeMrc) {
        const std::uint64_t realSeed = deriveSeed(c.seed, 4);
        std::vector<RealImage> real(rotations.size());
        parallelFor(real.size(), [&](std::size_t k) {
            real[k] = addNoise(renderProjection(phantom, rotations[k], c.size), c.snr, deriveSeed(realSeed, k));
        });
        io::writeImageStack(dir / "images.mrc", real, c.voxelSize);
        files.emplace_back("images.mrc", "MRC2014");
    }

    io::KeyValues manifest = {{"format", "kammanifest v1"}, {"command", "simulate"}};
    addBasisKeys(manifest, basis);
    manifest.emplace_back("N", std::to_string(c.size));
    manifest.emplace_back("voxel_size", formatDouble(c.voxelSize));
    manifest.emplace_back("n", std::to_string(c.count));
    manifest.emplace_back("snr", formatDouble(c.snr));
    manifest.emplace_back("spectrum_noise", formatDouble(c.spectrumNoise));
    manifest.emplace_back("defocus", formatDouble(c.defocus));
    if (useCtf) {
        manifest.emplace_back("voltage", formatDouble(c.voltage));
        manifest.emplace_back("cs", formatDouble(c.sphericalAberration));
        manifest.emplace_back("amplitude_contrast", formatDouble(c.amplitudeContrast));
    }
    manifest.emplace_back("profile", c.profileFromImages ? "image-average" : "exact");
    manifest.emplace_back("polar_rings", std::to_string(grid.rings()));
    manifest.emplace_back("polar_angles", std::to_string(grid.angles()));
    manifest.emplace_back("seed", std::to_string(c.seed));
    manifest.emplace_back("seed_phantom", std::to_string(deriveSeed(c.seed, 0)));
    manifest.emplace_back("seed_rotations", std::to_string(deriveSeed(c.seed, 1)));
    manifest.emplace_back("seed_spectrum", std::to_string(deriveSeed(c.seed, 2)));
    manifest.emplace_back("seed_noise", std::to_string(noiseSeed));
    for (const auto& [name, format] : files) {
        manifest.emplace_back("file." + name + ".format", format);
        manifest.emplace_back("file." + name + ".fnv1a64", io::fileChecksum(dir / name));
    }
    manifest.emplace_back("created", utcTimestamp());
    io::writeKeyValues(dir / "manifest.txt", manifest);

    out << "simulated " << c.count << " images (L=" << basis.maxDegree << ", coefficients="
        << basis.coefficientCount() << ") into " << dir.string() << "\n";
    return Ok;
}

namespace {

bool isMrc(const std::string& path) {
    const auto ext = fs::path(path).extension().string();
    return ext == ".mrc" || ext == ".map" || ext == ".mrcs";
}

// The two selected images as polar slices. Real-space stacks are sampled on
// the default polar grid of the spectrum's basis.
std::pair<FourierSliceImage, FourierSliceImage> loadImagePair(const RunConfig& c, const BasisSpec& basis) {
    if (isMrc(c.imagesPath)) {
        const auto stack = io::readImageStack(c.imagesPath);
        const int n = static_cast<int>(stack.size());
        require(c.first < n && c.second < n, "image index out of range: the stack holds " + std::to_string(n) + " images");
        const auto grid = PolarGridSpec::forBasis(basis);
        return {sliceFromRealImage(stack[static_cast<std::size_t>(c.first)], grid),
                sliceFromRealImage(stack[static_cast<std::size_t>(c.second)], grid)};
    }
    auto images = io::readPolarImages(c.imagesPath);
    const int n = static_cast<int>(images.size());
    require(c.first < n && c.second < n, "image index out of range: the stack holds " + std::to_string(n) + " images");
    return {std::move(images[static_cast<std::size_t>(c.first)]), std::move(images[static_cast<std::size_t>(c.second)])};
}

} // namespace

int cmdReconstruct(const RunConfig& c, std::ostream& out) {
    c.validate();
    applyThreads(c);
    require(!c.spectrumPath.empty() && !c.imagesPath.empty() && !c.profilePath.empty(),
            "reconstruct needs --spectrum, --images and --profile");
    const ClSpectrum spectrum = io::readSpectrum(c.spectrumPath, c.bandlimit, radiusOf(c, c.size));
    const auto [image1, image2] = loadImagePair(c, spectrum.basis);
    const auto profile = io::readProfile(c.profilePath);
    require(c.size >= 2 * spectrum.basis.supportRadius, "--N must be at least 2R for the output volume");
    const fs::path dir = outputDir(c);

    ReconstructOptions options;
    options.gridResolution = c.gridResolution;
    options.starts = c.starts;
    options.candidates = c.candidates;
    options.seed = c.seed;
    options.weighted = !c.unweighted;
    options.matchOptimizer.maxIterations = c.maxIterations;
    options.matchOptimizer.relativeGradTol = c.gradTol;
    options.refineOptimizer.maxIterations = c.refineIterations;
    options.refineOptimizer.relativeGradTol = c.gradTol;
    const RetrievalResult result =
        reconstruct(spectrum, image1, image2, profile, options);

    VolumeGrid volume = synthesizeRealGrid(result.coefficients, c.size);
    volume.voxelSize = c.voxelSize;

    io::writeCoefficients(dir / "recovered.kamcoef", result.coefficients);
    io::writeMrc(dir / "volume.mrc", toMrc(volume));

    io::KeyValues diag = {{"format", "kamdiag v1"}, {"command", "reconstruct"}};
    diag.emplace_back("spectrum", c.spectrumPath);
    diag.emplace_back("images", c.imagesPath);
    diag.emplace_back("profile", c.profilePath);
    diag.emplace_back("first", std::to_string(c.first));
    diag.emplace_back("second", std::to_string(c.second));
    diag.emplace_back("candidates", std::to_string(c.candidates));
    diag.emplace_back("max_iterations", std::to_string(c.maxIterations));
    diag.emplace_back("refine_iterations_limit", std::to_string(c.refineIterations));
    diag.emplace_back("grad_tol", formatDouble(c.gradTol));
    diag.emplace_back("N", std::to_string(c.size));
    diag.emplace_back("voxel_size", formatDouble(c.voxelSize));
    diag.insert(diag.end(), result.diagnostics.begin(), result.diagnostics.end());
    diag.emplace_back("file.recovered.kamcoef.fnv1a64", io::fileChecksum(dir / "recovered.kamcoef"));
    io::writeKeyValues(dir / "diagnostics.txt", diag);

    for (const auto& [k, v] : result.diagnostics)
        if (k == "refine_residual" || k == "match1_residual" || k == "match2_residual" || k == "merge_best_score")
            out << k << "=" << v << "\n";
    out << "wrote " << (dir / "recovered.kamcoef").string() << "\n";
    return Ok;
}

int cmdEvaluate(const RunConfig& c, std::ostream& out) {
    c.validate();
    applyThreads(c);
    require(!c.inputA.empty() && !c.inputB.empty(), "evaluate needs two inputs");
    require(isMrc(c.inputA) == isMrc(c.inputB), "inputs must both be coefficient files or both be volumes");
    const fs::path dir = outputDir(c);

    io::KeyValues report = {{"format", "kamalign v1"}, {"command", "evaluate"}};
    VolumeGrid va, vb;
    double voxel = c.voxelSize;
    if (isMrc(c.inputA)) {
        va = io::readVolume(c.inputA);
        vb = io::readVolume(c.inputB);
        require(va.size == vb.size, "volumes have different sizes");
        voxel = va.voxelSize;
        report.emplace_back("aligned", "false");
    } else {
        const VolumeCoefficients a = io::readCoefficients(c.inputA);
        VolumeCoefficients b = io::readCoefficients(c.inputB);
        require(a.basis() == b.basis(), "coefficient files use different bases");
        require(c.size >= 2 * a.basis().supportRadius, "--N must be at least 2R");
        if (!c.noAlign) {
            AlignOptions ao;
            ao.allowReflection = c.allowReflection;
            const Alignment al = alignGlobally(a, b, ao);
            b = applyAlignment(b, al);
            const auto& q = al.rotation.quaternion();
            report.emplace_back("aligned", "true");
            report.emplace_back("rotation", formatDouble(q(0)) + "," + formatDouble(q(1)) + "," + formatDouble(q(2)) + "," +
                                                formatDouble(q(3)));
            report.emplace_back("hand", std::to_string(al.hand));
        } else {
            report.emplace_back("aligned", "false");
        }
        const double corr = coefficientCorrelation(a, b);
        report.emplace_back("correlation", formatDouble(corr));
        out << "correlation=" << formatDouble(corr) << "\n";
        va = synthesizeRealGrid(a, c.size);
        vb = synthesizeRealGrid(b, c.size);
        va.voxelSize = vb.voxelSize = voxel;
    }

    const FscCurve curve = fsc(va, vb);
    const Resolution res = resolutionAtThreshold(curve, c.fscThreshold, voxel);
    report.emplace_back("fsc_threshold", formatDouble(c.fscThreshold));
    report.emplace_back("resolution_A", formatDouble(res.angstrom));
    report.emplace_back("nyquist_limited", res.nyquistLimited ? "true" : "false");
    io::writeKeyValues(dir / "alignment.txt", report);

    std::ofstream csv(dir / "fsc.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (dir / "fsc.csv").string());
    csv << "# kamfsc v1\nfreq_per_A,fsc,shell_count\n";
    for (std::size_t i = 0; i < curve.values.size(); ++i)
        csv << formatDouble(curve.frequencies[i] / voxel) << "," << formatDouble(curve.values[i]) << ","
            << curve.counts[i] << "\n";
    if (!csv) throw IoError("cannot write " + (dir / "fsc.csv").string());

    out << "resolution_A=" << formatDouble(res.angstrom) << (res.nyquistLimited ? " (nyquist limited)" : "") << "\n";
    return Ok;
}

int cmdExpand(const RunConfig& c, std::ostream& out) {
    c.validate();
    applyThreads(c);
    require(!c.volumePath.empty(), "expand needs a volume");
    const VolumeGrid grid = io::readVolume(c.volumePath);
    const BasisSpec basis = BasisSpec::make(c.bandlimit, radiusOf(c, grid.size), c.maxDegree);
    const fs::path dir = outputDir(c);

    ExpansionReport rep;
    try {
        rep = expandFromGrid(grid, basis, c.maxCondition);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + "; try a smaller --L or --c, or raise --max-condition");
    }
    io::writeCoefficients(dir / "expanded.kamcoef", rep.coefficients);

    io::KeyValues diag = {{"format", "kamdiag v1"}, {"command", "expand"}, {"volume", c.volumePath}};
    addBasisKeys(diag, basis);
    diag.emplace_back("N", std::to_string(grid.size));
    diag.emplace_back("voxel_size", formatDouble(grid.voxelSize));
    diag.emplace_back("condition_estimate", formatDouble(rep.conditionEstimate));
    diag.emplace_back("max_condition", formatDouble(c.maxCondition));
    diag.emplace_back("iterations", std::to_string(rep.iterations));
    diag.emplace_back("relative_residual", formatDouble(rep.relativeResidual));
    io::writeKeyValues(dir / "expand.txt", diag);

    out << "condition_estimate=" << formatDouble(rep.conditionEstimate) << "\n"
        << "relative_residual=" << formatDouble(rep.relativeResidual) << "\n"
        << "wrote " << (dir / "expanded.kamcoef").string() << "\n";
    return Ok;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig c;
    CLI::App app{"Ab initio reconstruction from autocorrelation spectra and two projections", "kam"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "kam 1.0.0");

    const auto common = [&](CLI::App* s) {
        s->add_option("--seed", c.seed, "Random seed");
        s->add_option("--threads", c.threads, "Worker threads (0: KAM_THREADS or all cores)");
        s->add_option("-o,--output", c.output, "Output directory");
        s->add_option("--voxel-size", c.voxelSize, "Voxel size in angstrom");
        s->add_option("--N", c.size, "Grid size in voxels");
    };
    const auto basisFlags = [&](CLI::App* s) {
        s->add_option("--L", c.maxDegree, "Maximum spherical harmonic degree");
        s->add_option("--c", c.bandlimit, "Bandlimit in cycles per voxel");
        s->add_option("--R", c.supportRadius, "Support radius in voxels (0: N/2)");
    };

    auto* sim = app.add_subcommand("simulate", "Random phantom, projections and oracle spectrum");
    common(sim);
    basisFlags(sim);
    sim->add_option("--n", c.count, "Number of projections");
    sim->add_option("--snr", c.snr, "Image signal-to-noise ratio (inf: clean)");
    sim->add_option("--spectrum-noise", c.spectrumNoise, "Relative perturbation of the written spectrum");
    sim->add_flag("--mrc", c.writeMrc, "Also write real-space projections as an MRC stack");
    sim->add_flag("--profile-from-images", c.profileFromImages, "Estimate the radial profile by averaging the images");
    sim->add_option("--defocus", c.defocus, "CTF defocus in angstrom (0: no CTF)");
    sim->add_option("--voltage", c.voltage, "Voltage in kV");
    sim->add_option("--cs", c.sphericalAberration, "Spherical aberration in mm");
    sim->add_option("--amplitude-contrast", c.amplitudeContrast, "Amplitude contrast");

    auto* rec = app.add_subcommand("reconstruct", "Recover a structure from a spectrum and two images");
    common(rec);
    rec->add_option("--c", c.bandlimit, "Bandlimit used when the spectrum header omits it");
    rec->add_option("--R", c.supportRadius, "Support radius used when the spectrum header omits it");
    rec->add_option("--spectrum", c.spectrumPath, "Spectrum file")->required();
    rec->add_option("--images", c.imagesPath, "Image stack (KAMPOL1, or MRC real-space images)")->required();
    rec->add_option("--profile", c.profilePath, "Radial profile file")->required();
    rec->add_option("--first", c.first, "Index of the first image");
    rec->add_option("--second", c.second, "Index of the second image");
    rec->add_option("--grid-res", c.gridResolution, "Rotation grid resolution in radians");
    rec->add_option("--starts", c.starts, "Random starts per image");
    rec->add_option("--candidates", c.candidates, "Grid candidates refined jointly");
    rec->add_option("--max-iter", c.maxIterations, "Iteration limit for single-image matching");
    rec->add_option("--refine-iter", c.refineIterations, "Iteration limit for joint refinement");
    rec->add_option("--grad-tol", c.gradTol, "Relative gradient tolerance");
    rec->add_flag("--unweighted", c.unweighted, "Use unit ring weights in the matching costs");

    auto* ev = app.add_subcommand("evaluate", "Align two structures and compute their FSC");
    common(ev);
    ev->add_option("a", c.inputA, "Reference (coefficients or MRC volume)")->required();
    ev->add_option("b", c.inputB, "Structure to compare")->required();
    ev->add_option("--fsc-threshold", c.fscThreshold, "FSC threshold for the resolution estimate");
    ev->add_flag("--no-align", c.noAlign, "Compare without alignment");
    bool noReflection = false;
    ev->add_flag("--no-reflection", noReflection, "Do not consider the mirror image during alignment");

    auto* ex = app.add_subcommand("expand", "Expand an MRC volume in the basis");
    common(ex);
    basisFlags(ex);
    ex->add_option("volume", c.volumePath, "Input MRC volume")->required();
    ex->add_option("--max-condition", c.maxCondition, "Largest accepted condition estimate");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? Ok : Usage;
    }
    c.allowReflection = !noReflection;

    try {
        if (sim->parsed()) {
            c.subcommand = "simulate";
            return cmdSimulate(c, out);
        }
        if (rec->parsed()) {
            c.subcommand = "reconstruct";
            return cmdReconstruct(c, out);
        }
        if (ev->parsed()) {
            c.subcommand = "evaluate";
            return cmdEvaluate(c, out);
        }
        c.subcommand = "expand";
        return cmdExpand(c, out);
    } catch (const ParameterError& e) {
        err << "kam " << c.subcommand << ": invalid parameters: " << e.what() << "\n";
        return Usage;
    } catch (const DomainError& e) {
        err << "kam " << c.subcommand << ": invalid parameters: " << e.what() << "\n";
        return Usage;
    } catch (const IoError& e) {
        err << "kam " << c.subcommand << ": i/o error: " << e.what() << "\n";
        return Io;
    } catch (const FormatError& e) {
        err << "kam " << c.subcommand << ": i/o error: " << e.what() << "\n";
        return Io;
    } catch (const NumericalError& e) {
        err << "kam " << c.subcommand << ": numerical failure: " << e.what() << "\n";
        return Numerical;
    } catch (const std::bad_alloc&) {
        err << "kam " << c.subcommand << ": out of memory\n";
        return Numerical;
    } catch (const std::exception& e) {
        err << "kam " << c.subcommand << ": " << e.what() << "\n";
        return Numerical;
    }
}

} // namespace kam::cli
