#include "kam/cli.hpp"
#include "kam/eval.hpp"
#include "kam/io.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace kam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome runCli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string readText(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string withoutCreatedLine(const std::string& s) {
    std::istringstream in(s);
    std::string out;
    for (std::string line; std::getline(in, line);)
        if (line.rfind("created=", 0) != 0) out += line + "\n";
    return out;
}

std::string valueOf(const io::KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return v;
    return "<missing>";
}

// Small simulation shared by the tests below: L = 3, N = 33.
fs::path simulated(const std::string& name, const std::string& seed = "5") {
    const auto dir = test::scratchDir(name);
    const auto r = runCli({"simulate", "--L", "3", "--N", "33", "--seed", seed, "-o", dir.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir;
}

Outcome reconstructFrom(const fs::path& sim, const fs::path& out) {
    return runCli({"reconstruct", "--spectrum", (sim / "spectrum.kamcl").string(), "--images", (sim / "images.kampol").string(),
                   "--profile", (sim / "profile.kamprof").string(), "--N", "33", "--seed", "3", "-o", out.string()});
}

} // namespace

TEST(Cli, UsageErrorsMapToExitCodes) {
    EXPECT_EQ(runCli({}).code, cli::Usage);
    EXPECT_EQ(runCli({"frobnicate"}).code, cli::Usage);
    EXPECT_EQ(runCli({"simulate", "--n", "0"}).code, cli::Usage);
    EXPECT_EQ(runCli({"simulate", "--c", "0.7"}).code, cli::Usage);
    EXPECT_EQ(runCli({"simulate", "--L", "-1"}).code, cli::Usage);
    EXPECT_EQ(runCli({"simulate", "--bogus-flag"}).code, cli::Usage);
    EXPECT_EQ(runCli({"--help"}).code, cli::Ok);

    const auto missing = runCli({"reconstruct", "--spectrum", "/nonexistent/s.kamcl", "--images", "/nonexistent/i.kampol",
                                 "--profile", "/nonexistent/p.kamprof"});
    EXPECT_EQ(missing.code, cli::Io);
    EXPECT_NE(missing.err.find("kam reconstruct:"), std::string::npos) << missing.err;
    EXPECT_EQ(runCli({"reconstruct", "--images", "x", "--profile", "y"}).code, cli::Usage);
}

TEST(Cli, SimulateIsDeterministic) {
    const auto a = simulated("cli_sim_a"), b = simulated("cli_sim_b");
    for (const char* f : {"phantom.kamcoef", "spectrum.kamcl", "images.kampol", "profile.kamprof", "rotations.kamrot"})
        EXPECT_EQ(readText(a / f), readText(b / f)) << f;
    EXPECT_EQ(withoutCreatedLine(readText(a / "manifest.txt")), withoutCreatedLine(readText(b / "manifest.txt")));
    const auto manifest = io::readKeyValues(a / "manifest.txt");
    EXPECT_EQ(valueOf(manifest, "format"), "kammanifest v1");
    EXPECT_EQ(valueOf(manifest, "file.phantom.kamcoef.fnv1a64"), io::fileChecksum(a / "phantom.kamcoef"));

    const auto c = simulated("cli_sim_c", "6");
    EXPECT_NE(readText(a / "phantom.kamcoef"), readText(c / "phantom.kamcoef"));
}

TEST(Cli, SimulateWritesOptionalOutputs) {
    const auto dir = test::scratchDir("cli_sim_mrc");
    const auto r = runCli({"simulate", "--L", "2", "--N", "17", "--n", "3", "--snr", "5", "--mrc", "--defocus", "12000",
                           "--profile-from-images", "-o", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::readImageStack(dir / "images.mrc").size(), 3u);
    EXPECT_EQ(io::readPolarImages(dir / "images.kampol").size(), 3u);
}

TEST(Cli, ReconstructEvaluateRoundTrip) {
    const auto sim = simulated("cli_e2e_sim");
    const auto rec = test::scratchDir("cli_e2e_rec");
    const auto r = reconstructFrom(sim, rec);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto diag = io::readKeyValues(rec / "diagnostics.txt");
    EXPECT_EQ(valueOf(diag, "format"), "kamdiag v1");
    EXPECT_EQ(valueOf(diag, "grid_resolution"), "0.15");
    EXPECT_EQ(valueOf(diag, "starts"), "8");
    EXPECT_EQ(io::readVolume(rec / "volume.mrc").size, 33);

    const auto ev = test::scratchDir("cli_e2e_eval");
    const auto e = runCli({"evaluate", (sim / "phantom.kamcoef").string(), (rec / "recovered.kamcoef").string(), "--N", "33",
                           "--fsc-threshold", "0.143", "-o", ev.string()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("correlation="), std::string::npos);
    const auto report = io::readKeyValues(ev / "alignment.txt");
    EXPECT_EQ(valueOf(report, "fsc_threshold"), "0.143");
    EXPECT_GE(std::stod(valueOf(report, "correlation")), 0.99);
    const std::string csv = readText(ev / "fsc.csv");
    EXPECT_EQ(csv.rfind("# kamfsc v1\nfreq_per_A,fsc,shell_count\n", 0), 0u);
}

TEST(Cli, ReconstructIsByteDeterministic) {
    const auto sim = simulated("cli_det_sim");
    const auto a = test::scratchDir("cli_det_a"), b = test::scratchDir("cli_det_b");
    ASSERT_EQ(reconstructFrom(sim, a).code, 0);
    ASSERT_EQ(reconstructFrom(sim, b).code, 0);
    EXPECT_EQ(readText(a / "recovered.kamcoef"), readText(b / "recovered.kamcoef"));
}

TEST(Cli, EvaluateIdenticalAndMismatchedInputs) {
    const auto sim = simulated("cli_eval_sim");
    const auto ev = test::scratchDir("cli_eval_same");
    const auto p = (sim / "phantom.kamcoef").string();
    const auto same = runCli({"evaluate", p, p, "--N", "33", "-o", ev.string()});
    ASSERT_EQ(same.code, 0) << same.err;
    EXPECT_NE(same.out.find("nyquist limited"), std::string::npos) << same.out;

    const auto other = test::scratchDir("cli_eval_other");
    ASSERT_EQ(runCli({"simulate", "--L", "2", "--N", "33", "-o", other.string()}).code, 0);
    EXPECT_EQ(runCli({"evaluate", p, (other / "phantom.kamcoef").string(), "-o", ev.string()}).code, cli::Usage);
    EXPECT_EQ(runCli({"evaluate", p, "volume.mrc", "-o", ev.string()}).code, cli::Usage);
}

TEST(Cli, ExpandRoundTripAndFailures) {
    const auto sim = simulated("cli_exp_sim");
    const auto rec = test::scratchDir("cli_exp_rec");
    const auto phantom = io::readCoefficients(sim / "phantom.kamcoef");
    io::writeVolume(rec / "phantom.mrc", synthesizeRealGrid(phantom, 33));

    const auto ex = test::scratchDir("cli_exp_out");
    const auto r = runCli({"expand", (rec / "phantom.mrc").string(), "--L", "3", "--c", "0.25", "-o", ex.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto back = io::readCoefficients(ex / "expanded.kamcoef");
    EXPECT_EQ(back.basis(), phantom.basis());
    EXPECT_GE(coefficientCorrelation(phantom, back), 0.999);

    const auto ill = runCli({"expand", (rec / "phantom.mrc").string(), "--L", "3", "--max-condition", "1.001", "-o", ex.string()});
    EXPECT_EQ(ill.code, cli::Numerical);
    EXPECT_NE(ill.err.find("--max-condition"), std::string::npos) << ill.err;

    io::writeImageStack(rec / "stack.mrc", std::vector<RealImage>(2, RealImage{8, std::vector<double>(64, 1.0)}));
    EXPECT_EQ(runCli({"expand", (rec / "stack.mrc").string(), "-o", ex.string()}).code, cli::Usage);
}

TEST(Cli, ReconstructFromRealSpaceImages) {
    const auto sim = test::scratchDir("cli_mrc_sim");
    ASSERT_EQ(runCli({"simulate", "--L", "3", "--N", "33", "--mrc", "-o", sim.string()}).code, 0);
    const auto rec = test::scratchDir("cli_mrc_rec");
    const auto r = runCli({"reconstruct", "--spectrum", (sim / "spectrum.kamcl").string(), "--images", (sim / "images.mrc").string(),
                           "--profile", (sim / "profile.kamprof").string(), "--N", "33", "-o", rec.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto truth = io::readCoefficients(sim / "phantom.kamcoef");
    EXPECT_GE(alignGlobally(truth, io::readCoefficients(rec / "recovered.kamcoef")).correlation, 0.99);
    EXPECT_EQ(runCli({"reconstruct", "--spectrum", (sim / "spectrum.kamcl").string(), "--images", (sim / "images.mrc").string(),
                      "--profile", (sim / "profile.kamprof").string(), "--N", "33", "--second", "7", "-o", rec.string()})
                  .code,
              cli::Usage);
}
