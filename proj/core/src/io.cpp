#include "kam/io.hpp"

#include "kam/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace kam::io {
namespace {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

constexpr std::size_t kMrcHeader = 1024;
constexpr char kPolarMagic[8] = {'K', 'A', 'M', 'P', 'O', 'L', '1', '\0'};

std::vector<char> readBytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void writeBytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

template <class T>
T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

template <class T>
void append(std::string& s, T v) {
    char buf[sizeof v];
    std::memcpy(buf, &v, sizeof v);
    s.append(buf, sizeof v);
}

std::vector<std::string> readLines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

std::vector<std::string> tokens(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string t; ss >> t;) out.push_back(t);
    return out;
}

double parseDouble(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw FormatError("malformed number for " + what + ": '" + s + "'");
    return v;
}

long parseInt(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size()) throw FormatError("malformed integer for " + what + ": '" + s + "'");
    return v;
}

// Parses "magic v1 key=value ..." and returns the keys.
KeyValues parseHeader(const std::vector<std::string>& lines, const std::string& magic, const std::string& path) {
    if (lines.empty()) throw FormatError(path + ": empty file");
    const auto t = tokens(lines.front());
    if (t.size() < 2 || t[0] != magic) throw FormatError(path + ": not a " + magic + " file");
    if (t[1] != "v1") throw FormatError(path + ": unsupported " + magic + " version " + t[1]);
    KeyValues kv;
    for (std::size_t i = 2; i < t.size(); ++i) {
        const auto eq = t[i].find('=');
        if (eq == std::string::npos) throw FormatError(path + ": malformed header field '" + t[i] + "'");
        kv.emplace_back(t[i].substr(0, eq), t[i].substr(eq + 1));
    }
    return kv;
}

const std::string* find(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return &v;
    return nullptr;
}

// Reads `rows` lines of `cols` numbers each starting at lines[pos].
Eigen::MatrixXd readMatrix(const std::vector<std::string>& lines, std::size_t& pos, int rows, int cols,
                           const std::string& what) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r, ++pos) {
        if (pos >= lines.size()) throw FormatError("truncated " + what);
        const auto t = tokens(lines[pos]);
        if (static_cast<int>(t.size()) != cols) throw FormatError("wrong number of values in a row of " + what);
        for (int c = 0; c < cols; ++c) m(r, c) = parseDouble(t[c], what);
    }
    return m;
}

void appendMatrix(std::string& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out += ' ';
            out += formatDouble(m(r, c));
        }
        out += '\n';
    }
}

} // namespace

std::string formatDouble(double v) {
    if (v == 0.0) v = 0.0;   // no negative zero
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

MrcData readMrc(const std::filesystem::path& path) {
    const auto bytes = readBytes(path);
    const std::string name = path.string();
    if (bytes.size() < kMrcHeader) throw FormatError(name + ": shorter than an MRC header");
    const char* h = bytes.data();
    const auto word = [&](int i) { return h + 4 * (i - 1); };
    if (std::memcmp(word(53), "MAP ", 4) != 0 && std::memcmp(word(53), "MAP\0", 4) != 0)
        throw FormatError(name + ": missing MRC MAP identifier");
    const auto stamp = static_cast<unsigned char>(word(54)[0]);
    if (stamp == 0x11) throw FormatError(name + ": big-endian MRC files are not supported");
    MrcData m;
    m.nx = load<std::int32_t>(word(1));
    m.ny = load<std::int32_t>(word(2));
    m.nz = load<std::int32_t>(word(3));
    const auto mode = load<std::int32_t>(word(4));
    if (mode != 2) throw FormatError(name + ": only MRC mode 2 (float32) is supported, found mode " + std::to_string(mode));
    if (m.nx <= 0 || m.ny <= 0 || m.nz <= 0) throw FormatError(name + ": invalid MRC dimensions");
    const auto mx = load<std::int32_t>(word(8));
    const float cellx = load<float>(word(11));
    m.voxelSize = (mx > 0 && cellx > 0.0f) ? static_cast<double>(cellx) / mx : 1.0;
    const auto nsymbt = load<std::int32_t>(word(24));
    if (nsymbt < 0) throw FormatError(name + ": negative extended header size");
    const std::size_t count = static_cast<std::size_t>(m.nx) * m.ny * m.nz;
    const std::size_t offset = kMrcHeader + static_cast<std::size_t>(nsymbt);
    if (bytes.size() < offset + 4 * count) throw FormatError(name + ": MRC data is truncated");
    m.data.resize(count);
    std::memcpy(m.data.data(), bytes.data() + offset, 4 * count);
    return m;
}

void writeMrc(const std::filesystem::path& path, const MrcData& m, bool isStack) {
    const std::size_t count = static_cast<std::size_t>(m.nx) * m.ny * m.nz;
    if (m.nx <= 0 || m.ny <= 0 || m.nz <= 0 || m.data.size() != count) throw ParameterError("MRC dimensions do not match the data");
    std::string h(kMrcHeader, '\0');
    const auto put = [&](int i, auto v) { std::memcpy(h.data() + 4 * (i - 1), &v, 4); };
    put(1, static_cast<std::int32_t>(m.nx));
    put(2, static_cast<std::int32_t>(m.ny));
    put(3, static_cast<std::int32_t>(m.nz));
    put(4, std::int32_t{2});
    put(8, static_cast<std::int32_t>(m.nx));
    put(9, static_cast<std::int32_t>(m.ny));
    put(10, static_cast<std::int32_t>(isStack ? 1 : m.nz));
    put(11, static_cast<float>(m.voxelSize * m.nx));
    put(12, static_cast<float>(m.voxelSize * m.ny));
    put(13, static_cast<float>(m.voxelSize * (isStack ? 1 : m.nz)));
    put(14, 90.0f);
    put(15, 90.0f);
    put(16, 90.0f);
    put(17, std::int32_t{1});
    put(18, std::int32_t{2});
    put(19, std::int32_t{3});
    double lo = m.data.front(), hi = m.data.front(), sum = 0.0, sq = 0.0;
    for (float v : m.data) {
        lo = std::min<double>(lo, v);
        hi = std::max<double>(hi, v);
        sum += v;
    }
    const double mean = sum / static_cast<double>(count);
    for (float v : m.data) sq += (v - mean) * (v - mean);
    put(20, static_cast<float>(lo));
    put(21, static_cast<float>(hi));
    put(22, static_cast<float>(mean));
    put(23, static_cast<std::int32_t>(isStack ? 0 : 1));
    put(24, std::int32_t{0});
    std::memcpy(h.data() + 4 * 26, "MRCO", 4);
    put(28, std::int32_t{20140});
    std::memcpy(h.data() + 4 * 52, "MAP ", 4);
    const unsigned char stamp[4] = {0x44, 0x44, 0x00, 0x00};
    std::memcpy(h.data() + 4 * 53, stamp, 4);
    put(55, static_cast<float>(std::sqrt(sq / static_cast<double>(count))));
    put(56, std::int32_t{0});
    h.append(reinterpret_cast<const char*>(m.data.data()), 4 * count);
    writeBytes(path, h);
}

VolumeGrid readVolume(const std::filesystem::path& path) {
    const MrcData m = readMrc(path);
    if (m.nx != m.ny || m.ny != m.nz)
        throw ParameterError(path.string() + ": volume must be cubic, got " + std::to_string(m.nx) + "x" +
                             std::to_string(m.ny) + "x" + std::to_string(m.nz));
    VolumeGrid g(m.nx, m.voxelSize);
    std::copy(m.data.begin(), m.data.end(), g.data.begin());
    return g;
}

void writeVolume(const std::filesystem::path& path, const VolumeGrid& grid) {
    MrcData m{grid.size, grid.size, grid.size, grid.voxelSize, {}};
    m.data.assign(grid.data.begin(), grid.data.end());
    writeMrc(path, m);
}

std::vector<RealImage> readImageStack(const std::filesystem::path& path, double* voxelSize) {
    const MrcData m = readMrc(path);
    if (m.nx != m.ny) throw ParameterError(path.string() + ": images must be square");
    if (voxelSize) *voxelSize = m.voxelSize;
    std::vector<RealImage> out(static_cast<std::size_t>(m.nz));
    const std::size_t per = static_cast<std::size_t>(m.nx) * m.ny;
    for (int z = 0; z < m.nz; ++z) {
        out[z].size = m.nx;
        out[z].data.assign(m.data.begin() + static_cast<std::ptrdiff_t>(z * per),
                           m.data.begin() + static_cast<std::ptrdiff_t>((z + 1) * per));
    }
    return out;
}

void writeImageStack(const std::filesystem::path& path, const std::vector<RealImage>& images, double voxelSize) {
    if (images.empty()) throw ParameterError("empty image stack");
    const int n = images.front().size;
    MrcData m{n, n, static_cast<int>(images.size()), voxelSize, {}};
    m.data.reserve(static_cast<std::size_t>(n) * n * images.size());
    for (const auto& im : images) {
        if (im.size != n || im.data.size() != static_cast<std::size_t>(n) * n)
            throw ParameterError("images in a stack must share one size");
        m.data.insert(m.data.end(), im.data.begin(), im.data.end());
    }
    writeMrc(path, m, true);
}

void writeCoefficients(const std::filesystem::path& path, const VolumeCoefficients& coeffs) {
    const BasisSpec& b = coeffs.basis();
    std::string out = "kamcoef v1 L=" + std::to_string(b.maxDegree) + " c=" + formatDouble(b.bandlimit) +
                      " R=" + formatDouble(b.supportRadius) + "\n";
    for (int l = 0; l <= b.maxDegree; ++l) out += std::to_string(b.size(l)) + "\n";
    for (int l = 0; l <= b.maxDegree; ++l) appendMatrix(out, coeffs.block(l));
    writeBytes(path, out);
}

VolumeCoefficients readCoefficients(const std::filesystem::path& path) {
    const auto lines = readLines(path);
    const std::string name = path.string();
    const auto kv = parseHeader(lines, "kamcoef", name);
    const auto* ls = find(kv, "L");
    const auto* cs = find(kv, "c");
    const auto* rs = find(kv, "R");
    if (!ls || !cs || !rs) throw FormatError(name + ": header needs L, c and R");
    BasisSpec b;
    b.maxDegree = static_cast<int>(parseInt(*ls, "L"));
    b.bandlimit = parseDouble(*cs, "c");
    b.supportRadius = parseDouble(*rs, "R");
    if (b.maxDegree < 0 || b.maxDegree > 10000) throw FormatError(name + ": invalid L");
    std::size_t pos = 1;
    for (int l = 0; l <= b.maxDegree; ++l, ++pos) {
        if (pos >= lines.size()) throw FormatError(name + ": truncated truncation table");
        b.truncation.push_back(static_cast<int>(parseInt(lines[pos], "S(l)")));
    }
    try {
        b.validate();
    } catch (const ParameterError& e) {
        throw FormatError(name + ": " + e.what());
    }
    std::vector<Eigen::MatrixXd> blocks;
    for (int l = 0; l <= b.maxDegree; ++l) blocks.push_back(readMatrix(lines, pos, b.size(l), 2 * l + 1, name));
    return {b, std::move(blocks)};
}

void writeSpectrum(const std::filesystem::path& path, const ClSpectrum& spectrum) {
    const BasisSpec& b = spectrum.basis;
    std::string out = "kamcl v1 L=" + std::to_string(b.maxDegree) + " c=" + formatDouble(b.bandlimit) +
                      " R=" + formatDouble(b.supportRadius) + "\n";
    for (int l = 0; l <= b.maxDegree; ++l) {
        out += std::to_string(l) + " " + std::to_string(b.size(l)) + "\n";
        appendMatrix(out, spectrum.matrices[l]);
    }
    writeBytes(path, out);
}

ClSpectrum readSpectrum(const std::filesystem::path& path, double defaultBandlimit, double defaultRadius) {
    const auto lines = readLines(path);
    const std::string name = path.string();
    const auto kv = parseHeader(lines, "kamcl", name);
    const auto* ls = find(kv, "L");
    if (!ls) throw FormatError(name + ": header needs L");
    ClSpectrum s;
    s.basis.maxDegree = static_cast<int>(parseInt(*ls, "L"));
    if (s.basis.maxDegree < 0 || s.basis.maxDegree > 10000) throw FormatError(name + ": invalid L");
    const auto* cs = find(kv, "c");
    const auto* rs = find(kv, "R");
    s.basis.bandlimit = cs ? parseDouble(*cs, "c") : defaultBandlimit;
    s.basis.supportRadius = rs ? parseDouble(*rs, "R") : defaultRadius;
    std::size_t pos = 1;
    for (int l = 0; l <= s.basis.maxDegree; ++l) {
        if (pos >= lines.size()) throw FormatError(name + ": truncated spectrum");
        const auto t = tokens(lines[pos++]);
        if (t.size() != 2 || parseInt(t[0], "l") != l) throw FormatError(name + ": expected degree line for l=" + std::to_string(l));
        const long sl = parseInt(t[1], "S(l)");
        if (sl < 1 || sl > 100000) throw FormatError(name + ": invalid S(l)");
        s.basis.truncation.push_back(static_cast<int>(sl));
        s.matrices.push_back(readMatrix(lines, pos, static_cast<int>(sl), static_cast<int>(sl), name));
    }
    s.validate();
    return s;
}

void writePolarImages(const std::filesystem::path& path, const std::vector<FourierSliceImage>& images) {
    if (images.empty()) throw ParameterError("no polar images to write");
    const PolarGridSpec& g = images.front().grid;
    std::string out(kPolarMagic, 8);
    append(out, static_cast<std::uint32_t>(g.rings()));
    append(out, static_cast<std::uint32_t>(g.angles()));
    append(out, g.bandlimit);
    for (double r : g.radii) append(out, r);
    for (const auto& im : images) {
        if (!im.grid.sameSampling(g) || im.values.rows() != g.rings() || im.values.cols() != g.angles())
            throw ParameterError("polar images in one file must share a grid");
        for (Eigen::Index r = 0; r < im.values.rows(); ++r)
            for (Eigen::Index j = 0; j < im.values.cols(); ++j) {
                append(out, im.values(r, j).real());
                append(out, im.values(r, j).imag());
            }
    }
    writeBytes(path, out);
}

std::vector<FourierSliceImage> readPolarImages(const std::filesystem::path& path) {
    const auto bytes = readBytes(path);
    const std::string name = path.string();
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kPolarMagic, 8) != 0) throw FormatError(name + ": not a KAMPOL1 file");
    const auto nRings = load<std::uint32_t>(bytes.data() + 8);
    const auto nPhi = load<std::uint32_t>(bytes.data() + 12);
    const double c = load<double>(bytes.data() + 16);
    if (nRings == 0 || nPhi == 0 || nRings > 100000 || nPhi > 100000) throw FormatError(name + ": invalid polar grid size");
    const std::size_t head = 24 + 8 * static_cast<std::size_t>(nRings);
    if (bytes.size() < head) throw FormatError(name + ": truncated radii");
    std::vector<double> radii(nRings);
    for (std::uint32_t r = 0; r < nRings; ++r) radii[r] = load<double>(bytes.data() + 24 + 8 * r);
    PolarGridSpec grid;
    try {
        grid = PolarGridSpec::fromRadii(c, radii, static_cast<int>(nPhi));
    } catch (const ParameterError& e) {
        throw FormatError(name + ": " + e.what());
    }
    const std::size_t per = 16 * static_cast<std::size_t>(nRings) * nPhi;
    const std::size_t body = bytes.size() - head;
    if (body % per != 0) throw FormatError(name + ": image data is not a whole number of images");
    std::vector<FourierSliceImage> out(body / per);
    const char* p = bytes.data() + head;
    for (auto& im : out) {
        im.grid = grid;
        im.values.resize(nRings, nPhi);
        for (std::uint32_t r = 0; r < nRings; ++r)
            for (std::uint32_t j = 0; j < nPhi; ++j, p += 16) im.values(r, j) = {load<double>(p), load<double>(p + 8)};
    }
    return out;
}

void writeProfile(const std::filesystem::path& path, const std::vector<double>& radii, const std::vector<double>& values,
                  double bandlimit) {
    if (radii.size() != values.size()) throw ParameterError("profile radii and values differ in length");
    std::string out = "kamprof v1 rings=" + std::to_string(radii.size()) + " c=" + formatDouble(bandlimit) + "\n";
    for (std::size_t i = 0; i < radii.size(); ++i) out += formatDouble(radii[i]) + " " + formatDouble(values[i]) + "\n";
    writeBytes(path, out);
}

std::vector<double> readProfile(const std::filesystem::path& path, std::vector<double>* radii) {
    const auto lines = readLines(path);
    const std::string name = path.string();
    const auto kv = parseHeader(lines, "kamprof", name);
    const auto* n = find(kv, "rings");
    if (!n) throw FormatError(name + ": header needs rings");
    const long count = parseInt(*n, "rings");
    if (count < 1 || static_cast<std::size_t>(count) + 1 > lines.size()) throw FormatError(name + ": truncated profile");
    std::vector<double> values;
    if (radii) radii->clear();
    for (long i = 1; i <= count; ++i) {
        const auto t = tokens(lines[i]);
        if (t.size() != 2) throw FormatError(name + ": profile lines need 'k value'");
        if (radii) radii->push_back(parseDouble(t[0], "k"));
        values.push_back(parseDouble(t[1], "profile"));
    }
    return values;
}

void writeRotations(const std::filesystem::path& path, const std::vector<Rotation>& rotations) {
    std::string out = "kamrot v1 n=" + std::to_string(rotations.size()) + "\n";
    for (const auto& r : rotations) {
        const auto& q = r.quaternion();
        out += formatDouble(q(0)) + " " + formatDouble(q(1)) + " " + formatDouble(q(2)) + " " + formatDouble(q(3)) + "\n";
    }
    writeBytes(path, out);
}

std::vector<Rotation> readRotations(const std::filesystem::path& path) {
    const auto lines = readLines(path);
    const std::string name = path.string();
    const auto kv = parseHeader(lines, "kamrot", name);
    const auto* n = find(kv, "n");
    if (!n) throw FormatError(name + ": header needs n");
    const long count = parseInt(*n, "n");
    if (count < 0 || static_cast<std::size_t>(count) + 1 > lines.size()) throw FormatError(name + ": truncated rotations");
    std::vector<Rotation> out;
    for (long i = 1; i <= count; ++i) {
        const auto t = tokens(lines[i]);
        if (t.size() != 4) throw FormatError(name + ": rotation lines need four numbers");
        try {
            out.emplace_back(parseDouble(t[0], "w"), parseDouble(t[1], "x"), parseDouble(t[2], "y"), parseDouble(t[3], "z"));
        } catch (const ParameterError& e) {
            throw FormatError(name + ": " + e.what());
        }
    }
    return out;
}

void writeKeyValues(const std::filesystem::path& path, const KeyValues& values) {
    std::string out;
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    writeBytes(path, out);
}

KeyValues readKeyValues(const std::filesystem::path& path) {
    KeyValues kv;
    for (const auto& line : readLines(path)) {
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path.string() + ": expected key=value, got '" + line + "'");
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

std::string fileChecksum(const std::filesystem::path& path) {
    const auto bytes = readBytes(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace kam::io
