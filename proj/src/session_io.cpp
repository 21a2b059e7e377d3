#include "cubehex/session_io.hpp"

#include "cubehex/error.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cubehex
{

using nlohmann::json;

Points Normalization::restore(const Points& points) const
{
    Points out(points.size());
    for (size_t i = 0; i < points.size(); ++i)
        out[i] = restore(points[i]);
    return out;
}

Normalization fit_unit_box(const Points& points)
{
    Normalization n;
    if (points.empty())
        return n;
    Box3 box;
    for (const Vec3& p : points)
        box.extend(p);
    n.center = box.center();
    double extent = box.sizes().maxCoeff();
    if (!(extent > 0.0) || !std::isfinite(extent))
        throw Error(ErrorCode::InvalidMesh, "mesh has a degenerate bounding box");
    n.scale = 1.0 / extent;
    return n;
}

namespace
{

struct Token
{
    std::string text;
    int line = 0;
};

// Whitespace tokens with their line numbers; '#' starts a comment in MEDIT files.
class Tokens
{
public:
    Tokens(std::istream& in, bool hash_comments)
    {
        std::string line;
        int number = 0;
        while (std::getline(in, line))
        {
            ++number;
            if (hash_comments)
            {
                size_t hash = line.find('#');
                if (hash != std::string::npos)
                    line.resize(hash);
            }
            std::istringstream ss(line);
            std::string t;
            while (ss >> t)
                tokens_.push_back({t, number});
        }
        last_line_ = number;
    }

    bool done() const { return pos_ >= tokens_.size(); }
    int line() const { return done() ? last_line_ : tokens_[pos_].line; }
    const std::string& peek() const { return tokens_[pos_].text; }

    const Token& next(const char* what)
    {
        if (done())
            fail(std::string("unexpected end of file, expected ") + what);
        return tokens_[pos_++];
    }

    [[noreturn]] void fail(const std::string& message) const
    {
        throw Error(ErrorCode::Format, "line " + std::to_string(line()) + ": " + message);
    }

    [[noreturn]] static void fail_at(const Token& t, const std::string& message)
    {
        throw Error(ErrorCode::Format, "line " + std::to_string(t.line) + ": " + message);
    }

    long integer(const char* what)
    {
        const Token& t = next(what);
        long v = 0;
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (ec != std::errc() || ptr != t.text.data() + t.text.size())
            fail_at(t, std::string("expected ") + what + ", got '" + t.text + "'");
        return v;
    }

    double real(const char* what)
    {
        const Token& t = next(what);
        char* end = nullptr;
        double v = std::strtod(t.text.c_str(), &end);
        if (end != t.text.c_str() + t.text.size() || !std::isfinite(v))
            fail_at(t, std::string("expected ") + what + ", got '" + t.text + "'");
        return v;
    }

    long count(const char* what)
    {
        int at = line();
        long n = integer(what);
        if (n < 0)
            throw Error(ErrorCode::Format, "line " + std::to_string(at) + ": negative " + what);
        return n;
    }

private:
    std::vector<Token> tokens_;
    size_t pos_ = 0;
    int last_line_ = 0;
};

std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

template <size_t N>
std::array<int, N> read_cell(Tokens& tk, long base, long n_vertices, const char* kind)
{
    std::array<int, N> cell{};
    for (size_t k = 0; k < N; ++k)
    {
        int at = tk.line();
        long v = tk.integer("vertex index") - base;
        if (v < 0 || v >= n_vertices)
            throw Error(ErrorCode::Format, "line " + std::to_string(at) + ": " + kind + " references vertex " +
                                               std::to_string(v + base) + " out of range");
        cell[k] = static_cast<int>(v);
    }
    return cell;
}

void check_mixed(const RawMesh& raw)
{
    if (!raw.tets.empty() && !raw.hexes.empty())
        throw Error(ErrorCode::Format, "mixed element types: " + std::to_string(raw.tets.size()) + " tets and " +
                                           std::to_string(raw.hexes.size()) + " hexes");
}

} // namespace

RawMesh parse_medit(std::istream& in)
{
    Tokens tk(in, true);
    RawMesh raw;
    bool have_vertices = false;
    int dimension = 3;
    while (!tk.done())
    {
        const Token& kw = tk.next("keyword");
        std::string key = lower(kw.text);
        if (key == "meshversionformatted")
            tk.integer("format version");
        else if (key == "dimension")
        {
            dimension = static_cast<int>(tk.integer("dimension"));
            if (dimension != 3)
                Tokens::fail_at(kw, "only 3D meshes are supported (dimension " + std::to_string(dimension) + ")");
        }
        else if (key == "vertices")
        {
            long n = tk.count("vertex count");
            raw.vertices.resize(static_cast<size_t>(n));
            for (long i = 0; i < n; ++i)
            {
                double x = tk.real("x"), y = tk.real("y"), z = tk.real("z");
                tk.integer("vertex reference");
                raw.vertices[static_cast<size_t>(i)] = Vec3(x, y, z);
            }
            have_vertices = true;
        }
        else if (key == "tetrahedra" || key == "hexahedra")
        {
            if (!have_vertices)
                Tokens::fail_at(kw, kw.text + " before Vertices");
            long n = tk.count("element count");
            const long nv = static_cast<long>(raw.vertices.size());
            for (long i = 0; i < n; ++i)
            {
                if (key == "tetrahedra")
                    raw.tets.push_back(read_cell<4>(tk, 1, nv, "tetrahedron"));
                else
                    raw.hexes.push_back(read_cell<8>(tk, 1, nv, "hexahedron"));
                tk.integer("element reference");
            }
        }
        else if (key == "edges" || key == "triangles" || key == "quadrilaterals" || key == "corners" ||
                 key == "ridges" || key == "requiredvertices" || key == "requirededges" || key == "normals" ||
                 key == "tangents")
        {
            static const std::map<std::string, int> widths = {
                {"edges", 3},   {"triangles", 4},        {"quadrilaterals", 5}, {"corners", 1}, {"ridges", 1},
                {"requiredvertices", 1}, {"requirededges", 1}, {"normals", 3},  {"tangents", 3}};
            long n = tk.count("element count");
            int width = widths.at(key);
            for (long i = 0; i < n * width; ++i)
                tk.next("entry");
        }
        else if (key == "end")
            break;
        else
            Tokens::fail_at(kw, "unknown keyword '" + kw.text + "'");
    }
    if (!have_vertices)
        throw Error(ErrorCode::Format, "no Vertices section");
    check_mixed(raw);
    return raw;
}

RawMesh parse_vtk(std::istream& in)
{
    std::string header, title, encoding;
    int line = 0;
    auto getline = [&](std::string& s) {
        if (!std::getline(in, s))
            throw Error(ErrorCode::Format, "line " + std::to_string(line + 1) + ": unexpected end of file");
        ++line;
        if (!s.empty() && s.back() == '\r')
            s.pop_back();
    };
    getline(header);
    if (header.rfind("# vtk DataFile", 0) != 0)
        throw Error(ErrorCode::Format, "line 1: not a legacy VTK file");
    getline(title);
    getline(encoding);
    if (lower(encoding).find("ascii") == std::string::npos)
        throw Error(ErrorCode::Format, "line 3: only ASCII VTK files are supported");

    Tokens tk(in, false);
    // Tokens count lines from the fourth line of the file.
    auto at = [&](int l) { return l + line; };
    auto fail = [&](int l, const std::string& m) {
        throw Error(ErrorCode::Format, "line " + std::to_string(at(l)) + ": " + m);
    };

    RawMesh raw;
    std::vector<std::vector<int>> cells;
    std::vector<int> cell_lines;
    bool have_points = false, have_types = false;
    while (!tk.done())
    {
        const Token& kw = tk.next("keyword");
        std::string key = lower(kw.text);
        if (key == "dataset")
        {
            const Token& type = tk.next("dataset type");
            if (lower(type.text) != "unstructured_grid")
                fail(type.line, "unsupported dataset '" + type.text + "'");
        }
        else if (key == "points")
        {
            long n = tk.count("point count");
            tk.next("point type");
            raw.vertices.resize(static_cast<size_t>(n));
            for (long i = 0; i < n; ++i)
            {
                try
                {
                    double x = tk.real("x"), y = tk.real("y"), z = tk.real("z");
                    raw.vertices[static_cast<size_t>(i)] = Vec3(x, y, z);
                }
                catch (const Error&)
                {
                    fail(tk.line(), "malformed point " + std::to_string(i));
                }
            }
            have_points = true;
        }
        else if (key == "cells")
        {
            long n = tk.count("cell count");
            tk.count("cell list size");
            for (long i = 0; i < n; ++i)
            {
                int l = tk.line();
                long k = tk.count("cell size");
                std::vector<int> c;
                for (long j = 0; j < k; ++j)
                {
                    int lv = tk.line();
                    long v = tk.integer("vertex index");
                    if (v < 0 || v >= static_cast<long>(raw.vertices.size()))
                        fail(lv, "cell references point " + std::to_string(v) + " out of range");
                    c.push_back(static_cast<int>(v));
                }
                cells.push_back(std::move(c));
                cell_lines.push_back(l);
            }
        }
        else if (key == "cell_types")
        {
            long n = tk.count("cell type count");
            if (n != static_cast<long>(cells.size()))
                fail(kw.line, "CELL_TYPES count " + std::to_string(n) + " does not match CELLS count " +
                                  std::to_string(cells.size()));
            for (long i = 0; i < n; ++i)
            {
                int l = tk.line();
                long type = tk.integer("cell type");
                const auto& c = cells[static_cast<size_t>(i)];
                auto expect = [&](size_t size) {
                    if (c.size() != size)
                        fail(cell_lines[static_cast<size_t>(i)], "cell " + std::to_string(i) + " has " +
                                                                     std::to_string(c.size()) + " points, expected " +
                                                                     std::to_string(size));
                };
                if (type == 10)
                {
                    expect(4);
                    raw.tets.push_back({c[0], c[1], c[2], c[3]});
                }
                else if (type == 12)
                {
                    expect(8);
                    std::array<int, 8> h{};
                    std::copy(c.begin(), c.end(), h.begin());
                    raw.hexes.push_back(h);
                }
                else if (type == 1 || type == 3 || type == 5 || type == 9)
                    continue;
                else
                    fail(l, "unsupported cell type " + std::to_string(type));
            }
            have_types = true;
        }
        else if (key == "point_data" || key == "cell_data" || key == "field")
            break;  // attributes are not needed
        else
            fail(kw.line, "unknown keyword '" + kw.text + "'");
    }
    if (!have_points)
        throw Error(ErrorCode::Format, "no POINTS section");
    if (!cells.empty() && !have_types)
        throw Error(ErrorCode::Format, "CELLS without CELL_TYPES");
    check_mixed(raw);
    return raw;
}

namespace
{

RawMesh read_raw(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::string ext = lower(path.extension().string());
    try
    {
        if (ext == ".mesh")
            return parse_medit(in);
        if (ext == ".vtk")
            return parse_vtk(in);
    }
    catch (const Error& e)
    {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
    throw Error(ErrorCode::Format, "unsupported mesh extension '" + ext + "' (expected .mesh or .vtk)");
}

} // namespace

LoadedTetMesh load_tet_mesh(const std::filesystem::path& path, bool normalize)
{
    RawMesh raw = read_raw(path);
    if (raw.tets.empty())
        throw Error(ErrorCode::InvalidMesh, path.string() + ": no tetrahedra");
    LoadedTetMesh out;
    out.mesh.vertices = std::move(raw.vertices);
    out.mesh.tets = std::move(raw.tets);
    int flipped = 0;
    for (auto& t : out.mesh.tets)
    {
        const auto& v = out.mesh.vertices;
        double vol = tet_volume(v[static_cast<size_t>(t[0])], v[static_cast<size_t>(t[1])],
                                v[static_cast<size_t>(t[2])], v[static_cast<size_t>(t[3])]);
        if (vol < 0.0)
        {
            std::swap(t[2], t[3]);
            ++flipped;
        }
    }
    if (flipped > 0)
        out.notices.push_back("reoriented " + std::to_string(flipped) + " tet(s) with negative volume");
    validate(out.mesh);
    if (normalize)
    {
        out.transform = fit_unit_box(out.mesh.vertices);
        for (Vec3& p : out.mesh.vertices)
            p = out.transform.apply(p);
    }
    return out;
}

HexMesh load_hex_mesh(const std::filesystem::path& path)
{
    RawMesh raw = read_raw(path);
    if (raw.hexes.empty())
        throw Error(ErrorCode::InvalidMesh, path.string() + ": no hexahedra");
    HexMesh mesh;
    mesh.vertices = std::move(raw.vertices);
    mesh.hexes = std::move(raw.hexes);
    validate(mesh);
    return mesh;
}

namespace
{

void write_number(std::ostream& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, ptr - buf);
}

template <size_t N>
void write_mesh(const std::filesystem::path& path, const Points& positions, const std::vector<std::array<int, N>>& cells,
                const TriSurface* tri_boundary, const QuadSurface* quad_boundary)
{
    std::string ext = lower(path.extension().string());
    std::ostringstream out;
    if (ext == ".mesh")
    {
        out << "MeshVersionFormatted 2\nDimension 3\nVertices\n" << positions.size() << '\n';
        for (const Vec3& p : positions)
        {
            write_number(out, p.x());
            out << ' ';
            write_number(out, p.y());
            out << ' ';
            write_number(out, p.z());
            out << " 0\n";
        }
        out << (N == 4 ? "Tetrahedra\n" : "Hexahedra\n") << cells.size() << '\n';
        for (const auto& c : cells)
        {
            for (int v : c)
                out << v + 1 << ' ';
            out << "0\n";
        }
        out << "End\n";
    }
    else if (ext == ".vtk")
    {
        out << "# vtk DataFile Version 3.0\ncubehex\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS " << positions.size()
            << " double\n";
        for (const Vec3& p : positions)
        {
            write_number(out, p.x());
            out << ' ';
            write_number(out, p.y());
            out << ' ';
            write_number(out, p.z());
            out << '\n';
        }
        out << "CELLS " << cells.size() << ' ' << cells.size() * (N + 1) << '\n';
        for (const auto& c : cells)
        {
            out << N;
            for (int v : c)
                out << ' ' << v;
            out << '\n';
        }
        out << "CELL_TYPES " << cells.size() << '\n';
        for (size_t i = 0; i < cells.size(); ++i)
            out << (N == 4 ? 10 : 12) << '\n';
    }
    else if (ext == ".obj")
    {
        // Surface only: boundary vertices in surface order.
        const Points& sv = tri_boundary ? tri_boundary->vertices : quad_boundary->vertices;
        const auto& vi = tri_boundary ? tri_boundary->volume_index : quad_boundary->volume_index;
        for (size_t i = 0; i < sv.size(); ++i)
        {
            const Vec3& p = positions[static_cast<size_t>(vi[i])];
            out << "v ";
            write_number(out, p.x());
            out << ' ';
            write_number(out, p.y());
            out << ' ';
            write_number(out, p.z());
            out << '\n';
        }
        if (tri_boundary)
            for (const auto& t : tri_boundary->triangles)
                out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
        else
            for (const auto& q : quad_boundary->quads)
                out << "f " << q[0] + 1 << ' ' << q[1] + 1 << ' ' << q[2] + 1 << ' ' << q[3] + 1 << '\n';
    }
    else
        throw Error(ErrorCode::Format, "unsupported export extension '" + ext + "' (expected .mesh, .vtk or .obj)");
    write_file(path, out.str());
}

} // namespace

void save_hex_mesh(const std::filesystem::path& path, const HexMesh& mesh, const Normalization& transform)
{
    QuadSurface boundary;
    if (lower(path.extension().string()) == ".obj")
        boundary = extract_boundary(mesh);
    write_mesh<8>(path, transform.restore(mesh.vertices), mesh.hexes, nullptr, &boundary);
}

void save_tet_mesh(const std::filesystem::path& path, const TetMesh& mesh, const Normalization& transform)
{
    TriSurface boundary;
    if (lower(path.extension().string()) == ".obj")
        boundary = extract_boundary(mesh);
    write_mesh<4>(path, transform.restore(mesh.vertices), mesh.tets, &boundary, nullptr);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw Error(ErrorCode::Io, "failed reading '" + path.string() + "'");
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error(ErrorCode::Io, "failed writing '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorCode::Io, "cannot move '" + tmp.string() + "' into place: " + ec.message());
}

// ---- stages ----

namespace
{
const std::array<const char*, 8> stage_names = {"empty",          "input",          "deformed",  "decomposed",
                                                "voxelized",      "pullback-phase1", "pullback-phase2", "optimized"};
}

const char* to_string(Stage stage)
{
    return stage_names[static_cast<size_t>(stage)];
}

Stage stage_from_string(const std::string& name)
{
    for (size_t i = 0; i < stage_names.size(); ++i)
        if (name == stage_names[i])
            return static_cast<Stage>(i);
    throw Error(ErrorCode::Format, "unknown stage '" + name + "'");
}

Points Session::hex_positions() const
{
    if (quality)
        return quality->positions;
    if (pullback && pullback->phase_done >= 2)
        return pullback->m;
    if (pullback && pullback->phase_done >= 1)
        return pullback->dprime;
    if (hex)
        return hex->vertices;
    throw Error(ErrorCode::State, "session has no hex mesh");
}

void Session::check() const
{
    auto need = [&](bool ok, const char* what) {
        if (!ok)
            throw Error(ErrorCode::State,
                        std::string("session at stage '") + to_string(cursor) + "' is missing " + what);
    };
    if (cursor >= Stage::Input)
        need(input.has_value(), "the input mesh");
    if (cursor >= Stage::Deformed)
        need(deformation && deformation->positions.size() == input->vertices.size(), "the deformation");
    if (cursor >= Stage::Decomposed)
        need(polycube && !polycube->cuboids.empty(), "the polycube");
    if (cursor >= Stage::Voxelized)
        need(voxels && hex, "the voxel grid");
    if (cursor >= Stage::PullbackPhase1)
        need(pullback && pullback->phase_done >= 1 && pullback->dprime.size() == hex->vertices.size(),
             "pullback phase 1");
    if (cursor >= Stage::PullbackPhase2)
        need(pullback->phase_done >= 2 && pullback->m.size() == hex->vertices.size(), "pullback phase 2");
    if (cursor >= Stage::Optimized)
        need(quality && quality->positions.size() == hex->vertices.size(), "the optimized mesh");
}

// ---- archive ----

namespace
{

constexpr char magic[8] = {'C', 'H', 'X', 'S', 'E', 'S', 'S', '\0'};

template <class T>
void put_le(std::string& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get_le(const char* p)
{
    char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

class BlobWriter
{
public:
    json f64(const double* data, size_t n)
    {
        json ref = {{"type", "f64"}, {"offset", bytes_.size()}, {"count", n}};
        for (size_t i = 0; i < n; ++i)
            put_le(bytes_, data[i]);
        return ref;
    }

    json points(const Points& p) { return f64(p.empty() ? nullptr : p[0].data(), 3 * p.size()); }

    json i32(const int* data, size_t n)
    {
        json ref = {{"type", "i32"}, {"offset", bytes_.size()}, {"count", n}};
        for (size_t i = 0; i < n; ++i)
            put_le(bytes_, static_cast<std::int32_t>(data[i]));
        return ref;
    }

    template <size_t N>
    json cells(const std::vector<std::array<int, N>>& c)
    {
        json ref = i32(c.empty() ? nullptr : c[0].data(), N * c.size());
        ref["width"] = N;
        return ref;
    }

    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class BlobReader
{
public:
    explicit BlobReader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    std::vector<T> read(const json& ref, const char* type) const
    {
        if (ref.at("type").get<std::string>() != type)
            throw Error(ErrorCode::Format, std::string("session array has type ") + ref.at("type").dump() +
                                               ", expected " + type);
        size_t offset = ref.at("offset").get<size_t>();
        size_t count = ref.at("count").get<size_t>();
        if (offset > bytes_.size() || count > (bytes_.size() - offset) / sizeof(T))
            throw Error(ErrorCode::Format, "session array runs past the blob");
        std::vector<T> out(count);
        for (size_t i = 0; i < count; ++i)
            out[i] = get_le<T>(bytes_.data() + offset + i * sizeof(T));
        return out;
    }

    Points points(const json& ref) const
    {
        std::vector<double> flat = read<double>(ref, "f64");
        if (flat.size() % 3 != 0)
            throw Error(ErrorCode::Format, "point array length is not a multiple of 3");
        Points p(flat.size() / 3);
        for (size_t i = 0; i < p.size(); ++i)
            p[i] = Vec3(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        return p;
    }

    template <size_t N>
    std::vector<std::array<int, N>> cells(const json& ref) const
    {
        if (ref.at("width").get<size_t>() != N)
            throw Error(ErrorCode::Format, "cell array has the wrong width");
        std::vector<std::int32_t> flat = read<std::int32_t>(ref, "i32");
        if (flat.size() % N != 0)
            throw Error(ErrorCode::Format, "cell array length is not a multiple of its width");
        std::vector<std::array<int, N>> c(flat.size() / N);
        for (size_t i = 0; i < c.size(); ++i)
            for (size_t k = 0; k < N; ++k)
                c[i][k] = flat[N * i + k];
        return c;
    }

private:
    std::string_view bytes_;
};

json weights_json(const DeformWeights& w)
{
    return {{"angle", w.angle}, {"vol", w.vol}, {"cube", w.cube}, {"smooth", w.smooth}, {"eps", w.eps}};
}

json weights_json(const PullbackWeights& w)
{
    return {{"angle", w.angle}, {"vol", w.vol},   {"to_surface", w.to_surface}, {"from_surface", w.from_surface},
            {"lap", w.lap},     {"pullback", w.pullback}, {"eps", w.eps}};
}

json weights_json(const QualityWeights& w)
{
    return {{"lap", w.lap},
            {"to_surface", w.to_surface},
            {"from_surface", w.from_surface},
            {"angle", w.angle},
            {"vol", w.vol},
            {"custom", w.custom},
            {"eps", w.eps},
            {"worst_distortion", w.worst_distortion},
            {"worst_custom", w.worst_custom}};
}

void from_json_weights(const json& j, DeformWeights& w)
{
    j.at("angle").get_to(w.angle);
    j.at("vol").get_to(w.vol);
    j.at("cube").get_to(w.cube);
    j.at("smooth").get_to(w.smooth);
    j.at("eps").get_to(w.eps);
}

void from_json_weights(const json& j, PullbackWeights& w)
{
    j.at("angle").get_to(w.angle);
    j.at("vol").get_to(w.vol);
    j.at("to_surface").get_to(w.to_surface);
    j.at("from_surface").get_to(w.from_surface);
    j.at("lap").get_to(w.lap);
    j.at("pullback").get_to(w.pullback);
    j.at("eps").get_to(w.eps);
}

void from_json_weights(const json& j, QualityWeights& w)
{
    j.at("lap").get_to(w.lap);
    j.at("to_surface").get_to(w.to_surface);
    j.at("from_surface").get_to(w.from_surface);
    j.at("angle").get_to(w.angle);
    j.at("vol").get_to(w.vol);
    j.at("custom").get_to(w.custom);
    j.at("eps").get_to(w.eps);
    j.at("worst_distortion").get_to(w.worst_distortion);
    j.at("worst_custom").get_to(w.worst_custom);
}

// Doubles that must survive bit-exactly go through the blob; JSON holds only small scalars,
// which nlohmann prints with round-trip precision anyway.
json encode_manifest(const Session& s, BlobWriter& blob)
{
    json m;
    m["format"] = "cubehex-session";
    m["cursor"] = to_string(s.cursor);
    m["seeds"] = s.seeds;
    m["transform"] = {{"center", blob.f64(s.transform.center.data(), 3)},
                      {"scale", blob.f64(&s.transform.scale, 1)}};
    if (s.input)
        m["input"] = {{"vertices", blob.points(s.input->vertices)}, {"tets", blob.cells(s.input->tets)}};
    if (s.deformation)
        m["deformation"] = {{"positions", blob.points(s.deformation->positions)},
                            {"weights", weights_json(s.deformation->weights)}};
    if (s.polycube)
    {
        std::vector<double> params;
        std::vector<int> locks;
        for (const Cuboid& c : s.polycube->cuboids)
        {
            params.insert(params.end(), {c.center.x(), c.center.y(), c.center.z(), c.half.x(), c.half.y(), c.half.z()});
            locks.push_back(c.locked ? 1 : 0);
        }
        m["polycube"] = {{"params", blob.f64(params.data(), params.size())},
                         {"locked", blob.i32(locks.data(), locks.size())},
                         {"log", s.polycube_log}};
    }
    if (s.voxels)
    {
        const VoxelGrid& g = *s.voxels;
        std::vector<VoxelKey> keys(g.occupied.begin(), g.occupied.end());
        json log = json::array();
        for (const VoxelEdit& e : g.log)
            log.push_back({{"add", e.add}, {"cells", blob.cells(e.changed)}});
        m["voxels"] = {{"cell_size", blob.f64(&g.cell_size, 1)},
                       {"origin", blob.f64(g.origin.data(), 3)},
                       {"occupied", blob.cells(keys)},
                       {"log", log}};
    }
    if (s.hex)
        m["hex"] = {{"vertices", blob.points(s.hex->vertices)},
                    {"hexes", blob.cells(s.hex->hexes)},
                    {"cell_size", blob.f64(&s.hex->cell_size, 1)},
                    {"topology_override", s.hex->topology_override}};
    if (s.pullback)
        m["pullback"] = {{"dprime", blob.points(s.pullback->dprime)},
                         {"m", blob.points(s.pullback->m)},
                         {"targets", blob.points(s.pullback->targets)},
                         {"weights", weights_json(s.pullback->weights)},
                         {"phase_done", s.pullback->phase_done}};
    if (s.quality)
    {
        const QualityState& q = *s.quality;
        std::vector<int> ids;
        Points pins;
        for (const auto& [id, p] : q.landmarks)
        {
            ids.push_back(id);
            pins.push_back(p);
        }
        m["quality"] = {{"positions", blob.points(q.positions)},
                        {"latent", blob.points(q.latent)},
                        {"weights", weights_json(q.weights)},
                        {"mode", to_string(q.mode)},
                        {"landmark_ids", blob.i32(ids.data(), ids.size())},
                        {"landmark_positions", blob.points(pins)}};
    }
    return m;
}

Session decode_manifest(const json& m, const BlobReader& blob)
{
    Session s;
    if (m.value("format", "") != "cubehex-session")
        throw Error(ErrorCode::Format, "manifest is not a cubehex session");
    s.cursor = stage_from_string(m.at("cursor").get<std::string>());
    s.seeds = m.at("seeds").get<std::map<std::string, std::uint64_t>>();
    {
        const json& t = m.at("transform");
        std::vector<double> c = blob.read<double>(t.at("center"), "f64");
        std::vector<double> sc = blob.read<double>(t.at("scale"), "f64");
        if (c.size() != 3 || sc.size() != 1)
            throw Error(ErrorCode::Format, "malformed transform");
        s.transform.center = Vec3(c[0], c[1], c[2]);
        s.transform.scale = sc[0];
    }
    if (m.contains("input"))
        s.input = TetMesh{blob.points(m["input"].at("vertices")), blob.cells<4>(m["input"].at("tets"))};
    if (m.contains("deformation"))
    {
        DeformationState d;
        d.positions = blob.points(m["deformation"].at("positions"));
        from_json_weights(m["deformation"].at("weights"), d.weights);
        s.deformation = std::move(d);
    }
    if (m.contains("polycube"))
    {
        const json& j = m["polycube"];
        std::vector<double> params = blob.read<double>(j.at("params"), "f64");
        std::vector<std::int32_t> locks = blob.read<std::int32_t>(j.at("locked"), "i32");
        if (params.size() != 6 * locks.size())
            throw Error(ErrorCode::Format, "polycube arrays disagree");
        PolyCube pc;
        for (size_t i = 0; i < locks.size(); ++i)
        {
            Cuboid c;
            c.center = Vec3(params[6 * i], params[6 * i + 1], params[6 * i + 2]);
            c.half = Vec3(params[6 * i + 3], params[6 * i + 4], params[6 * i + 5]);
            c.locked = locks[i] != 0;
            pc.cuboids.push_back(c);
        }
        s.polycube = std::move(pc);
        s.polycube_log = j.at("log").get<std::vector<std::string>>();
    }
    if (m.contains("voxels"))
    {
        const json& j = m["voxels"];
        VoxelGrid g;
        std::vector<double> cell = blob.read<double>(j.at("cell_size"), "f64");
        std::vector<double> origin = blob.read<double>(j.at("origin"), "f64");
        if (cell.size() != 1 || origin.size() != 3)
            throw Error(ErrorCode::Format, "malformed voxel grid");
        g.cell_size = cell[0];
        g.origin = Vec3(origin[0], origin[1], origin[2]);
        for (const auto& k : blob.cells<3>(j.at("occupied")))
            g.occupied.insert(k);
        for (const json& e : j.at("log"))
            g.log.push_back(VoxelEdit{e.at("add").get<bool>(), blob.cells<3>(e.at("cells"))});
        s.voxels = std::move(g);
    }
    if (m.contains("hex"))
    {
        const json& j = m["hex"];
        HexMesh h;
        h.vertices = blob.points(j.at("vertices"));
        h.hexes = blob.cells<8>(j.at("hexes"));
        std::vector<double> cell = blob.read<double>(j.at("cell_size"), "f64");
        if (cell.size() != 1)
            throw Error(ErrorCode::Format, "malformed hex mesh");
        h.cell_size = cell[0];
        h.topology_override = j.at("topology_override").get<bool>();
        s.hex = std::move(h);
    }
    if (m.contains("pullback"))
    {
        const json& j = m["pullback"];
        PullbackState p;
        p.dprime = blob.points(j.at("dprime"));
        p.m = blob.points(j.at("m"));
        p.targets = blob.points(j.at("targets"));
        from_json_weights(j.at("weights"), p.weights);
        p.phase_done = j.at("phase_done").get<int>();
        s.pullback = std::move(p);
    }
    if (m.contains("quality"))
    {
        const json& j = m["quality"];
        QualityState q;
        q.positions = blob.points(j.at("positions"));
        q.latent = blob.points(j.at("latent"));
        from_json_weights(j.at("weights"), q.weights);
        q.mode = surface_mode_from_string(j.at("mode").get<std::string>());
        std::vector<std::int32_t> ids = blob.read<std::int32_t>(j.at("landmark_ids"), "i32");
        Points pins = blob.points(j.at("landmark_positions"));
        if (ids.size() != pins.size())
            throw Error(ErrorCode::Format, "landmark arrays disagree");
        for (size_t i = 0; i < ids.size(); ++i)
            q.landmarks[ids[i]] = pins[i];
        s.quality = std::move(q);
    }
    return s;
}

std::uint32_t crc(const char* data, size_t n)
{
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0)
    {
        uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

} // namespace

std::string encode_session(const Session& session)
{
    session.check();
    BlobWriter blob;
    std::string manifest = encode_manifest(session, blob).dump();
    std::string out(magic, sizeof magic);
    put_le<std::uint32_t>(out, session_format_version);
    put_le<std::uint64_t>(out, manifest.size());
    out += manifest;
    put_le<std::uint64_t>(out, blob.bytes().size());
    out += blob.bytes();
    put_le<std::uint32_t>(out, crc(out.data(), out.size()));
    return out;
}

Session decode_session(const std::string& bytes)
{
    const size_t header = sizeof magic + 4;
    if (bytes.size() < header || std::memcmp(bytes.data(), magic, sizeof magic) != 0)
        throw Error(ErrorCode::Format, "not a cubehex session file");
    std::uint32_t version = get_le<std::uint32_t>(bytes.data() + sizeof magic);
    if (version != session_format_version)
        throw Error(ErrorCode::Format, "session format version " + std::to_string(version) +
                                           " is not supported (this build reads version " +
                                           std::to_string(session_format_version) + ")");
    auto truncated = [] { return Error(ErrorCode::Format, "session checksum failure: file is truncated"); };
    if (bytes.size() < header + 8 + 8 + 4)
        throw truncated();
    std::uint32_t stored = get_le<std::uint32_t>(bytes.data() + bytes.size() - 4);
    if (crc(bytes.data(), bytes.size() - 4) != stored)
        throw Error(ErrorCode::Format, "session checksum failure");

    size_t pos = header;
    std::uint64_t manifest_size = get_le<std::uint64_t>(bytes.data() + pos);
    pos += 8;
    if (manifest_size > bytes.size() - pos - 12)
        throw truncated();
    std::string_view manifest(bytes.data() + pos, manifest_size);
    pos += manifest_size;
    std::uint64_t blob_size = get_le<std::uint64_t>(bytes.data() + pos);
    pos += 8;
    if (blob_size != bytes.size() - pos - 4)
        throw Error(ErrorCode::Format, "session blob size does not match the file");
    BlobReader blob(std::string_view(bytes.data() + pos, blob_size));

    Session s;
    try
    {
        s = decode_manifest(json::parse(manifest), blob);
    }
    catch (const json::exception& e)
    {
        throw Error(ErrorCode::Format, std::string("malformed session manifest: ") + e.what());
    }
    s.check();
    return s;
}

void save_session(const std::filesystem::path& path, const Session& session)
{
    write_file(path, encode_session(session));
}

Session load_session(const std::filesystem::path& path)
{
    std::string bytes = read_file(path);
    try
    {
        return decode_session(bytes);
    }
    catch (const Error& e)
    {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::string format_report(const QualityReport& r, int n_hexes)
{
    std::ostringstream out;
    out << std::fixed;
    out << "#hex      " << n_hexes << '\n';
    out << std::setprecision(4);
    out << "J min     " << r.j_min << '\n';
    out << "J avg     " << r.j_avg << " +- " << r.j_std << '\n';
    out << std::scientific << std::setprecision(3);
    out << "V min     " << r.v_min << '\n';
    out << "V avg     " << r.v_avg << " +- " << r.v_std << '\n';
    out << "d max     " << r.d_max << '\n';
    out << "d avg     " << r.d_avg << '\n';
    out << "inverted  " << r.inverted << '\n';
    return out.str();
}

std::string report_json(const QualityReport& r, int n_hexes)
{
    json j = {{"hexes", n_hexes}, {"j_min", r.j_min}, {"j_avg", r.j_avg}, {"j_std", r.j_std},
              {"v_min", r.v_min}, {"v_avg", r.v_avg}, {"v_std", r.v_std}, {"d_max", r.d_max},
              {"d_avg", r.d_avg}, {"inverted", r.inverted}};
    return j.dump();
}

} // namespace cubehex
