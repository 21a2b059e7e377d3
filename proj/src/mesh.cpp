#include "cubehex/mesh.hpp"

#include "cubehex/error.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

namespace cubehex
{

const char* to_string(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::InvalidArgument:
        return "invalid-argument";
    case ErrorCode::InvalidMesh:
        return "invalid-mesh";
    case ErrorCode::Io:
        return "io";
    case ErrorCode::Format:
        return "format";
    case ErrorCode::Numerical:
        return "numerical";
    case ErrorCode::Config:
        return "config";
    case ErrorCode::State:
        return "state";
    }
    return "unknown";
}

namespace
{

constexpr std::array<std::array<int, 3>, 4> kTetFaces = {{{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}}};
constexpr std::array<std::array<int, 4>, 6> kHexFaces = {
    {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}}};

template <size_t N>
struct ArrayHash
{
    size_t operator()(const std::array<int, N>& a) const
    {
        size_t h = 1469598103934665603ull;
        for (int v : a)
        {
            h ^= static_cast<size_t>(static_cast<unsigned>(v));
            h *= 1099511628211ull;
        }
        return h;
    }
};

template <size_t N>
std::array<int, N> sorted(std::array<int, N> a)
{
    std::sort(a.begin(), a.end());
    return a;
}

template <size_t K>
void check_closed(const std::vector<std::array<int, K>>& faces)
{
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& f : faces)
        for (size_t i = 0; i < K; ++i)
        {
            int a = f[i], b = f[(i + 1) % K];
            ++edge_count[{std::min(a, b), std::max(a, b)}];
        }
    for (const auto& [edge, count] : edge_count)
    {
        if (count != 2)
        {
            std::ostringstream msg;
            msg << (count > 2 ? "non-manifold" : "open") << " boundary edge (" << edge.first << ", "
                << edge.second << ") used by " << count << " boundary faces";
            throw Error(ErrorCode::InvalidMesh, msg.str());
        }
    }
}

template <size_t CellN, size_t FaceN, size_t NumFaces>
std::vector<std::array<int, FaceN>> boundary_faces(const std::vector<std::array<int, CellN>>& cells,
                                                   const std::array<std::array<int, FaceN>, NumFaces>& local_faces,
                                                   std::vector<int>& face_cell)
{
    std::unordered_map<std::array<int, FaceN>, int, ArrayHash<FaceN>> count;
    count.reserve(cells.size() * NumFaces);
    for (const auto& cell : cells)
        for (const auto& lf : local_faces)
        {
            std::array<int, FaceN> f;
            for (size_t i = 0; i < FaceN; ++i)
                f[i] = cell[static_cast<size_t>(lf[i])];
            ++count[sorted(f)];
        }

    std::vector<std::array<int, FaceN>> faces;
    for (size_t c = 0; c < cells.size(); ++c)
        for (const auto& lf : local_faces)
        {
            std::array<int, FaceN> f;
            for (size_t i = 0; i < FaceN; ++i)
                f[i] = cells[c][static_cast<size_t>(lf[i])];
            int n = count[sorted(f)];
            if (n > 2)
            {
                std::ostringstream msg;
                msg << "face shared by " << n << " cells (cell " << c << ")";
                throw Error(ErrorCode::InvalidMesh, msg.str());
            }
            if (n == 1)
            {
                faces.push_back(f);
                face_cell.push_back(static_cast<int>(c));
            }
        }
    return faces;
}

// Renumbers face vertices compactly in increasing volume-index order.
template <size_t N>
void compact(const Points& volume_vertices, std::vector<std::array<int, N>>& faces, Points& vertices,
             std::vector<int>& volume_index)
{
    std::vector<int> local(volume_vertices.size(), -1);
    for (const auto& f : faces)
        for (int v : f)
            local[static_cast<size_t>(v)] = 0;
    volume_index.clear();
    for (size_t v = 0; v < local.size(); ++v)
        if (local[v] == 0)
        {
            local[v] = static_cast<int>(volume_index.size());
            volume_index.push_back(static_cast<int>(v));
        }
    vertices.resize(volume_index.size());
    for (size_t i = 0; i < volume_index.size(); ++i)
        vertices[i] = volume_vertices[static_cast<size_t>(volume_index[i])];
    for (auto& f : faces)
        for (int& v : f)
            v = local[static_cast<size_t>(v)];
}

template <size_t N>
void check_indices(const std::vector<std::array<int, N>>& cells, size_t n_vertices, const char* what)
{
    for (size_t c = 0; c < cells.size(); ++c)
    {
        for (int v : cells[c])
            if (v < 0 || static_cast<size_t>(v) >= n_vertices)
            {
                std::ostringstream msg;
                msg << what << " " << c << " references vertex " << v << " (mesh has " << n_vertices
                    << " vertices)";
                throw Error(ErrorCode::InvalidMesh, msg.str());
            }
        auto s = sorted(cells[c]);
        if (std::adjacent_find(s.begin(), s.end()) != s.end())
        {
            std::ostringstream msg;
            msg << what << " " << c << " has repeated corners";
            throw Error(ErrorCode::InvalidMesh, msg.str());
        }
    }
}

} // namespace

void validate(const TetMesh& mesh)
{
    check_indices(mesh.tets, mesh.vertices.size(), "tet");
    for (size_t t = 0; t < mesh.tets.size(); ++t)
    {
        const auto& tet = mesh.tets[t];
        double vol = tet_volume(mesh.vertices[tet[0]], mesh.vertices[tet[1]], mesh.vertices[tet[2]],
                                mesh.vertices[tet[3]]);
        if (!(vol > 0.0))
        {
            std::ostringstream msg;
            msg << "tet " << t << " has non-positive volume " << vol;
            throw Error(ErrorCode::InvalidMesh, msg.str());
        }
    }
}

void validate(const HexMesh& mesh)
{
    check_indices(mesh.hexes, mesh.vertices.size(), "hex");
    if (!(mesh.cell_size > 0.0))
        throw Error(ErrorCode::InvalidMesh, "hex mesh cell size must be positive");
}

TriSurface extract_boundary(const TetMesh& mesh)
{
    TriSurface surface;
    surface.triangles = boundary_faces(mesh.tets, kTetFaces, surface.face_cell);
    check_closed(surface.triangles);
    compact(mesh.vertices, surface.triangles, surface.vertices, surface.volume_index);
    return surface;
}

QuadSurface extract_boundary(const HexMesh& mesh)
{
    QuadSurface surface;
    surface.quads = boundary_faces(mesh.hexes, kHexFaces, surface.face_cell);
    check_closed(surface.quads);
    compact(mesh.vertices, surface.quads, surface.vertices, surface.volume_index);
    return surface;
}

TriSurface triangulate(const QuadSurface& surface)
{
    TriSurface tri;
    tri.vertices = surface.vertices;
    tri.volume_index = surface.volume_index;
    tri.triangles.reserve(2 * surface.quads.size());
    for (size_t i = 0; i < surface.quads.size(); ++i)
    {
        const auto& q = surface.quads[i];
        tri.triangles.push_back({q[0], q[1], q[2]});
        tri.triangles.push_back({q[0], q[2], q[3]});
        if (!surface.face_cell.empty())
        {
            tri.face_cell.push_back(surface.face_cell[i]);
            tri.face_cell.push_back(surface.face_cell[i]);
        }
    }
    return tri;
}

std::vector<std::vector<int>> vertex_neighbors(const QuadSurface& surface)
{
    std::vector<std::vector<int>> nbrs(surface.vertices.size());
    for (const auto& q : surface.quads)
        for (size_t i = 0; i < 4; ++i)
        {
            int a = q[i], b = q[(i + 1) % 4];
            nbrs[static_cast<size_t>(a)].push_back(b);
            nbrs[static_cast<size_t>(b)].push_back(a);
        }
    for (auto& n : nbrs)
    {
        std::sort(n.begin(), n.end());
        n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    return nbrs;
}

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d)
{
    return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c)
{
    return 0.5 * (b - a).cross(c - a).norm();
}

namespace
{

Vec3 centroid(const Points& v, const std::array<int, 8>& hex)
{
    Vec3 c = Vec3::Zero();
    for (int i : hex)
        c += v[static_cast<size_t>(i)];
    return c / 8.0;
}

double quad_area(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3)
{
    Vec3 f = (p0 + p1 + p2 + p3) / 4.0;
    return triangle_area(p0, p1, f) + triangle_area(p1, p2, f) + triangle_area(p2, p3, f) +
           triangle_area(p3, p0, f);
}

} // namespace

double hex_volume(const Points& v, const std::array<int, 8>& hex)
{
    Vec3 c = centroid(v, hex);
    double vol = 0.0;
    for (const auto& lf : kHexFaces)
    {
        std::array<Vec3, 4> p;
        for (size_t i = 0; i < 4; ++i)
            p[i] = v[static_cast<size_t>(hex[static_cast<size_t>(lf[i])])];
        Vec3 f = (p[0] + p[1] + p[2] + p[3]) / 4.0;
        for (size_t i = 0; i < 4; ++i)
            vol += tet_volume(c, p[i], p[(i + 1) % 4], f);
    }
    return vol;
}

Measures measures(const TetMesh& mesh)
{
    Measures m;
    m.cell_volumes.reserve(mesh.tets.size());
    for (const auto& t : mesh.tets)
    {
        double vol = tet_volume(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]], mesh.vertices[t[3]]);
        m.cell_volumes.push_back(vol);
        m.total_volume += vol;
    }
    TriSurface s = extract_boundary(mesh);
    for (const auto& f : s.triangles)
    {
        double a = triangle_area(s.vertices[f[0]], s.vertices[f[1]], s.vertices[f[2]]);
        m.face_areas.push_back(a);
        m.total_area += a;
    }
    return m;
}

Measures measures(const HexMesh& mesh)
{
    Measures m;
    for (const auto& h : mesh.hexes)
    {
        double vol = hex_volume(mesh.vertices, h);
        m.cell_volumes.push_back(vol);
        m.total_volume += vol;
    }
    QuadSurface s = extract_boundary(mesh);
    for (const auto& q : s.quads)
    {
        double a = quad_area(s.vertices[q[0]], s.vertices[q[1]], s.vertices[q[2]], s.vertices[q[3]]);
        m.face_areas.push_back(a);
        m.total_area += a;
    }
    return m;
}

std::vector<TetElement> CornerTetSet::elements() const
{
    std::vector<TetElement> out;
    out.reserve(tets.size());
    for (const auto& t : tets)
        out.push_back(t.element);
    return out;
}

const std::array<std::array<int, 4>, 8>& corner_tet_pattern()
{
    static const std::array<std::array<int, 4>, 8> pattern = [] {
        std::array<std::array<int, 4>, 8> p{};
        for (int i = 0; i < 4; ++i)
        {
            p[static_cast<size_t>(i)] = {i, (i + 1) % 4, (i + 3) % 4, i + 4};
            p[static_cast<size_t>(i + 4)] = {i + 4, (i + 3) % 4 + 4, (i + 1) % 4 + 4, i};
        }
        return p;
    }();
    return pattern;
}

HexMesh unit_cube_hex()
{
    HexMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0),
                  Vec3(0, 0, 1), Vec3(1, 0, 1), Vec3(1, 1, 1), Vec3(0, 1, 1)};
    m.hexes = {{0, 1, 2, 3, 4, 5, 6, 7}};
    m.cell_size = 1.0;
    return m;
}

CornerTetSet corner_tets(const HexMesh& mesh)
{
    // Right-angle frames read off the reference cube; all have determinant +1.
    static const std::array<Mat3, 8> frames = [] {
        HexMesh cube = unit_cube_hex();
        std::array<Mat3, 8> f;
        for (size_t c = 0; c < 8; ++c)
            f[c] = edge_matrix(cube.vertices, corner_tet_pattern()[c]);
        return f;
    }();

    CornerTetSet set;
    set.tets.reserve(8 * mesh.hexes.size());
    const double inv_size = 1.0 / mesh.cell_size;
    for (size_t h = 0; h < mesh.hexes.size(); ++h)
        for (size_t c = 0; c < 8; ++c)
        {
            CornerTet ct;
            ct.hex = static_cast<int>(h);
            ct.corner = static_cast<int>(c);
            for (size_t k = 0; k < 4; ++k)
                ct.element.vertices[k] = mesh.hexes[h][static_cast<size_t>(corner_tet_pattern()[c][k])];
            // Frames are orthonormal, so the inverse is the scaled transpose.
            ct.element.rest_inverse = frames[c].transpose() * inv_size;
            set.tets.push_back(ct);
        }
    return set;
}

std::vector<TetElement> tet_elements(const TetMesh& mesh)
{
    std::vector<TetElement> out;
    out.reserve(mesh.tets.size());
    for (size_t t = 0; t < mesh.tets.size(); ++t)
    {
        Mat3 rest = edge_matrix(mesh.vertices, mesh.tets[t]);
        double det = rest.determinant();
        double scale = rest.colwise().norm().prod();
        if (!(std::abs(det) > 1e-14 * scale) || scale == 0.0)
        {
            std::ostringstream msg;
            msg << "tet " << t << " has a degenerate rest shape";
            throw Error(ErrorCode::InvalidMesh, msg.str());
        }
        out.push_back({mesh.tets[t], rest.inverse()});
    }
    return out;
}

Mat3 edge_matrix(const Points& p, const std::array<int, 4>& t)
{
    Mat3 d;
    const Vec3& o = p[static_cast<size_t>(t[0])];
    d.col(0) = p[static_cast<size_t>(t[1])] - o;
    d.col(1) = p[static_cast<size_t>(t[2])] - o;
    d.col(2) = p[static_cast<size_t>(t[3])] - o;
    return d;
}

Mat3 jacobian(const Points& positions, const TetElement& element)
{
    return edge_matrix(positions, element.vertices) * element.rest_inverse;
}

std::vector<Mat3> jacobians(const Points& positions, std::span<const TetElement> elements)
{
    std::vector<Mat3> out;
    out.reserve(elements.size());
    for (const auto& e : elements)
        out.push_back(jacobian(positions, e));
    return out;
}

void accumulate_jacobian_gradient(const TetElement& element, const Mat3& dJ, std::span<Vec3> gradient)
{
    Mat3 g = dJ * element.rest_inverse.transpose();
    const auto& v = element.vertices;
    gradient[static_cast<size_t>(v[1])] += g.col(0);
    gradient[static_cast<size_t>(v[2])] += g.col(1);
    gradient[static_cast<size_t>(v[3])] += g.col(2);
    gradient[static_cast<size_t>(v[0])] -= g.col(0) + g.col(1) + g.col(2);
}

} // namespace cubehex
