#include "cubehex/geom_query.hpp"

#include "cubehex/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace cubehex
{

namespace
{

struct SegmentFoot
{
    Vec3 point;
    double t;
    double sq_distance;
};

SegmentFoot project_to_segment(const Vec3& p, const Vec3& a, const Vec3& b)
{
    Vec3 d = b - a;
    double len2 = d.squaredNorm();
    double t = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
    Vec3 q = a + t * d;
    return {q, t, (p - q).squaredNorm()};
}

ProjectionResult clamp_to_edges(const Vec3& p, const std::array<const Vec3*, 3>& v)
{
    ProjectionResult best;
    best.sq_distance = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i)
    {
        int j = (i + 1) % 3;
        SegmentFoot foot = project_to_segment(p, *v[static_cast<size_t>(i)], *v[static_cast<size_t>(j)]);
        if (!(foot.sq_distance < best.sq_distance))
            continue;
        best.sq_distance = foot.sq_distance;
        best.point = foot.point;
        best.weights = {0.0, 0.0, 0.0, 0.0};
        if (foot.t <= 0.0)
        {
            best.region = ProjectionRegion::Vertex;
            best.feature = i;
            best.weights[static_cast<size_t>(i)] = 1.0;
            best.point = *v[static_cast<size_t>(i)];
        }
        else if (foot.t >= 1.0)
        {
            best.region = ProjectionRegion::Vertex;
            best.feature = j;
            best.weights[static_cast<size_t>(j)] = 1.0;
            best.point = *v[static_cast<size_t>(j)];
        }
        else
        {
            best.region = ProjectionRegion::Edge;
            best.feature = i;
            best.weights[static_cast<size_t>(i)] = 1.0 - foot.t;
            best.weights[static_cast<size_t>(j)] = foot.t;
        }
    }
    return best;
}

// Rows of the constant map p -> (w1, w2) for a triangle; false if degenerate.
bool barycentric_rows(const Vec3& e1, const Vec3& e2, Vec3& g1, Vec3& g2)
{
    double l1 = e1.squaredNorm(), l2 = e2.squaredNorm(), c = e1.dot(e2);
    if (!(l1 > 0.0) || !(l2 > 0.0))
        return false;
    double den1 = l1 - c * c / l2;
    double den2 = l2 - c * c / l1;
    if (!(den1 > 1e-14 * l1) || !(den2 > 1e-14 * l2))
        return false;
    g1 = (e1 - (c / l2) * e2) / den1;
    g2 = (e2 - (c / l1) * e1) / den2;
    return true;
}

ProjectionResult project_with_rows(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& g1,
                                   const Vec3& g2)
{
    Vec3 r = p - a;
    double w1 = g1.dot(r), w2 = g2.dot(r), w0 = 1.0 - w1 - w2;
    if (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0)
    {
        ProjectionResult out;
        out.point = a + w1 * (b - a) + w2 * (c - a);
        out.weights = {w0, w1, w2, 0.0};
        out.sq_distance = (p - out.point).squaredNorm();
        out.region = ProjectionRegion::Interior;
        return out;
    }
    return clamp_to_edges(p, {&a, &b, &c});
}

Box3 triangle_box(const Vec3& a, const Vec3& b, const Vec3& c)
{
    Box3 box(a);
    box.extend(b);
    box.extend(c);
    return box;
}

} // namespace

ProjectionResult project_to_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    Vec3 g1, g2;
    if (!barycentric_rows(b - a, c - a, g1, g2))
        return clamp_to_edges(p, {&a, &b, &c});
    return project_with_rows(p, a, b, c, g1, g2);
}

SurfaceProjector::SurfaceProjector(TriSurface surface) : surface_(std::move(surface))
{
    prepare();
    for (size_t t = 0; t < data_.size(); ++t)
        if (data_[t].degenerate)
        {
            std::ostringstream msg;
            msg << "skipping zero-area triangle " << t;
            notices_.push_back(msg.str());
        }
    if (active_.empty())
        throw Error(ErrorCode::InvalidMesh, "surface has no non-degenerate triangle");
    rebuild();
}

void SurfaceProjector::prepare()
{
    data_.assign(surface_.triangles.size(), {});
    active_.clear();
    for (size_t t = 0; t < surface_.triangles.size(); ++t)
    {
        const auto& tri = surface_.triangles[t];
        const Vec3& a = surface_.vertices[static_cast<size_t>(tri[0])];
        Vec3 e1 = surface_.vertices[static_cast<size_t>(tri[1])] - a;
        Vec3 e2 = surface_.vertices[static_cast<size_t>(tri[2])] - a;
        TriangleData& d = data_[t];
        Vec3 n = e1.cross(e2);
        d.degenerate = !barycentric_rows(e1, e2, d.g1, d.g2) || !(n.norm() > 0.0);
        if (!d.degenerate)
        {
            d.normal = n.normalized();
            active_.push_back(static_cast<int>(t));
        }
        else
        {
            d.normal = Vec3::Zero();
        }
    }
}

std::vector<Box3> SurfaceProjector::boxes() const
{
    std::vector<Box3> out;
    out.reserve(active_.size());
    for (int t : active_)
    {
        const auto& tri = surface_.triangles[static_cast<size_t>(t)];
        out.push_back(triangle_box(surface_.vertices[static_cast<size_t>(tri[0])],
                                   surface_.vertices[static_cast<size_t>(tri[1])],
                                   surface_.vertices[static_cast<size_t>(tri[2])]));
    }
    return out;
}

void SurfaceProjector::rebuild()
{
    bvh_.build(boxes());
    built_positions_ = surface_.vertices;
    double total = 0.0;
    size_t count = 0;
    for (int t : active_)
    {
        const auto& tri = surface_.triangles[static_cast<size_t>(t)];
        for (int i = 0; i < 3; ++i)
        {
            total += (surface_.vertices[static_cast<size_t>(tri[static_cast<size_t>(i)])] -
                      surface_.vertices[static_cast<size_t>(tri[static_cast<size_t>((i + 1) % 3)])])
                         .norm();
            ++count;
        }
    }
    rebuild_threshold_ = count > 0 ? 0.1 * total / static_cast<double>(count) : 0.0;
    ++rebuilds_;
}

void SurfaceProjector::update_positions(const Points& vertices)
{
    if (vertices.size() != surface_.vertices.size())
        throw Error(ErrorCode::InvalidArgument, "surface vertex count changed");
    surface_.vertices = vertices;
    std::vector<int> previous = active_;
    prepare();
    if (active_.empty())
        throw Error(ErrorCode::InvalidMesh, "surface has no non-degenerate triangle");
    double max_move = 0.0;
    for (size_t i = 0; i < vertices.size(); ++i)
        max_move = std::max(max_move, (vertices[i] - built_positions_[i]).norm());
    if (previous != active_ || max_move > rebuild_threshold_)
        rebuild();
    else
        bvh_.refit(boxes());
}

ProjectionResult SurfaceProjector::project(const Vec3& p) const
{
    auto project_one = [&](int t) {
        const auto& tri = surface_.triangles[static_cast<size_t>(t)];
        const TriangleData& d = data_[static_cast<size_t>(t)];
        return project_with_rows(p, surface_.vertices[static_cast<size_t>(tri[0])],
                                 surface_.vertices[static_cast<size_t>(tri[1])],
                                 surface_.vertices[static_cast<size_t>(tri[2])], d.g1, d.g2);
    };
    double best = std::numeric_limits<double>::infinity();
    int best_prim = -1;
    bvh_.nearest(
        p, [&](int prim) { return project_one(active_[static_cast<size_t>(prim)]).sq_distance; }, best, best_prim);
    ProjectionResult r = project_one(active_[static_cast<size_t>(best_prim)]);
    r.element = active_[static_cast<size_t>(best_prim)];
    return r;
}

ProjectionGradients SurfaceProjector::gradients(const Vec3& p, const ProjectionResult& r) const
{
    const auto& tri = surface_.triangles[static_cast<size_t>(r.element)];
    const TriangleData& d = data_[static_cast<size_t>(r.element)];
    std::array<Vec3, 3> v = {surface_.vertices[static_cast<size_t>(tri[0])],
                             surface_.vertices[static_cast<size_t>(tri[1])],
                             surface_.vertices[static_cast<size_t>(tri[2])]};
    ProjectionGradients g;
    g.dq_dp_plane = Mat3::Identity() - d.normal * d.normal.transpose();
    switch (r.region)
    {
    case ProjectionRegion::Interior:
        g.dq_dp = (v[1] - v[0]) * d.g1.transpose() + (v[2] - v[0]) * d.g2.transpose();
        break;
    case ProjectionRegion::Edge:
    {
        Vec3 dir = v[static_cast<size_t>((r.feature + 1) % 3)] - v[static_cast<size_t>(r.feature)];
        g.dq_dp = dir * dir.transpose() / dir.squaredNorm();
        break;
    }
    case ProjectionRegion::Vertex:
        g.dq_dp = Mat3::Zero();
        break;
    }
    g.use_plane = r.region != ProjectionRegion::Interior;
    for (size_t i = 0; i < 3; ++i)
        g.dd_dv[i] = 2.0 * r.weights[i] * (r.point - p);
    return g;
}

TetMeshQuery::TetMeshQuery(const TetMesh& mesh) : mesh_(mesh)
{
    validate(mesh_);
    normal_inverse_.reserve(mesh_.tets.size());
    edge_transpose_.reserve(mesh_.tets.size());
    std::vector<Box3> boxes;
    boxes.reserve(mesh_.tets.size());
    for (size_t t = 0; t < mesh_.tets.size(); ++t)
    {
        Mat3 e = edge_matrix(mesh_.vertices, mesh_.tets[t]);
        Mat3 a = e.transpose() * e;
        double det = a.determinant();
        if (!(std::abs(det) > 1e-30) || !std::isfinite(det))
        {
            std::ostringstream msg;
            msg << "tet " << t << " has a singular projection system";
            throw Error(ErrorCode::InvalidMesh, msg.str());
        }
        normal_inverse_.push_back(a.inverse());
        edge_transpose_.push_back(e.transpose());
        Box3 box;
        for (int v : mesh_.tets[t])
            box.extend(mesh_.vertices[static_cast<size_t>(v)]);
        boxes.push_back(box);
    }
    bvh_.build(std::move(boxes));
    boundary_ = SurfaceProjector(extract_boundary(mesh_));
}

std::array<double, 4> TetMeshQuery::barycentric(int tet, const Vec3& p) const
{
    const Vec3& v0 = mesh_.vertices[static_cast<size_t>(mesh_.tets[static_cast<size_t>(tet)][0])];
    Vec3 w = normal_inverse_[static_cast<size_t>(tet)] * (edge_transpose_[static_cast<size_t>(tet)] * (p - v0));
    return {1.0 - w.sum(), w[0], w[1], w[2]};
}

int TetMeshQuery::locate(const Vec3& p, std::array<double, 4>* weights) const
{
    int found = -1;
    std::array<double, 4> found_w{};
    bvh_.visit_containing(p, 0.0, [&](int t) {
        if (found >= 0 && t > found)
            return;
        auto w = barycentric(t, p);
        if (w[0] >= -inside_tolerance_ && w[1] >= -inside_tolerance_ && w[2] >= -inside_tolerance_ &&
            w[3] >= -inside_tolerance_)
        {
            found = t;
            found_w = w;
        }
    });
    if (weights && found >= 0)
        *weights = found_w;
    return found;
}

ProjectionResult TetMeshQuery::project(const Vec3& p) const
{
    ProjectionResult out;
    std::array<double, 4> w;
    int tet = locate(p, &w);
    if (tet >= 0)
    {
        out.element = tet;
        out.weights = w;
        out.point = p;
        out.sq_distance = 0.0;
        out.region = ProjectionRegion::Interior;
        return out;
    }
    ProjectionResult r = boundary_.project(p);
    const TriSurface& s = boundary_.surface();
    int owner = s.face_cell[static_cast<size_t>(r.element)];
    const auto& tv = mesh_.tets[static_cast<size_t>(owner)];
    out.element = owner;
    out.point = r.point;
    out.sq_distance = r.sq_distance;
    out.region = r.region;
    out.feature = r.feature;
    out.weights = {0.0, 0.0, 0.0, 0.0};
    const auto& tri = s.triangles[static_cast<size_t>(r.element)];
    for (size_t i = 0; i < 3; ++i)
    {
        int volume_vertex = s.volume_index[static_cast<size_t>(tri[i])];
        for (size_t k = 0; k < 4; ++k)
            if (tv[k] == volume_vertex)
                out.weights[k] = r.weights[i];
    }
    return out;
}

SignedDistanceSample signed_distance(const Vec3& p, const TetMeshQuery& query)
{
    ProjectionResult r = query.boundary().project(p);
    double dist = std::sqrt(r.sq_distance);
    bool inside = query.contains(p);
    SignedDistanceSample s;
    s.value = inside ? -dist : dist;
    if (dist > 0.0)
        s.gradient = (p - r.point) / dist * (inside ? -1.0 : 1.0);
    return s;
}

SurfaceSamples sample_surface(const TriSurface& surface, int n, std::uint64_t seed)
{
    if (n < 1)
        throw Error(ErrorCode::InvalidArgument, "sample count must be at least 1");
    if (surface.triangles.empty())
        throw Error(ErrorCode::InvalidMesh, "cannot sample an empty surface");
    std::vector<double> cumulative(surface.triangles.size());
    double total = 0.0;
    for (size_t t = 0; t < surface.triangles.size(); ++t)
    {
        const auto& tri = surface.triangles[t];
        total += triangle_area(surface.vertices[static_cast<size_t>(tri[0])], surface.vertices[static_cast<size_t>(tri[1])],
                               surface.vertices[static_cast<size_t>(tri[2])]);
        cumulative[t] = total;
    }
    if (!(total > 0.0))
        throw Error(ErrorCode::InvalidMesh, "cannot sample a zero-area surface");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SurfaceSamples out;
    out.points.reserve(static_cast<size_t>(n));
    out.faces.reserve(static_cast<size_t>(n));
    out.weights.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
    {
        double u = unit(rng) * total;
        size_t t = static_cast<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        t = std::min(t, cumulative.size() - 1);
        double s = std::sqrt(unit(rng)), r2 = unit(rng);
        std::array<double, 3> w = {1.0 - s, s * (1.0 - r2), s * r2};
        const auto& tri = surface.triangles[t];
        Vec3 point = w[0] * surface.vertices[static_cast<size_t>(tri[0])] +
                     w[1] * surface.vertices[static_cast<size_t>(tri[1])] +
                     w[2] * surface.vertices[static_cast<size_t>(tri[2])];
        out.points.push_back(point);
        out.faces.push_back(static_cast<int>(t));
        out.weights.push_back(w);
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index)
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace cubehex
