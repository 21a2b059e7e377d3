#include "cubehex/deform.hpp"

#include "cubehex/error.hpp"
#include "cubehex/parallel.hpp"

#include <cmath>
#include <map>

namespace cubehex
{

double regularizer(double x, double eps)
{
    double s = std::sqrt(x * x + eps * eps);
    if (x >= 0.0)
        return 0.5 * (x + s);
    return 0.5 * eps * eps / (s - x);
}

double regularizer_derivative(double x, double eps)
{
    return regularizer(x, eps) / std::sqrt(x * x + eps * eps);
}

namespace
{

Mat3 cofactor(const Mat3& J)
{
    Mat3 c;
    c.col(0) = J.col(1).cross(J.col(2));
    c.col(1) = J.col(2).cross(J.col(0));
    c.col(2) = J.col(0).cross(J.col(1));
    return c;
}

} // namespace

double iso_summand(const Mat3& J, const IsoWeights& w, Mat3* dJ)
{
    double det = J.determinant();
    double tr = J.squaredNorm();
    double R = regularizer(det, w.eps);
    double R23 = std::cbrt(R * R);
    double value = w.angle * tr / R23 + w.vol * (det * det + 1.0) / R;
    if (dJ)
    {
        double dR = regularizer_derivative(det, w.eps);
        double ddet = w.angle * (-2.0 / 3.0) * tr / (R23 * R) * dR +
                      w.vol * (2.0 * det / R - (det * det + 1.0) * dR / (R * R));
        *dJ = (2.0 * w.angle / R23) * J + ddet * cofactor(J);
    }
    return value;
}

std::vector<double> iso_summands(const Points& positions, std::span<const TetElement> elements, const IsoWeights& w,
                                 std::vector<Mat3>* dS)
{
    std::vector<double> values(elements.size());
    if (dS)
        dS->resize(elements.size());
    parallel_for(elements.size(), [&](std::size_t t) {
        Mat3 J = jacobian(positions, elements[t]);
        values[t] = iso_summand(J, w, dS ? &(*dS)[t] : nullptr);
    });
    return values;
}

double energy_iso(const Points& positions, std::span<const TetElement> elements, std::span<const double> weights,
                  const IsoWeights& w, std::span<Vec3> grad)
{
    std::vector<Mat3> dS;
    std::vector<double> values = iso_summands(positions, elements, w, grad.empty() ? nullptr : &dS);
    double total = 0.0;
    for (std::size_t t = 0; t < elements.size(); ++t)
    {
        double wt = weights.empty() ? 1.0 : weights[t];
        total += wt * values[t];
        if (!grad.empty())
            accumulate_jacobian_gradient(elements[t], wt * dS[t], grad);
    }
    return total;
}

double min_jacobian_det(const Points& positions, std::span<const TetElement> elements)
{
    double m = std::numeric_limits<double>::infinity();
    for (const auto& e : elements)
        m = std::min(m, jacobian(positions, e).determinant());
    return m;
}

double phi(const Vec3& n)
{
    Vec3 s = n.cwiseAbs2();
    return s.x() * s.y() + s.y() * s.z() + s.z() * s.x();
}

Vec3 phi_gradient(const Vec3& n)
{
    Vec3 s = n.cwiseAbs2();
    return Vec3(2.0 * n.x() * (s.y() + s.z()), 2.0 * n.y() * (s.z() + s.x()), 2.0 * n.z() * (s.x() + s.y()));
}

AlignmentData prepare_alignment(const TetMesh& rest)
{
    AlignmentData data;
    data.surface = extract_boundary(rest);
    const auto& tris = data.surface.triangles;
    const auto& sv = data.surface.vertices;
    std::vector<double> area(tris.size());
    double total = 0.0;
    for (size_t f = 0; f < tris.size(); ++f)
    {
        area[f] = triangle_area(sv[static_cast<size_t>(tris[f][0])], sv[static_cast<size_t>(tris[f][1])],
                                sv[static_cast<size_t>(tris[f][2])]);
        total += area[f];
    }
    if (!(total > 0.0))
        throw Error(ErrorCode::InvalidMesh, "boundary surface has zero area");
    data.area_weight.resize(tris.size());
    for (size_t f = 0; f < tris.size(); ++f)
        data.area_weight[f] = area[f] / total;

    // Faces are adjacent when they share an edge; the surface is closed so every edge has two.
    std::map<std::pair<int, int>, int> first_face;
    for (size_t f = 0; f < tris.size(); ++f)
        for (int k = 0; k < 3; ++k)
        {
            int a = tris[f][static_cast<size_t>(k)], b = tris[f][static_cast<size_t>((k + 1) % 3)];
            auto key = std::minmax(a, b);
            auto [it, inserted] = first_face.emplace(std::pair<int, int>(key.first, key.second), static_cast<int>(f));
            if (!inserted)
            {
                int g = it->second;
                data.pairs.push_back({g, static_cast<int>(f)});
                data.pair_weight.push_back((area[static_cast<size_t>(g)] + area[f]) / (3.0 * total));
            }
        }
    return data;
}

namespace
{

constexpr double kNormalGuard = 1e-12;

struct FaceNormal
{
    Vec3 unit = Vec3::Zero();
    Vec3 e1, e2;
    double length = 0.0;
};

FaceNormal face_normal(const Points& positions, const AlignmentData& data, size_t f)
{
    const auto& tri = data.surface.triangles[f];
    const auto& vi = data.surface.volume_index;
    const Vec3& v0 = positions[static_cast<size_t>(vi[static_cast<size_t>(tri[0])])];
    FaceNormal n;
    n.e1 = positions[static_cast<size_t>(vi[static_cast<size_t>(tri[1])])] - v0;
    n.e2 = positions[static_cast<size_t>(vi[static_cast<size_t>(tri[2])])] - v0;
    Vec3 raw = n.e1.cross(n.e2);
    n.length = raw.norm();
    n.unit = raw / std::max(n.length, kNormalGuard);
    return n;
}

} // namespace

AlignTerms energy_align(const Points& positions, const AlignmentData& data, double lambda_cube, double lambda_smooth,
                        std::span<Vec3> grad)
{
    const size_t nf = data.surface.triangles.size();
    std::vector<FaceNormal> normals(nf);
    parallel_for(nf, [&](std::size_t f) { normals[f] = face_normal(positions, data, f); });

    AlignTerms terms;
    std::vector<Vec3> dn(grad.empty() ? 0 : nf, Vec3::Zero());  // dE / d(unit normal)
    for (size_t f = 0; f < nf; ++f)
    {
        terms.cube += data.area_weight[f] * phi(normals[f].unit);
        if (!grad.empty())
            dn[f] += lambda_cube * data.area_weight[f] * phi_gradient(normals[f].unit);
    }
    for (size_t k = 0; k < data.pairs.size(); ++k)
    {
        size_t i = static_cast<size_t>(data.pairs[k][0]), j = static_cast<size_t>(data.pairs[k][1]);
        Vec3 diff = normals[i].unit - normals[j].unit;
        terms.smooth += data.pair_weight[k] * diff.squaredNorm();
        if (!grad.empty())
        {
            Vec3 g = 2.0 * lambda_smooth * data.pair_weight[k] * diff;
            dn[i] += g;
            dn[j] -= g;
        }
    }
    if (grad.empty())
        return terms;

    const auto& vi = data.surface.volume_index;
    for (size_t f = 0; f < nf; ++f)
    {
        const FaceNormal& n = normals[f];
        if (n.length < kNormalGuard)
            continue;
        // Chain through normalization, then through the cross product.
        Vec3 g = (dn[f] - n.unit * n.unit.dot(dn[f])) / n.length;
        Vec3 d1 = n.e2.cross(g);
        Vec3 d2 = g.cross(n.e1);
        const auto& tri = data.surface.triangles[f];
        grad[static_cast<size_t>(vi[static_cast<size_t>(tri[0])])] -= d1 + d2;
        grad[static_cast<size_t>(vi[static_cast<size_t>(tri[1])])] += d1;
        grad[static_cast<size_t>(vi[static_cast<size_t>(tri[2])])] += d2;
    }
    return terms;
}

Deformer::Deformer(TetMesh rest) : rest_(std::move(rest))
{
    validate(rest_);
    elements_ = tet_elements(rest_);
    Measures m = measures(rest_);
    volume_weight_.resize(m.cell_volumes.size());
    for (size_t t = 0; t < m.cell_volumes.size(); ++t)
        volume_weight_[t] = m.cell_volumes[t] / m.total_volume;
    align_ = prepare_alignment(rest_);
}

DeformationState Deformer::initial_state(const DeformWeights& weights) const
{
    return DeformationState{rest_.vertices, weights};
}

EnergyEval Deformer::evaluate(const Points& positions, const DeformWeights& w) const
{
    if (!(w.eps > 0.0))
        throw Error(ErrorCode::InvalidArgument, "regularizer eps must be positive");
    std::vector<Vec3> grad(positions.size(), Vec3::Zero());
    double iso = energy_iso(positions, elements_, volume_weight_, IsoWeights{w.angle, w.vol, w.eps}, grad);
    AlignTerms align = energy_align(positions, align_, w.cube, w.smooth, grad);
    EnergyEval eval;
    eval.terms = {{"iso", iso}, {"cube", w.cube * align.cube}, {"smooth", w.smooth * align.smooth}};
    eval.value = iso + w.cube * align.cube + w.smooth * align.smooth;
    eval.grad = flatten(grad);
    return eval;
}

LoopResult Deformer::run(DeformationState& state, int n_steps, double lr, const RunControl& control,
                         const LiveValue<DeformWeights>* live) const
{
    if (state.positions.size() != rest_.vertices.size())
        throw Error(ErrorCode::State, "deformation state does not match the input mesh");
    DeformWeights current = state.weights;
    EnergyFn energy = [&](const Eigen::VectorXd& x, std::uint64_t) {
        if (live)
            current = live->get();
        return evaluate(unflatten(x), current);
    };
    LoopOptions options;
    options.n_steps = n_steps;
    options.adam.lr = lr;
    options.admissible = [&](const Eigen::VectorXd& x) { return min_jacobian_det(unflatten(x), elements_) > 0.0; };
    options.on_step = control.on_step;
    options.cancel = control.cancel;
    options.blocks = {{"deformed vertices", 0, 3 * static_cast<Eigen::Index>(rest_.vertices.size())}};
    LoopResult result = run_loop(energy, flatten(state.positions), options);
    state.positions = unflatten(result.params);
    state.weights = current;
    return result;
}

} // namespace cubehex
