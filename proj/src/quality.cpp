#include "cubehex/quality.hpp"

#include "cubehex/error.hpp"
#include "cubehex/parallel.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace cubehex
{

double scaled_jacobian(const Mat3& J, Mat3* dJ)
{
    Mat3 n;
    std::array<double, 3> len{};
    bool degenerate = false;
    for (int c = 0; c < 3; ++c)
    {
        len[static_cast<size_t>(c)] = J.col(c).norm();
        if (len[static_cast<size_t>(c)] < 1e-12)
        {
            degenerate = true;
            n.col(c).setZero();
        }
        else
        {
            n.col(c) = J.col(c) / len[static_cast<size_t>(c)];
        }
    }
    double value = n.determinant();
    if (dJ)
    {
        dJ->setZero();
        if (!degenerate)
        {
            Mat3 cof;
            cof.col(0) = n.col(1).cross(n.col(2));
            cof.col(1) = n.col(2).cross(n.col(0));
            cof.col(2) = n.col(0).cross(n.col(1));
            for (int c = 0; c < 3; ++c)
            {
                Vec3 u = n.col(c);
                dJ->col(c) = (cof.col(c) - u * u.dot(cof.col(c))) / len[static_cast<size_t>(c)];
            }
        }
    }
    return value;
}

double energy_custom(const Points& positions, std::span<const TetElement> elements, double lambda, bool worst,
                     std::span<Vec3> grad)
{
    if (lambda == 0.0 || elements.empty())
        return 0.0;
    std::vector<double> s(elements.size());
    std::vector<Mat3> ds(grad.empty() ? 0 : elements.size());
    parallel_for(elements.size(), [&](std::size_t t) {
        s[t] = scaled_jacobian(jacobian(positions, elements[t]), grad.empty() ? nullptr : &ds[t]);
    });
    if (!worst)
    {
        double sum = 0.0;
        for (size_t t = 0; t < s.size(); ++t)
        {
            sum += s[t];
            if (!grad.empty())
                accumulate_jacobian_gradient(elements[t], -lambda * ds[t], grad);
        }
        return -lambda * sum;
    }
    double m = -*std::min_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s)
        z += std::exp(-v - m);
    if (!grad.empty())
        for (size_t t = 0; t < s.size(); ++t)
            accumulate_jacobian_gradient(elements[t], -lambda * std::exp(-s[t] - m) / z * ds[t], grad);
    return lambda * (m + std::log(z));
}

double energy_hex_lse(const Points& positions, std::span<const TetElement> elements, const IsoWeights& w,
                      std::span<Vec3> grad)
{
    for (size_t t = 0; t < elements.size(); ++t)
        if (!(jacobian(positions, elements[t]).determinant() > 0.0))
            throw Error(ErrorCode::State, "worst-element distortion needs an inversion-free mesh (element " +
                                              std::to_string(t) + " is inverted); optimize in average mode first");
    std::vector<Mat3> ds;
    std::vector<double> s = iso_summands(positions, elements, w, grad.empty() ? nullptr : &ds);
    double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s)
        z += std::exp(v - m);
    if (!grad.empty())
        for (size_t t = 0; t < s.size(); ++t)
            accumulate_jacobian_gradient(elements[t], std::exp(s[t] - m) / z * ds[t], grad);
    return m + std::log(z);
}

const char* to_string(SurfaceMode mode)
{
    switch (mode)
    {
    case SurfaceMode::Free:
        return "free";
    case SurfaceMode::Constrained:
        return "constrained";
    case SurfaceMode::Fixed:
        return "fixed";
    }
    return "free";
}

SurfaceMode surface_mode_from_string(const std::string& name)
{
    if (name == "free")
        return SurfaceMode::Free;
    if (name == "constrained")
        return SurfaceMode::Constrained;
    if (name == "fixed")
        return SurfaceMode::Fixed;
    throw Error(ErrorCode::InvalidArgument, "unknown surface mode '" + name + "' (free, constrained, fixed)");
}

namespace
{

struct Stats
{
    double min = 0, avg = 0, std = 0;
};

Stats stats(const std::vector<double>& v)
{
    Stats s;
    if (v.empty())
        return s;
    s.min = *std::min_element(v.begin(), v.end());
    double sum = 0;
    for (double x : v)
        sum += x;
    s.avg = sum / static_cast<double>(v.size());
    double var = 0;
    for (double x : v)
        var += (x - s.avg) * (x - s.avg);
    s.std = std::sqrt(var / static_cast<double>(v.size()));
    return s;
}

} // namespace

HausdorffSample sampled_hausdorff(const TriSurface& a, const TriSurface& b, int n_samples, std::uint64_t seed)
{
    HausdorffSample h;
    if (n_samples <= 0)
        return h;
    SurfaceProjector to_b(b), to_a(a);
    SurfaceSamples from_a = sample_surface(a, n_samples, derive_seed(seed, 0));
    SurfaceSamples from_b = sample_surface(b, n_samples, derive_seed(seed, 1));
    const size_t n = static_cast<size_t>(n_samples);
    std::vector<double> d(2 * n);
    parallel_for(n, [&](std::size_t i) {
        d[i] = std::sqrt(to_b.project(from_a.points[i]).sq_distance);
        d[i + n] = std::sqrt(to_a.project(from_b.points[i]).sq_distance);
    });
    double sum = 0;
    for (double x : d)
    {
        sum += x;
        h.max = std::max(h.max, x);
    }
    h.avg = sum / static_cast<double>(d.size());
    return h;
}

QualityReport report_quality(const HexMesh& mesh, const TriSurface& input_surface, int n_samples,
                             std::uint64_t seed)
{
    QualityReport r;
    std::vector<TetElement> el = corner_tets(mesh).elements();
    std::vector<double> sj(el.size()), det(el.size());
    parallel_for(el.size(), [&](std::size_t t) {
        Mat3 J = jacobian(mesh.vertices, el[t]);
        sj[t] = scaled_jacobian(J);
        det[t] = J.determinant();
    });
    Stats a = stats(sj), b = stats(det);
    r.j_min = a.min;
    r.j_avg = a.avg;
    r.j_std = a.std;
    r.v_min = b.min;
    r.v_avg = b.avg;
    r.v_std = b.std;
    for (double d : det)
        r.inverted += d <= 0.0;

    Box3 box;
    for (const auto& v : input_surface.vertices)
        box.extend(v);
    const double diag = box.diagonal().norm();
    if (n_samples > 0 && diag > 0.0)
    {
        HausdorffSample h = sampled_hausdorff(triangulate(extract_boundary(mesh)), input_surface, n_samples, seed);
        r.d_max = h.max / diag;
        r.d_avg = h.avg / diag;
    }
    return r;
}

std::vector<int> filter_elements(const HexMesh& mesh, const ElementFilter& filter)
{
    std::vector<int> out;
    if (filter.kind == ElementFilter::Kind::Plane)
    {
        for (size_t h = 0; h < mesh.hexes.size(); ++h)
        {
            Vec3 c = Vec3::Zero();
            for (int v : mesh.hexes[h])
                c += mesh.vertices[static_cast<size_t>(v)];
            c /= 8.0;
            if ((c - filter.point).dot(filter.normal) <= 0.0)
                out.push_back(static_cast<int>(h));
        }
        return out;
    }
    CornerTetSet tets = corner_tets(mesh);
    std::vector<double> worst(mesh.hexes.size(), 1.0);
    for (const auto& t : tets.tets)
        worst[static_cast<size_t>(t.hex)] =
            std::min(worst[static_cast<size_t>(t.hex)], scaled_jacobian(jacobian(mesh.vertices, t.element)));
    for (size_t h = 0; h < worst.size(); ++h)
        if (worst[h] < filter.threshold)
            out.push_back(static_cast<int>(h));
    return out;
}

QualityOptimizer::QualityOptimizer(HexMesh mesh, const TetMesh& input)
    : mesh_(std::move(mesh)), boundary_(mesh_), input_(extract_boundary(input))
{
    validate(mesh_);
    elements_ = corner_tets(mesh_).elements();
    surface_slot_.assign(mesh_.vertices.size(), -1);
    for (size_t i = 0; i < boundary_.size(); ++i)
        surface_slot_[static_cast<size_t>(boundary_.volume_index()[i])] = static_cast<int>(i);
}

QualityState QualityOptimizer::initial_state(const Points& positions) const
{
    if (positions.size() != mesh_.vertices.size())
        throw Error(ErrorCode::State, "positions do not match the hex mesh");
    QualityState s;
    s.positions = positions;
    return s;
}

void QualityOptimizer::set_mode(QualityState& state, SurfaceMode mode) const
{
    state.mode = mode;
    state.latent.clear();
    if (mode == SurfaceMode::Constrained)
        state.latent = boundary_.surface_positions(state.positions);
}

void QualityOptimizer::set_landmarks(QualityState& state, LandmarkSet landmarks) const
{
    for (const auto& [id, p] : landmarks)
    {
        if (id < 0 || id >= static_cast<int>(mesh_.vertices.size()) || surface_slot_[static_cast<size_t>(id)] < 0)
            throw Error(ErrorCode::InvalidArgument, "landmark " + std::to_string(id) + " is not a boundary vertex");
        if (!p.allFinite())
            throw Error(ErrorCode::InvalidArgument, "landmark " + std::to_string(id) + " has a non-finite position");
    }
    state.landmarks = std::move(landmarks);
    for (const auto& [id, p] : state.landmarks)
    {
        state.positions[static_cast<size_t>(id)] = p;
        if (!state.latent.empty())
            state.latent[static_cast<size_t>(surface_slot_[static_cast<size_t>(id)])] = p;
    }
}

Eigen::VectorXd QualityOptimizer::params(const QualityState& state) const
{
    Eigen::VectorXd x = flatten(state.positions);
    if (state.mode == SurfaceMode::Constrained)
    {
        if (state.latent.size() != boundary_.size())
            throw Error(ErrorCode::State, "constrained mode needs one latent variable per boundary vertex");
        for (size_t i = 0; i < boundary_.size(); ++i)
            x.segment<3>(3 * static_cast<Eigen::Index>(boundary_.volume_index()[i])) = state.latent[i];
    }
    return x;
}

Points QualityOptimizer::positions(const Eigen::VectorXd& params, const QualityState& state) const
{
    Points p = unflatten(params);
    if (state.mode == SurfaceMode::Constrained)
    {
        const auto& vi = boundary_.volume_index();
        parallel_for(vi.size(), [&](std::size_t i) {
            size_t v = static_cast<size_t>(vi[i]);
            p[v] = input_.project(p[v]).point;
        });
    }
    for (const auto& [id, q] : state.landmarks)
        p[static_cast<size_t>(id)] = q;
    return p;
}

EnergyEval QualityOptimizer::evaluate(const Eigen::VectorXd& params, const QualityState& state,
                                      const QualityWeights& w, std::uint64_t batch, std::uint64_t seed)
{
    const bool constrained = state.mode == SurfaceMode::Constrained;
    const auto& vi = boundary_.volume_index();
    Points p = unflatten(params);
    std::vector<ProjectionResult> foot;
    if (constrained)
    {
        foot.resize(vi.size());
        parallel_for(vi.size(), [&](std::size_t i) { foot[i] = input_.project(p[static_cast<size_t>(vi[i])]); });
        for (size_t i = 0; i < vi.size(); ++i)
            p[static_cast<size_t>(vi[i])] = foot[i].point;
    }
    for (const auto& [id, q] : state.landmarks)
        p[static_cast<size_t>(id)] = q;

    std::vector<Vec3> g(p.size(), Vec3::Zero());
    IsoWeights iw{w.angle, w.vol, w.eps};
    double iso = w.worst_distortion ? energy_hex_lse(p, elements_, iw, g) : energy_hex_iso(p, elements_, iw, g);
    boundary_.update(p);
    ProxTerms prox = energy_prox(p, boundary_, input_, constrained ? 0.0 : w.to_surface, w.from_surface,
                                 derive_seed(seed, batch), g);
    double anchor = 0.0;
    double lap = energy_lap(p, boundary_, w.lap, g);
    double custom = energy_custom(p, elements_, w.custom, w.worst_custom, g);

    if (constrained)
    {
        for (size_t i = 0; i < vi.size(); ++i)
        {
            size_t v = static_cast<size_t>(vi[i]);
            Vec3 z = params.segment<3>(3 * static_cast<Eigen::Index>(v));
            Vec3 r = z - foot[i].point;
            anchor += r.squaredNorm();
            ProjectionGradients pg = input_.gradients(z, foot[i]);
            g[v] = pg.ridge_safe().transpose() * g[v] + 2.0 * w.to_surface * r;
        }
        anchor *= w.to_surface;
    }
    if (state.mode == SurfaceMode::Fixed)
        for (int v : vi)
            g[static_cast<size_t>(v)].setZero();
    for (const auto& [id, q] : state.landmarks)
        g[static_cast<size_t>(id)].setZero();

    EnergyEval e;
    e.terms = {{w.worst_distortion ? "hex-lse" : "hex-iso", iso},
               {constrained ? "anchor" : "prox m->0", constrained ? anchor : prox.a_to_b},
               {"prox 0->m", prox.b_to_a},
               {"lap", lap},
               {"custom", custom}};
    e.value = iso + prox.a_to_b + anchor + prox.b_to_a + lap + custom;
    e.grad = flatten(g);
    return e;
}

LoopResult QualityOptimizer::run(QualityState& state, const QualityOptions& options, const RunControl& control,
                                 const LiveValue<QualityWeights>* live)
{
    if (state.positions.size() != mesh_.vertices.size())
        throw Error(ErrorCode::State, "quality state does not match the hex mesh");
    if (state.mode == SurfaceMode::Constrained && state.latent.size() != boundary_.size())
        set_mode(state, SurfaceMode::Constrained);
    set_landmarks(state, state.landmarks);

    auto count_inverted = [&](const Points& p) {
        int n = 0;
        for (const auto& e : elements_)
            n += !(jacobian(p, e).determinant() > 0.0);
        return n;
    };
    const Eigen::VectorXd x0 = params(state);
    const int start_inverted = count_inverted(positions(x0, state));
    if (start_inverted > 0 && (state.weights.worst_distortion || (live && live->get().worst_distortion)))
        throw Error(ErrorCode::State,
                    "worst-element distortion needs an inversion-free mesh; optimize in average mode first");

    QualityWeights current = state.weights;
    EnergyFn energy = [&](const Eigen::VectorXd& x, std::uint64_t batch) {
        if (live)
            current = live->get();
        return evaluate(x, state, current, batch, options.seed);
    };
    LoopOptions loop;
    loop.n_steps = options.n_steps;
    loop.adam.lr = options.lr;
    loop.admissible = [&](const Eigen::VectorXd& x) { return count_inverted(positions(x, state)) <= start_inverted; };
    loop.project = [&](Eigen::VectorXd& x) {
        if (state.mode == SurfaceMode::Fixed)
            for (int v : boundary_.volume_index())
                x.segment<3>(3 * static_cast<Eigen::Index>(v)) = x0.segment<3>(3 * static_cast<Eigen::Index>(v));
        for (const auto& [id, q] : state.landmarks)
            x.segment<3>(3 * static_cast<Eigen::Index>(id)) = x0.segment<3>(3 * static_cast<Eigen::Index>(id));
    };
    loop.on_step = control.on_step;
    loop.cancel = control.cancel;
    loop.blocks = {{state.mode == SurfaceMode::Constrained ? "hex vertices and surface latents" : "hex vertices", 0,
                    x0.size()}};
    LoopResult result = run_loop(energy, x0, loop);

    state.weights = current;
    state.positions = positions(result.params, state);
    if (state.mode == SurfaceMode::Constrained)
        for (size_t i = 0; i < boundary_.size(); ++i)
            state.latent[i] = result.params.segment<3>(3 * static_cast<Eigen::Index>(boundary_.volume_index()[i]));

    int left = count_inverted(state.positions);
    if (left > 0 && !state.landmarks.empty())
    {
        std::set<int> bad_vertices;
        for (const auto& e : elements_)
            if (!(jacobian(state.positions, e).determinant() > 0.0))
                bad_vertices.insert(e.vertices.begin(), e.vertices.end());
        std::ostringstream s;
        s << left << " inverted corner tet(s) remain near landmark(s)";
        bool any = false;
        for (const auto& [id, q] : state.landmarks)
            if (bad_vertices.count(id))
            {
                s << ' ' << id;
                any = true;
            }
        if (!any)
            s << " (none adjacent)";
        result.warnings.push_back(s.str());
    }
    return result;
}

} // namespace cubehex
