#include "cubehex/pullback.hpp"

#include "cubehex/error.hpp"
#include "cubehex/parallel.hpp"

namespace cubehex
{

HexBoundary::HexBoundary(const HexMesh& mesh)
    : quads_(extract_boundary(mesh)), tris_(triangulate(quads_)), neighbors_(vertex_neighbors(quads_)),
      projector_(tris_)
{
    for (size_t i = 0; i < neighbors_.size(); ++i)
        if (neighbors_[i].empty())
            throw Error(ErrorCode::InvalidMesh,
                        "boundary vertex " + std::to_string(quads_.volume_index[i]) + " has no surface neighbours");
}

Points HexBoundary::surface_positions(const Points& volume_positions) const
{
    Points out(quads_.volume_index.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = volume_positions[static_cast<size_t>(quads_.volume_index[i])];
    return out;
}

void HexBoundary::update(const Points& volume_positions)
{
    projector_.update_positions(surface_positions(volume_positions));
}

double energy_hex_iso(const Points& positions, std::span<const TetElement> corner_tets, const IsoWeights& w,
                      std::span<Vec3> grad)
{
    return energy_iso(positions, corner_tets, {}, w, grad);
}

ProxTerms energy_prox(const Points& positions, const HexBoundary& a, const SurfaceProjector& b, double lambda_ab,
                      double lambda_ba, std::uint64_t batch_seed, std::span<Vec3> grad, double inv_length2)
{
    ProxTerms terms;
    const auto& vi = a.volume_index();
    const size_t n = vi.size();

    if (lambda_ab != 0.0)
    {
        std::vector<Vec3> foot(n);
        parallel_for(n, [&](std::size_t i) { foot[i] = b.project(positions[static_cast<size_t>(vi[i])]).point; });
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i)
        {
            Vec3 r = positions[static_cast<size_t>(vi[i])] - foot[i];
            sum += r.squaredNorm();
            if (!grad.empty())
                grad[static_cast<size_t>(vi[i])] += 2.0 * lambda_ab * inv_length2 * r;
        }
        terms.a_to_b = lambda_ab * inv_length2 * sum;
    }

    if (lambda_ba != 0.0)
    {
        SurfaceSamples samples = sample_surface(b.surface(), static_cast<int>(n), batch_seed);
        const SurfaceProjector& pa = a.projector();
        std::vector<ProjectionResult> hits(samples.points.size());
        parallel_for(hits.size(), [&](std::size_t s) { hits[s] = pa.project(samples.points[s]); });
        double sum = 0.0;
        const auto& tris = pa.surface().triangles;
        for (size_t s = 0; s < hits.size(); ++s)
        {
            const ProjectionResult& h = hits[s];
            sum += h.sq_distance;
            if (grad.empty())
                continue;
            Vec3 d = 2.0 * lambda_ba * inv_length2 * (h.point - samples.points[s]);
            const auto& tri = tris[static_cast<size_t>(h.element)];
            for (size_t k = 0; k < 3; ++k)
                grad[static_cast<size_t>(vi[static_cast<size_t>(tri[k])])] += h.weights[k] * d;
        }
        terms.b_to_a = lambda_ba * inv_length2 * sum;
    }
    return terms;
}

double energy_lap(const Points& positions, const HexBoundary& boundary, double lambda, std::span<Vec3> grad,
                  double inv_length2)
{
    if (lambda == 0.0)
        return 0.0;
    const auto& vi = boundary.volume_index();
    const auto& nbrs = boundary.neighbors();
    double sum = 0.0;
    const double scale = lambda * inv_length2;
    for (size_t i = 0; i < vi.size(); ++i)
    {
        const auto& ring = nbrs[i];
        Vec3 mean = Vec3::Zero();
        for (int u : ring)
            mean += positions[static_cast<size_t>(vi[static_cast<size_t>(u)])];
        mean /= static_cast<double>(ring.size());
        Vec3 r = positions[static_cast<size_t>(vi[i])] - mean;
        sum += r.squaredNorm();
        if (grad.empty())
            continue;
        grad[static_cast<size_t>(vi[i])] += 2.0 * scale * r;
        Vec3 share = -2.0 * scale * r / static_cast<double>(ring.size());
        for (int u : ring)
            grad[static_cast<size_t>(vi[static_cast<size_t>(u)])] += share;
    }
    return scale * sum;
}

double energy_pullback(const Points& positions, const Points& targets, double lambda, std::span<Vec3> grad,
                       double inv_length2)
{
    if (targets.size() != positions.size())
        throw Error(ErrorCode::State, "pull targets do not match the hex mesh");
    double sum = 0.0;
    const double scale = lambda * inv_length2;
    for (size_t i = 0; i < positions.size(); ++i)
    {
        Vec3 r = positions[i] - targets[i];
        sum += r.squaredNorm();
        if (!grad.empty())
            grad[i] += 2.0 * scale * r;
    }
    return scale * sum;
}

Points compute_pull_targets(const Points& points, const TetMeshQuery& deformed, const TetMesh& input)
{
    if (input.vertices.size() != deformed.mesh().vertices.size() || input.tets != deformed.mesh().tets)
        throw Error(ErrorCode::State, "deformed and input meshes must share connectivity");
    Points out(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        ProjectionResult r = deformed.project(points[i]);
        const auto& tet = input.tets[static_cast<size_t>(r.element)];
        Vec3 q = Vec3::Zero();
        for (size_t k = 0; k < 4; ++k)
            q += r.weights[k] * input.vertices[static_cast<size_t>(tet[k])];
        out[i] = q;
    });
    return out;
}

Pullback::Pullback(HexMesh polycube_hex, const TetMesh& deformed, TetMesh input)
    : hex_(std::move(polycube_hex)), boundary_(hex_), deformed_(deformed), input_(std::move(input))
{
    validate(hex_);
    elements_ = corner_tets(hex_).elements();
    if (input_.tets != deformed.tets || input_.vertices.size() != deformed.vertices.size())
        throw Error(ErrorCode::State, "deformed and input meshes must share connectivity");
}

PullbackState Pullback::initial_state(const PullbackWeights& weights) const
{
    PullbackState s;
    s.dprime = hex_.vertices;
    s.weights = weights;
    return s;
}

EnergyEval Pullback::evaluate_phase1(const Points& positions, const PullbackWeights& w, std::uint64_t batch,
                                     const PullbackOptions& options)
{
    const double inv_l2 = 1.0 / (options.length_scale * options.length_scale);
    std::vector<Vec3> grad(positions.size(), Vec3::Zero());
    boundary_.update(positions);
    double iso = energy_hex_iso(positions, elements_, IsoWeights{w.angle, w.vol, w.eps}, grad);
    ProxTerms prox = energy_prox(positions, boundary_, deformed_.boundary(), w.to_surface, w.from_surface,
                                 derive_seed(options.seed, batch), grad, inv_l2);
    double lap = energy_lap(positions, boundary_, w.lap, grad, inv_l2);
    EnergyEval e;
    e.terms = {{"hex-iso", iso}, {"prox d'->d", prox.a_to_b}, {"prox d->d'", prox.b_to_a}, {"lap", lap}};
    e.value = iso + prox.a_to_b + prox.b_to_a + lap;
    e.grad = flatten(grad);
    return e;
}

EnergyEval Pullback::evaluate_phase2(const Points& positions, const Points& targets, const PullbackWeights& w,
                                     const PullbackOptions& options)
{
    const double inv_l2 = 1.0 / (options.length_scale * options.length_scale);
    std::vector<Vec3> grad(positions.size(), Vec3::Zero());
    double iso = energy_hex_iso(positions, elements_, IsoWeights{w.angle, w.vol, w.eps}, grad);
    double pull = energy_pullback(positions, targets, w.pullback, grad, inv_l2);
    double lap = energy_lap(positions, boundary_, w.lap, grad, inv_l2);
    EnergyEval e;
    e.terms = {{"hex-iso", iso}, {"pullback", pull}, {"lap", lap}};
    e.value = iso + pull + lap;
    e.grad = flatten(grad);
    return e;
}

LoopResult Pullback::run(Points& positions, const EnergyFn& energy, const PullbackOptions& options,
                         const RunControl& control)
{
    if (!(options.length_scale > 0.0))
        throw Error(ErrorCode::InvalidArgument, "length scale must be positive");
    LoopOptions loop;
    loop.n_steps = options.n_steps;
    loop.adam.lr = options.lr;
    loop.admissible = [&](const Eigen::VectorXd& x) { return min_jacobian_det(unflatten(x), elements_) > 0.0; };
    loop.on_step = control.on_step;
    loop.cancel = control.cancel;
    loop.blocks = {{"hex vertices", 0, 3 * static_cast<Eigen::Index>(hex_.vertices.size())}};
    if (!(min_jacobian_det(positions, elements_) > 0.0))
        throw Error(ErrorCode::State, "pullback must start from an inversion-free hex mesh");
    LoopResult result = run_loop(energy, flatten(positions), loop);
    positions = unflatten(result.params);
    return result;
}

LoopResult Pullback::phase1(PullbackState& state, const PullbackOptions& options, const RunControl& control,
                            const LiveValue<PullbackWeights>* live)
{
    if (state.dprime.size() != hex_.vertices.size())
        throw Error(ErrorCode::State, "pullback state does not match the hex mesh");
    PullbackWeights current = state.weights;
    EnergyFn energy = [&](const Eigen::VectorXd& x, std::uint64_t batch) {
        if (live)
            current = live->get();
        return evaluate_phase1(unflatten(x), current, batch, options);
    };
    LoopResult r = run(state.dprime, energy, options, control);
    state.weights = current;
    state.phase_done = 1;
    state.targets.clear();
    state.m.clear();
    return r;
}

void Pullback::compute_targets(PullbackState& state) const
{
    if (state.phase_done < 1)
        throw Error(ErrorCode::State, "pull targets need a completed phase 1");
    state.targets = compute_pull_targets(state.dprime, deformed_, input_);
}

LoopResult Pullback::phase2(PullbackState& state, const PullbackOptions& options, const RunControl& control,
                            const LiveValue<PullbackWeights>* live)
{
    if (state.phase_done < 1)
        throw Error(ErrorCode::State, "phase 2 needs a completed phase 1");
    if (state.targets.size() != hex_.vertices.size())
        compute_targets(state);
    if (state.m.size() != hex_.vertices.size())
        state.m = state.dprime;
    PullbackWeights current = state.weights;
    EnergyFn energy = [&](const Eigen::VectorXd& x, std::uint64_t) {
        if (live)
            current = live->get();
        return evaluate_phase2(unflatten(x), state.targets, current, options);
    };
    LoopResult r = run(state.m, energy, options, control);
    state.weights = current;
    state.phase_done = 2;
    return r;
}

} // namespace cubehex
