#pragma once

#include "cubehex/deform.hpp"
#include "cubehex/geom_query.hpp"

namespace cubehex
{

/// Boundary of a hex mesh whose connectivity never changes: quad surface, its triangulation,
/// quad-edge one-rings, and a projector that follows the current vertex positions.
class HexBoundary
{
public:
    HexBoundary() = default;
    explicit HexBoundary(const HexMesh& mesh);

    const QuadSurface& quads() const { return quads_; }
    const TriSurface& triangles() const { return tris_; }
    const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }
    /// Surface vertex i is volume vertex volume_index()[i].
    const std::vector<int>& volume_index() const { return quads_.volume_index; }
    size_t size() const { return quads_.volume_index.size(); }

    Points surface_positions(const Points& volume_positions) const;
    /// Moves the projector's triangles to the given volume positions.
    void update(const Points& volume_positions);
    const SurfaceProjector& projector() const { return projector_; }

private:
    QuadSurface quads_;
    TriSurface tris_;
    std::vector<std::vector<int>> neighbors_;
    SurfaceProjector projector_;
};

/// sum over corner tets of the distortion summand with unit weights.
double energy_hex_iso(const Points& positions, std::span<const TetElement> corner_tets, const IsoWeights& w,
                      std::span<Vec3> grad = {});

struct ProxTerms
{
    double a_to_b = 0.0;  // weighted
    double b_to_a = 0.0;  // weighted
};

/// Bi-directional proximity between the moving boundary A (at `positions`, projector already
/// updated) and the fixed surface B. The A->B part sums over every boundary vertex of A; the
/// B->A part uses |dA| area-uniform samples on B drawn from `batch_seed`. Values and gradient
/// are multiplied by inv_length2.
ProxTerms energy_prox(const Points& positions, const HexBoundary& a, const SurfaceProjector& b, double lambda_ab,
                      double lambda_ba, std::uint64_t batch_seed, std::span<Vec3> grad = {}, double inv_length2 = 1.0);

/// lambda * sum_v |v - mean of its quad-edge one-ring|^2 over boundary vertices.
double energy_lap(const Points& positions, const HexBoundary& boundary, double lambda, std::span<Vec3> grad = {},
                  double inv_length2 = 1.0);

/// lambda * sum_v |v - target_v|^2 over all vertices.
double energy_pullback(const Points& positions, const Points& targets, double lambda, std::span<Vec3> grad = {},
                       double inv_length2 = 1.0);

/// Projects each point to the closest tet of the deformed mesh and evaluates its barycentric
/// coordinates on the matching tet of the input mesh (same connectivity).
Points compute_pull_targets(const Points& points, const TetMeshQuery& deformed, const TetMesh& input);

struct PullbackWeights
{
    double angle = 1.0;
    double vol = 1.0;
    double to_surface = 1.0;    // lambda d'->d
    double from_surface = 1.0;  // lambda d->d'
    double lap = 1.0;
    double pullback = 1.0;
    double eps = 1e-4;
};

struct PullbackState
{
    Points dprime;   // V_d'
    Points m;        // V_m
    Points targets;  // pull(V_d'), fixed once computed
    PullbackWeights weights;
    int phase_done = 0;
};

struct PullbackOptions
{
    int n_steps = 800;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    // Lengths in the proximity, smoothness and pullback terms are divided by this, so their
    // balance against the scale-free distortion term does not depend on the cell size.
    double length_scale = 1.0;
};

/// Two-phase inversion-free pullback of the voxelized polycube mesh onto the input domain.
class Pullback
{
public:
    /// `deformed` is the input mesh at the deformation-stage positions.
    Pullback(HexMesh polycube_hex, const TetMesh& deformed, TetMesh input);

    PullbackState initial_state(const PullbackWeights& weights = {}) const;

    /// Terms: "hex-iso", "prox d'->d", "prox d->d'", "lap".
    EnergyEval evaluate_phase1(const Points& positions, const PullbackWeights& w, std::uint64_t batch,
                               const PullbackOptions& options = {});
    /// Terms: "hex-iso", "pullback", "lap".
    EnergyEval evaluate_phase2(const Points& positions, const Points& targets, const PullbackWeights& w,
                               const PullbackOptions& options = {});

    LoopResult phase1(PullbackState& state, const PullbackOptions& options, const RunControl& control = {},
                      const LiveValue<PullbackWeights>* live = nullptr);
    /// Caches pull(V_d') in state.targets.
    void compute_targets(PullbackState& state) const;
    /// Starts from V_d' unless phase 2 already ran; computes targets if missing.
    LoopResult phase2(PullbackState& state, const PullbackOptions& options, const RunControl& control = {},
                      const LiveValue<PullbackWeights>* live = nullptr);

    const HexMesh& hex() const { return hex_; }
    const std::vector<TetElement>& corner_elements() const { return elements_; }
    const HexBoundary& boundary() const { return boundary_; }
    const TetMeshQuery& deformed() const { return deformed_; }

private:
    LoopResult run(Points& positions, const EnergyFn& energy, const PullbackOptions& options, const RunControl& control);

    HexMesh hex_;
    std::vector<TetElement> elements_;
    HexBoundary boundary_;
    TetMeshQuery deformed_;
    TetMesh input_;
};

} // namespace cubehex
