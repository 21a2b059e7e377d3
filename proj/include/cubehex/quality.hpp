#pragma once

#include "cubehex/pullback.hpp"

#include <map>

namespace cubehex
{

/// det of J with each column normalized. Columns shorter than 1e-12 contribute nothing to
/// the derivative (and make the value 0).
double scaled_jacobian(const Mat3& J, Mat3* dJ = nullptr);

/// Average mode: -lambda sum_t det J^_t. Worst mode: lambda log sum_t exp(-det J^_t).
double energy_custom(const Points& positions, std::span<const TetElement> elements, double lambda, bool worst,
                     std::span<Vec3> grad = {});

/// log sum_t exp(summand_t), evaluated with a max shift. Throws State if any element is
/// inverted.
double energy_hex_lse(const Points& positions, std::span<const TetElement> elements, const IsoWeights& w,
                      std::span<Vec3> grad = {});

struct QualityWeights
{
    double lap = 1.0;           // smoothness
    double to_surface = 1.0;    // lambda m->0, projection
    double from_surface = 1.0;  // lambda 0->m, details
    double angle = 1.0;         // conformal
    double vol = 1.0;           // authalic
    double custom = 0.0;
    double eps = 1e-4;
    bool worst_distortion = false;
    bool worst_custom = false;
};

enum class SurfaceMode
{
    Free,
    Constrained,
    Fixed,
};

const char* to_string(SurfaceMode mode);
SurfaceMode surface_mode_from_string(const std::string& name);

/// Volume vertex id -> pinned position. Ids must be boundary vertices.
using LandmarkSet = std::map<int, Vec3>;

struct QualityState
{
    Points positions;  // V_m
    Points latent;     // one per boundary vertex in constrained mode, else empty
    QualityWeights weights;
    SurfaceMode mode = SurfaceMode::Free;
    LandmarkSet landmarks;
};

struct QualityOptions
{
    int n_steps = 1000;
    double lr = 1e-4;
    std::uint64_t seed = 0;
};

struct QualityReport
{
    double j_min = 0, j_avg = 0, j_std = 0;  // scaled Jacobian over corner tets
    double v_min = 0, v_avg = 0, v_std = 0;  // det J over corner tets
    double d_max = 0, d_avg = 0;             // sampled Hausdorff / input bbox diagonal
    int inverted = 0;                        // corner tets with det J <= 0
};

struct HausdorffSample
{
    double max = 0.0;
    double avg = 0.0;  // mean over both directions
};

/// Symmetric Hausdorff distance estimated from n area-uniform samples per direction.
HausdorffSample sampled_hausdorff(const TriSurface& a, const TriSurface& b, int n_samples, std::uint64_t seed);

/// Scaled-Jacobian and det J statistics over corner tets plus the symmetric sampled Hausdorff
/// distance (n_samples per direction) between the hex boundary and `input_surface`.
QualityReport report_quality(const HexMesh& mesh, const TriSurface& input_surface, int n_samples = 50000,
                             std::uint64_t seed = 0);

struct ElementFilter
{
    enum class Kind
    {
        Plane,    // keeps hexes whose centroid c has (c - point) . normal <= 0
        Quality,  // selects hexes whose worst corner scaled Jacobian is below threshold
    };
    Kind kind = Kind::Quality;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitX();
    double threshold = 0.0;
};

std::vector<int> filter_elements(const HexMesh& mesh, const ElementFilter& filter);

/// Mesh-quality optimization of the hex mesh against the input boundary.
class QualityOptimizer
{
public:
    QualityOptimizer(HexMesh mesh, const TetMesh& input);

    /// Positions at `mesh.vertices`, free mode, default weights.
    QualityState initial_state(const Points& positions) const;
    /// Switches mode; entering constrained mode seeds the latents with the current boundary
    /// positions.
    void set_mode(QualityState& state, SurfaceMode mode) const;
    /// Throws InvalidArgument for ids that are not boundary vertices.
    void set_landmarks(QualityState& state, LandmarkSet landmarks) const;

    /// Parameter vector for a state: vertex positions, with latents in the boundary slots in
    /// constrained mode.
    Eigen::VectorXd params(const QualityState& state) const;
    Points positions(const Eigen::VectorXd& params, const QualityState& state) const;

    /// Terms: "hex-iso" or "hex-lse", "prox m->0" (free/fixed) or "anchor" (constrained),
    /// "prox 0->m", "lap", "custom".
    EnergyEval evaluate(const Eigen::VectorXd& params, const QualityState& state, const QualityWeights& w,
                        std::uint64_t batch, std::uint64_t seed = 0);

    LoopResult run(QualityState& state, const QualityOptions& options, const RunControl& control = {},
                   const LiveValue<QualityWeights>* live = nullptr);

    const HexMesh& mesh() const { return mesh_; }
    const std::vector<TetElement>& corner_elements() const { return elements_; }
    const HexBoundary& boundary() const { return boundary_; }
    const SurfaceProjector& input_surface() const { return input_; }

private:
    HexMesh mesh_;
    std::vector<TetElement> elements_;
    HexBoundary boundary_;
    SurfaceProjector input_;
    std::vector<int> surface_slot_;  // volume vertex -> boundary index or -1
};

} // namespace cubehex
