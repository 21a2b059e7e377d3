#pragma once

#include "cubehex/live.hpp"
#include "cubehex/mesh.hpp"
#include "cubehex/optim.hpp"

#include <span>

namespace cubehex
{

/// (x + sqrt(x^2 + eps^2)) / 2, evaluated without cancellation for negative x.
double regularizer(double x, double eps);
double regularizer_derivative(double x, double eps);

struct IsoWeights
{
    double angle = 1.0;
    double vol = 1.0;
    double eps = 1e-3;
};

/// One summand of the regularized distortion energy and, optionally, its derivative in J.
double iso_summand(const Mat3& J, const IsoWeights& w, Mat3* dJ = nullptr);

/// Per-element summands; dS (if given) receives dS/dJ per element.
std::vector<double> iso_summands(const Points& positions, std::span<const TetElement> elements, const IsoWeights& w,
                                 std::vector<Mat3>* dS = nullptr);

/// sum_t weight_t * summand_t. Empty `weights` means unit weights. Gradient is added to
/// `grad` when it is non-empty.
double energy_iso(const Points& positions, std::span<const TetElement> elements, std::span<const double> weights,
                  const IsoWeights& w, std::span<Vec3> grad = {});

/// Smallest det J over the elements.
double min_jacobian_det(const Points& positions, std::span<const TetElement> elements);

/// Cubeness of a unit normal: nx^2 ny^2 + ny^2 nz^2 + nz^2 nx^2.
double phi(const Vec3& n);
Vec3 phi_gradient(const Vec3& n);

/// Rest-pose data for the alignment energy: boundary triangles, their area weights and the
/// adjacent pairs with their smoothness coefficients.
struct AlignmentData
{
    TriSurface surface;
    std::vector<double> area_weight;  // area0_f / area0
    std::vector<std::array<int, 2>> pairs;
    std::vector<double> pair_weight;  // (area0_i + area0_j) / (3 area0)
};

AlignmentData prepare_alignment(const TetMesh& rest);

struct AlignTerms
{
    double cube = 0.0;
    double smooth = 0.0;
};

/// Unweighted E_cube and E_smooth at the given volume positions. The gradient of
/// lambda_cube E_cube + lambda_smooth E_smooth is added to `grad` when non-empty.
AlignTerms energy_align(const Points& positions, const AlignmentData& data, double lambda_cube, double lambda_smooth,
                        std::span<Vec3> grad = {});

struct DeformWeights
{
    double angle = 1.0;
    double vol = 1.0;
    double cube = 1.0;
    double smooth = 1.0;
    double eps = 1e-3;
};

struct DeformationState
{
    Points positions;  // f_d, one per input vertex
    DeformWeights weights;
};

/// Stage-1 energy E_iso + E_align on a fixed input tet mesh.
class Deformer
{
public:
    explicit Deformer(TetMesh rest);

    DeformationState initial_state(const DeformWeights& weights = {}) const;

    /// Terms: "iso", "cube", "smooth" (cube and smooth already multiplied by their weights).
    EnergyEval evaluate(const Points& positions, const DeformWeights& weights) const;

    /// Runs n_steps of Adam from state.positions. When `live` is given, weights are re-read
    /// from it at every evaluation so slider changes apply to the following steps.
    LoopResult run(DeformationState& state, int n_steps, double lr = 1e-3, const RunControl& control = {},
                   const LiveValue<DeformWeights>* live = nullptr) const;

    const TetMesh& rest() const { return rest_; }
    const std::vector<TetElement>& elements() const { return elements_; }
    const AlignmentData& alignment() const { return align_; }

private:
    TetMesh rest_;
    std::vector<TetElement> elements_;
    std::vector<double> volume_weight_;
    AlignmentData align_;
};

} // namespace cubehex
