#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace cubehex
{

struct AdamParams
{
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

/// Named slice of the flat parameter vector, used to point at the offending block in errors.
struct ParamBlock
{
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

struct AdamState
{
    AdamParams params;
    std::int64_t step = 0;
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    std::vector<ParamBlock> blocks;
};

/// Bias-corrected Adam update with learning rate `lr` (defaults to state.params.lr).
/// Throws Numerical if a gradient entry is not finite.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr = -1.0);

struct EnergyTerm
{
    std::string name;
    double value = 0.0;
};

struct EnergyReport
{
    double total = 0.0;
    std::vector<EnergyTerm> terms;
    std::int64_t iteration = 0;

    double term(const std::string& name) const;
};

struct EnergyEval
{
    double value = 0.0;
    Eigen::VectorXd grad;
    std::vector<EnergyTerm> terms;
};

/// `sample_index` identifies the evaluation for stochastic terms: the loop passes k for the
/// iterate reached after k steps, so a retried step reuses the same batch.
using EnergyFn = std::function<EnergyEval(const Eigen::VectorXd& params, std::uint64_t sample_index)>;

struct StepInfo
{
    std::int64_t step = 0;  // number of completed steps
    const Eigen::VectorXd* params = nullptr;
    const EnergyEval* eval = nullptr;
    double lr_used = 0.0;
};

struct LoopOptions
{
    int n_steps = 0;
    AdamParams adam;
    // Candidate iterates that are non-finite or rejected by `admissible` are retried with a
    // halved learning rate, up to this many times.
    int max_retries = 8;
    std::function<bool(const Eigen::VectorXd&)> admissible;
    // Applied to every candidate iterate before it is evaluated (box constraints, floors).
    std::function<void(Eigen::VectorXd&)> project;
    // Return false to stop after this step.
    std::function<bool(const StepInfo&)> on_step;
    const std::atomic<bool>* cancel = nullptr;
    std::vector<ParamBlock> blocks;
};

struct LoopResult
{
    Eigen::VectorXd params;
    std::vector<EnergyReport> history;
    EnergyEval final_eval;
    AdamState state;
    bool cancelled = false;
    bool stalled = false;  // a step exhausted its retries
    std::vector<std::string> warnings;
};

/// Hooks a stage run exposes to its caller (UI streaming, cancellation).
struct RunControl
{
    std::function<bool(const StepInfo&)> on_step;
    const std::atomic<bool>* cancel = nullptr;
};

/// Runs up to n_steps Adam iterations. history[k] is the energy of the iterate reached after k
/// steps, so a run stopped after k steps has k entries.
LoopResult run_loop(const EnergyFn& energy, Eigen::VectorXd params, const LoopOptions& options);

/// Largest relative error between analytic and central-difference partials over n_probes
/// random coordinates, relative to max(|numeric|, floor).
double check_gradient(const EnergyFn& energy, const Eigen::VectorXd& params, int n_probes, double step,
                      std::uint64_t seed = 7, double floor = 1e-6);

} // namespace cubehex
