#include "cubehex/optim.hpp"

#include "cubehex/error.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace cubehex
{

namespace
{

std::string describe_index(const std::vector<ParamBlock>& blocks, Eigen::Index i)
{
    std::ostringstream out;
    for (const auto& b : blocks)
        if (i >= b.offset && i < b.offset + b.size)
        {
            out << "block '" << b.name << "' entry " << (i - b.offset);
            return out.str();
        }
    out << "parameter " << i;
    return out.str();
}

bool all_finite(const Eigen::VectorXd& v)
{
    return v.allFinite();
}

} // namespace

double EnergyReport::term(const std::string& name) const
{
    for (const auto& t : terms)
        if (t.name == name)
            return t.value;
    return 0.0;
}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr)
{
    if (grads.size() != params.size())
        throw Error(ErrorCode::InvalidArgument, "gradient and parameter sizes differ");
    for (Eigen::Index i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw Error(ErrorCode::Numerical, "non-finite gradient in " + describe_index(state.blocks, i));
    if (state.first_moment.size() != params.size())
    {
        state.first_moment = Eigen::VectorXd::Zero(params.size());
        state.second_moment = Eigen::VectorXd::Zero(params.size());
    }
    const AdamParams& p = state.params;
    if (lr < 0.0)
        lr = p.lr;
    ++state.step;
    state.first_moment = p.beta1 * state.first_moment + (1.0 - p.beta1) * grads;
    state.second_moment = p.beta2 * state.second_moment + (1.0 - p.beta2) * grads.cwiseAbs2();
    double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step));
    double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step));
    for (Eigen::Index i = 0; i < params.size(); ++i)
    {
        double m = state.first_moment[i] / c1;
        double v = state.second_moment[i] / c2;
        params[i] -= lr * m / (std::sqrt(v) + p.epsilon);
    }
}

LoopResult run_loop(const EnergyFn& energy, Eigen::VectorXd params, const LoopOptions& options)
{
    if (options.n_steps < 0)
        throw Error(ErrorCode::InvalidArgument, "step count must be non-negative");
    LoopResult result;
    result.state.params = options.adam;
    result.state.blocks = options.blocks;
    result.params = std::move(params);
    result.final_eval = energy(result.params, 0);
    if (!std::isfinite(result.final_eval.value) || !all_finite(result.final_eval.grad))
        throw Error(ErrorCode::Numerical, "energy is not finite at the initial iterate");

    for (int k = 0; k < options.n_steps; ++k)
    {
        if (options.cancel && options.cancel->load())
        {
            result.cancelled = true;
            break;
        }
        EnergyReport report;
        report.total = result.final_eval.value;
        report.terms = result.final_eval.terms;
        report.iteration = k;
        result.history.push_back(std::move(report));

        double lr = options.adam.lr;
        bool accepted = false;
        AdamState candidate_state;
        Eigen::VectorXd candidate;
        EnergyEval candidate_eval;
        for (int attempt = 0; attempt <= options.max_retries; ++attempt, lr *= 0.5)
        {
            candidate_state = result.state;
            candidate = result.params;
            adam_step(candidate_state, candidate, result.final_eval.grad, lr);
            if (options.project)
                options.project(candidate);
            if (!all_finite(candidate))
                continue;
            if (options.admissible && !options.admissible(candidate))
                continue;
            candidate_eval = energy(candidate, static_cast<std::uint64_t>(k + 1));
            if (std::isfinite(candidate_eval.value) && all_finite(candidate_eval.grad))
            {
                accepted = true;
                break;
            }
        }
        if (!accepted)
        {
            std::ostringstream msg;
            msg << "step " << k << ": no admissible iterate after " << options.max_retries
                << " learning-rate halvings; stopping";
            result.warnings.push_back(msg.str());
            result.stalled = true;
            break;
        }
        result.params = std::move(candidate);
        result.state = std::move(candidate_state);
        result.final_eval = std::move(candidate_eval);

        if (options.on_step)
        {
            StepInfo info{k + 1, &result.params, &result.final_eval, lr};
            if (!options.on_step(info))
            {
                result.cancelled = true;
                break;
            }
        }
    }
    return result;
}

double check_gradient(const EnergyFn& energy, const Eigen::VectorXd& params, int n_probes, double step,
                      std::uint64_t seed, double floor)
{
    if (!(step > 0.0))
        throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
    EnergyEval base = energy(params, 0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, params.size() - 1);
    double worst = 0.0;
    Eigen::VectorXd probe = params;
    for (int i = 0; i < n_probes; ++i)
    {
        Eigen::Index idx = n_probes >= params.size() ? static_cast<Eigen::Index>(i % params.size()) : pick(rng);
        probe[idx] = params[idx] + step;
        double up = energy(probe, 0).value;
        probe[idx] = params[idx] - step;
        double down = energy(probe, 0).value;
        probe[idx] = params[idx];
        double numeric = (up - down) / (2.0 * step);
        double analytic = base.grad[idx];
        double denom = std::max(std::abs(numeric), floor);
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

} // namespace cubehex
