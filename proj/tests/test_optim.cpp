#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cubehex/error.hpp"
#include "cubehex/optim.hpp"

#include <cmath>
#include <limits>

using namespace cubehex;

namespace
{

EnergyFn bowl(const Eigen::VectorXd& scale)
{
    return [scale](const Eigen::VectorXd& x, std::uint64_t) {
        EnergyEval e;
        e.value = (scale.array() * x.array().square()).sum();
        e.grad = 2.0 * (scale.array() * x.array()).matrix();
        e.terms = {{"bowl", e.value}};
        return e;
    };
}

// Scalar reference implementation of bias-corrected Adam.
double reference_adam(double x, int steps, double lr, double b1, double b2, double eps)
{
    double m = 0, v = 0;
    for (int t = 1; t <= steps; ++t)
    {
        double g = 2 * x;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        x -= lr * mh / (std::sqrt(vh) + eps);
    }
    return x;
}

} // namespace

TEST_CASE("adam step examples")
{
    AdamState s;
    Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 0.5);
    adam_step(s, p, Eigen::VectorXd::Zero(3));
    CHECK(s.step == 1);
    CHECK(p == Eigen::VectorXd::Constant(3, 0.5));

    AdamState one;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    adam_step(one, x, Eigen::VectorXd::Ones(1));
    CHECK(x[0] == doctest::Approx(-1e-3 * 1.0 / (1.0 + 1e-8)).epsilon(1e-14));

    AdamState bad;
    bad.blocks = {{"cuboid centers", 0, 2}, {"cuboid half extents", 2, 2}};
    Eigen::VectorXd y = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(4);
    g[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(adam_step(bad, y, g), doctest::Contains("cuboid half extents"), Error);
}

TEST_CASE("adam matches the scalar reference on x^2")
{
    LoopOptions opt;
    opt.n_steps = 1000;
    LoopResult r = run_loop(bowl(Eigen::VectorXd::Ones(1)), Eigen::VectorXd::Ones(1), opt);
    double ref = reference_adam(1.0, 1000, 1e-3, 0.9, 0.9, 1e-8);
    CHECK(r.params[0] == ref);
    // 1000 steps of size <= lr cover at most 1; the reference lands near the minimum.
    CHECK(std::abs(ref) < 0.05);
}

TEST_CASE("run loop bookkeeping")
{
    EnergyFn f = bowl(Eigen::Vector3d(1, 2, 3));
    Eigen::VectorXd x0 = Eigen::Vector3d(0.3, -0.2, 0.1);
    LoopOptions zero;
    LoopResult r0 = run_loop(f, x0, zero);
    CHECK(r0.params == x0);
    CHECK(r0.history.empty());

    LoopOptions opt;
    opt.n_steps = 100;
    opt.on_step = [](const StepInfo& info) { return info.step < 37; };
    LoopResult r = run_loop(f, x0, opt);
    CHECK(r.history.size() == 37);
    CHECK(r.cancelled);

    std::atomic<bool> cancel{true};
    LoopOptions pre;
    pre.n_steps = 10;
    pre.cancel = &cancel;
    LoopResult rc = run_loop(f, x0, pre);
    CHECK(rc.history.empty());
    CHECK(rc.params == x0);
}

TEST_CASE("energy report totals equal the sum of terms")
{
    LoopOptions opt;
    opt.n_steps = 10;
    LoopResult r = run_loop(bowl(Eigen::Vector2d(1, 4)), Eigen::Vector2d(1, 1), opt);
    for (const auto& h : r.history)
    {
        double sum = 0;
        for (const auto& t : h.terms)
            sum += t.value;
        CHECK(sum == doctest::Approx(h.total).epsilon(1e-9));
    }
    CHECK(r.history[3].iteration == 3);
}

TEST_CASE("quadratic bowl descends over 50-step windows")
{
    LoopOptions opt;
    opt.n_steps = 500;
    Eigen::VectorXd x0(4);
    x0 << 0.2, -0.1, 0.05, 0.3;
    LoopResult r = run_loop(bowl(Eigen::Vector4d(1, 3, 0.5, 2)), x0, opt);
    for (size_t k = 50; k < r.history.size(); k += 50)
        CHECK(r.history[k].total <= r.history[k - 50].total);
    CHECK(r.final_eval.value < r.history.front().total);
}

TEST_CASE("inadmissible and non-finite candidates are retried with smaller steps")
{
    // log barrier at x > 0; big lr would jump past it.
    EnergyFn f = [](const Eigen::VectorXd& x, std::uint64_t) {
        EnergyEval e;
        e.value = x[0] - std::log(x[0]);
        e.grad = Eigen::VectorXd::Constant(1, 1.0 - 1.0 / x[0]);
        return e;
    };
    LoopOptions opt;
    opt.n_steps = 50;
    opt.adam.lr = 0.5;
    opt.admissible = [](const Eigen::VectorXd& x) { return x[0] > 0; };
    Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.2);
    std::vector<double> path;
    opt.on_step = [&](const StepInfo& s) {
        path.push_back((*s.params)[0]);
        return true;
    };
    LoopResult r = run_loop(f, x0, opt);
    for (double x : path)
        CHECK(x > 0);
    CHECK_FALSE(r.stalled);

    LoopOptions never;
    never.n_steps = 3;
    never.admissible = [](const Eigen::VectorXd&) { return false; };
    LoopResult s = run_loop(f, x0, never);
    CHECK(s.stalled);
    CHECK(s.params == x0);
    CHECK(s.warnings.size() == 1);
}

TEST_CASE("adam sign pattern is scale invariant after warm-up")
{
    Eigen::VectorXd g(5);
    g << 0.3, -1.2, 0.01, -0.004, 2.0;
    AdamState a, b;
    Eigen::VectorXd xa = Eigen::VectorXd::Zero(5), xb = Eigen::VectorXd::Zero(5);
    for (int i = 0; i < 100; ++i)
    {
        adam_step(a, xa, g);
        adam_step(b, xb, 10.0 * g);
    }
    Eigen::VectorXd pa = xa, pb = xb;
    adam_step(a, xa, g);
    adam_step(b, xb, 10.0 * g);
    for (int i = 0; i < 5; ++i)
        CHECK(std::signbit(xa[i] - pa[i]) == std::signbit(xb[i] - pb[i]));
}

TEST_CASE("determinism")
{
    LoopOptions opt;
    opt.n_steps = 200;
    auto f = bowl(Eigen::Vector3d(1, 2, 3));
    Eigen::VectorXd x0 = Eigen::Vector3d(1, -1, 0.5);
    CHECK(run_loop(f, x0, opt).params == run_loop(f, x0, opt).params);
}

TEST_CASE("gradient checker calibration")
{
    EnergyFn linear = [](const Eigen::VectorXd& x, std::uint64_t) {
        EnergyEval e;
        Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(x.size(), 1.0, 2.0);
        e.value = c.dot(x);
        e.grad = c;
        return e;
    };
    Eigen::VectorXd x = Eigen::VectorXd::Constant(6, 0.3);
    CHECK(check_gradient(linear, x, 6, 1e-5) <= 1e-10);

    EnergyFn wrong = [](const Eigen::VectorXd& v, std::uint64_t) {
        EnergyEval e;
        e.value = v.squaredNorm();
        e.grad = 4.0 * v;
        return e;
    };
    CHECK(check_gradient(wrong, x, 6, 1e-5) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(check_gradient(linear, x, 3, 0.0), Error);
}
