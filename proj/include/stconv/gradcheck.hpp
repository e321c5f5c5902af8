#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stconv/model.hpp"
#include "stconv/ops.hpp"

namespace stconv {

struct GradCheckResult {
    std::string name;
    double max_err = 0;
    double tol = 0;
    bool pass = false;
};

namespace detail {

inline double gc_dot(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <typename F>
double gc_central(F&& f, double& slot, double h) {
    const double saved = slot;
    slot = saved + h;
    const double fp = f();
    slot = saved - h;
    const double fm = f();
    slot = saved;
    return (fp - fm) / (2 * h);
}

/// Worst (abs+rel) disagreement between backward() and central differences of
/// sum(r * rebuild()) over every element of every parameter.
inline double gc_run(const std::function<Var<double>()>& rebuild, std::vector<Var<double>> params,
                     Rng& rng, double h = 1e-5) {
    Var<double> out = rebuild();
    Tensor<double> r(out.shape());
    for (std::int64_t i = 0; i < r.size(); ++i) r[i] = rng.uniform(-1.0, 1.0);
    for (auto& p : params) p.zero_grad();
    Var<double> loss = sum_all(mul(out, Var<double>::constant(r)));
    backward(loss);
    auto value = [&]() {
        NoGradGuard guard;
        return gc_dot(rebuild().value(), r);
    };
    double worst = 0;
    for (auto& p : params) {
        Tensor<double>& v = p.value_mut();
        for (std::int64_t i = 0; i < v.size(); ++i) {
            const double fd = gc_central(value, v[i], h);
            const double an = p.grad()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
    return worst;
}

template <typename S>
Tensor<S> gc_random(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor<S> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

} // namespace detail

/// Central finite-difference verification of every differentiable op plus the
/// full reversed-variant model, always in double precision. Op tolerance
/// 1e-4, end-to-end tolerance 1e-3 on 10 sampled parameters.
inline std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed) {
    using detail::gc_random;
    std::vector<GradCheckResult> results;
    Rng rng(seed);
    auto record = [&](const std::string& name, double err, double tol) {
        results.push_back({name, err, tol, err <= tol});
    };

    {
        Var<double> x = Var<double>::param(gc_random<double>({2, 2, 4, 4, 4}, rng));
        Var<double> w = Var<double>::param(gc_random<double>({3, 2, 2, 3, 3}, rng));
        Var<double> b = Var<double>::param(gc_random<double>({3}, rng));
        const PadSpec pad{{1, 0}, {1, 1}, {0, 1}};
        record("conv3d",
               detail::gc_run([&]() { return conv3d(x, w, b, {1, 2, 1}, pad); }, {x, w, b}, rng),
               1e-4);
    }
    {
        Var<double> x = Var<double>::param(gc_random<double>({2, 2, 3, 3, 3}, rng));
        Var<double> w = Var<double>::param(gc_random<double>({2, 3, 2, 2, 2}, rng));
        Var<double> b = Var<double>::param(gc_random<double>({3}, rng));
        const PadSpec pad{{1, 0}, {0, 0}, {0, 1}};
        record("conv_transpose3d",
               detail::gc_run([&]() { return conv_transpose3d(x, w, b, {2, 1, 2}, pad, {1, 0, 0}); },
                              {x, w, b}, rng),
               1e-4);
    }
    {
        Var<double> x = Var<double>::param(gc_random<double>({2, 1, 3, 4, 4}, rng));
        const PadSpec grow{{1, 2}, {0, 0}, {2, 0}, {0, 1}, {1, 1}};
        record("pad", detail::gc_run([&]() { return pad(x, grow); }, {x}, rng), 1e-4);
        const PadSpec cut{{0, 1}, {0, 0}, {1, 0}, {0, 1}, {1, 1}};
        record("crop", detail::gc_run([&]() { return crop(x, cut); }, {x}, rng), 1e-4);
        record("reverse_axis", detail::gc_run([&]() { return reverse_axis(x, 2); }, {x}, rng),
               1e-4);
    }
    {
        Var<double> a = Var<double>::param(gc_random<double>({2, 2, 3, 3, 3}, rng));
        Var<double> b = Var<double>::param(gc_random<double>({2, 2, 5, 3, 3}, rng));
        record("concat_time", detail::gc_run([&]() { return concat_time(a, b); }, {a, b}, rng),
               1e-4);
    }
    {
        Tensor<double> xv = gc_random<double>({2, 1, 3, 4, 4}, rng);
        for (std::int64_t i = 0; i < xv.size(); ++i)
            if (std::abs(xv[i]) < 0.1) xv[i] = xv[i] < 0 ? xv[i] - 0.1 : xv[i] + 0.1;
        Var<double> x = Var<double>::param(xv);
        record("leaky_relu", detail::gc_run([&]() { return leaky_relu(x, 0.01); }, {x}, rng), 1e-4);
    }
    {
        Var<double> x = Var<double>::param(gc_random<double>({3, 2, 3, 4, 4}, rng));
        Var<double> gamma = Var<double>::param(gc_random<double>({2}, rng, 0.5, 1.5));
        Var<double> beta = Var<double>::param(gc_random<double>({2}, rng));
        BatchNormState<double> state;
        record("batch_norm(train)",
               detail::gc_run(
                   [&]() { return batch_norm(x, gamma, beta, state, Mode::train, 0.1, 1e-5); },
                   {x, gamma, beta}, rng),
               1e-4);
        record("batch_norm(eval)",
               detail::gc_run(
                   [&]() { return batch_norm(x, gamma, beta, state, Mode::eval, 0.1, 1e-5); },
                   {x, gamma, beta}, rng),
               1e-4);
    }
    {
        Var<double> x = Var<double>::param(gc_random<double>({2, 1, 3, 4, 4}, rng));
        record("dropout",
               detail::gc_run([&]() { return dropout(x, 0.3, Mode::train, 11, 4, 2); }, {x}, rng),
               1e-4);
    }
    {
        Var<double> p = Var<double>::param(gc_random<double>({2, 1, 3, 4, 4}, rng));
        Tensor<double> target = gc_random<double>({2, 1, 3, 4, 4}, rng);
        p.zero_grad();
        Var<double> loss = mse_loss(p, target);
        backward(loss);
        auto value = [&]() {
            NoGradGuard guard;
            return mse_loss(p, target).value()[0];
        };
        double worst = 0;
        Tensor<double>& v = p.value_mut();
        for (std::int64_t i = 0; i < v.size(); ++i) {
            const double fd = detail::gc_central(value, v[i], 1e-5);
            const double an = p.grad()[i];
            worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
        }
        record("mse_loss", worst, 1e-4);
    }
    {
        ModelConfig cfg;
        cfg.variant = Variant::reversed;
        cfg.layers = 2;
        cfg.kernel_time = 2;
        cfg.kernel_space = 3;
        cfg.filters = 3;
        cfg.t_in = 3;
        cfg.t_out = 7;
        cfg.dropout = 0.2;
        Model<double> model(cfg, rng);
        const Tensor<double> x = gc_random<double>({2, 1, 3, 5, 5}, rng);
        const Tensor<double> target = gc_random<double>({2, 1, 7, 5, 5}, rng);
        ExecContext ctx{Mode::train, 5, 3};

        model.zero_grad();
        Var<double> loss = mse_loss(model.forward(Var<double>::constant(x), ctx), target);
        backward(loss);
        auto value = [&]() {
            NoGradGuard guard;
            return mse_loss(model.forward(Var<double>::constant(x), ctx), target).value()[0];
        };
        auto params = model.parameters();
        double worst = 0;
        for (int probe = 0; probe < 10; ++probe) {
            auto& p =
                params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
            Tensor<double>& v = p.var.value_mut();
            const std::int64_t idx = rng.uniform_int(0, v.size() - 1);
            const double fd = detail::gc_central(value, v[idx], 1e-4);
            const double an = p.var.grad()[idx];
            worst = std::max(worst, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
        }
        record("model(reversed,horizon)", worst, 1e-3);
    }
    return results;
}

} // namespace stconv
