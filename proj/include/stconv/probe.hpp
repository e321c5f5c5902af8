#pragma once

// Leakage probes: perturb inputs strictly after a protected time index and
// measure deviations at outputs that must not depend on the future.

#include <algorithm>
#include <cmath>

#include "stconv/model.hpp"

namespace stconv {

/// Runs one train-mode forward so normalization statistics exist, leaving
/// eval-mode forwards well defined.
template <typename S>
void prime_norm_stats(Model<S>& model, Rng& rng, std::int64_t h = 6, std::int64_t w = 6) {
    NoGradGuard guard;
    ExecContext ctx{Mode::train, 0, 0};
    Tensor<S> x({2, model.config().channels, model.config().t_in, h, w});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<S>(rng.uniform(-2.0, 2.0));
    model.forward(Var<S>::constant(x), ctx);
}

struct ProbeReport {
    double max_deviation = 0;
    int probes = 0;
};

/// Perturbs single input cells at time indices > tau and compares the
/// temporal-stage outputs at indices <= tau, plus the end-to-end prediction
/// at every output index whose dependency bound allows it. `check_model`
/// requires a variant with a causality guarantee.
template <typename S>
ProbeReport leakage_probe(Model<S>& model, Rng& rng, int positions, bool check_model) {
    const std::int64_t T = model.config().t_in;
    const std::int64_t C = model.config().channels;
    const std::int64_t H = 6, W = 6;
    ExecContext ctx{Mode::eval, 0, 0};
    NoGradGuard guard;
    ProbeReport report;

    for (int p = 0; p < positions; ++p) {
        Tensor<S> x({1, C, T, H, W});
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<S>(rng.uniform(-2.0, 2.0));
        const std::int64_t tau = T >= 2 ? rng.uniform_int(0, T - 2) : 0;
        const std::int64_t hit = rng.uniform_int(tau + 1, T - 1);
        Tensor<S> xp = x;
        xp.at(std::int64_t(0), rng.uniform_int(0, C - 1), hit, rng.uniform_int(0, H - 1),
              rng.uniform_int(0, W - 1)) += static_cast<S>(rng.uniform(0.5, 4.0));

        const Tensor<S> t0 = model.temporal_features(Var<S>::constant(x), ctx).value();
        const Tensor<S> t1 = model.temporal_features(Var<S>::constant(xp), ctx).value();
        for (std::int64_t c = 0; c < t0.extent(1); ++c)
            for (std::int64_t t = 0; t <= tau; ++t)
                for (std::int64_t y = 0; y < t0.extent(3); ++y)
                    for (std::int64_t xx = 0; xx < t0.extent(4); ++xx)
                        report.max_deviation = std::max(
                            report.max_deviation,
                            std::abs(static_cast<double>(t0.at(std::int64_t(0), c, t, y, xx)) -
                                     static_cast<double>(t1.at(std::int64_t(0), c, t, y, xx))));

        if (check_model) {
            const Tensor<S> y0 = model.forward(Var<S>::constant(x), ctx).value();
            const Tensor<S> y1 = model.forward(Var<S>::constant(xp), ctx).value();
            for (std::int64_t j = 0; j < model.config().t_out; ++j) {
                if (model.max_input_dependency(j) > tau) continue;
                for (std::int64_t c = 0; c < y0.extent(1); ++c)
                    for (std::int64_t y = 0; y < y0.extent(3); ++y)
                        for (std::int64_t xx = 0; xx < y0.extent(4); ++xx)
                            report.max_deviation = std::max(
                                report.max_deviation,
                                std::abs(static_cast<double>(y0.at(std::int64_t(0), c, j, y, xx)) -
                                         static_cast<double>(y1.at(std::int64_t(0), c, j, y, xx))));
            }
        }
        ++report.probes;
    }
    return report;
}

} // namespace stconv
