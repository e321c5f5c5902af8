#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "stconv/tensor.hpp"

namespace stconv {

/// `per_element` divides by the full element count N*T*H*W*C so results stay
/// in the data's units (the default). When false, sums over (T,H,W,C) are
/// divided by the sample count N only.
struct MetricOptions {
    bool per_element = true;
};

struct StepCurves {
    std::vector<double> rmse, mae;         // per output time step
    std::vector<double> cum_rmse, cum_mae; // aggregated over steps 1..tau
};

struct EvalResult {
    double rmse = 0, mae = 0;
    StepCurves curves;
    std::int64_t samples = 0;
};

/// Streaming accumulator over (pred, target) batches in the canonical
/// (N,C,T,H,W) layout. Sums are kept per output time step in double
/// precision; the scalar metrics recombine exactly from the per-step sums.
class MetricAccumulator {
public:
    void add(std::int64_t t_out) {
        if (sq_.empty()) {
            sq_.assign(static_cast<std::size_t>(t_out), 0.0);
            ab_.assign(static_cast<std::size_t>(t_out), 0.0);
            per_step_count_.assign(static_cast<std::size_t>(t_out), 0);
        }
    }

    template <typename S>
    void add(const Tensor<S>& pred, const Tensor<S>& target) {
        if (!same_shape(pred, target))
            throw std::invalid_argument("metrics: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                        shape_str(target.shape()));
        if (pred.rank() != 5) throw std::invalid_argument("metrics: expected rank-5 tensors");
        const std::int64_t N = pred.extent(0), C = pred.extent(1), T = pred.extent(2);
        const std::int64_t HW = pred.extent(3) * pred.extent(4);
        add(T);
        if (static_cast<std::int64_t>(sq_.size()) != T)
            throw std::invalid_argument("metrics: inconsistent horizon across batches");
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t t = 0; t < T; ++t) {
                    const S* p = pred.data() + ((n * C + c) * T + t) * HW;
                    const S* q = target.data() + ((n * C + c) * T + t) * HW;
                    double sq = 0, ab = 0;
                    for (std::int64_t i = 0; i < HW; ++i) {
                        const double d = static_cast<double>(p[i]) - static_cast<double>(q[i]);
                        sq += d * d;
                        ab += std::abs(d);
                    }
                    sq_[static_cast<std::size_t>(t)] += sq;
                    ab_[static_cast<std::size_t>(t)] += ab;
                    per_step_count_[static_cast<std::size_t>(t)] += HW;
                }
        samples_ += N;
    }

    EvalResult finalize(const MetricOptions& opt = {}) const {
        EvalResult r;
        r.samples = samples_;
        const std::size_t T = sq_.size();
        if (T == 0 || samples_ == 0) throw std::logic_error("metrics: no data accumulated");
        double sq_total = 0, ab_total = 0;
        std::int64_t count_total = 0;
        double sq_run = 0, ab_run = 0;
        std::int64_t count_run = 0;
        for (std::size_t t = 0; t < T; ++t) {
            const double denom = opt.per_element ? static_cast<double>(per_step_count_[t])
                                                 : static_cast<double>(samples_);
            r.curves.rmse.push_back(std::sqrt(sq_[t] / denom));
            r.curves.mae.push_back(ab_[t] / denom);
            sq_run += sq_[t];
            ab_run += ab_[t];
            count_run += per_step_count_[t];
            const double run_denom =
                opt.per_element ? static_cast<double>(count_run) : static_cast<double>(samples_);
            r.curves.cum_rmse.push_back(std::sqrt(sq_run / run_denom));
            r.curves.cum_mae.push_back(ab_run / run_denom);
            sq_total += sq_[t];
            ab_total += ab_[t];
            count_total += per_step_count_[t];
        }
        const double denom =
            opt.per_element ? static_cast<double>(count_total) : static_cast<double>(samples_);
        r.rmse = std::sqrt(sq_total / denom);
        r.mae = ab_total / denom;
        return r;
    }

private:
    std::vector<double> sq_, ab_;
    std::vector<std::int64_t> per_step_count_;
    std::int64_t samples_ = 0;
};

template <typename S>
double rmse(const Tensor<S>& pred, const Tensor<S>& target, const MetricOptions& opt = {}) {
    MetricAccumulator acc;
    acc.add(pred, target);
    return acc.finalize(opt).rmse;
}

template <typename S>
double mae(const Tensor<S>& pred, const Tensor<S>& target, const MetricOptions& opt = {}) {
    MetricAccumulator acc;
    acc.add(pred, target);
    return acc.finalize(opt).mae;
}

template <typename S>
StepCurves per_step_curves(const Tensor<S>& pred, const Tensor<S>& target,
                           const MetricOptions& opt = {}) {
    MetricAccumulator acc;
    acc.add(pred, target);
    return acc.finalize(opt).curves;
}

} // namespace stconv
