#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "stconv/data.hpp"
#include "stconv/metrics.hpp"
#include "stconv/model.hpp"
#include "stconv/textio.hpp"

namespace stconv {

/// avg <- decay*avg + (1-decay)*g^2; p <- p - lr*g/(sqrt(avg)+eps).
template <typename S>
class Rmsprop {
public:
    Rmsprop(std::vector<Param<S>> params, S lr, S decay = S(0.99), S eps = S(1e-8))
        : params_(std::move(params)), lr_(lr), decay_(decay), eps_(eps) {
        for (auto& p : params_) avg_.emplace_back(p.var.value().shape());
    }

    /// Applies one update. Returns false (and leaves parameters untouched)
    /// when any gradient is non-finite.
    bool step() {
        for (auto& p : params_) {
            const Tensor<S>& g = p.var.grad();
            for (std::int64_t i = 0; i < g.size(); ++i)
                if (!std::isfinite(static_cast<double>(g[i]))) return false;
        }
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor<S>& p = params_[k].var.value_mut();
            const Tensor<S>& g = params_[k].var.grad();
            Tensor<S>& a = avg_[k];
            for (std::int64_t i = 0; i < p.size(); ++i) {
                a[i] = decay_ * a[i] + (S(1) - decay_) * g[i] * g[i];
                p[i] -= lr_ * g[i] / (std::sqrt(a[i]) + eps_);
            }
        }
        return true;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    const std::vector<Tensor<S>>& state() const { return avg_; }

private:
    std::vector<Param<S>> params_;
    std::vector<Tensor<S>> avg_;
    S lr_, decay_, eps_;
};

struct TrainSchedule {
    std::int64_t max_epochs = 50;
    std::int64_t batch_size = 32;
    std::int64_t patience = 16;
    double lr = 1e-3;
    double decay = 0.99;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool deterministic = false; // zeroes wall-clock fields in reports
    bool shuffle = true;
};

struct EpochRow {
    std::int64_t epoch = 0; // 1-based
    double train_loss = 0;
    double val_rmse = 0;
    double val_mae = 0;
    double seconds = 0;
};

struct TrainReport {
    std::vector<EpochRow> epochs;
    std::int64_t best_epoch = -1;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    double best_val_mae = 0;
    std::string stop_reason;
    std::int64_t skipped_steps = 0; // non-finite gradients

    std::string to_csv() const {
        std::string out = "epoch,train_loss,val_rmse,val_mae,seconds\n";
        for (const auto& e : epochs) {
            out += std::to_string(e.epoch);
            out += ',';
            out += format_double(e.train_loss);
            out += ',';
            out += format_double(e.val_rmse);
            out += ',';
            out += format_double(e.val_mae);
            out += ',';
            out += format_fixed(e.seconds, 6);
            out += '\n';
        }
        return out;
    }
};

/// Full-split evaluation in eval mode (no graph, dropout off, frozen
/// normalization statistics). Predictions are mapped back to original units
/// before metrics when a normalizer is active.
template <typename S>
EvalResult evaluate_model(Model<S>& model, const WindowedDataset& data, std::int64_t batch_size,
                          const Normalizer& nz, const MetricOptions& opt = {}) {
    NoGradGuard guard;
    ExecContext ctx{Mode::eval, 0, 0};
    MetricAccumulator acc;
    Tensor<S> x, y;
    std::vector<std::int64_t> ids;
    for (std::int64_t start = 0; start < data.num_samples(); start += batch_size) {
        ids.clear();
        for (std::int64_t i = start; i < std::min(start + batch_size, data.num_samples()); ++i)
            ids.push_back(i);
        data.fetch(ids, x, y);
        nz.apply(x);
        Var<S> pred = model.forward(Var<S>::constant(x), ctx);
        Tensor<S> p = pred.value();
        nz.invert(p);
        acc.add(p, y);
    }
    return acc.finalize(opt);
}

/// Forecast that repeats the last input frame across the horizon.
inline EvalResult persistence_baseline(const WindowedDataset& data) {
    const GridSeq& g = data.source();
    MetricAccumulator acc;
    Tensor<double> x, y;
    std::vector<std::int64_t> ids(1);
    for (std::int64_t i = 0; i < data.num_samples(); ++i) {
        ids[0] = i;
        data.fetch(ids, x, y);
        Tensor<double> pred(y.shape());
        for (std::int64_t c = 0; c < g.c; ++c)
            for (std::int64_t t = 0; t < data.t_out(); ++t)
                for (std::int64_t yy = 0; yy < g.h; ++yy)
                    for (std::int64_t xx = 0; xx < g.w; ++xx)
                        pred.at(std::int64_t(0), c, t, yy, xx) =
                            x.at(std::int64_t(0), c, data.t_in() - 1, yy, xx);
        acc.add(pred, y);
    }
    return acc.finalize();
}

/// Mini-batch optimization with early stopping on validation RMSE. The model
/// is left holding the best-validation parameters.
template <typename S>
TrainReport train_model(Model<S>& model, const WindowedDataset& train, const WindowedDataset& val,
                        const TrainSchedule& sched, const Normalizer& nz = Normalizer::none(),
                        std::ostream* log = nullptr) {
    if (train.num_samples() < 1 || val.num_samples() < 1)
        throw std::invalid_argument("train: empty dataset");
    if (sched.batch_size < 1 || sched.batch_size > train.num_samples())
        throw std::invalid_argument("train: batch size " + std::to_string(sched.batch_size) +
                                    " exceeds training samples " + std::to_string(train.num_samples()));

    Rmsprop<S> opt(model.parameters(), static_cast<S>(sched.lr), static_cast<S>(sched.decay),
                   static_cast<S>(sched.eps));
    Rng shuffle_rng(splitmix64(sched.seed ^ 0x7261696e6c6f6f70ull));

    std::vector<std::int64_t> order(static_cast<std::size_t>(train.num_samples()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

    TrainReport report;
    typename Model<S>::Snapshot best;
    std::int64_t stale = 0;
    std::uint64_t step = 0;
    ExecContext train_ctx{Mode::train, sched.seed, 0};
    Tensor<S> x, y;
    std::vector<std::int64_t> ids;

    for (std::int64_t epoch = 1; epoch <= sched.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (sched.shuffle) shuffle_rng.shuffle(order);

        double loss_sum = 0;
        std::int64_t loss_count = 0;
        bool diverged = false;
        for (std::int64_t start = 0; start < train.num_samples(); start += sched.batch_size) {
            ids.clear();
            for (std::int64_t i = start; i < std::min(start + sched.batch_size, train.num_samples()); ++i)
                ids.push_back(order[static_cast<std::size_t>(i)]);
            train.fetch(ids, x, y);
            nz.apply(x);
            nz.apply(y);

            train_ctx.step = step++;
            Var<S> pred = model.forward(Var<S>::constant(x), train_ctx);
            Var<S> loss = mse_loss(pred, y);
            const double lv = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(lv)) {
                diverged = true;
                break;
            }
            loss_sum += lv * static_cast<double>(ids.size());
            loss_count += static_cast<std::int64_t>(ids.size());

            opt.zero_grad();
            backward(loss);
            if (!opt.step()) ++report.skipped_steps;
        }

        if (diverged) {
            report.stop_reason = "divergence: non-finite training loss";
            break;
        }

        const EvalResult ev = evaluate_model(model, val, sched.batch_size, nz);
        const auto t1 = std::chrono::steady_clock::now();
        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(loss_count);
        row.val_rmse = ev.rmse;
        row.val_mae = ev.mae;
        row.seconds =
            sched.deterministic ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
        report.epochs.push_back(row);
        if (log)
            (*log) << "epoch " << epoch << " train_loss " << row.train_loss << " val_rmse "
                   << row.val_rmse << " val_mae " << row.val_mae << "\n";

        if (ev.rmse < report.best_val_rmse) {
            report.best_val_rmse = ev.rmse;
            report.best_val_mae = ev.mae;
            report.best_epoch = epoch;
            best = model.snapshot();
            stale = 0;
        } else if (++stale >= sched.patience) {
            report.stop_reason = "early-stopping: no improvement for " +
                                 std::to_string(sched.patience) + " epochs";
            break;
        }
    }

    if (report.stop_reason.empty()) report.stop_reason = "max-epochs";
    if (report.best_epoch > 0) model.restore(best);
    return report;
}

} // namespace stconv
