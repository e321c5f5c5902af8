#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "stconv/ops.hpp"
#include "stconv/rng.hpp"

namespace stconv {

/// Run-wide forward settings. `step` advances once per optimizer step so
/// dropout masks replay from (seed, layer_id, step).
struct ExecContext {
    Mode mode = Mode::eval;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

template <typename S>
struct Param {
    std::string name;
    Var<S> var;
};

/// Weights drawn uniformly from +-sqrt(1/fan_in), bias zero.
template <typename S>
Tensor<S> uniform_fan_in_init(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor<S> w(shape);
    for (std::int64_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<S>(rng.uniform(-bound, bound));
    return w;
}

template <typename S>
class Conv3dLayer {
public:
    Conv3dLayer(std::int64_t in_ch, std::int64_t out_ch, Stride3 kernel, Stride3 stride,
                PadSpec pad, PadSpec post_crop, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
          pad_(std::move(pad)), post_crop_(std::move(post_crop)) {
        const std::int64_t fan_in = in_ch * kernel[0] * kernel[1] * kernel[2];
        weight_ = Var<S>::param(
            uniform_fan_in_init<S>({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, fan_in, rng));
        bias_ = Var<S>::param(Tensor<S>({out_ch}));
    }

    Var<S> forward(const Var<S>& x) const {
        Var<S> y = conv3d(x, weight_, bias_, stride_, pad_);
        if (!post_crop_.is_zero()) {
            PadSpec full{{0, 0}, {0, 0}, post_crop_[0], post_crop_[1], post_crop_[2]};
            y = crop(y, full);
        }
        return y;
    }

    std::int64_t in_channels() const { return in_ch_; }
    std::int64_t out_channels() const { return out_ch_; }
    const Stride3& kernel() const { return kernel_; }
    const PadSpec& pad_spec() const { return pad_; }
    const PadSpec& post_crop_spec() const { return post_crop_; }

    Var<S>& weight() { return weight_; }
    Var<S>& bias() { return bias_; }
    const Var<S>& weight() const { return weight_; }
    const Var<S>& bias() const { return bias_; }

private:
    std::int64_t in_ch_, out_ch_;
    Stride3 kernel_;
    Stride3 stride_;
    PadSpec pad_, post_crop_;
    Var<S> weight_, bias_;
};

template <typename S>
class ConvTranspose3dLayer {
public:
    ConvTranspose3dLayer(std::int64_t in_ch, std::int64_t out_ch, Stride3 kernel, Stride3 stride,
                         PadSpec pad, Stride3 opad, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(std::move(pad)),
          opad_(opad) {
        const std::int64_t fan_in = in_ch * kernel[0] * kernel[1] * kernel[2];
        weight_ = Var<S>::param(
            uniform_fan_in_init<S>({in_ch, out_ch, kernel[0], kernel[1], kernel[2]}, fan_in, rng));
        bias_ = Var<S>::param(Tensor<S>({out_ch}));
    }

    Var<S> forward(const Var<S>& x, std::optional<Stride3> opad_override = std::nullopt) const {
        return conv_transpose3d(x, weight_, bias_, stride_, pad_, opad_override.value_or(opad_));
    }

    std::int64_t in_channels() const { return in_ch_; }
    std::int64_t out_channels() const { return out_ch_; }
    const Stride3& stride() const { return stride_; }
    const Stride3& kernel() const { return kernel_; }
    const PadSpec& pad_spec() const { return pad_; }

    Var<S>& weight() { return weight_; }
    Var<S>& bias() { return bias_; }

private:
    std::int64_t in_ch_, out_ch_;
    Stride3 kernel_;
    Stride3 stride_;
    PadSpec pad_;
    Stride3 opad_;
    Var<S> weight_, bias_;
};

template <typename S>
class BatchNormLayer {
public:
    explicit BatchNormLayer(std::int64_t channels, S momentum = S(0.1), S eps = S(1e-5))
        : channels_(channels), momentum_(momentum), eps_(eps) {
        gamma_ = Var<S>::param(Tensor<S>({channels}, S(1)));
        beta_ = Var<S>::param(Tensor<S>({channels}));
    }

    Var<S> forward(const Var<S>& x, Mode mode) {
        return batch_norm(x, gamma_, beta_, state_, mode, momentum_, eps_);
    }

    std::int64_t channels() const { return channels_; }
    Var<S>& gamma() { return gamma_; }
    Var<S>& beta() { return beta_; }
    BatchNormState<S>& state() { return state_; }
    const BatchNormState<S>& state() const { return state_; }

private:
    std::int64_t channels_;
    S momentum_, eps_;
    Var<S> gamma_, beta_;
    BatchNormState<S> state_;
};

template <typename S>
struct LeakyReluLayer {
    S slope = S(0.01);
    Var<S> forward(const Var<S>& x) const { return leaky_relu(x, slope); }
};

template <typename S>
struct DropoutLayer {
    S rate = S(0);
    std::uint64_t layer_id = 0;
    Var<S> forward(const Var<S>& x, const ExecContext& ctx) const {
        return dropout(x, rate, ctx.mode, ctx.seed, layer_id, ctx.step);
    }
};

/// Ordered stack of units. The channel chain is validated as units are
/// added; a conv or norm unit whose channel count disagrees with the running
/// chain is rejected at construction, not at forward time.
template <typename S>
class LayerStack {
public:
    using Unit = std::variant<Conv3dLayer<S>, BatchNormLayer<S>, LeakyReluLayer<S>,
                              DropoutLayer<S>>;

    LayerStack() = default;
    LayerStack(std::string name, std::int64_t in_channels)
        : name_(std::move(name)), in_channels_(in_channels), current_(in_channels) {}

    void add_conv(Conv3dLayer<S> layer) {
        require_channels("conv", layer.in_channels());
        current_ = layer.out_channels();
        units_.emplace_back(std::move(layer));
    }

    void add_batch_norm(std::int64_t channels) {
        require_channels("batch_norm", channels);
        units_.emplace_back(BatchNormLayer<S>(channels));
    }

    void add_activation(S slope) { units_.emplace_back(LeakyReluLayer<S>{slope}); }

    void add_dropout(S rate, std::uint64_t layer_id) {
        units_.emplace_back(DropoutLayer<S>{rate, layer_id});
    }

    Var<S> forward(const Var<S>& x, const ExecContext& ctx) {
        Var<S> h = x;
        for (auto& u : units_) {
            if (auto* c = std::get_if<Conv3dLayer<S>>(&u))
                h = c->forward(h);
            else if (auto* bn = std::get_if<BatchNormLayer<S>>(&u))
                h = bn->forward(h, ctx.mode);
            else if (auto* act = std::get_if<LeakyReluLayer<S>>(&u))
                h = act->forward(h);
            else if (auto* dp = std::get_if<DropoutLayer<S>>(&u))
                h = dp->forward(h, ctx);
        }
        return h;
    }

    /// Registry order is stack order: conv contributes (weight, bias),
    /// batch norm contributes (gamma, beta).
    void collect_parameters(std::vector<Param<S>>& out) {
        std::int64_t i = 0;
        for (auto& u : units_) {
            const std::string prefix = name_ + ".unit" + std::to_string(i);
            if (auto* c = std::get_if<Conv3dLayer<S>>(&u)) {
                out.push_back({prefix + ".weight", c->weight()});
                out.push_back({prefix + ".bias", c->bias()});
            } else if (auto* bn = std::get_if<BatchNormLayer<S>>(&u)) {
                out.push_back({prefix + ".gamma", bn->gamma()});
                out.push_back({prefix + ".beta", bn->beta()});
            }
            ++i;
        }
    }

    void collect_norm_states(std::vector<BatchNormState<S>*>& out) {
        for (auto& u : units_)
            if (auto* bn = std::get_if<BatchNormLayer<S>>(&u)) out.push_back(&bn->state());
    }

    std::int64_t out_channels() const { return current_; }
    std::int64_t in_channels() const { return in_channels_; }
    std::size_t unit_count() const { return units_.size(); }
    std::vector<Unit>& units() { return units_; }
    const std::vector<Unit>& units() const { return units_; }
    const std::string& name() const { return name_; }

private:
    void require_channels(const char* kind, std::int64_t got) const {
        if (got != current_)
            throw std::invalid_argument(name_ + ": unit " + std::to_string(units_.size()) + " (" + kind +
                                        ") expects " + std::to_string(got) + " channels, chain carries " +
                                        std::to_string(current_));
    }

    std::string name_;
    std::int64_t in_channels_ = 0;
    std::int64_t current_ = 0;
    std::vector<Unit> units_;
};

} // namespace stconv
