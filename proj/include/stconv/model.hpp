#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stconv/config.hpp"
#include "stconv/layers.hpp"

namespace stconv {

/// Per-layer (in, out) channel pairs. With growth enabled, layer i of L puts
/// out F*2^i for i < L and F at the final layer; constant F otherwise.
inline std::vector<std::pair<std::int64_t, std::int64_t>> channel_chain(std::int64_t in_ch,
                                                                        std::int64_t layers,
                                                                        std::int64_t filters,
                                                                        bool growth) {
    std::vector<std::pair<std::int64_t, std::int64_t>> chain;
    std::int64_t cur = in_ch;
    for (std::int64_t i = 1; i <= layers; ++i) {
        std::int64_t out = filters;
        if (growth && i < layers) out = filters * (std::int64_t(1) << i);
        chain.emplace_back(cur, out);
        cur = out;
    }
    return chain;
}

struct HorizonPlan {
    std::int64_t up_layers;   // stride-2 time-doubling transposed convs
    std::int64_t conv_layers; // trailing spatial-kernel convs
};

/// up_layers = ceil((T''-T)/(2T)), conv_layers = floor(T''/T). Only valid for
/// T'' > T; shorter horizons bypass the block.
inline HorizonPlan plan_horizon(std::int64_t t_in, std::int64_t t_out) {
    if (t_out <= t_in)
        throw std::logic_error("plan_horizon: horizon " + std::to_string(t_out) +
                               " does not exceed input length " + std::to_string(t_in));
    const std::int64_t diff = t_out - t_in;
    return {(diff + 2 * t_in - 1) / (2 * t_in), t_out / t_in};
}

inline AxisPad causal_time_pad(std::int64_t kt) { return {kt - 1, kt - 1}; }
inline AxisPad causal_time_crop(std::int64_t kt) { return {0, kt - 1}; }
inline AxisPad reversed_time_pad(std::int64_t kt) { return {0, kt - 1}; }
inline AxisPad symmetric_time_pad(std::int64_t kt) {
    const std::int64_t before = (kt - 1) / 2;
    return {before, kt - 1 - before};
}

/// Sequence-to-sequence forecasting model: temporal block (causal or
/// reversed), spatial block, horizon-extension block when T'' > T, and a
/// 1x1x1 output projection. Ablation variants restructure the blocks from
/// the same config.
template <typename S>
class Model {
public:
    Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    Var<S> forward(const Var<S>& x, const ExecContext& ctx) {
        check_input(x.value());
        Var<S> h = body_forward(x, ctx);
        h = horizon_forward(h, ctx);
        return projection_->forward(h);
    }

    /// Output of the temporal stage, probe surface for leakage checks. For
    /// the inverted variant the temporal block sits after the spatial block,
    /// so the probe surface includes both.
    Var<S> temporal_features(const Var<S>& x, const ExecContext& ctx) {
        check_input(x.value());
        if (!has_temporal_stack())
            throw std::logic_error(std::string("variant ") + variant_name(cfg_.variant) +
                                   " has no temporal block");
        if (cfg_.variant == Variant::inverted)
            return temporal_forward(spatial_.forward(x, ctx), ctx);
        return temporal_forward(x, ctx);
    }

    /// Largest input time index that may influence output index `out_idx`,
    /// for the causality-preserving variants.
    std::int64_t max_input_dependency(std::int64_t out_idx) const {
        if (!is_causal_variant())
            throw std::logic_error(std::string("variant ") + variant_name(cfg_.variant) +
                                   " makes no causality guarantee");
        if (out_idx < 0 || out_idx >= cfg_.t_out)
            throw std::invalid_argument("output index out of range");
        if (out_idx < std::min(cfg_.t_in, cfg_.t_out)) return out_idx;
        const HorizonPlan hp = plan_horizon(cfg_.t_in, cfg_.t_out);
        return (out_idx - cfg_.t_in) >> hp.up_layers;
    }

    bool is_causal_variant() const {
        switch (cfg_.variant) {
            case Variant::causal:
            case Variant::reversed:
            case Variant::inverted:
            case Variant::no_temporal:
                return true;
            default:
                return false;
        }
    }

    std::vector<Param<S>> parameters() {
        std::vector<Param<S>> out;
        temporal_.collect_parameters(out);
        main_.collect_parameters(out);
        down_.collect_parameters(out);
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            out.push_back({"up.unit" + std::to_string(i) + ".weight", ups_[i].weight()});
            out.push_back({"up.unit" + std::to_string(i) + ".bias", ups_[i].bias()});
        }
        spatial_.collect_parameters(out);
        for (std::size_t i = 0; i < horizon_ups_.size(); ++i) {
            out.push_back({"horizon.up" + std::to_string(i) + ".weight", horizon_ups_[i].weight()});
            out.push_back({"horizon.up" + std::to_string(i) + ".bias", horizon_ups_[i].bias()});
        }
        horizon_conv_.collect_parameters(out);
        out.push_back({"project.weight", projection_->weight()});
        out.push_back({"project.bias", projection_->bias()});
        return out;
    }

    std::vector<BatchNormState<S>*> norm_states() {
        std::vector<BatchNormState<S>*> out;
        temporal_.collect_norm_states(out);
        main_.collect_norm_states(out);
        down_.collect_norm_states(out);
        spatial_.collect_norm_states(out);
        horizon_conv_.collect_norm_states(out);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto& p : parameters()) n += p.var.value().size();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.var.zero_grad();
    }

    struct Snapshot {
        std::vector<Tensor<S>> params;
        std::vector<Tensor<S>> norm_means, norm_vars;
        std::vector<bool> norm_ready;
    };

    Snapshot snapshot() {
        Snapshot s;
        for (auto& p : parameters()) s.params.push_back(p.var.value());
        for (auto* st : norm_states()) {
            s.norm_means.push_back(st->running_mean);
            s.norm_vars.push_back(st->running_var);
            s.norm_ready.push_back(st->ready);
        }
        return s;
    }

    void restore(const Snapshot& s) {
        auto params = parameters();
        if (params.size() != s.params.size())
            throw std::logic_error("snapshot restore: parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) params[i].var.value_mut() = s.params[i];
        auto states = norm_states();
        for (std::size_t i = 0; i < states.size(); ++i) {
            states[i]->running_mean = s.norm_means[i];
            states[i]->running_var = s.norm_vars[i];
            states[i]->ready = s.norm_ready[i];
        }
    }

    const LayerStack<S>& temporal_stack() const { return temporal_; }
    const LayerStack<S>& spatial_stack() const { return spatial_; }
    const LayerStack<S>& horizon_conv_stack() const { return horizon_conv_; }
    std::size_t horizon_up_count() const { return horizon_ups_.size(); }

private:
    bool has_temporal_stack() const {
        switch (cfg_.variant) {
            case Variant::causal:
            case Variant::reversed:
            case Variant::no_causal:
            case Variant::inverted:
                return true;
            default:
                return false;
        }
    }

    void check_input(const Tensor<S>& x) const {
        detail::check_rank("model", "input", x.rank(), 5);
        if (x.extent(1) != cfg_.channels)
            throw std::invalid_argument("model: input channels " + std::to_string(x.extent(1)) +
                                        " != configured " + std::to_string(cfg_.channels));
        if (x.extent(2) != cfg_.t_in)
            throw std::invalid_argument("model: input time extent " + std::to_string(x.extent(2)) +
                                        " != configured " + std::to_string(cfg_.t_in));
    }

    void add_block_layer(LayerStack<S>& stack, Conv3dLayer<S> conv, Rng&) {
        const std::int64_t out = conv.out_channels();
        stack.add_conv(std::move(conv));
        stack.add_batch_norm(out);
        stack.add_activation(S(0.01));
        if (cfg_.dropout > 0) stack.add_dropout(static_cast<S>(cfg_.dropout), next_dropout_id_++);
    }

    void build_temporal(std::int64_t in_ch, Rng& rng) {
        temporal_ = LayerStack<S>("temporal", in_ch);
        AxisPad tpad{0, 0}, tcrop{0, 0};
        const bool rev = cfg_.variant == Variant::reversed || cfg_.variant == Variant::inverted;
        if (cfg_.variant == Variant::causal) {
            tpad = causal_time_pad(cfg_.kernel_time);
            tcrop = causal_time_crop(cfg_.kernel_time);
        } else if (rev) {
            tpad = reversed_time_pad(cfg_.kernel_time);
        } else {
            tpad = symmetric_time_pad(cfg_.kernel_time);
        }
        for (auto [in, out] : channel_chain(in_ch, cfg_.layers, cfg_.filters, cfg_.filter_growth)) {
            PadSpec pad{tpad, {0, 0}, {0, 0}};
            PadSpec post{tcrop, {0, 0}, {0, 0}};
            add_block_layer(temporal_,
                            Conv3dLayer<S>(in, out, {cfg_.kernel_time, 1, 1}, {1, 1, 1}, pad, post, rng),
                            rng);
        }
        reverse_wrap_ = rev;
    }

    void build_spatial(LayerStack<S>& stack, const char* name, std::int64_t in_ch, Rng& rng) {
        stack = LayerStack<S>(name, in_ch);
        const std::int64_t p = (cfg_.kernel_space - 1) / 2;
        for (auto [in, out] : channel_chain(in_ch, cfg_.layers, cfg_.filters, cfg_.filter_growth)) {
            PadSpec pad{{0, 0}, {p, p}, {p, p}};
            add_block_layer(stack,
                            Conv3dLayer<S>(in, out, {1, cfg_.kernel_space, cfg_.kernel_space},
                                           {1, 1, 1}, pad, PadSpec::none(3), rng),
                            rng);
        }
    }

    void build(Rng& rng) {
        const std::int64_t C = cfg_.channels;
        const std::int64_t F = cfg_.filters;
        const std::int64_t p = (cfg_.kernel_space - 1) / 2;

        switch (cfg_.variant) {
            case Variant::causal:
            case Variant::reversed:
            case Variant::no_causal:
                build_temporal(C, rng);
                build_spatial(spatial_, "spatial", F, rng);
                break;
            case Variant::inverted:
                build_spatial(spatial_, "spatial", C, rng);
                build_temporal(F, rng);
                break;
            case Variant::no_temporal:
                build_spatial(spatial_, "spatial", C, rng);
                break;
            case Variant::std_3d: {
                main_ = LayerStack<S>("main", C);
                for (auto [in, out] : channel_chain(C, cfg_.layers, F, cfg_.filter_growth)) {
                    PadSpec pad{symmetric_time_pad(cfg_.kernel_time), {p, p}, {p, p}};
                    add_block_layer(main_,
                                    Conv3dLayer<S>(in, out,
                                                   {cfg_.kernel_time, cfg_.kernel_space, cfg_.kernel_space},
                                                   {1, 1, 1}, pad, PadSpec::none(3), rng),
                                    rng);
                }
                break;
            }
            case Variant::two_plus_one_d: {
                main_ = LayerStack<S>("main", C);
                for (auto [in, out] : channel_chain(C, cfg_.layers, F, cfg_.filter_growth)) {
                    PadSpec spad{{0, 0}, {p, p}, {p, p}};
                    add_block_layer(main_,
                                    Conv3dLayer<S>(in, out, {1, cfg_.kernel_space, cfg_.kernel_space},
                                                   {1, 1, 1}, spad, PadSpec::none(3), rng),
                                    rng);
                    PadSpec tpad{symmetric_time_pad(cfg_.kernel_time), {0, 0}, {0, 0}};
                    add_block_layer(main_,
                                    Conv3dLayer<S>(out, out, {cfg_.kernel_time, 1, 1}, {1, 1, 1},
                                                   tpad, PadSpec::none(3), rng),
                                    rng);
                }
                break;
            }
            case Variant::encoder_decoder: {
                down_ = LayerStack<S>("down", C);
                for (auto [in, out] : channel_chain(C, cfg_.layers, F, cfg_.filter_growth)) {
                    PadSpec pad{symmetric_time_pad(cfg_.kernel_time), {p, p}, {p, p}};
                    add_block_layer(down_,
                                    Conv3dLayer<S>(in, out,
                                                   {cfg_.kernel_time, cfg_.kernel_space, cfg_.kernel_space},
                                                   {1, 2, 2}, pad, PadSpec::none(3), rng),
                                    rng);
                }
                for (std::int64_t i = 0; i < cfg_.layers; ++i) {
                    const std::int64_t in = i == 0 ? down_.out_channels() : F;
                    PadSpec pad{{0, 0}, {p, p}, {p, p}};
                    ups_.emplace_back(in, F, Stride3{1, cfg_.kernel_space, cfg_.kernel_space},
                                      Stride3{1, 2, 2}, pad, Stride3{0, 0, 0}, rng);
                }
                break;
            }
        }

        if (cfg_.t_out > cfg_.t_in) {
            const HorizonPlan hp = plan_horizon(cfg_.t_in, cfg_.t_out);
            for (std::int64_t i = 0; i < hp.up_layers; ++i)
                horizon_ups_.emplace_back(F, F, Stride3{2, 1, 1}, Stride3{2, 1, 1}, PadSpec::none(3),
                                          Stride3{0, 0, 0}, rng);
            horizon_conv_ = LayerStack<S>("horizon", F);
            for (std::int64_t i = 0; i < hp.conv_layers; ++i) {
                PadSpec pad{{0, 0}, {p, p}, {p, p}};
                add_block_layer(horizon_conv_,
                                Conv3dLayer<S>(F, F, {1, cfg_.kernel_space, cfg_.kernel_space},
                                               {1, 1, 1}, pad, PadSpec::none(3), rng),
                                rng);
            }
        }

        projection_.emplace(F, C, Stride3{1, 1, 1}, Stride3{1, 1, 1}, PadSpec::none(3),
                            PadSpec::none(3), rng);
    }

    Var<S> temporal_forward(const Var<S>& x, const ExecContext& ctx) {
        if (!reverse_wrap_) return temporal_.forward(x, ctx);
        Var<S> h = reverse_axis(x, 2);
        h = temporal_.forward(h, ctx);
        return reverse_axis(h, 2);
    }

    Var<S> body_forward(const Var<S>& x, const ExecContext& ctx) {
        switch (cfg_.variant) {
            case Variant::causal:
            case Variant::reversed:
            case Variant::no_causal:
                return spatial_.forward(temporal_forward(x, ctx), ctx);
            case Variant::inverted:
                return temporal_forward(spatial_.forward(x, ctx), ctx);
            case Variant::no_temporal:
                return spatial_.forward(x, ctx);
            case Variant::std_3d:
            case Variant::two_plus_one_d:
                return main_.forward(x, ctx);
            case Variant::encoder_decoder: {
                // Spatial sizes on the way down decide each up-layer's
                // output padding so the decoder restores H and W exactly.
                std::vector<std::pair<std::int64_t, std::int64_t>> sizes;
                std::int64_t h = x.value().extent(3), w = x.value().extent(4);
                const std::int64_t d = cfg_.kernel_space, p = (d - 1) / 2;
                for (std::int64_t i = 0; i < cfg_.layers; ++i) {
                    sizes.emplace_back(h, w);
                    h = (h + 2 * p - d) / 2 + 1;
                    w = (w + 2 * p - d) / 2 + 1;
                }
                Var<S> y = down_.forward(x, ctx);
                for (std::size_t i = 0; i < ups_.size(); ++i) {
                    const auto [th, tw] = sizes[sizes.size() - 1 - i];
                    const std::int64_t cur_h = y.value().extent(3), cur_w = y.value().extent(4);
                    const std::int64_t base_h = (cur_h - 1) * 2 - 2 * p + d;
                    const std::int64_t base_w = (cur_w - 1) * 2 - 2 * p + d;
                    y = ups_[i].forward(y, Stride3{0, th - base_h, tw - base_w});
                }
                return y;
            }
        }
        throw std::logic_error("unreachable variant");
    }

    Var<S> horizon_forward(const Var<S>& s, const ExecContext& ctx) {
        if (cfg_.t_out == cfg_.t_in) return s;
        if (cfg_.t_out < cfg_.t_in) {
            PadSpec trim{{0, 0}, {0, 0}, {0, cfg_.t_in - cfg_.t_out}, {0, 0}, {0, 0}};
            return crop(s, trim);
        }
        Var<S> g = s;
        for (auto& up : horizon_ups_) g = up.forward(g);
        Var<S> cat = concat_time(s, g);
        const std::int64_t excess = cat.value().extent(2) - cfg_.t_out;
        if (excess > 0) {
            PadSpec trim{{0, 0}, {0, 0}, {0, excess}, {0, 0}, {0, 0}};
            cat = crop(cat, trim);
        }
        return horizon_conv_.forward(cat, ctx);
    }

    ModelConfig cfg_;
    std::uint64_t next_dropout_id_ = 1;
    bool reverse_wrap_ = false;

    LayerStack<S> temporal_;
    LayerStack<S> spatial_;
    LayerStack<S> main_;                          // std-3d / (2+1)d single stack
    LayerStack<S> down_;                          // encoder path
    std::vector<ConvTranspose3dLayer<S>> ups_;    // decoder path
    std::vector<ConvTranspose3dLayer<S>> horizon_ups_;
    LayerStack<S> horizon_conv_;
    std::optional<Conv3dLayer<S>> projection_;
};

} // namespace stconv
