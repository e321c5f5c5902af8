#include "stconv/config.hpp"

#include <stdexcept>

#include "stconv/textio.hpp"

namespace stconv {

namespace {
struct VariantName {
    Variant v;
    const char* name;
};
const VariantName kVariants[] = {
    {Variant::causal, "causal"},
    {Variant::reversed, "reversed"},
    {Variant::no_causal, "no-causal"},
    {Variant::std_3d, "std-3dcnn"},
    {Variant::encoder_decoder, "encoder-decoder"},
    {Variant::two_plus_one_d, "two-plus-one-d"},
    {Variant::no_temporal, "no-temporal"},
    {Variant::inverted, "inverted"},
};
} // namespace

const char* variant_name(Variant v) {
    for (const auto& e : kVariants)
        if (e.v == v) return e.name;
    throw std::logic_error("unknown variant enum value");
}

Variant variant_from_name(const std::string& name) {
    for (const auto& e : kVariants)
        if (name == e.name) return e.v;
    throw std::invalid_argument("unknown variant: " + name);
}

void ModelConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
    if (kernel_time < 1) throw std::invalid_argument("config: kernel_time must be >= 1");
    if (kernel_space < 1 || kernel_space % 2 == 0)
        throw std::invalid_argument("config: kernel_space must be odd, got " +
                                    std::to_string(kernel_space));
    if (filters < 1) throw std::invalid_argument("config: filters must be >= 1");
    if (t_in < 1) throw std::invalid_argument("config: t_in must be >= 1");
    if (t_out < 1) throw std::invalid_argument("config: t_out must be >= 1");
    if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw std::invalid_argument("config: dropout must lie in [0,1)");
}

std::string ModelConfig::serialize() const {
    KvMap kv;
    kv["variant"] = variant_name(variant);
    kv["layers"] = std::to_string(layers);
    kv["kernel_time"] = std::to_string(kernel_time);
    kv["kernel_space"] = std::to_string(kernel_space);
    kv["filters"] = std::to_string(filters);
    kv["t_in"] = std::to_string(t_in);
    kv["t_out"] = std::to_string(t_out);
    kv["channels"] = std::to_string(channels);
    kv["dropout"] = format_double(dropout);
    kv["filter_growth"] = filter_growth ? "1" : "0";
    return kv_serialize(kv);
}

ModelConfig ModelConfig::parse(const std::string& text) {
    const KvMap kv = kv_parse(text);
    ModelConfig cfg;
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::runtime_error(std::string("config: missing key ") + key);
        return it->second;
    };
    cfg.variant = variant_from_name(get("variant"));
    cfg.layers = std::stoll(get("layers"));
    cfg.kernel_time = std::stoll(get("kernel_time"));
    cfg.kernel_space = std::stoll(get("kernel_space"));
    cfg.filters = std::stoll(get("filters"));
    cfg.t_in = std::stoll(get("t_in"));
    cfg.t_out = std::stoll(get("t_out"));
    cfg.channels = std::stoll(get("channels"));
    cfg.dropout = std::stod(get("dropout"));
    cfg.filter_growth = get("filter_growth") == "1";
    cfg.validate();
    return cfg;
}

std::uint64_t ModelConfig::digest() const { return fnv1a64(serialize()); }

const char* const kAblationTags[7] = {
    "std-3dcnn", "encoder-decoder", "two-plus-one-d", "no-temporal",
    "inverted",  "no-filter-increase", "no-causal",
};

ModelConfig apply_ablation_tag(const ModelConfig& base, const std::string& tag) {
    ModelConfig cfg = base;
    if (tag == "std-3dcnn") {
        cfg.variant = Variant::std_3d;
    } else if (tag == "encoder-decoder") {
        cfg.variant = Variant::encoder_decoder;
    } else if (tag == "two-plus-one-d") {
        cfg.variant = Variant::two_plus_one_d;
    } else if (tag == "no-temporal") {
        cfg.variant = Variant::no_temporal;
    } else if (tag == "inverted") {
        cfg.variant = Variant::inverted;
    } else if (tag == "no-filter-increase") {
        cfg.variant = Variant::reversed;
        cfg.filter_growth = false;
    } else if (tag == "no-causal") {
        cfg.variant = Variant::no_causal;
    } else {
        throw std::invalid_argument("unknown ablation tag: " + tag);
    }
    cfg.validate();
    return cfg;
}

} // namespace stconv
