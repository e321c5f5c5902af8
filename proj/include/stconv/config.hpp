#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace stconv {

enum class Variant {
    causal,          // pad-and-trim causal temporal block
    reversed,        // reverse-wrapped temporal block
    no_causal,       // temporal block with symmetric time padding (leaks future)
    std_3d,          // single stack of full t x d x d kernels
    encoder_decoder, // strided spatial downsampling + transposed-conv upsampling
    two_plus_one_d,  // composite layers: spatial conv then temporal conv
    no_temporal,     // spatial block only
    inverted,        // spatial block before the (reversed) temporal block
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/// Declarative description of one model build. `digest()` is embedded in
/// checkpoints so weights cannot be loaded under a different config.
struct ModelConfig {
    Variant variant = Variant::reversed;
    std::int64_t layers = 2;        // L, per block
    std::int64_t kernel_time = 3;   // t
    std::int64_t kernel_space = 3;  // d, odd
    std::int64_t filters = 16;      // F
    std::int64_t t_in = 5;          // T
    std::int64_t t_out = 5;         // T''
    std::int64_t channels = 1;      // C
    double dropout = 0.0;
    bool filter_growth = true;

    void validate() const;
    std::string serialize() const;              // canonical key=value text
    static ModelConfig parse(const std::string& text);
    std::uint64_t digest() const;
};

/// Maps an ablation tag onto a config. Unknown tags are rejected.
ModelConfig apply_ablation_tag(const ModelConfig& base, const std::string& tag);

extern const char* const kAblationTags[7];

} // namespace stconv
