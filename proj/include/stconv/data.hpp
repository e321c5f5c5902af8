#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stconv/tensor.hpp"

namespace stconv {

/// In-memory mirror of the .gseq container: a gridded series stored as
/// 32-bit floats in (time, h, w, c) order, with optional coordinate vectors.
///
/// File layout (all little endian):
///   "GSEQ" | u32 version=1 | u32 t_total | u32 h | u32 w | u32 c
///   | u8 has_coords | [h floats lat, w floats lon]
///   | t_total*h*w*c payload floats
struct GridSeq {
    std::int64_t t_total = 0, h = 0, w = 0, c = 0;
    std::vector<float> payload; // (t,h,w,c) row-major
    std::vector<float> lat, lon;

    float& at(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t ch) {
        return payload[static_cast<std::size_t>(((t * h + y) * w + x) * c + ch)];
    }
    float at(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t ch) const {
        return payload[static_cast<std::size_t>(((t * h + y) * w + x) * c + ch)];
    }
    std::int64_t frame_size() const { return h * w * c; }
};

GridSeq read_gseq(const std::string& path);
void write_gseq(const std::string& path, const GridSeq& grid);

struct RawImportOptions {
    std::int64_t t_total = 0, h = 0, w = 0, c = 1;
    std::string axis_order = "thwc"; // or "cthw"
    bool big_endian = false;
    std::optional<float> nan_fill;   // NaNs rejected unless set
};

struct RawImportResult {
    GridSeq grid;
    std::int64_t nan_count = 0;
};

/// Converts a raw float32 dump into the container, normalizing byte order
/// and axis order. Size mismatches and un-filled NaNs are rejected.
RawImportResult import_raw(const std::string& path, const RawImportOptions& opt);

enum class SynthKind { advecting_blobs, traveling_wave, noise_floor };

SynthKind synth_kind_from_name(const std::string& name);
const char* synth_kind_name(SynthKind k);

struct SynthSpec {
    SynthKind kind = SynthKind::advecting_blobs;
    std::int64_t t_total = 200, h = 8, w = 8;
    std::uint64_t seed = 0;
    // advecting blobs: integer per-series velocity with wraparound
    std::int64_t blob_count = 3;
    double blob_sigma = 1.3;
    std::int64_t vel_y = 1, vel_x = 1;
    double blob_noise_std = 0.0;
    // traveling wave: integer displacement per step, integer frequencies
    std::int64_t disp_y = 0, disp_x = 1;
    std::int64_t freq_y = 1, freq_x = 1;
    double amplitude = 1.0;
    // noise floor
    double noise_mean = 0.0, noise_std = 1.0;
};

GridSeq gen_synthetic(const SynthSpec& spec);

/// A chronological slice of a grid series plus windowing metadata. Sample i
/// reads inputs at [start + i*stride, +t_in) and targets at the following
/// t_out steps; every window lies inside [start_time, end_time).
class WindowedDataset {
public:
    WindowedDataset() = default;
    WindowedDataset(std::shared_ptr<const GridSeq> source, std::int64_t t_in, std::int64_t t_out,
                    std::int64_t stride, std::int64_t start_time, std::int64_t end_time);

    std::int64_t num_samples() const { return num_samples_; }
    std::int64_t t_in() const { return t_in_; }
    std::int64_t t_out() const { return t_out_; }
    std::int64_t stride() const { return stride_; }
    std::int64_t start_time() const { return start_time_; }
    std::int64_t end_time() const { return end_time_; }
    std::int64_t sample_start(std::int64_t i) const;
    const GridSeq& source() const { return *source_; }
    std::shared_ptr<const GridSeq> source_ptr() const { return source_; }

    /// First/last raw time index any sample of this split touches.
    std::int64_t min_time_used() const { return start_time_; }
    std::int64_t max_time_used() const {
        return sample_start(num_samples_ - 1) + t_in_ + t_out_ - 1;
    }

    /// Gathers (input, target) batches into the canonical (N,C,T,H,W) layout.
    template <typename S>
    void fetch(const std::vector<std::int64_t>& ids, Tensor<S>& x, Tensor<S>& y) const {
        const GridSeq& g = *source_;
        const std::int64_t n = static_cast<std::int64_t>(ids.size());
        x = Tensor<S>({n, g.c, t_in_, g.h, g.w});
        y = Tensor<S>({n, g.c, t_out_, g.h, g.w});
        for (std::int64_t b = 0; b < n; ++b) {
            const std::int64_t s0 = sample_start(ids[static_cast<std::size_t>(b)]);
            gather(g, s0, t_in_, b, x);
            gather(g, s0 + t_in_, t_out_, b, y);
        }
    }

private:
    template <typename S>
    static void gather(const GridSeq& g, std::int64_t t0, std::int64_t len, std::int64_t b,
                       Tensor<S>& dst) {
        // (t,h,w,c) storage -> (N,C,T,H,W) compute layout
        for (std::int64_t ch = 0; ch < g.c; ++ch)
            for (std::int64_t t = 0; t < len; ++t)
                for (std::int64_t y = 0; y < g.h; ++y)
                    for (std::int64_t x = 0; x < g.w; ++x)
                        dst.at(b, ch, t, y, x) = static_cast<S>(g.at(t0 + t, y, x, ch));
    }

    std::shared_ptr<const GridSeq> source_;
    std::int64_t t_in_ = 0, t_out_ = 0, stride_ = 1;
    std::int64_t start_time_ = 0, end_time_ = 0;
    std::int64_t num_samples_ = 0;
};

WindowedDataset make_windows(std::shared_ptr<const GridSeq> source, std::int64_t t_in,
                             std::int64_t t_out, std::int64_t stride);

struct SplitRatios {
    double train = 0.6, val = 0.2, test = 0.2;
};

struct DatasetSplits {
    WindowedDataset train, val, test;
};

/// Chronological partition of the timeline (train earliest). Windows that
/// would straddle a boundary are dropped; any empty split is rejected.
DatasetSplits split_windows(const WindowedDataset& all, const SplitRatios& ratios);

/// Optional per-channel z-score transform fitted on the training split only.
class Normalizer {
public:
    enum class Kind { none, zscore };

    static Normalizer none() { return Normalizer(); }
    static Normalizer fit_zscore(const WindowedDataset& train_split);

    Kind kind() const { return kind_; }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return std_; }
    const std::string& warning() const { return warning_; }

    template <typename S>
    void apply(Tensor<S>& t) const {
        if (kind_ == Kind::none) return;
        transform(t, false);
    }
    template <typename S>
    void invert(Tensor<S>& t) const {
        if (kind_ == Kind::none) return;
        transform(t, true);
    }

private:
    template <typename S>
    void transform(Tensor<S>& t, bool inverse) const {
        const std::int64_t N = t.extent(0), C = t.extent(1);
        const std::int64_t inner = t.size() / (N * C);
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t ch = 0; ch < C; ++ch) {
                S* p = t.data() + (n * C + ch) * inner;
                const S m = static_cast<S>(mean_[static_cast<std::size_t>(ch)]);
                const S s = static_cast<S>(std_[static_cast<std::size_t>(ch)]);
                if (inverse)
                    for (std::int64_t i = 0; i < inner; ++i) p[i] = p[i] * s + m;
                else
                    for (std::int64_t i = 0; i < inner; ++i) p[i] = (p[i] - m) / s;
            }
    }

    Kind kind_ = Kind::none;
    std::vector<double> mean_, std_;
    std::string warning_;
};

} // namespace stconv
