#include "stconv/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "stconv/rng.hpp"

namespace stconv {

static_assert(std::endian::native == std::endian::little,
              "gseq container assumes a little-endian host");

namespace {

constexpr std::uint32_t kGseqVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void validate_extents(const GridSeq& g) {
    if (g.t_total < 1 || g.h < 1 || g.w < 1 || g.c < 1)
        throw std::invalid_argument("gseq: extents must be >= 1");
    const std::int64_t want = g.t_total * g.h * g.w * g.c;
    if (static_cast<std::int64_t>(g.payload.size()) != want)
        throw std::invalid_argument("gseq: payload length " + std::to_string(g.payload.size()) +
                                    " != t*h*w*c = " + std::to_string(want));
    if (!g.lat.empty() && static_cast<std::int64_t>(g.lat.size()) != g.h)
        throw std::invalid_argument("gseq: latitude vector length must equal h");
    if (!g.lon.empty() && static_cast<std::int64_t>(g.lon.size()) != g.w)
        throw std::invalid_argument("gseq: longitude vector length must equal w");
}

float byteswap_f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&v, &u, 4);
    return v;
}

} // namespace

void write_gseq(const std::string& path, const GridSeq& grid) {
    validate_extents(grid);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write("GSEQ", 4);
    write_u32(out, kGseqVersion);
    write_u32(out, static_cast<std::uint32_t>(grid.t_total));
    write_u32(out, static_cast<std::uint32_t>(grid.h));
    write_u32(out, static_cast<std::uint32_t>(grid.w));
    write_u32(out, static_cast<std::uint32_t>(grid.c));
    const std::uint8_t has_coords = (!grid.lat.empty() && !grid.lon.empty()) ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&has_coords), 1);
    if (has_coords) {
        out.write(reinterpret_cast<const char*>(grid.lat.data()), 4 * grid.lat.size());
        out.write(reinterpret_cast<const char*>(grid.lon.data()), 4 * grid.lon.size());
    }
    out.write(reinterpret_cast<const char*>(grid.payload.data()), 4 * grid.payload.size());
    if (!out) throw std::runtime_error("write failed: " + path);
}

GridSeq read_gseq(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (std::string(magic, 4) != "GSEQ") throw std::runtime_error("gseq: bad magic in " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kGseqVersion)
        throw std::runtime_error("gseq: unsupported version " + std::to_string(version));
    GridSeq g;
    g.t_total = read_u32(in);
    g.h = read_u32(in);
    g.w = read_u32(in);
    g.c = read_u32(in);
    std::uint8_t has_coords = 0;
    in.read(reinterpret_cast<char*>(&has_coords), 1);
    if (!in) throw std::runtime_error("gseq: truncated header in " + path);
    if (g.t_total < 1 || g.h < 1 || g.w < 1 || g.c < 1)
        throw std::runtime_error("gseq: invalid extents in " + path);
    if (has_coords) {
        g.lat.resize(static_cast<std::size_t>(g.h));
        g.lon.resize(static_cast<std::size_t>(g.w));
        in.read(reinterpret_cast<char*>(g.lat.data()), 4 * g.lat.size());
        in.read(reinterpret_cast<char*>(g.lon.data()), 4 * g.lon.size());
    }
    g.payload.resize(static_cast<std::size_t>(g.t_total * g.h * g.w * g.c));
    in.read(reinterpret_cast<char*>(g.payload.data()), 4 * g.payload.size());
    if (!in) throw std::runtime_error("gseq: truncated payload in " + path);
    return g;
}

RawImportResult import_raw(const std::string& path, const RawImportOptions& opt) {
    if (opt.t_total < 1 || opt.h < 1 || opt.w < 1 || opt.c < 1)
        throw std::invalid_argument("import_raw: extents must be >= 1");
    if (opt.axis_order != "thwc" && opt.axis_order != "cthw")
        throw std::invalid_argument("import_raw: unsupported axis order " + opt.axis_order);

    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
    const std::int64_t count = opt.t_total * opt.h * opt.w * opt.c;
    if (bytes != count * 4)
        throw std::runtime_error("import_raw: file holds " + std::to_string(bytes) +
                                 " bytes, extents require " + std::to_string(count * 4));
    in.seekg(0);
    std::vector<float> raw(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(raw.data()), 4 * raw.size());
    if (!in) throw std::runtime_error("import_raw: short read from " + path);

    if (opt.big_endian)
        for (auto& v : raw) v = byteswap_f32(v);

    RawImportResult res;
    res.grid.t_total = opt.t_total;
    res.grid.h = opt.h;
    res.grid.w = opt.w;
    res.grid.c = opt.c;
    res.grid.payload.resize(raw.size());

    if (opt.axis_order == "thwc") {
        res.grid.payload = std::move(raw);
    } else { // cthw -> thwc
        for (std::int64_t ch = 0; ch < opt.c; ++ch)
            for (std::int64_t t = 0; t < opt.t_total; ++t)
                for (std::int64_t y = 0; y < opt.h; ++y)
                    for (std::int64_t x = 0; x < opt.w; ++x)
                        res.grid.at(t, y, x, ch) =
                            raw[static_cast<std::size_t>(((ch * opt.t_total + t) * opt.h + y) * opt.w + x)];
    }

    for (auto& v : res.grid.payload) {
        if (std::isnan(v)) {
            if (!opt.nan_fill)
                throw std::runtime_error("import_raw: NaN encountered and no fill value supplied");
            v = *opt.nan_fill;
            ++res.nan_count;
        }
    }
    return res;
}

SynthKind synth_kind_from_name(const std::string& name) {
    if (name == "advecting-blobs") return SynthKind::advecting_blobs;
    if (name == "traveling-wave") return SynthKind::traveling_wave;
    if (name == "noise-floor") return SynthKind::noise_floor;
    throw std::invalid_argument("unknown synthetic kind: " + name);
}

const char* synth_kind_name(SynthKind k) {
    switch (k) {
        case SynthKind::advecting_blobs: return "advecting-blobs";
        case SynthKind::traveling_wave: return "traveling-wave";
        case SynthKind::noise_floor: return "noise-floor";
    }
    throw std::logic_error("unknown synthetic kind enum");
}

GridSeq gen_synthetic(const SynthSpec& spec) {
    if (spec.h < 8 || spec.w < 8)
        throw std::invalid_argument("gen_synthetic: spatial extents must be at least 8x8");
    if (spec.t_total < 1) throw std::invalid_argument("gen_synthetic: t_total must be >= 1");

    GridSeq g;
    g.t_total = spec.t_total;
    g.h = spec.h;
    g.w = spec.w;
    g.c = 1;
    g.payload.assign(static_cast<std::size_t>(spec.t_total * spec.h * spec.w), 0.0f);
    Rng rng(spec.seed);

    switch (spec.kind) {
        case SynthKind::advecting_blobs: {
            struct Blob {
                double y, x, amp, inv2s2;
            };
            std::vector<Blob> blobs;
            for (std::int64_t i = 0; i < spec.blob_count; ++i) {
                Blob b;
                b.y = rng.uniform(0.0, static_cast<double>(spec.h));
                b.x = rng.uniform(0.0, static_cast<double>(spec.w));
                b.amp = rng.uniform(0.5, 1.5);
                const double sigma = spec.blob_sigma;
                b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
                blobs.push_back(b);
            }
            // Gaussian bumps on a torus; integer velocity keeps frame t+1 an
            // exact circular shift of frame t.
            const double H = static_cast<double>(spec.h), W = static_cast<double>(spec.w);
            for (std::int64_t t = 0; t < spec.t_total; ++t)
                for (std::int64_t y = 0; y < spec.h; ++y)
                    for (std::int64_t x = 0; x < spec.w; ++x) {
                        double v = 0;
                        for (const auto& b : blobs) {
                            double cy = std::fmod(b.y + static_cast<double>(spec.vel_y * t), H);
                            double cx = std::fmod(b.x + static_cast<double>(spec.vel_x * t), W);
                            if (cy < 0) cy += H;
                            if (cx < 0) cx += W;
                            double dy = std::abs(static_cast<double>(y) - cy);
                            double dx = std::abs(static_cast<double>(x) - cx);
                            dy = std::min(dy, H - dy);
                            dx = std::min(dx, W - dx);
                            v += b.amp * std::exp(-(dy * dy + dx * dx) * b.inv2s2);
                        }
                        if (spec.blob_noise_std > 0) v += spec.blob_noise_std * rng.normal();
                        g.at(t, y, x, 0) = static_cast<float>(v);
                    }
            break;
        }
        case SynthKind::traveling_wave: {
            const double phase0 = rng.uniform(0.0, 6.283185307179586);
            const double two_pi = 6.283185307179586476925286766559;
            for (std::int64_t t = 0; t < spec.t_total; ++t)
                for (std::int64_t y = 0; y < spec.h; ++y)
                    for (std::int64_t x = 0; x < spec.w; ++x) {
                        // f(t,y,x) = A sin(2pi(fy*(y - dy*t)/H + fx*(x - dx*t)/W) + phase)
                        const double yy = static_cast<double>(y - spec.disp_y * t);
                        const double xx = static_cast<double>(x - spec.disp_x * t);
                        const double arg =
                            two_pi * (static_cast<double>(spec.freq_y) * yy / static_cast<double>(spec.h) +
                                      static_cast<double>(spec.freq_x) * xx / static_cast<double>(spec.w)) +
                            phase0;
                        g.at(t, y, x, 0) = static_cast<float>(spec.amplitude * std::sin(arg));
                    }
            break;
        }
        case SynthKind::noise_floor: {
            for (auto& v : g.payload)
                v = static_cast<float>(spec.noise_mean + spec.noise_std * rng.normal());
            break;
        }
    }
    return g;
}

WindowedDataset::WindowedDataset(std::shared_ptr<const GridSeq> source, std::int64_t t_in,
                                 std::int64_t t_out, std::int64_t stride, std::int64_t start_time,
                                 std::int64_t end_time)
    : source_(std::move(source)), t_in_(t_in), t_out_(t_out), stride_(stride),
      start_time_(start_time), end_time_(end_time) {
    if (t_in_ < 1 || t_out_ < 1) throw std::invalid_argument("windows: lengths must be >= 1");
    if (stride_ < 1) throw std::invalid_argument("windows: stride must be >= 1");
    const std::int64_t usable = end_time_ - start_time_ - t_in_ - t_out_;
    num_samples_ = usable < 0 ? 0 : usable / stride_ + 1;
}

std::int64_t WindowedDataset::sample_start(std::int64_t i) const {
    if (i < 0 || i >= num_samples_)
        throw std::out_of_range("windows: sample " + std::to_string(i) + " out of range (count " +
                                std::to_string(num_samples_) + ")");
    return start_time_ + i * stride_;
}

WindowedDataset make_windows(std::shared_ptr<const GridSeq> source, std::int64_t t_in,
                             std::int64_t t_out, std::int64_t stride) {
    const std::int64_t total = source->t_total;
    if (total < t_in + t_out)
        throw std::invalid_argument("make_windows: series length " + std::to_string(total) +
                                    " shorter than window " + std::to_string(t_in + t_out));
    return WindowedDataset(std::move(source), t_in, t_out, stride, 0, total);
}

DatasetSplits split_windows(const WindowedDataset& all, const SplitRatios& ratios) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split: ratios must sum to 1, got " + std::to_string(sum));
    const std::int64_t total = all.source().t_total;
    const std::int64_t t1 = static_cast<std::int64_t>(ratios.train * static_cast<double>(total));
    const std::int64_t t2 =
        static_cast<std::int64_t>((ratios.train + ratios.val) * static_cast<double>(total));

    DatasetSplits out{
        WindowedDataset(all.source_ptr(), all.t_in(), all.t_out(), all.stride(), 0, t1),
        WindowedDataset(all.source_ptr(), all.t_in(), all.t_out(), all.stride(), t1, t2),
        WindowedDataset(all.source_ptr(), all.t_in(), all.t_out(), all.stride(), t2, total),
    };
    if (out.train.num_samples() < 1 || out.val.num_samples() < 1 || out.test.num_samples() < 1)
        throw std::invalid_argument("split: a split has zero samples (train " +
                                    std::to_string(out.train.num_samples()) + ", val " +
                                    std::to_string(out.val.num_samples()) + ", test " +
                                    std::to_string(out.test.num_samples()) + ")");
    return out;
}

Normalizer Normalizer::fit_zscore(const WindowedDataset& train_split) {
    const GridSeq& g = train_split.source();
    Normalizer nz;
    nz.kind_ = Kind::zscore;
    nz.mean_.assign(static_cast<std::size_t>(g.c), 0.0);
    nz.std_.assign(static_cast<std::size_t>(g.c), 1.0);
    const std::int64_t t0 = train_split.start_time(), t1 = train_split.end_time();
    const std::int64_t count = (t1 - t0) * g.h * g.w;
    for (std::int64_t ch = 0; ch < g.c; ++ch) {
        double acc = 0;
        for (std::int64_t t = t0; t < t1; ++t)
            for (std::int64_t y = 0; y < g.h; ++y)
                for (std::int64_t x = 0; x < g.w; ++x) acc += g.at(t, y, x, ch);
        const double mean = acc / static_cast<double>(count);
        double vacc = 0;
        for (std::int64_t t = t0; t < t1; ++t)
            for (std::int64_t y = 0; y < g.h; ++y)
                for (std::int64_t x = 0; x < g.w; ++x) {
                    const double d = g.at(t, y, x, ch) - mean;
                    vacc += d * d;
                }
        const double sd = std::sqrt(vacc / static_cast<double>(count));
        nz.mean_[static_cast<std::size_t>(ch)] = mean;
        nz.std_[static_cast<std::size_t>(ch)] = sd;
        if (!(sd > 0)) {
            nz.kind_ = Kind::none;
            nz.warning_ = "channel " + std::to_string(ch) +
                          " has zero variance on the training split; normalization disabled";
            return nz;
        }
    }
    return nz;
}

} // namespace stconv
