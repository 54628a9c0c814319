#include "xlearner/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "xlearner/errors.hpp"

namespace xl {

std::string_view to_string(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::shape_class: return "shape-class";
        case GeneratorKind::texture_class: return "texture-class";
        case GeneratorKind::shape_seg: return "shape-seg";
    }
    return "?";
}

GeneratorKind generator_kind_from_string(std::string_view s) {
    if (s == "shape-class") return GeneratorKind::shape_class;
    if (s == "texture-class") return GeneratorKind::texture_class;
    if (s == "shape-seg") return GeneratorKind::shape_seg;
    throw ValidationError("unknown generator kind '" + std::string(s) + "'");
}

void validate_generator(const SyntheticGeneratorSpec& spec) {
    if (spec.height < 8 || spec.width < 8) throw ValidationError("generator image must be at least 8x8");
    if (spec.noise_level < 0 || spec.noise_level > 1) throw ValidationError("noise_level must be in [0, 1]");
    const std::size_t max_c = spec.kind == GeneratorKind::texture_class ? kMaxTextureClasses
                              : spec.kind == GeneratorKind::shape_class ? kMaxShapeClasses
                                                                        : kMaxShapeClasses + 1;
    if (spec.num_classes < 2 || spec.num_classes > max_c)
        throw ValidationError("num_classes for " + std::string(to_string(spec.kind)) + " must be in [2, " +
                              std::to_string(max_c) + "]");
}

namespace {

using Rgb = std::array<int, 3>;

struct Palette {
    Rgb background;
    Rgb background_alt;
    std::array<Rgb, 6> colors;
};

Rgb random_color(Rng& rng, int lo, int hi) {
    return {lo + static_cast<int>(rng.below(hi - lo + 1)), lo + static_cast<int>(rng.below(hi - lo + 1)),
            lo + static_cast<int>(rng.below(hi - lo + 1))};
}

Palette make_palette(std::uint64_t palette_seed) {
    Rng rng(derive_seed(palette_seed, "palette"));
    Palette p;
    p.background = random_color(rng, 0, 110);
    p.background_alt = random_color(rng, 0, 110);
    for (auto& c : p.colors) c = random_color(rng, 120, 255);
    return p;
}

// Signed pixel offsets from the shape center, scaled by 4 for sub-pixel
// precision without floating point.
bool inside_shape(std::size_t shape, long dx, long dy, long r) {
    const long ax = std::labs(dx), ay = std::labs(dy);
    switch (shape) {
        case 0: return dx * dx + dy * dy <= r * r;                                   // disk
        case 1: return 5 * ax <= 4 * r && 5 * ay <= 4 * r;                           // square
        case 2: return dy <= r && dy >= -r && 2 * ax <= dy + r;                      // triangle
        case 3: return (3 * ax <= r && ay <= r) || (3 * ay <= r && ax <= r);         // plus
        case 4: return dx * dx + dy * dy <= r * r && 25 * (dx * dx + dy * dy) >= 9 * r * r;  // ring
        case 5: return ax + ay <= r;                                                 // diamond
        case 6: return std::labs(ax - ay) * 4 <= r && ax <= r && ay <= r;            // X
        case 7: return (5 * ax <= 4 * r && 5 * ay <= 4 * r) && !(2 * ax <= r && 2 * ay <= r);  // frame
        default: return false;
    }
}

bool inside_texture(std::size_t texture, long x, long y, long period, long phase) {
    const long half = std::max(1L, period / 2);
    auto mod = [](long a, long m) { return ((a % m) + m) % m; };
    switch (texture) {
        case 0: return mod(y + phase, period) < half;                               // horizontal stripes
        case 1: return mod(x + phase, period) < half;                               // vertical stripes
        case 2: return (mod(x + phase, period) < half) != (mod(y + phase, period) < half);  // checker
        case 3: return mod(x + y + phase, period) < half;                           // diagonal
        case 4: return mod(x - y + phase, period) < half;                           // anti-diagonal
        case 5: {                                                                   // dots
            const long cx = mod(x + phase, period) - half, cy = mod(y + phase, period) - half;
            return 4 * (cx * cx + cy * cy) <= half * half;
        }
        case 6: return mod(x + phase, period) < 2 || mod(y + phase, period) < 2;    // grid
        case 7: {                                                                   // concentric rings
            const double d = std::sqrt(static_cast<double>(x * x + y * y));
            return static_cast<long>(d / static_cast<double>(half)) % 2 == 0;
        }
        default: return false;
    }
}

struct Canvas {
    std::size_t h, w;
    std::vector<int> rgb;  // 3 x h x w, unclamped

    Canvas(std::size_t h_, std::size_t w_) : h(h_), w(w_), rgb(3 * h_ * w_, 0) {}
    void set(std::size_t y, std::size_t x, const Rgb& c) {
        for (std::size_t k = 0; k < 3; ++k) rgb[(k * h + y) * w + x] = c[k];
    }
};

void paint_background(Canvas& cv, const Palette& pal, Rng& rng) {
    // Horizontal blend between two palette colors with a random direction.
    const bool vertical = rng.below(2) == 1;
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x) {
            const long t = static_cast<long>(vertical ? y : x), n = static_cast<long>(vertical ? cv.h : cv.w);
            Rgb c;
            for (std::size_t k = 0; k < 3; ++k)
                c[k] = static_cast<int>((pal.background[k] * (n - t) + pal.background_alt[k] * t) / n);
            cv.set(y, x, c);
        }
}

// Draws `shape` and returns the covered pixel mask.
void paint_shape(Canvas& cv, std::size_t shape, long cx, long cy, long r, const Rgb& color,
                 std::vector<std::int32_t>* mask, std::int32_t mask_value) {
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x) {
            const long dx = 4 * static_cast<long>(x) + 2 - cx, dy = 4 * static_cast<long>(y) + 2 - cy;
            if (!inside_shape(shape, dx, dy, r)) continue;
            cv.set(y, x, color);
            if (mask) (*mask)[y * cv.w + x] = mask_value;
        }
}

void add_noise_and_quantize(const Canvas& cv, double noise_level, Rng& rng, std::vector<std::uint8_t>& out) {
    const long amp = static_cast<long>(std::lround(noise_level * 255.0));
    out.resize(cv.rgb.size());
    for (std::size_t i = 0; i < cv.rgb.size(); ++i) {
        long v = cv.rgb[i];
        if (amp > 0) v += static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * amp + 1))) - amp;
        out[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
    }
}

}  // namespace

SyntheticSource::SyntheticSource(std::string id, SyntheticGeneratorSpec spec, std::size_t size, std::uint64_t seed)
    : id_(std::move(id)), spec_(spec), size_(size), seed_(seed) {
    validate_generator(spec_);
}

std::int32_t SyntheticSource::class_of(std::size_t index) const {
    return static_cast<std::int32_t>(index % spec_.num_classes);
}

Sample SyntheticSource::get(std::size_t index) const {
    if (index >= size_) throw std::out_of_range("sample index " + std::to_string(index) + " >= " + std::to_string(size_));
    const Palette pal = make_palette(spec_.palette_seed);
    Rng rng(derive_seed(seed_, "sample", index));
    const std::size_t h = spec_.height, w = spec_.width;
    const long H4 = 4 * static_cast<long>(h), W4 = 4 * static_cast<long>(w);
    const long min_dim = std::min(H4, W4);
    Canvas cv(h, w);
    Sample s;

    auto random_color_from = [&](Rng& r) { return pal.colors[r.below(pal.colors.size())]; };
    auto place = [&](long r) {
        const long cx = r + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, W4 - 2 * r))));
        const long cy = r + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max(1L, H4 - 2 * r))));
        return std::pair{cx, cy};
    };

    switch (spec_.kind) {
        case GeneratorKind::shape_class: {
            const std::int32_t label = class_of(index);
            paint_background(cv, pal, rng);
            for (std::size_t d = 0; d < spec_.distractors; ++d) {
                std::size_t other = rng.below(spec_.num_classes - 1);
                if (other >= static_cast<std::size_t>(label)) ++other;
                const long r = min_dim / 14 + static_cast<long>(rng.below(static_cast<std::uint64_t>(min_dim / 14)));
                auto [cx, cy] = place(r);
                paint_shape(cv, other, cx, cy, r, random_color_from(rng), nullptr, 0);
            }
            const long r = min_dim / 5 + static_cast<long>(rng.below(static_cast<std::uint64_t>(min_dim / 7)));
            auto [cx, cy] = place(r);
            paint_shape(cv, static_cast<std::size_t>(label), cx, cy, r, random_color_from(rng), nullptr, 0);
            s.label = {label};
            break;
        }
        case GeneratorKind::texture_class: {
            const std::int32_t label = class_of(index);
            const Rgb bg = pal.colors[rng.below(pal.colors.size())];
            Rgb fg = pal.background;
            if (rng.below(2)) fg = pal.background_alt;
            const long period = 6 + static_cast<long>(rng.below(7));
            const long phase = static_cast<long>(rng.below(static_cast<std::uint64_t>(period)));
            const long ox = static_cast<long>(rng.below(w)), oy = static_cast<long>(rng.below(h));
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    cv.set(y, x, inside_texture(static_cast<std::size_t>(label), static_cast<long>(x) - ox,
                                                static_cast<long>(y) - oy, period, phase)
                                     ? fg
                                     : bg);
            s.label = {label};
            break;
        }
        case GeneratorKind::shape_seg: {
            paint_background(cv, pal, rng);
            s.label.assign(h * w, 0);
            const std::size_t n_shapes = 1 + rng.below(3);
            for (std::size_t k = 0; k < n_shapes; ++k) {
                const auto cls = static_cast<std::int32_t>(1 + rng.below(spec_.num_classes - 1));
                const long r = min_dim / 8 + static_cast<long>(rng.below(static_cast<std::uint64_t>(min_dim / 6)));
                auto [cx, cy] = place(r);
                paint_shape(cv, static_cast<std::size_t>(cls - 1), cx, cy, r, random_color_from(rng), &s.label, cls);
            }
            break;
        }
    }
    add_noise_and_quantize(cv, spec_.noise_level, rng, s.pixels);
    return s;
}

SyntheticSource make_synthetic_source(const SyntheticGeneratorSpec& spec, std::size_t size, std::uint64_t seed,
                                      std::string id) {
    return SyntheticSource(std::move(id), spec, size, seed);
}

std::pair<IndexRange, IndexRange> split_indices(std::size_t n, double test_fraction) {
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    return {{0, n - n_test}, {n - n_test, n}};
}

float normalize_pixel(std::uint8_t p) { return (static_cast<float>(p) / 255.0f - 0.5f) * 4.0f; }

Batch make_batch(const SyntheticSource& source, std::span<const std::size_t> indices, std::string task_id) {
    const auto& spec = source.spec();
    const std::size_t hw = spec.height * spec.width;
    Batch b;
    b.images = Tensor<float>({indices.size(), 3, spec.height, spec.width});
    b.labels.reserve(indices.size() * (spec.dense() ? hw : 1));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        Sample s = source.get(indices[i]);
        float* dst = b.images.data() + i * 3 * hw;
        for (std::size_t k = 0; k < s.pixels.size(); ++k) dst[k] = normalize_pixel(s.pixels[k]);
        b.labels.insert(b.labels.end(), s.label.begin(), s.label.end());
    }
    b.task_id = std::move(task_id);
    b.source_id = source.id();
    b.indices.assign(indices.begin(), indices.end());
    return b;
}

namespace {
constexpr char kCacheMagic[8] = {'X', 'L', 'S', 'R', 'C', '0', '0', '1'};

template <class U>
void write_pod(std::ofstream& os, const U& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
template <class U>
U read_pod(std::ifstream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw IoError("source cache truncated");
    return v;
}
}  // namespace

void write_source_cache(const SyntheticSource& source, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kCacheMagic, sizeof(kCacheMagic));
    write_pod<std::uint64_t>(os, source.size());
    std::vector<Sample> samples;
    samples.reserve(source.size());
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        samples.push_back(source.get(i));
        write_pod<std::uint64_t>(os, offset);
        offset += 16 + samples.back().pixels.size() + 4 * samples.back().label.size();
    }
    for (const auto& s : samples) {
        write_pod<std::uint64_t>(os, s.pixels.size());
        write_pod<std::uint64_t>(os, s.label.size());
        os.write(reinterpret_cast<const char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size()));
        os.write(reinterpret_cast<const char*>(s.label.data()), static_cast<std::streamsize>(4 * s.label.size()));
    }
    if (!os) throw IoError("failed writing " + path.string());
}

std::vector<Sample> read_source_cache(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) throw IoError(path.string() + " is not a source cache");
    const auto n = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) read_pod<std::uint64_t>(is);
    std::vector<Sample> out(n);
    for (auto& s : out) {
        s.pixels.resize(read_pod<std::uint64_t>(is));
        s.label.resize(read_pod<std::uint64_t>(is));
        is.read(reinterpret_cast<char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size()));
        is.read(reinterpret_cast<char*>(s.label.data()), static_cast<std::streamsize>(4 * s.label.size()));
        if (!is) throw IoError("source cache truncated");
    }
    return out;
}

}  // namespace xl
