#pragma once

// Deterministic synthetic image sources standing in for real pre-training and
// transfer datasets. A sample is a pure function of (spec, seed, index).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xlearner/rng.hpp"
#include "xlearner/tensor.hpp"

namespace xl {

enum class GeneratorKind { shape_class, texture_class, shape_seg };

std::string_view to_string(GeneratorKind k);
GeneratorKind generator_kind_from_string(std::string_view s);

inline constexpr std::size_t kMaxShapeClasses = 8;
inline constexpr std::size_t kMaxTextureClasses = 8;

struct SyntheticGeneratorSpec {
    GeneratorKind kind = GeneratorKind::shape_class;
    // For shape-seg this counts the background class.
    std::size_t num_classes = 4;
    std::size_t height = 64, width = 64;
    double noise_level = 0.1;  // per-pixel uniform noise amplitude as a fraction of 255
    std::uint64_t palette_seed = 0;
    // Smaller shapes of other classes drawn behind the dominant one.
    std::size_t distractors = 0;

    bool dense() const { return kind == GeneratorKind::shape_seg; }
    friend bool operator==(const SyntheticGeneratorSpec&, const SyntheticGeneratorSpec&) = default;
};

// Throws ValidationError when the spec cannot be generated.
void validate_generator(const SyntheticGeneratorSpec& spec);

struct Sample {
    std::vector<std::uint8_t> pixels;  // 3 x H x W, channel-major
    std::vector<std::int32_t> label;   // 1 entry (classification) or H*W (segmentation)
};

class SyntheticSource {
public:
    SyntheticSource(std::string id, SyntheticGeneratorSpec spec, std::size_t size, std::uint64_t seed);

    const std::string& id() const { return id_; }
    const SyntheticGeneratorSpec& spec() const { return spec_; }
    std::size_t size() const { return size_; }
    std::uint64_t seed() const { return seed_; }

    Sample get(std::size_t index) const;

    // Classification sources are balanced by construction: label = index mod C.
    std::int32_t class_of(std::size_t index) const;

private:
    std::string id_;
    SyntheticGeneratorSpec spec_;
    std::size_t size_;
    std::uint64_t seed_;
};

SyntheticSource make_synthetic_source(const SyntheticGeneratorSpec& spec, std::size_t size, std::uint64_t seed,
                                      std::string id = "source");

// Contiguous [begin, end) index window into a source.
struct IndexRange {
    std::size_t begin = 0, end = 0;
    std::size_t size() const { return end - begin; }
};

// Splits [0, n) into a leading train part and a trailing test part.
std::pair<IndexRange, IndexRange> split_indices(std::size_t n, double test_fraction);

struct Batch {
    Tensor<float> images;  // [B, 3, H, W], normalized
    std::vector<std::int32_t> labels;
    std::string task_id;
    std::string source_id;
    std::vector<std::size_t> indices;
};

float normalize_pixel(std::uint8_t p);

Batch make_batch(const SyntheticSource& source, std::span<const std::size_t> indices, std::string task_id = "");

// Simple indexed cache: header, offset table, then raw samples.
void write_source_cache(const SyntheticSource& source, const std::filesystem::path& path);
std::vector<Sample> read_source_cache(const std::filesystem::path& path);

}  // namespace xl
