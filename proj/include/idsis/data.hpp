#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace idsis::data {

// Toy class set; painter's order follows the enumerator order.
enum class ToyClass : std::uint8_t { Background = 0, Skin, Hair, Eyes, Eyebrows, Mouth };
inline constexpr int kToyClassCount = 6;

const std::vector<std::string>& toy_class_names();

enum Trait : std::size_t {
    AspectRatio = 0,
    SkinTone,
    HairTone,
    HairLength,
    EyeColor,
    EyeSpacing,
    EyebrowThickness,
    MouthWidth,
    kTraitCount
};

using TraitVector = std::array<double, kTraitCount>;

struct ToyIdentitySpec {
    std::uint32_t identity_id = 0;
    TraitVector traits{};

    // Traits are a pure function of (identity_id, dataset_seed).
    static ToyIdentitySpec from_seed(std::uint32_t identity_id, std::uint64_t dataset_seed);

    bool operator==(const ToyIdentitySpec&) const = default;
};

// H x W x 3, row-major, values in [-1, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Image&) const = default;
};

struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const LabelMap&) const = default;
};

// C binary planes, each H x W; exactly one plane is set per pixel.
struct SemanticMask {
    int classes = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> planes;
    std::vector<std::string> class_names;

    std::uint8_t at(int c, int y, int x) const {
        return planes[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t count(int c) const;
    // Argmax decode back to a label map.
    LabelMap decode() const;
    // Throws ValidationError unless every pixel has channel sum exactly 1.
    void check_partition() const;
};

struct FaceRecord {
    Image image;
    LabelMap mask;
    std::uint32_t identity_id = 0;
    std::uint64_t variation_seed = 0;
    std::string name;  // basename used on disk
};

struct DataConfig {
    int resolution = 64;
    int classes = kToyClassCount;
    int identity_count = 150;
    int variations = 10;
    std::uint64_t seed = 0;
    bool disjoint_identities = true;
};

enum class Layout { Toy, ExternalMaskDir };
enum class Split { Train, Test };

Layout parse_layout(const std::string& name);
Split parse_split(const std::string& name);

FaceRecord generate_record(const ToyIdentitySpec& spec, std::uint64_t variation_seed, const DataConfig& cfg);

SemanticMask one_hot(const LabelMap& labels, int classes, std::vector<std::string> class_names = {});

// Seed of the k-th variation of an identity inside a generated dataset.
std::uint64_t variation_seed_for(std::uint32_t identity_id, int variation, std::uint64_t dataset_seed);

// All identity_count x variations records, identity-major.
std::vector<FaceRecord> generate_dataset(const DataConfig& cfg);

// Number of held-out units (records or identities) for a 14:1 split.
std::size_t test_unit_count(std::size_t units);

// Deterministic 14:1 split. With disjoint identities, whole identities are held out.
std::vector<Split> assign_splits(const std::vector<std::uint32_t>& identity_ids, std::uint64_t seed,
                                 bool disjoint_identities);

// Writes images/, masks/ and meta.json.
void write_toy_dataset(const std::filesystem::path& root, const DataConfig& cfg);

struct DatasetMeta {
    DataConfig config;
    std::vector<std::string> class_names;
};

DatasetMeta read_dataset_meta(const std::filesystem::path& root, Layout layout, int classes);

std::vector<FaceRecord> load_dataset(const std::filesystem::path& root, Layout layout, Split split,
                                     int classes = kToyClassCount);

std::vector<FaceRecord> select_split(const std::vector<FaceRecord>& records, Split split, std::uint64_t seed,
                                     bool disjoint_identities);

}  // namespace idsis::data
