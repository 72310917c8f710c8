#include "idsis/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "idsis/errors.hpp"
#include "idsis/hashing.hpp"
#include "idsis/image_io.hpp"

namespace idsis::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<std::string>& toy_class_names() {
    static const std::vector<std::string> names{"background", "skin", "hair", "eyes", "eyebrows", "mouth"};
    return names;
}

ToyIdentitySpec ToyIdentitySpec::from_seed(std::uint32_t identity_id, std::uint64_t dataset_seed) {
    ToyIdentitySpec spec;
    spec.identity_id = identity_id;
    const std::uint64_t base = hash_combine(hash_combine(0x1d5e7ULL, dataset_seed), identity_id);
    for (std::size_t k = 0; k < kTraitCount; ++k) {
        spec.traits[k] = unit_real(hash_combine(base, k));
    }
    return spec;
}

std::size_t SemanticMask::count(int c) const {
    const auto begin = planes.begin() + static_cast<std::ptrdiff_t>(c) * height * width;
    return static_cast<std::size_t>(std::count(begin, begin + static_cast<std::ptrdiff_t>(height) * width, 1));
}

LabelMap SemanticMask::decode() const {
    LabelMap out(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (at(c, y, x) > at(best, y, x)) {
                    best = c;
                }
            }
            out.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

void SemanticMask::check_partition() const {
    if (planes.size() != static_cast<std::size_t>(classes) * height * width) {
        throw ValidationError("semantic mask plane buffer has wrong size");
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int sum = 0;
            for (int c = 0; c < classes; ++c) {
                const auto v = at(c, y, x);
                if (v > 1) {
                    throw ValidationError("semantic mask channel " + std::to_string(c) + " is not binary at pixel (" +
                                          std::to_string(y) + ", " + std::to_string(x) + ")");
                }
                sum += v;
            }
            if (sum != 1) {
                throw ValidationError("semantic mask is not a partition at pixel (" + std::to_string(y) + ", " +
                                      std::to_string(x) + "): channel sum " + std::to_string(sum));
            }
        }
    }
}

Layout parse_layout(const std::string& name) {
    if (name == "toy") return Layout::Toy;
    if (name == "external-mask-dir") return Layout::ExternalMaskDir;
    throw ConfigError("unknown dataset layout '" + name + "' (expected toy or external-mask-dir)");
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

namespace {

using Rgb = std::array<double, 3>;

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb ramp3(const Rgb& a, const Rgb& b, const Rgb& c, double t) {
    return t < 0.5 ? lerp(a, b, t * 2.0) : lerp(b, c, (t - 0.5) * 2.0);
}

double sq(double v) { return v * v; }

// Face geometry in unit coordinates (u to the right, v downwards).
struct FaceLayout {
    double cx, cy;
    double face_rx, face_ry;
    double eye_dx, eye_y, eye_rx, eye_ry, pupil_r;
    double brow_y, brow_half_w, brow_half_t;
    double mouth_y, mouth_rx, mouth_ry;
    double hairline, side_hair_end;

    FaceLayout(const TraitVector& t, double shift_u, double shift_v) {
        cx = 0.5 + shift_u;
        cy = 0.54 + shift_v;
        face_rx = 0.27;
        face_ry = face_rx * (1.15 + 0.35 * t[AspectRatio]);
        eye_dx = face_rx * (0.32 + 0.18 * t[EyeSpacing]);
        eye_y = cy - 0.12 * face_ry;
        eye_rx = 0.055;
        eye_ry = 0.03;
        pupil_r = 0.014;
        brow_y = eye_y - 0.07;
        brow_half_w = 0.065;
        brow_half_t = 0.010 + 0.018 * t[EyebrowThickness];
        mouth_y = cy + 0.5 * face_ry;
        mouth_rx = 0.06 + 0.08 * t[MouthWidth];
        mouth_ry = 0.025;
        hairline = cy - 0.45 * face_ry;
        side_hair_end = cy + (-0.2 + 1.0 * t[HairLength]) * face_ry;
    }

    bool in_skin(double u, double v) const { return sq((u - cx) / face_rx) + sq((v - cy) / face_ry) <= 1.0; }

    bool in_hair(double u, double v) const {
        const bool cap = sq((u - cx) / (face_rx * 1.18)) + sq((v - (cy - 0.02)) / (face_ry * 1.12)) <= 1.0 &&
                         v < hairline;
        const bool side = sq((u - cx) / (face_rx * 1.3)) + sq((v - cy) / (face_ry * 1.15)) <= 1.0 &&
                          !in_skin(u, v) && v < side_hair_end;
        return cap || side;
    }

    bool in_eye(double u, double v, bool& pupil) const {
        for (const double side : {-1.0, 1.0}) {
            const double ex = cx + side * eye_dx;
            if (sq((u - ex) / eye_rx) + sq((v - eye_y) / eye_ry) <= 1.0) {
                pupil = sq(u - ex) + sq(v - eye_y) <= sq(pupil_r);
                return true;
            }
        }
        return false;
    }

    bool in_brow(double u, double v) const {
        for (const double side : {-1.0, 1.0}) {
            if (std::abs(u - (cx + side * eye_dx)) <= brow_half_w && std::abs(v - brow_y) <= brow_half_t) {
                return true;
            }
        }
        return false;
    }

    bool in_mouth(double u, double v) const {
        return sq((u - cx) / mouth_rx) + sq((v - mouth_y) / mouth_ry) <= 1.0;
    }

    // Highest-precedence part covering the point.
    ToyClass classify(double u, double v, bool& pupil) const {
        pupil = false;
        if (in_mouth(u, v)) return ToyClass::Mouth;
        if (in_brow(u, v)) return ToyClass::Eyebrows;
        if (in_eye(u, v, pupil)) return ToyClass::Eyes;
        if (in_hair(u, v)) return ToyClass::Hair;
        if (in_skin(u, v)) return ToyClass::Skin;
        return ToyClass::Background;
    }
};

struct Palette {
    Rgb background, skin, hair, eye, pupil, brow, mouth;
};

Palette make_palette(const TraitVector& t, const Rgb& background) {
    Palette p;
    p.background = background;
    p.skin = lerp({0.96, 0.82, 0.70}, {0.38, 0.24, 0.16}, t[SkinTone]);
    p.hair = ramp3({0.92, 0.80, 0.45}, {0.45, 0.28, 0.12}, {0.08, 0.07, 0.06}, t[HairTone]);
    p.eye = ramp3({0.25, 0.45, 0.85}, {0.30, 0.62, 0.30}, {0.45, 0.28, 0.10}, t[EyeColor]);
    p.pupil = {0.05, 0.05, 0.05};
    p.brow = {p.hair[0] * 0.7, p.hair[1] * 0.7, p.hair[2] * 0.7};
    p.mouth = lerp({0.85, 0.35, 0.35}, {0.55, 0.15, 0.20}, t[SkinTone]);
    return p;
}

const Rgb& color_of(const Palette& p, ToyClass cls, bool pupil) {
    switch (cls) {
        case ToyClass::Skin: return p.skin;
        case ToyClass::Hair: return p.hair;
        case ToyClass::Eyes: return pupil ? p.pupil : p.eye;
        case ToyClass::Eyebrows: return p.brow;
        case ToyClass::Mouth: return p.mouth;
        case ToyClass::Background: break;
    }
    return p.background;
}

constexpr int kSupersample = 4;

}  // namespace

FaceRecord generate_record(const ToyIdentitySpec& spec, std::uint64_t variation_seed, const DataConfig& cfg) {
    if (cfg.resolution < 32) {
        throw ConfigError("toy resolution must be at least 32, got " + std::to_string(cfg.resolution));
    }
    if (cfg.classes != kToyClassCount) {
        throw ConfigError("toy generator requires exactly " + std::to_string(kToyClassCount) + " classes, got " +
                          std::to_string(cfg.classes));
    }

    SplitMixStream nuisance(hash_combine(0x7a1a7ULL, variation_seed));
    const double shift_u = nuisance.uniform(-0.05, 0.05);
    const double shift_v = nuisance.uniform(-0.05, 0.05);
    Rgb tint{};
    for (auto& channel : tint) channel = 1.0 + nuisance.uniform(-0.08, 0.08);
    Rgb background{};
    for (auto& channel : background) channel = nuisance.uniform(0.1, 0.9);

    const FaceLayout layout(spec.traits, shift_u, shift_v);
    const Palette palette = make_palette(spec.traits, background);

    const int res = cfg.resolution;
    FaceRecord record;
    record.image = Image(res, res);
    record.mask = LabelMap(res, res);
    record.identity_id = spec.identity_id;
    record.variation_seed = variation_seed;

    const double inv = 1.0 / res;
    bool pupil = false;
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            record.mask.at(y, x) = static_cast<std::uint8_t>(layout.classify((x + 0.5) * inv, (y + 0.5) * inv, pupil));
            Rgb acc{0.0, 0.0, 0.0};
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double u = (x + (sx + 0.5) / kSupersample) * inv;
                    const double v = (y + (sy + 0.5) / kSupersample) * inv;
                    const ToyClass cls = layout.classify(u, v, pupil);
                    const Rgb& color = color_of(palette, cls, pupil);
                    for (int c = 0; c < 3; ++c) acc[c] += color[c];
                }
            }
            for (int c = 0; c < 3; ++c) {
                const double value = std::clamp(acc[c] / (kSupersample * kSupersample) * tint[c], 0.0, 1.0);
                record.image.at(y, x, c) = static_cast<float>(value * 2.0 - 1.0);
            }
        }
    }
    return record;
}

SemanticMask one_hot(const LabelMap& labels, int classes, std::vector<std::string> class_names) {
    if (classes <= 0) {
        throw ValidationError("class count must be positive");
    }
    SemanticMask mask;
    mask.classes = classes;
    mask.height = labels.height;
    mask.width = labels.width;
    mask.planes.assign(static_cast<std::size_t>(classes) * labels.height * labels.width, 0);
    for (int y = 0; y < labels.height; ++y) {
        for (int x = 0; x < labels.width; ++x) {
            const int label = labels.at(y, x);
            if (label >= classes) {
                throw ValidationError("label " + std::to_string(label) + " at pixel (" + std::to_string(y) + ", " +
                                      std::to_string(x) + ") is outside [0, " + std::to_string(classes) + ")");
            }
            mask.planes[(static_cast<std::size_t>(label) * labels.height + y) * labels.width + x] = 1;
        }
    }
    if (class_names.empty() && classes == kToyClassCount) {
        class_names = toy_class_names();
    }
    mask.class_names = std::move(class_names);
    return mask;
}

std::uint64_t variation_seed_for(std::uint32_t identity_id, int variation, std::uint64_t dataset_seed) {
    return hash_combine(hash_combine(dataset_seed, identity_id), static_cast<std::uint64_t>(variation));
}

namespace {

std::string record_name(std::size_t index) {
    std::ostringstream name;
    name.width(5);
    name.fill('0');
    name << index;
    return name.str();
}

}  // namespace

std::vector<FaceRecord> generate_dataset(const DataConfig& cfg) {
    if (cfg.identity_count < 1 || cfg.variations < 1) {
        throw ConfigError("identity count and variations must be positive");
    }
    std::vector<FaceRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.identity_count) * cfg.variations);
    for (int id = 0; id < cfg.identity_count; ++id) {
        const auto spec = ToyIdentitySpec::from_seed(static_cast<std::uint32_t>(id), cfg.seed);
        for (int k = 0; k < cfg.variations; ++k) {
            auto record = generate_record(spec, variation_seed_for(spec.identity_id, k, cfg.seed), cfg);
            record.name = record_name(records.size());
            records.push_back(std::move(record));
        }
    }
    return records;
}

std::size_t test_unit_count(std::size_t units) {
    if (units < 2) {
        return 0;
    }
    const std::size_t rounded = (units + 7) / 15;
    return std::min(std::max<std::size_t>(rounded, 2), units - 1);
}

std::vector<Split> assign_splits(const std::vector<std::uint32_t>& identity_ids, std::uint64_t seed,
                                 bool disjoint_identities) {
    std::vector<std::uint64_t> keys;
    if (disjoint_identities) {
        keys.assign(identity_ids.begin(), identity_ids.end());
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    } else {
        keys.resize(identity_ids.size());
        std::iota(keys.begin(), keys.end(), 0);
    }
    const auto rank_key = [seed](std::uint64_t key) { return hash_combine(hash_combine(0x5b1175ULL, seed), key); };
    std::vector<std::uint64_t> order = keys;
    std::sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
        const auto ha = rank_key(a);
        const auto hb = rank_key(b);
        return ha != hb ? ha < hb : a < b;
    });
    order.resize(test_unit_count(keys.size()));
    std::sort(order.begin(), order.end());

    std::vector<Split> splits(identity_ids.size(), Split::Train);
    for (std::size_t i = 0; i < identity_ids.size(); ++i) {
        const std::uint64_t key = disjoint_identities ? identity_ids[i] : i;
        if (std::binary_search(order.begin(), order.end(), key)) {
            splits[i] = Split::Test;
        }
    }
    return splits;
}

std::vector<FaceRecord> select_split(const std::vector<FaceRecord>& records, Split split, std::uint64_t seed,
                                     bool disjoint_identities) {
    std::vector<std::uint32_t> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.identity_id);
    const auto splits = assign_splits(ids, seed, disjoint_identities);
    std::vector<FaceRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (splits[i] == split) out.push_back(records[i]);
    }
    return out;
}

void write_toy_dataset(const fs::path& root, const DataConfig& cfg) {
    const auto records = generate_dataset(cfg);
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    json entries = json::array();
    for (const auto& record : records) {
        io::write_png_rgb(root / "images" / (record.name + ".png"), record.image);
        io::write_png_gray(root / "masks" / (record.name + ".png"), record.mask);
        entries.push_back({{"name", record.name},
                           {"identity_id", record.identity_id},
                           {"variation_seed", std::to_string(record.variation_seed)}});
    }
    const json meta{{"layout", "toy"},
                    {"seed", cfg.seed},
                    {"identity_count", cfg.identity_count},
                    {"variations", cfg.variations},
                    {"resolution", cfg.resolution},
                    {"classes", cfg.classes},
                    {"disjoint_identities", cfg.disjoint_identities},
                    {"class_names", toy_class_names()},
                    {"records", entries}};
    std::ofstream(root / "meta.json") << meta.dump(2) << '\n';
}

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open '" + path.string() + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IngestionError("malformed JSON in '" + path.string() + "': " + e.what());
    }
}

void check_labels(const LabelMap& mask, int classes, const std::string& name) {
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x) >= classes) {
                throw ValidationError("mask '" + name + "' has label " + std::to_string(mask.at(y, x)) +
                                      " at pixel (" + std::to_string(y) + ", " + std::to_string(x) +
                                      ") but only " + std::to_string(classes) + " classes are configured");
            }
        }
    }
}

}  // namespace

DatasetMeta read_dataset_meta(const fs::path& root, Layout layout, int classes) {
    DatasetMeta meta;
    meta.config.classes = classes;
    const fs::path meta_path = root / "meta.json";
    if (layout == Layout::Toy || fs::exists(meta_path)) {
        const json doc = read_json(meta_path);
        meta.config.seed = doc.value("seed", std::uint64_t{0});
        meta.config.identity_count = doc.value("identity_count", 0);
        meta.config.variations = doc.value("variations", 0);
        meta.config.resolution = doc.value("resolution", 0);
        meta.config.classes = doc.value("classes", classes);
        meta.config.disjoint_identities = doc.value("disjoint_identities", layout == Layout::Toy);
        meta.class_names = doc.value("class_names", std::vector<std::string>{});
    }
    if (meta.class_names.empty() && meta.config.classes == kToyClassCount) {
        meta.class_names = toy_class_names();
    }
    return meta;
}

std::vector<FaceRecord> load_dataset(const fs::path& root, Layout layout, Split split, int classes) {
    if (!fs::is_directory(root)) {
        throw IngestionError("dataset root '" + root.string() + "' does not exist");
    }
    const DatasetMeta meta = read_dataset_meta(root, layout, classes);
    if (meta.config.classes != classes) {
        throw ValidationError("dataset declares " + std::to_string(meta.config.classes) + " classes but " +
                              std::to_string(classes) + " are configured");
    }

    std::vector<FaceRecord> records;
    if (layout == Layout::Toy) {
        const json doc = read_json(root / "meta.json");
        for (const auto& entry : doc.at("records")) {
            FaceRecord record;
            record.name = entry.at("name").get<std::string>();
            record.identity_id = entry.at("identity_id").get<std::uint32_t>();
            record.variation_seed = std::stoull(entry.at("variation_seed").get<std::string>());
            records.push_back(std::move(record));
        }
    } else {
        // Optional identity table: {"identities": {"basename": id, ...}}.
        std::map<std::string, std::uint32_t> identities;
        bool have_identities = false;
        if (fs::exists(root / "meta.json")) {
            const json doc = read_json(root / "meta.json");
            if (doc.contains("identities")) {
                have_identities = true;
                for (const auto& [name, id] : doc.at("identities").items()) identities[name] = id.get<std::uint32_t>();
            }
        }
        if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks")) {
            throw IngestionError("external dataset '" + root.string() + "' must contain images/ and masks/");
        }
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(root / "images")) {
            if (entry.path().extension() == ".png") names.push_back(entry.path().stem().string());
        }
        std::sort(names.begin(), names.end());
        std::vector<std::string> missing;
        for (const auto& name : names) {
            if (!fs::exists(root / "masks" / (name + ".png"))) missing.push_back(name);
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& name : missing) list += (list.empty() ? "" : ", ") + name + ".png";
            throw IngestionError("missing mask for image(s): " + list);
        }
        for (std::size_t i = 0; i < names.size(); ++i) {
            FaceRecord record;
            record.name = names[i];
            if (have_identities) {
                const auto it = identities.find(names[i]);
                if (it == identities.end()) {
                    throw IngestionError("identity table has no entry for '" + names[i] + "'");
                }
                record.identity_id = it->second;
            } else {
                record.identity_id = static_cast<std::uint32_t>(i);
            }
            records.push_back(std::move(record));
        }
    }

    const bool disjoint = meta.config.disjoint_identities;
    std::vector<std::uint32_t> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.identity_id);
    const auto splits = assign_splits(ids, meta.config.seed, disjoint);

    std::vector<FaceRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (splits[i] != split) continue;
        FaceRecord record = std::move(records[i]);
        record.image = io::read_png_rgb(root / "images" / (record.name + ".png"));
        record.mask = io::read_png_gray(root / "masks" / (record.name + ".png"));
        if (record.image.height != record.mask.height || record.image.width != record.mask.width) {
            throw IngestionError("image and mask sizes differ for '" + record.name + "'");
        }
        check_labels(record.mask, classes, record.name);
        out.push_back(std::move(record));
    }
    return out;
}

}  // namespace idsis::data
