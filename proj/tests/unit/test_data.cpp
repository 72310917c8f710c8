#include <fstream>
#include <set>

#include "idsis/data.hpp"
#include "idsis/errors.hpp"
#include "idsis/image_io.hpp"
#include "../support/temp_dir.hpp"
#include "../support/doctest.hpp"

using namespace idsis;
using namespace idsis::data;

namespace {

std::size_t differing_pixels(const Image& a, const Image& b) {
    std::size_t n = 0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                if (a.at(y, x, c) != b.at(y, x, c)) {
                    ++n;
                    break;
                }
            }
        }
    }
    return n;
}

}  // namespace

TEST_CASE("one_hot of a 2x2 label map") {
    LabelMap labels(2, 2);
    labels.at(0, 0) = 0;
    labels.at(0, 1) = 1;
    labels.at(1, 0) = 2;
    labels.at(1, 1) = 0;
    const auto mask = one_hot(labels, 3);
    CHECK(mask.classes == 3);
    const std::vector<std::uint8_t> expected = {1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0};
    CHECK(mask.planes == expected);
    CHECK(mask.decode() == labels);
}

TEST_CASE("one_hot of a constant map sets only channel 0") {
    LabelMap labels(4, 4);
    const auto mask = one_hot(labels, kToyClassCount);
    CHECK(mask.count(0) == 16);
    for (int c = 1; c < kToyClassCount; ++c) CHECK(mask.count(c) == 0);
    CHECK(mask.class_names == toy_class_names());
}

TEST_CASE("one_hot rejects labels outside the class set and names the pixel") {
    LabelMap labels(3, 3);
    labels.at(1, 2) = 6;
    try {
        one_hot(labels, 6);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("label 6") != std::string::npos);
        CHECK(msg.find("(1, 2)") != std::string::npos);
    }
    CHECK_THROWS_AS(one_hot(labels, 0), ValidationError);
}

TEST_CASE("generated masks are partitions and round-trip through one_hot") {
    DataConfig cfg;
    const auto spec = ToyIdentitySpec::from_seed(4, cfg.seed);
    for (std::uint64_t v = 0; v < 5; ++v) {
        const auto record = generate_record(spec, v, cfg);
        CHECK(record.image.height == 64);
        CHECK(record.mask.width == 64);
        const auto mask = one_hot(record.mask, kToyClassCount);
        CHECK_NOTHROW(mask.check_partition());
        CHECK(mask.decode() == record.mask);
        for (float p : record.image.pixels) {
            REQUIRE(p >= -1.0f);
            REQUIRE(p <= 1.0f);
        }
    }
}

TEST_CASE("check_partition rejects overlapping planes") {
    LabelMap labels(2, 2);
    auto mask = one_hot(labels, 2);
    mask.planes[4] = 1;  // class 1 at (0, 0) as well
    CHECK_THROWS_AS(mask.check_partition(), ValidationError);
}

TEST_CASE("generate_record is a pure function of its inputs") {
    DataConfig cfg;
    const auto spec = ToyIdentitySpec::from_seed(11, 3);
    CHECK(ToyIdentitySpec::from_seed(11, 3) == spec);
    const auto a = generate_record(spec, 0, cfg);
    const auto b = generate_record(spec, 0, cfg);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);

    const auto c = generate_record(spec, 1, cfg);
    CHECK(c.identity_id == a.identity_id);
    CHECK_FALSE(c.image == a.image);
    std::set<int> classes_a, classes_c;
    for (auto l : a.mask.labels) classes_a.insert(l);
    for (auto l : c.mask.labels) classes_c.insert(l);
    CHECK(classes_a == classes_c);
}

TEST_CASE("traits lie in the unit interval") {
    for (std::uint32_t id = 0; id < 50; ++id) {
        const auto spec = ToyIdentitySpec::from_seed(id, 0);
        for (double t : spec.traits) {
            CHECK(t >= 0.0);
            CHECK(t <= 1.0);
        }
    }
}

TEST_CASE("eye colour only changes pixels at the eyes") {
    // Oracle: every changed pixel is within one pixel (8-neighbourhood) of an eye pixel in either mask.
    DataConfig cfg;
    const auto base = ToyIdentitySpec::from_seed(21, 0);
    auto dark = base;
    auto light = base;
    dark.traits[EyeColor] = 0.05;
    light.traits[EyeColor] = 0.95;
    const int eyes = static_cast<int>(ToyClass::Eyes);
    for (std::uint64_t v = 0; v < 4; ++v) {
        const auto a = generate_record(dark, v, cfg);
        const auto b = generate_record(light, v, cfg);
        REQUIRE(a.mask == b.mask);
        const int h = a.image.height;
        const int w = a.image.width;
        std::vector<std::uint8_t> near_eye(static_cast<std::size_t>(h) * w, 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (a.mask.at(y, x) != eyes && b.mask.at(y, x) != eyes) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy >= 0 && yy < h && xx >= 0 && xx < w) near_eye[static_cast<std::size_t>(yy) * w + xx] = 1;
                    }
                }
            }
        }
        std::size_t outside = 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                bool differs = false;
                for (int c = 0; c < 3; ++c) differs = differs || a.image.at(y, x, c) != b.image.at(y, x, c);
                if (differs && !near_eye[static_cast<std::size_t>(y) * w + x]) ++outside;
            }
        }
        CHECK(differing_pixels(a.image, b.image) > 0);
        CHECK(outside == 0);
    }
}

TEST_CASE("toy config is validated") {
    DataConfig cfg;
    cfg.resolution = 16;
    CHECK_THROWS_AS(generate_record(ToyIdentitySpec::from_seed(0, 0), 0, cfg), ConfigError);
    cfg.resolution = 64;
    cfg.classes = 5;
    CHECK_THROWS_AS(generate_record(ToyIdentitySpec::from_seed(0, 0), 0, cfg), ConfigError);
}

TEST_CASE("150 identities x 10 variations split 1400 / 100 with disjoint identities") {
    std::vector<std::uint32_t> ids;
    for (std::uint32_t id = 0; id < 150; ++id) {
        for (int v = 0; v < 10; ++v) ids.push_back(id);
    }
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        const auto splits = assign_splits(ids, seed, true);
        std::size_t test = 0;
        std::set<std::uint32_t> train_ids, test_ids;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (splits[i] == Split::Test) {
                ++test;
                test_ids.insert(ids[i]);
            } else {
                train_ids.insert(ids[i]);
            }
        }
        CHECK(test == 100);
        CHECK(ids.size() - test == 1400);
        CHECK(test_ids.size() == 10);
        for (auto id : test_ids) CHECK(train_ids.count(id) == 0);
    }
    const bool seed_matters = assign_splits(ids, 0, true) != assign_splits(ids, 1, true);
    CHECK(seed_matters);
}

TEST_CASE("record-level split keeps the 14:1 ratio") {
    std::vector<std::uint32_t> ids;
    for (std::uint32_t id = 0; id < 150; ++id) {
        for (int v = 0; v < 10; ++v) ids.push_back(id);
    }
    const auto splits = assign_splits(ids, 0, false);
    CHECK(std::count(splits.begin(), splits.end(), Split::Test) == 100);
}

TEST_CASE("write and load a toy dataset") {
    testing::TempDir dir;
    DataConfig cfg;
    cfg.resolution = 32;
    cfg.identity_count = 30;
    cfg.variations = 2;
    write_toy_dataset(dir.path(), cfg);
    const auto train = load_dataset(dir.path(), Layout::Toy, Split::Train);
    const auto test = load_dataset(dir.path(), Layout::Toy, Split::Test);
    CHECK(train.size() + test.size() == 60);
    CHECK(test.size() == 4);
    std::set<std::uint32_t> train_ids;
    for (const auto& r : train) train_ids.insert(r.identity_id);
    for (const auto& r : test) CHECK(train_ids.count(r.identity_id) == 0);

    const auto again = load_dataset(dir.path(), Layout::Toy, Split::Train);
    REQUIRE(again.size() == train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        CHECK(again[i].name == train[i].name);
        CHECK(again[i].image == train[i].image);
    }
    // Pixels survive the 8-bit round trip to within one quantisation step.
    const auto fresh = generate_record(ToyIdentitySpec::from_seed(train[0].identity_id, cfg.seed),
                                       train[0].variation_seed, cfg);
    CHECK(fresh.mask == train[0].mask);
    for (std::size_t i = 0; i < fresh.image.pixels.size(); ++i) {
        REQUIRE(std::abs(fresh.image.pixels[i] - train[0].image.pixels[i]) <= 1.0f / 255.0f + 1e-6f);
    }
    CHECK_THROWS_AS(load_dataset(dir.path(), Layout::Toy, Split::Train, 5), ValidationError);
}

TEST_CASE("external layout reports missing masks and bad labels") {
    testing::TempDir dir;
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    DataConfig cfg;
    cfg.resolution = 32;
    const auto record = generate_record(ToyIdentitySpec::from_seed(0, 0), 0, cfg);
    io::write_png_rgb(dir / "images/a.png", record.image);
    io::write_png_gray(dir / "masks/a.png", record.mask);
    io::write_png_rgb(dir / "images/b.png", record.image);
    try {
        load_dataset(dir.path(), Layout::ExternalMaskDir, Split::Train);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("b.png") != std::string::npos);
    }

    auto bad = record.mask;
    bad.at(3, 4) = 9;
    io::write_png_gray(dir / "masks/b.png", bad);
    bool raised = false;
    for (auto split : {Split::Train, Split::Test}) {
        try {
            load_dataset(dir.path(), Layout::ExternalMaskDir, split);
        } catch (const ValidationError&) {
            raised = true;
        }
    }
    CHECK(raised);
}

TEST_CASE("layout and split names parse") {
    CHECK(parse_layout("toy") == Layout::Toy);
    CHECK(parse_layout("external-mask-dir") == Layout::ExternalMaskDir);
    CHECK(parse_split("test") == Split::Test);
    CHECK_THROWS_AS(parse_layout("celeba"), ConfigError);
}
