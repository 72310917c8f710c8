#include <fstream>

#include "idsis/checkpoint.hpp"
#include "idsis/errors.hpp"
#include "idsis/hashing.hpp"
#include "idsis/tensor_util.hpp"
#include "idsis/training.hpp"
#include "../support/temp_dir.hpp"
#include "../support/doctest.hpp"

using namespace idsis;
using namespace idsis::train;

namespace {

struct Setup {
    std::vector<data::FaceRecord> records;
    fr::FREmbedder fr;
};

const Setup& setup() {
    static const Setup s = [] {
        data::DataConfig cfg;
        cfg.resolution = 32;
        cfg.identity_count = 4;
        cfg.variations = 4;
        auto fr_cfg = fr::default_fr_config(fr::Role::Train);
        fr_cfg.resolution = 32;
        fr_cfg.depth = 3;
        fr_cfg.embedding_dim = 32;
        fr::FREmbedder model(fr_cfg, fr::Role::Train, 4);
        model.freeze();
        return Setup{data::generate_dataset(cfg), std::move(model)};
    }();
    return s;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.model = ModelConfig::make(32, 6, 16, 32);
    cfg.model.generator.base_channels = 16;
    cfg.model.discriminator.base_channels = 8;
    cfg.model.encoder.mask_hidden = 32;
    cfg.model.encoder.style_channels = 8;
    cfg.batch = 2;
    cfg.iterations = 10;
    cfg.checkpoint_every = 5;
    cfg.log_every = 5;
    cfg.seed = 3;
    return cfg;
}

std::string state_hash(Trainer& t) { return module_hash(*t.model()) + module_hash(*t.discriminator()); }

}  // namespace

TEST_CASE("model config json round trip") {
    const auto cfg = ModelConfig::make(64, 6, 64, 128);
    const auto back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(cfg.generator.resolution == 64);
    CHECK(cfg.encoder.id_dim == 128);
}

TEST_CASE("ten-iteration smoke run writes a loadable checkpoint") {
    const auto& s = setup();
    testing::TempDir dir;
    const auto cfg = small_config();
    std::vector<std::int64_t> seen;
    TrainCallbacks callbacks;
    callbacks.on_checkpoint = [&](std::int64_t it, const std::filesystem::path&) { seen.push_back(it); };
    const auto result = idsis::train::train(s.records, s.fr, cfg, dir.path(), callbacks);
    CHECK(result.iterations == 10);
    CHECK(seen == std::vector<std::int64_t>{5, 10});
    CHECK(std::filesystem::exists(dir / "iter_0000005.ckpt"));
    CHECK(std::filesystem::exists(dir / "model.ckpt"));
    REQUIRE(result.log.size() == 2);
    for (const auto& m : result.log) {
        CHECK(std::isfinite(m.total));
        CHECK(m.id >= 0.0);
        CHECK(m.id <= 2.0);
    }
    std::ifstream metrics(dir / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) ++lines;
    CHECK(lines == 2);

    auto loaded = load_model(dir / "model.ckpt");
    CHECK(loaded.manifest.at("iteration") == 10);
    CHECK(loaded.config.to_json() == cfg.model.to_json());
}

TEST_CASE("checkpoint round trip reproduces the generator output bit for bit") {
    const auto& s = setup();
    testing::TempDir dir;
    auto cfg = small_config();
    cfg.iterations = 3;
    Trainer trainer(cfg, s.fr, s.records);
    for (int i = 0; i < 3; ++i) trainer.step();
    save_checkpoint(dir / "m.ckpt", trainer.checkpoint());
    auto loaded = load_model(dir / "m.ckpt");

    torch::NoGradGuard no_grad;
    const auto span = std::span<const data::FaceRecord>(s.records).subspan(0, 4);
    const auto images = images_to_tensor(span);
    const auto onehot = masks_to_onehot(span, 6);
    const auto ids = s.fr.embed(images);
    trainer.model()->eval();
    const auto a = trainer.model()->reconstruct(images, onehot, ids).image;
    const auto b = loaded.model->reconstruct(images, onehot, ids).image;
    CHECK(torch::equal(a, b));
    CHECK(module_hash(*loaded.model->gen) == module_hash(*trainer.model()->gen));
}

TEST_CASE("identical config and seed give identical weights") {
    const auto& s = setup();
    Trainer a(small_config(), s.fr, s.records);
    Trainer b(small_config(), s.fr, s.records);
    for (int i = 0; i < 3; ++i) {
        const auto ma = a.step();
        const auto mb = b.step();
        CHECK(ma.total == mb.total);
    }
    CHECK(state_hash(a) == state_hash(b));

    auto other = small_config();
    other.seed = 4;
    Trainer c(other, s.fr, s.records);
    CHECK(module_hash(*c.model()) != module_hash(*a.model()));
}

TEST_CASE("restoring a checkpoint resumes the exact trajectory") {
    const auto& s = setup();
    Trainer straight(small_config(), s.fr, s.records);
    for (int i = 0; i < 4; ++i) straight.step();

    Trainer first(small_config(), s.fr, s.records);
    first.step();
    first.step();
    testing::TempDir dir;
    save_checkpoint(dir / "half.ckpt", first.checkpoint());

    Trainer resumed(small_config(), s.fr, s.records);
    resumed.restore(load_checkpoint(dir / "half.ckpt"));
    CHECK(resumed.iteration() == 2);
    resumed.step();
    resumed.step();
    CHECK(state_hash(resumed) == state_hash(straight));
}

TEST_CASE("the train-FR is not modified by training") {
    const auto& s = setup();
    const auto before = module_hash(*s.fr.net());
    Trainer trainer(small_config(), s.fr, s.records);
    trainer.step();
    CHECK(module_hash(*s.fr.net()) == before);
}

TEST_CASE("restore rejects a checkpoint of another architecture") {
    const auto& s = setup();
    Trainer a(small_config(), s.fr, s.records);
    auto wide = small_config();
    wide.model.generator.base_channels = 32;
    Trainer b(wide, s.fr, s.records);
    CHECK_THROWS_AS(b.restore(a.checkpoint()), ConfigError);
}

TEST_CASE("config validation") {
    const auto& s = setup();
    auto cfg = small_config();
    cfg.perceptual_layers = 4;
    CHECK_THROWS_AS(Trainer(cfg, s.fr, s.records), ConfigError);
    cfg = small_config();
    cfg.model = ModelConfig::make(64, 6, 16, 32);
    CHECK_THROWS_AS(Trainer(cfg, s.fr, s.records), ShapeError);
    cfg = small_config();
    cfg.model = ModelConfig::make(32, 6, 16, 64);
    CHECK_THROWS_AS(Trainer(cfg, s.fr, s.records), ShapeError);
    cfg = small_config();
    cfg.weights.feature_matching = -1.0;
    CHECK_THROWS_AS(Trainer(cfg, s.fr, s.records), ConfigError);
    CHECK_THROWS_AS(Trainer(small_config(), s.fr, {}), ValidationError);
}

TEST_CASE("divergence guard aborts when L_adv_D stays above its trailing median") {
    const auto& s = setup();
    auto cfg = small_config();
    cfg.divergence_factor = 1e-9;
    cfg.divergence_patience = 3;
    Trainer trainer(cfg, s.fr, s.records);
    bool raised = false;
    std::int64_t at = 0;
    try {
        for (int i = 0; i < 200; ++i) trainer.step();
    } catch (const NumericError&) {
        raised = true;
        at = trainer.iteration();
    }
    CHECK(raised);
    // the guard needs 100 history entries, then 3 consecutive violations
    CHECK(at == 103);
}

TEST_CASE("checkpoint files carry no wall-clock data") {
    const auto& s = setup();
    testing::TempDir dir;
    Trainer a(small_config(), s.fr, s.records);
    a.step();
    save_checkpoint(dir / "a.ckpt", a.checkpoint());
    save_checkpoint(dir / "b.ckpt", a.checkpoint());
    CHECK(sha256_file(dir / "a.ckpt") == sha256_file(dir / "b.ckpt"));
}
