#include "idsis/training.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "idsis/errors.hpp"
#include "idsis/hashing.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::train {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using json = nlohmann::json;

ModelConfig ModelConfig::make(int resolution, int classes, int style_dim, int id_dim) {
    ModelConfig cfg;
    cfg.encoder.classes = classes;
    cfg.encoder.style_dim = style_dim;
    cfg.encoder.id_dim = id_dim;
    cfg.generator.classes = classes;
    cfg.generator.style_dim = style_dim;
    cfg.generator.resolution = resolution;
    cfg.generator.grid = cfg.encoder.grid;
    cfg.discriminator.classes = classes;
    return cfg;
}

json ModelConfig::to_json() const {
    return {{"classes", encoder.classes},
            {"style_dim", encoder.style_dim},
            {"id_dim", encoder.id_dim},
            {"grid", encoder.grid},
            {"mask_input", encoder.mask_input},
            {"mask_hidden", encoder.mask_hidden},
            {"style_channels", encoder.style_channels},
            {"resolution", generator.resolution},
            {"gen_base_channels", generator.base_channels},
            {"gen_min_channels", generator.min_channels},
            {"gen_convs_per_stage", generator.convs_per_stage},
            {"heads", generator.heads},
            {"self_attention", generator.self_attention},
            {"disc_base_channels", discriminator.base_channels},
            {"disc_scales", discriminator.scales}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    auto cfg = make(j.at("resolution").get<int>(), j.at("classes").get<int>(), j.at("style_dim").get<int>(),
                    j.at("id_dim").get<int>());
    cfg.encoder.grid = j.at("grid").get<int>();
    cfg.generator.grid = cfg.encoder.grid;
    cfg.encoder.mask_input = j.at("mask_input").get<int>();
    cfg.encoder.mask_hidden = j.at("mask_hidden").get<int>();
    cfg.encoder.style_channels = j.at("style_channels").get<int>();
    cfg.generator.base_channels = j.at("gen_base_channels").get<int>();
    cfg.generator.min_channels = j.at("gen_min_channels").get<int>();
    cfg.generator.convs_per_stage = j.at("gen_convs_per_stage").get<int>();
    cfg.generator.heads = j.at("heads").get<int>();
    cfg.generator.self_attention = j.at("self_attention").get<bool>();
    cfg.discriminator.base_channels = j.at("disc_base_channels").get<int>();
    cfg.discriminator.scales = j.at("disc_scales").get<int>();
    return cfg;
}

json TrainConfig::to_json() const {
    return {{"model", model.to_json()},
            {"lambda_fm", weights.feature_matching},
            {"lambda_prc", weights.perceptual},
            {"lambda_id", weights.identity},
            {"perceptual_layers", perceptual_layers},
            {"lr_g", lr_g},
            {"lr_d", lr_d},
            {"beta1", beta1},
            {"beta2", beta2},
            {"batch", batch},
            {"iterations", iterations},
            {"checkpoint_every", checkpoint_every},
            {"log_every", log_every},
            {"seed", seed}};
}

SynthesisModelImpl::SynthesisModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
    em = register_module("em", enc::MaskEmbedder(cfg.encoder));
    es = register_module("es", enc::StyleEncoder(cfg.encoder));
    proj = register_module("proj", torch::nn::Linear(cfg.encoder.id_dim, cfg.encoder.style_dim));
    gen = register_module("gen", gen::Generator(cfg.generator));
}

torch::Tensor SynthesisModelImpl::identity_tokens(const torch::Tensor& id_embeddings) {
    if (id_embeddings.dim() != 2 || id_embeddings.size(1) != cfg_.encoder.id_dim) {
        throw ShapeError("identity embeddings must be (B, " + std::to_string(cfg_.encoder.id_dim) + "), got " +
                         c10::str(id_embeddings.sizes()));
    }
    return proj->forward(id_embeddings);
}

enc::StyleBatch SynthesisModelImpl::styles(const torch::Tensor& images, const torch::Tensor& onehot) {
    return es->forward(images, onehot);
}

torch::Tensor SynthesisModelImpl::descriptor(const torch::Tensor& onehot) { return em->forward(onehot); }

torch::Tensor SynthesisModelImpl::tokens(const torch::Tensor& images, const torch::Tensor& onehot,
                                         const torch::Tensor& id_embeddings) {
    return enc::assemble_token_batch(styles(images, onehot).codes, identity_tokens(id_embeddings));
}

gen::GeneratorOutput SynthesisModelImpl::generate(const torch::Tensor& onehot, const torch::Tensor& tokens) {
    return gen->forward(descriptor(onehot), tokens);
}

gen::GeneratorOutput SynthesisModelImpl::reconstruct(const torch::Tensor& images, const torch::Tensor& onehot,
                                                     const torch::Tensor& id_embeddings) {
    return generate(onehot, tokens(images, onehot, id_embeddings));
}

json to_json(const StepMetrics& m) {
    return {{"iteration", m.iteration}, {"L_adv_G", m.adv_g}, {"L_adv_D", m.adv_d},
            {"L_FM", m.fm},             {"L_prc", m.prc},     {"L_id", m.id}};
}

namespace {

std::uint64_t hash_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x7261696eULL); }

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

torch::Tensor onehot_of(const torch::Tensor& labels, int classes) {
    return torch::one_hot(labels, classes).permute({0, 3, 1, 2}).to(torch::kFloat32).contiguous();
}

void put_optimizer(Checkpoint& ckpt, const std::string& scope, const torch::optim::Adam& opt,
                   const torch::nn::Module& module) {
    const auto& state = opt.state();
    for (const auto& item : module.named_parameters(true)) {
        const auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        const std::string base = scope + "/" + item.key();
        ckpt.tensors[base + "/exp_avg"] = s.exp_avg().detach().clone();
        ckpt.tensors[base + "/exp_avg_sq"] = s.exp_avg_sq().detach().clone();
        ckpt.tensors[base + "/step"] = torch::tensor(std::vector<std::int64_t>{s.step()}, torch::kLong);
    }
}

void load_optimizer(const Checkpoint& ckpt, const std::string& scope, torch::optim::Adam& opt,
                    const torch::nn::Module& module) {
    auto& state = opt.state();
    state.clear();
    for (const auto& item : module.named_parameters(true)) {
        const std::string base = scope + "/" + item.key();
        if (ckpt.tensors.count(base + "/exp_avg") == 0) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(ckpt.at(base + "/step").item<std::int64_t>());
        s->exp_avg(ckpt.at(base + "/exp_avg").clone());
        s->exp_avg_sq(ckpt.at(base + "/exp_avg_sq").clone());
        state[item.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, const fr::FREmbedder& train_fr, const std::vector<data::FaceRecord>& records)
    : cfg_(std::move(cfg)), fr_(train_fr), model_(nullptr), disc_(nullptr), rng_(hash_seed(cfg_.seed)) {
    cfg_.weights.validate();
    if (records.empty()) throw ValidationError("training needs at least one record");
    if (cfg_.batch < 1 || cfg_.iterations < 0) throw ConfigError("batch must be positive and iterations non-negative");
    const int res = cfg_.model.generator.resolution;
    if (records.front().image.height != res || fr_.resolution() != res) {
        throw ShapeError("training resolution " + std::to_string(res) + " does not match the data (" +
                         std::to_string(records.front().image.height) + ") or the train-FR (" +
                         std::to_string(fr_.resolution()) + ")");
    }
    if (cfg_.perceptual_layers < 0 || cfg_.perceptual_layers > fr_.config().depth) {
        throw ConfigError("perceptual_layers must lie in [0, " + std::to_string(fr_.config().depth) + "]");
    }
    if (fr_.config().embedding_dim != cfg_.model.encoder.id_dim) {
        throw ShapeError("train-FR embedding dimension differs from the configured d_id");
    }
    fr_hash_ = module_hash(*fr_.net());

    images_ = images_to_tensor(std::span<const data::FaceRecord>(records));
    std::vector<torch::Tensor> labels;
    labels.reserve(records.size());
    for (const auto& r : records) {
        labels.push_back(torch::from_blob(const_cast<std::uint8_t*>(r.mask.labels.data()),
                                          {r.mask.height, r.mask.width}, torch::kUInt8)
                             .to(torch::kLong));
    }
    labels_ = torch::stack(labels);
    if (labels_.max().item<std::int64_t>() >= cfg_.model.encoder.classes) {
        throw ValidationError("training masks contain labels outside the configured class count");
    }
    {
        torch::NoGradGuard no_grad;
        std::vector<torch::Tensor> chunks;
        for (std::int64_t start = 0; start < images_.size(0); start += 128) {
            chunks.push_back(fr_.embed(images_.slice(0, start, std::min<std::int64_t>(start + 128, images_.size(0)))));
        }
        embeddings_ = torch::cat(chunks).contiguous();
    }

    torch::manual_seed(cfg_.seed);
    model_ = SynthesisModel(cfg_.model);
    disc_ = gen::MultiScaleDiscriminator(cfg_.model.discriminator);
    opt_g_ = std::make_unique<torch::optim::Adam>(
        model_->parameters(), torch::optim::AdamOptions(cfg_.lr_g).betas({cfg_.beta1, cfg_.beta2}));
    opt_d_ = std::make_unique<torch::optim::Adam>(
        disc_->parameters(), torch::optim::AdamOptions(cfg_.lr_d).betas({cfg_.beta1, cfg_.beta2}));

    order_.resize(records.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::int64_t> Trainer::next_batch() {
    std::vector<std::int64_t> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch));
    while (batch.size() < static_cast<std::size_t>(cfg_.batch)) {
        if (cursor_ == order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        batch.push_back(order_[cursor_++]);
    }
    return batch;
}

void Trainer::check_divergence(double adv_d) {
    if (adv_d_history_.size() >= 100) {
        std::vector<double> sorted(adv_d_history_.begin(), adv_d_history_.end());
        const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
        std::nth_element(sorted.begin(), mid, sorted.end());
        const double limit = cfg_.divergence_factor * std::max(*mid, 1e-3);
        above_limit_ = adv_d > limit ? above_limit_ + 1 : 0;
        if (above_limit_ >= cfg_.divergence_patience) {
            std::ostringstream msg;
            msg << "training diverged at iteration " << iteration_ << ": L_adv_D = " << adv_d << " stayed above "
                << cfg_.divergence_factor << "x its trailing median (" << *mid << ") for " << above_limit_
                << " consecutive iterations";
            throw NumericError(msg.str());
        }
    }
    adv_d_history_.push_back(adv_d);
    if (static_cast<int>(adv_d_history_.size()) > cfg_.divergence_window) adv_d_history_.pop_front();
}

StepMetrics Trainer::step() {
    const int classes = cfg_.model.encoder.classes;
    const auto idx = torch::tensor(next_batch(), torch::kLong);
    const auto real = images_.index_select(0, idx);
    const auto onehot = onehot_of(labels_.index_select(0, idx), classes);
    const auto id_ref = embeddings_.index_select(0, idx);

    model_->train();
    const auto fake = model_->reconstruct(real, onehot, id_ref).image;

    // Discriminator step.
    set_requires_grad(*disc_, true);
    const auto d_real = disc_->forward(real, onehot);
    const auto d_fake = disc_->forward(fake.detach(), onehot);
    const auto loss_d = loss::discriminator_adversarial_loss(d_real.logits, d_fake.logits);
    opt_d_->zero_grad();
    loss_d.backward();
    opt_d_->step();

    // Generator step against the updated discriminator.
    set_requires_grad(*disc_, false);
    gen::DiscriminatorOutput real_features;
    std::vector<torch::Tensor> real_maps;
    {
        torch::NoGradGuard no_grad;
        real_features = disc_->forward(real, onehot);
        real_maps = fr_.feature_maps(real);
        if (cfg_.perceptual_layers > 0) real_maps.resize(static_cast<std::size_t>(cfg_.perceptual_layers));
    }
    const auto d_gen = disc_->forward(fake, onehot);
    const auto fake_maps = fr_.feature_maps(fake);
    loss::LossTensors parts{loss::generator_adversarial_loss(d_gen.logits),
                            loss::feature_matching_loss(real_features.features, d_gen.features),
                            loss::perceptual_loss_from_maps(fake_maps, real_maps, static_cast<int>(real_maps.size())),
                            loss::identity_loss_from_embeddings(fr_.embed_from_maps(fake_maps), id_ref)};
    const auto total = loss::total_objective(parts, cfg_.weights);
    opt_g_->zero_grad();
    total.backward();
    opt_g_->step();

    ++iteration_;
    StepMetrics m;
    m.iteration = iteration_;
    m.adv_d = loss_d.item<double>();
    m.adv_g = parts.adversarial.item<double>();
    m.fm = parts.feature_matching.item<double>();
    m.prc = parts.perceptual.item<double>();
    m.id = parts.identity.item<double>();
    m.total = total.item<double>();
    check_divergence(m.adv_d);
    return m;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt;
    std::ostringstream rng_state;
    rng_state << rng_;
    ckpt.manifest = {{"kind", "synthesis-model"},
                     {"model", cfg_.model.to_json()},
                     {"train", cfg_.to_json()},
                     {"iteration", iteration_},
                     {"resolution", cfg_.model.generator.resolution},
                     {"classes", cfg_.model.encoder.classes},
                     {"style_dim", cfg_.model.encoder.style_dim},
                     {"id_dim", cfg_.model.encoder.id_dim},
                     {"seed", cfg_.seed},
                     {"train_fr_hash", fr_hash_},
                     {"rng_state", rng_state.str()},
                     {"cursor", cursor_},
                     {"above_limit", above_limit_}};
    ckpt.put_module("em", *model_->em);
    ckpt.put_module("es", *model_->es);
    ckpt.put_module("proj", *model_->proj);
    ckpt.put_module("gen", *model_->gen);
    ckpt.put_module("disc", *disc_);
    put_optimizer(ckpt, "opt_g", *opt_g_, *model_);
    put_optimizer(ckpt, "opt_d", *opt_d_, *disc_);
    ckpt.tensors["state/order"] = torch::tensor(order_, torch::kLong);
    ckpt.tensors["state/adv_d_history"] =
        torch::tensor(std::vector<double>(adv_d_history_.begin(), adv_d_history_.end()), torch::kFloat64);
    return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
    if (ckpt.manifest.value("kind", "") != "synthesis-model") {
        throw IngestionError("checkpoint is not a synthesis model");
    }
    if (ckpt.manifest.at("model") != cfg_.model.to_json()) {
        throw ConfigError("checkpoint architecture does not match the training config");
    }
    if (ckpt.manifest.value("train_fr_hash", "") != fr_hash_) {
        throw ConfigError("checkpoint was trained against a different train-FR");
    }
    ckpt.load_module("em", *model_->em);
    ckpt.load_module("es", *model_->es);
    ckpt.load_module("proj", *model_->proj);
    ckpt.load_module("gen", *model_->gen);
    ckpt.load_module("disc", *disc_);
    load_optimizer(ckpt, "opt_g", *opt_g_, *model_);
    load_optimizer(ckpt, "opt_d", *opt_d_, *disc_);
    iteration_ = ckpt.manifest.at("iteration").get<std::int64_t>();
    std::istringstream rng_state(ckpt.manifest.at("rng_state").get<std::string>());
    rng_state >> rng_;
    cursor_ = ckpt.manifest.at("cursor").get<std::size_t>();
    above_limit_ = ckpt.manifest.at("above_limit").get<int>();
    const auto order = ckpt.at("state/order").contiguous();
    order_.assign(order.data_ptr<std::int64_t>(), order.data_ptr<std::int64_t>() + order.numel());
    const auto history = ckpt.at("state/adv_d_history").contiguous();
    adv_d_history_.assign(history.data_ptr<double>(), history.data_ptr<double>() + history.numel());
}

namespace {

std::string iteration_name(std::int64_t iteration) {
    std::ostringstream name;
    name << "iter_" << std::setw(7) << std::setfill('0') << iteration << ".ckpt";
    return name.str();
}

}  // namespace

TrainResult train(const std::vector<data::FaceRecord>& records, const fr::FREmbedder& train_fr,
                  const TrainConfig& cfg, const fs::path& checkpoint_dir, const TrainCallbacks& callbacks,
                  const std::optional<fs::path>& resume) {
    const std::string fr_hash_before = module_hash(*train_fr.net());
    Trainer trainer(cfg, train_fr, records);
    if (resume) trainer.restore(load_checkpoint(*resume));
    fs::create_directories(checkpoint_dir);
    std::ofstream log(checkpoint_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);

    TrainResult result;
    StepMetrics window;
    int window_count = 0;
    while (trainer.iteration() < cfg.iterations) {
        const auto m = trainer.step();
        window.adv_g += m.adv_g;
        window.adv_d += m.adv_d;
        window.fm += m.fm;
        window.prc += m.prc;
        window.id += m.id;
        window.total += m.total;
        ++window_count;
        if (m.iteration % cfg.log_every == 0 || m.iteration == cfg.iterations) {
            StepMetrics mean = window;
            mean.iteration = m.iteration;
            for (double* v : {&mean.adv_g, &mean.adv_d, &mean.fm, &mean.prc, &mean.id, &mean.total}) {
                *v /= window_count;
            }
            log << to_json(mean).dump() << '\n' << std::flush;
            result.log.push_back(mean);
            if (callbacks.on_log) callbacks.on_log(mean);
            window = StepMetrics{};
            window_count = 0;
        }
        if (cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0) {
            const auto path = checkpoint_dir / iteration_name(m.iteration);
            save_checkpoint(path, trainer.checkpoint());
            if (callbacks.on_checkpoint) callbacks.on_checkpoint(m.iteration, path);
        }
    }
    if (module_hash(*train_fr.net()) != fr_hash_before) {
        throw StateError("train-FR weights changed during generator training");
    }
    result.iterations = trainer.iteration();
    result.final_checkpoint = checkpoint_dir / "model.ckpt";
    save_checkpoint(result.final_checkpoint, trainer.checkpoint());
    return result;
}

LoadedModel load_model(const fs::path& path) {
    const auto ckpt = load_checkpoint(path);
    if (ckpt.manifest.value("kind", "") != "synthesis-model") {
        throw IngestionError("'" + path.string() + "' is not a synthesis model checkpoint");
    }
    LoadedModel loaded;
    loaded.config = ModelConfig::from_json(ckpt.manifest.at("model"));
    loaded.manifest = ckpt.manifest;
    loaded.model = SynthesisModel(loaded.config);
    ckpt.load_module("em", *loaded.model->em);
    ckpt.load_module("es", *loaded.model->es);
    ckpt.load_module("proj", *loaded.model->proj);
    ckpt.load_module("gen", *loaded.model->gen);
    loaded.model->eval();
    return loaded;
}

}  // namespace idsis::train
