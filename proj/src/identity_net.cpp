#include "idsis/identity_net.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "idsis/checkpoint.hpp"
#include "idsis/errors.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::fr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string role_name(Role role) { return role == Role::Train ? "train" : "eval"; }

Role parse_role(const std::string& name) {
    if (name == "train" || name == "train-FR") return Role::Train;
    if (name == "eval" || name == "eval-FR") return Role::Eval;
    throw ConfigError("unknown FR role '" + name + "' (expected train or eval)");
}

FREmbedderConfig default_fr_config(Role role) {
    FREmbedderConfig cfg;
    if (role == Role::Eval) {
        cfg.width = 0.75;
        cfg.seed = 2;
    }
    return cfg;
}

void validate_role_pair(const FREmbedderConfig& train_cfg, const FREmbedderConfig& eval_cfg) {
    if (train_cfg.seed == eval_cfg.seed) {
        throw ConfigError("train-FR and eval-FR must use different seeds (both are " +
                          std::to_string(train_cfg.seed) + ")");
    }
    if (train_cfg.width == eval_cfg.width && train_cfg.depth == eval_cfg.depth &&
        train_cfg.embedding_dim == eval_cfg.embedding_dim) {
        throw ConfigError("train-FR and eval-FR must differ in at least one architectural field (width, depth)");
    }
}

torch::Tensor ImageEmbedder::pooled_features(const torch::Tensor& images) const {
    const auto maps = feature_maps(images);
    return maps.back().mean({2, 3});
}

namespace {

int stage_channels(const FREmbedderConfig& cfg, int stage) {
    return std::max(4, static_cast<int>(std::lround(16.0 * cfg.width * std::pow(2.0, std::min(stage, 3)))));
}

int group_count(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0 && channels / g >= 2) return g;
    }
    return 1;
}

}  // namespace

FRNetImpl::FRNetImpl(const FREmbedderConfig& cfg, int identity_count) {
    if (cfg.depth < 1) throw ConfigError("FR depth must be at least 1");
    if (cfg.resolution >> cfg.depth < 1) throw ConfigError("FR depth too large for the input resolution");
    int in_ch = 3;
    for (int s = 0; s < cfg.depth; ++s) {
        const int ch = stage_channels(cfg, s);
        nn::Sequential stage(nn::Conv2d(nn::Conv2dOptions(in_ch, ch, 3).stride(2).padding(1)),
                             nn::GroupNorm(group_count(ch), ch), nn::ReLU(),
                             nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)), nn::GroupNorm(group_count(ch), ch),
                             nn::ReLU());
        stages_.push_back(register_module("stage" + std::to_string(s), stage));
        in_ch = ch;
    }
    embed_ = register_module("embed", nn::Linear(in_ch * 4, cfg.embedding_dim));
    classifier_ = register_module("classifier", nn::Linear(cfg.embedding_dim, std::max(identity_count, 1)));
}

std::vector<torch::Tensor> FRNetImpl::trunk(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    out.reserve(stages_.size());
    auto h = x;
    for (auto& stage : stages_) {
        h = stage->forward(h);
        out.push_back(h);
    }
    return out;
}

torch::Tensor FRNetImpl::raw_embedding(const torch::Tensor& last_features) {
    const auto pooled = F::adaptive_avg_pool2d(last_features, F::AdaptiveAvgPool2dFuncOptions({2, 2}));
    return embed_->forward(pooled.flatten(1));
}

torch::Tensor FRNetImpl::classify(const torch::Tensor& raw) { return classifier_->forward(raw); }

FREmbedder::FREmbedder(FREmbedderConfig cfg, Role role, int identity_count)
    : cfg_(cfg), role_(role), identity_count_(identity_count), net_(nullptr) {
    torch::manual_seed(cfg_.seed);
    net_ = FRNet(cfg_, identity_count);
}

void FREmbedder::check_input(const torch::Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != cfg_.resolution ||
        images.size(3) != cfg_.resolution) {
        throw ShapeError("FR embedder expects (B, 3, " + std::to_string(cfg_.resolution) + ", " +
                         std::to_string(cfg_.resolution) + ") input, got " + c10::str(images.sizes()));
    }
}

torch::Tensor FREmbedder::embed(const torch::Tensor& images) const {
    check_input(images);
    auto& net = const_cast<FRNet&>(net_);
    const auto maps = net->trunk(images);
    return F::normalize(net->raw_embedding(maps.back()), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

torch::Tensor FREmbedder::embed_from_maps(const std::vector<torch::Tensor>& maps) const {
    return F::normalize(const_cast<FRNet&>(net_)->raw_embedding(maps.back()),
                        F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

std::vector<torch::Tensor> FREmbedder::feature_maps(const torch::Tensor& images) const {
    check_input(images);
    return const_cast<FRNet&>(net_)->trunk(images);
}

torch::Tensor FREmbedder::logits(const torch::Tensor& images) const {
    check_input(images);
    auto& net = const_cast<FRNet&>(net_);
    return net->classify(net->raw_embedding(net->trunk(images).back()));
}

IdentityEmbedding FREmbedder::embed(const data::Image& image) const {
    torch::NoGradGuard no_grad;
    const auto dtype = net_->parameters().front().scalar_type();
    const auto e = embed(image_to_tensor(image).unsqueeze(0).to(dtype)).to(torch::kFloat32).contiguous();
    IdentityEmbedding out;
    out.source = role_;
    out.vector.assign(e.data_ptr<float>(), e.data_ptr<float>() + e.numel());
    return out;
}

void FREmbedder::freeze() {
    net_->eval();
    for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

void FREmbedder::to(torch::ScalarType dtype) { net_->to(dtype); }

void FREmbedder::save(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    ckpt.manifest = {{"kind", "fr-embedder"},
                     {"role", role_name(role_)},
                     {"width", cfg_.width},
                     {"depth", cfg_.depth},
                     {"seed", cfg_.seed},
                     {"embedding_dim", cfg_.embedding_dim},
                     {"resolution", cfg_.resolution},
                     {"epochs", cfg_.epochs},
                     {"class_count", identity_count_},
                     {"training_accuracy", training_accuracy_}};
    ckpt.put_module("fr", *net_);
    save_checkpoint(path, ckpt);
}

FREmbedder FREmbedder::load(const std::filesystem::path& path) {
    const auto ckpt = load_checkpoint(path);
    const auto& m = ckpt.manifest;
    if (m.value("kind", "") != "fr-embedder") {
        throw IngestionError("'" + path.string() + "' is not an FR embedder checkpoint");
    }
    FREmbedderConfig cfg;
    cfg.width = m.at("width").get<double>();
    cfg.depth = m.at("depth").get<int>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    cfg.embedding_dim = m.at("embedding_dim").get<int>();
    cfg.resolution = m.at("resolution").get<int>();
    cfg.epochs = m.at("epochs").get<int>();
    const int classes = m.at("class_count").get<int>();
    cfg.identity_count = classes;
    FREmbedder model(cfg, parse_role(m.at("role").get<std::string>()), classes);
    ckpt.load_module("fr", *model.net_);
    model.training_accuracy_ = m.at("training_accuracy").get<double>();
    model.freeze();
    return model;
}

namespace {

double accuracy_of(const FREmbedder& model, const torch::Tensor& images, const torch::Tensor& labels) {
    torch::NoGradGuard no_grad;
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < images.size(0); start += 128) {
        const auto end = std::min<std::int64_t>(start + 128, images.size(0));
        const auto pred = model.logits(images.slice(0, start, end)).argmax(1);
        correct += pred.eq(labels.slice(0, start, end)).sum().item<std::int64_t>();
    }
    return static_cast<double>(correct) / static_cast<double>(images.size(0));
}

}  // namespace

FREmbedder train_fr(const std::vector<data::FaceRecord>& records, FREmbedderConfig cfg, Role role,
                    FRTrainingReport* report) {
    std::map<std::uint32_t, std::int64_t> label_of;
    for (const auto& r : records) label_of.emplace(r.identity_id, 0);
    if (label_of.size() < 2) {
        throw ValidationError("FR training needs at least 2 identities, got " + std::to_string(label_of.size()));
    }
    std::int64_t next = 0;
    for (auto& [id, label] : label_of) label = next++;
    const int classes = static_cast<int>(label_of.size());
    cfg.identity_count = classes;
    cfg.resolution = records.front().image.height;

    const auto images = images_to_tensor(std::span<const data::FaceRecord>(records));
    std::vector<std::int64_t> label_values;
    label_values.reserve(records.size());
    for (const auto& r : records) label_values.push_back(label_of.at(r.identity_id));
    const auto labels = torch::tensor(label_values, torch::kLong);

    FREmbedder model(cfg, role, classes);
    auto& net = model.net();
    net->train();
    torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(cfg.lr));
    std::mt19937_64 rng(cfg.seed ^ 0xf00dULL);
    torch::Generator noise_gen = at::detail::createCPUGenerator(cfg.seed ^ 0xbeefULL);

    std::vector<std::int64_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    FRTrainingReport local;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        // Cosine decay keeps the last epochs stable.
        const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * epoch / std::max(cfg.epochs, 1)));
        for (auto& group : optimizer.param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                                      order.begin() + static_cast<std::ptrdiff_t>(end)),
                                           torch::kLong);
            auto x = images.index_select(0, idx);
            if (cfg.augment) {
                // Blur half the batch and add light noise so embeddings tolerate generator output.
                const auto blurred = F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(1).padding(1)
                                                          .count_include_pad(false));
                const auto pick = torch::rand({x.size(0), 1, 1, 1}, noise_gen, x.options()) < 0.5;
                x = torch::where(pick, blurred, x);
                x = x + 0.03 * torch::randn(x.sizes(), noise_gen, x.options());
            }
            const auto y = labels.index_select(0, idx);
            optimizer.zero_grad();
            const auto loss = F::cross_entropy(model.logits(x), y);
            loss.backward();
            optimizer.step();
            loss_sum += loss.item<double>();
            ++steps;
        }
        local.epoch_losses.push_back(loss_sum / std::max(steps, 1));
    }

    model.freeze();
    local.training_accuracy = accuracy_of(model, images, labels);
    model.set_training_accuracy(local.training_accuracy);
    if (report != nullptr) *report = local;
    if (local.training_accuracy < cfg.min_accuracy) {
        throw QualityGateError("FR training accuracy " + std::to_string(local.training_accuracy) +
                               " is below the required " + std::to_string(cfg.min_accuracy) + " after " +
                               std::to_string(cfg.epochs) + " epochs");
    }
    return model;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine of vectors with different sizes");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
    const auto x = a.detach().to(torch::kFloat64).flatten();
    const auto y = b.detach().to(torch::kFloat64).flatten();
    const double denom = std::sqrt(x.dot(x).item<double>() * y.dot(y).item<double>());
    if (denom == 0.0) return 0.0;
    return std::clamp(x.dot(y).item<double>() / denom, -1.0, 1.0);
}

Verification verify_score(double score, double tau) {
    if (!(tau >= -1.0 && tau <= 1.0)) {
        throw ValidationError("verification threshold must lie in [-1, 1], got " + std::to_string(tau));
    }
    return {score > tau, score};
}

Verification verify_pair(const ImageEmbedder& model, const data::Image& a, const data::Image& b, double tau) {
    torch::NoGradGuard no_grad;
    const auto ea = model.embed(image_to_tensor(a).unsqueeze(0));
    const auto eb = model.embed(image_to_tensor(b).unsqueeze(0));
    return verify_score(cosine(ea, eb), tau);
}

}  // namespace idsis::fr
