#pragma once

#include <torch/torch.h>

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "idsis/checkpoint.hpp"
#include "idsis/data.hpp"
#include "idsis/encoders.hpp"
#include "idsis/generator.hpp"
#include "idsis/identity_net.hpp"
#include "idsis/losses.hpp"

namespace idsis::train {

struct ModelConfig {
    enc::EncoderConfig encoder;
    gen::GeneratorConfig generator;
    gen::DiscriminatorConfig discriminator;

    // Builds a consistent config for a resolution / class count / dims.
    static ModelConfig make(int resolution, int classes, int style_dim, int id_dim);
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
    ModelConfig model = ModelConfig::make(64, data::kToyClassCount, 64, 128);
    loss::LossWeights weights;
    double lr_g = 1e-4;
    double lr_d = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    int perceptual_layers = 2;  // leading train-FR trunk stages compared by L_prc (0 = all)
    int batch = 16;
    int iterations = 20000;
    int checkpoint_every = 1000;
    int log_every = 100;
    std::uint64_t seed = 0;
    int divergence_patience = 500;   // consecutive iterations above the limit before aborting
    double divergence_factor = 10.0;  // limit = factor x trailing median of L_adv_D
    int divergence_window = 1000;     // trailing median window

    nlohmann::json to_json() const;
};

// Encoders, identity projection and generator: everything on the generator side.
class SynthesisModelImpl : public torch::nn::Module {
public:
    explicit SynthesisModelImpl(const ModelConfig& cfg);

    // (B, C + 1, d_s) conditioning tokens.
    torch::Tensor tokens(const torch::Tensor& images, const torch::Tensor& onehot, const torch::Tensor& id_embeddings);
    torch::Tensor identity_tokens(const torch::Tensor& id_embeddings);
    enc::StyleBatch styles(const torch::Tensor& images, const torch::Tensor& onehot);
    torch::Tensor descriptor(const torch::Tensor& onehot);
    gen::GeneratorOutput generate(const torch::Tensor& onehot, const torch::Tensor& tokens);
    gen::GeneratorOutput reconstruct(const torch::Tensor& images, const torch::Tensor& onehot,
                                     const torch::Tensor& id_embeddings);

    const ModelConfig& config() const { return cfg_; }

    enc::MaskEmbedder em{nullptr};
    enc::StyleEncoder es{nullptr};
    torch::nn::Linear proj{nullptr};
    gen::Generator gen{nullptr};

private:
    ModelConfig cfg_;
};
TORCH_MODULE(SynthesisModel);

struct StepMetrics {
    std::int64_t iteration = 0;
    double adv_g = 0.0;
    double adv_d = 0.0;
    double fm = 0.0;
    double prc = 0.0;
    double id = 0.0;
    double total = 0.0;
};

nlohmann::json to_json(const StepMetrics& m);

// Owns all mutable training state. Single writer.
class Trainer {
public:
    Trainer(TrainConfig cfg, const fr::FREmbedder& train_fr, const std::vector<data::FaceRecord>& records);

    StepMetrics step();

    std::int64_t iteration() const { return iteration_; }
    SynthesisModel& model() { return model_; }
    gen::MultiScaleDiscriminator& discriminator() { return disc_; }
    const TrainConfig& config() const { return cfg_; }

    Checkpoint checkpoint() const;
    void restore(const Checkpoint& checkpoint);

private:
    std::vector<std::int64_t> next_batch();
    void check_divergence(double adv_d);

    TrainConfig cfg_;
    const fr::FREmbedder& fr_;
    std::string fr_hash_;
    torch::Tensor images_;       // (N, 3, H, W)
    torch::Tensor labels_;       // (N, H, W) int64
    torch::Tensor embeddings_;   // (N, d_id) train-FR embeddings of the records
    SynthesisModel model_;
    gen::MultiScaleDiscriminator disc_;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    std::mt19937_64 rng_;
    std::vector<std::int64_t> order_;
    std::size_t cursor_ = 0;
    std::int64_t iteration_ = 0;
    std::deque<double> adv_d_history_;
    int above_limit_ = 0;
};

struct TrainCallbacks {
    std::function<void(const StepMetrics&)> on_log;                    // every log_every iterations (window means)
    std::function<void(std::int64_t, const std::filesystem::path&)> on_checkpoint;
};

struct TrainResult {
    std::int64_t iterations = 0;
    std::filesystem::path final_checkpoint;
    std::vector<StepMetrics> log;
};

// Runs cfg.iterations steps, writing checkpoints into checkpoint_dir (iter_XXXXXXX.ckpt and model.ckpt)
// and line-delimited metrics into checkpoint_dir / "metrics.jsonl".
TrainResult train(const std::vector<data::FaceRecord>& records, const fr::FREmbedder& train_fr,
                  const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir,
                  const TrainCallbacks& callbacks = {}, const std::optional<std::filesystem::path>& resume = {});

struct LoadedModel {
    SynthesisModel model{nullptr};
    ModelConfig config;
    nlohmann::json manifest;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace idsis::train
