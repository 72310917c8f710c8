#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "idsis/data.hpp"

namespace idsis::fr {

enum class Role { Train, Eval };

std::string role_name(Role role);
Role parse_role(const std::string& name);

struct IdentityEmbedding {
    std::vector<float> vector;
    Role source = Role::Train;
};

struct FREmbedderConfig {
    double width = 1.0;  // channel multiplier on a 16-channel base
    int depth = 4;       // number of stride-2 stages
    std::uint64_t seed = 1;
    int identity_count = 0;  // filled from the training split when 0
    int epochs = 40;
    int embedding_dim = 128;
    int resolution = 64;
    int batch = 32;
    double lr = 2e-3;
    double min_accuracy = 0.9;
    bool augment = true;
};

// Defaults per role; the two differ in seed and width.
FREmbedderConfig default_fr_config(Role role);

// Train-FR and eval-FR must differ in seed and in at least one architectural field.
void validate_role_pair(const FREmbedderConfig& train_cfg, const FREmbedderConfig& eval_cfg);

// Something that maps images to unit embeddings and exposes intermediate feature maps.
class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    // (B, 3, H, W) in [-1, 1] -> (B, d) unit rows. Differentiable in the input.
    virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
    virtual std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const = 0;
    // (B, F) global-average-pooled last feature map.
    virtual torch::Tensor pooled_features(const torch::Tensor& images) const;
    virtual int resolution() const = 0;
};

class FRNetImpl : public torch::nn::Module {
public:
    FRNetImpl(const FREmbedderConfig& cfg, int identity_count);

    std::vector<torch::Tensor> trunk(const torch::Tensor& x);
    torch::Tensor raw_embedding(const torch::Tensor& last_features);
    torch::Tensor classify(const torch::Tensor& raw_embedding);

private:
    std::vector<torch::nn::Sequential> stages_;
    torch::nn::Linear embed_{nullptr};
    torch::nn::Linear classifier_{nullptr};
};
TORCH_MODULE(FRNet);

// A frozen face-recognition embedder.
class FREmbedder : public ImageEmbedder {
public:
    FREmbedder(FREmbedderConfig cfg, Role role, int identity_count);

    torch::Tensor embed(const torch::Tensor& images) const override;
    std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const override;
    int resolution() const override { return cfg_.resolution; }

    IdentityEmbedding embed(const data::Image& image) const;
    // Unit embedding from trunk maps already computed by feature_maps().
    torch::Tensor embed_from_maps(const std::vector<torch::Tensor>& maps) const;
    torch::Tensor logits(const torch::Tensor& images) const;

    const FREmbedderConfig& config() const { return cfg_; }
    Role role() const { return role_; }
    double training_accuracy() const { return training_accuracy_; }
    int identity_count() const { return identity_count_; }
    FRNet& net() { return net_; }
    const FRNet& net() const { return net_; }

    void freeze();
    void set_training_accuracy(double acc) { training_accuracy_ = acc; }
    // Casts weights, e.g. to kFloat64 for finite-difference checks.
    void to(torch::ScalarType dtype);

    void save(const std::filesystem::path& path) const;
    static FREmbedder load(const std::filesystem::path& path);

private:
    void check_input(const torch::Tensor& images) const;

    FREmbedderConfig cfg_;
    Role role_;
    int identity_count_;
    double training_accuracy_ = 0.0;
    FRNet net_;
};

struct FRTrainingReport {
    double training_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

// Trains a closed-set classifier over identity ids and returns the frozen embedder.
// Throws QualityGateError when the final training accuracy is below cfg.min_accuracy.
FREmbedder train_fr(const std::vector<data::FaceRecord>& records, FREmbedderConfig cfg, Role role,
                    FRTrainingReport* report = nullptr);

double cosine(const std::vector<float>& a, const std::vector<float>& b);
double cosine(const torch::Tensor& a, const torch::Tensor& b);

struct Verification {
    bool accept = false;
    double score = 0.0;
};

// Accepts iff cosine score > tau.
Verification verify_pair(const ImageEmbedder& model, const data::Image& a, const data::Image& b, double tau);
Verification verify_score(double score, double tau);

}  // namespace idsis::fr
