#include "idsis/losses.hpp"

#include <cmath>

#include "idsis/errors.hpp"

namespace idsis::loss {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
    if (!(feature_matching >= 0.0) || !(perceptual >= 0.0) || !(identity >= 0.0)) {
        throw ConfigError("loss weights must be non-negative");
    }
}

torch::Tensor identity_loss_from_embeddings(const torch::Tensor& generated_embedding,
                                            const torch::Tensor& reference_embedding) {
    if (generated_embedding.sizes() != reference_embedding.sizes()) {
        throw ShapeError("identity loss embeddings differ in shape");
    }
    const auto cos = F::cosine_similarity(generated_embedding, reference_embedding,
                                          F::CosineSimilarityFuncOptions().dim(1).eps(1e-12));
    return (1.0 - cos).mean();
}

torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                            const fr::ImageEmbedder& fr) {
    torch::Tensor reference_embedding;
    {
        torch::NoGradGuard no_grad;
        reference_embedding = fr.embed(reference);
    }
    return identity_loss_from_embeddings(fr.embed(generated), reference_embedding);
}

namespace {

void check_scales(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw ShapeError("real and fake logits must cover the same non-empty set of scales");
    }
}

}  // namespace

torch::Tensor generator_adversarial_loss(const std::vector<torch::Tensor>& fake_logits) {
    if (fake_logits.empty()) throw ShapeError("no discriminator scales");
    auto total = torch::zeros({}, fake_logits.front().options());
    for (const auto& fake : fake_logits) total = total - fake.mean();
    return total / static_cast<double>(fake_logits.size());
}

torch::Tensor discriminator_adversarial_loss(const std::vector<torch::Tensor>& real_logits,
                                             const std::vector<torch::Tensor>& fake_logits) {
    check_scales(real_logits, fake_logits);
    auto total = torch::zeros({}, real_logits.front().options());
    for (std::size_t s = 0; s < real_logits.size(); ++s) {
        total = total + torch::relu(1.0 - real_logits[s]).mean() + torch::relu(1.0 + fake_logits[s]).mean();
    }
    return total / static_cast<double>(real_logits.size());
}

AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits) {
    return {generator_adversarial_loss(fake_logits), discriminator_adversarial_loss(real_logits, fake_logits)};
}

torch::Tensor feature_matching_loss(const std::vector<std::vector<torch::Tensor>>& real_features,
                                    const std::vector<std::vector<torch::Tensor>>& fake_features) {
    if (real_features.size() != fake_features.size() || real_features.empty()) {
        throw ShapeError("feature matching needs the same non-empty set of scales");
    }
    torch::Tensor total;
    int terms = 0;
    for (std::size_t s = 0; s < real_features.size(); ++s) {
        if (real_features[s].size() != fake_features[s].size()) {
            throw ShapeError("feature matching scale " + std::to_string(s) + " has mismatched layer counts");
        }
        for (std::size_t l = 0; l < real_features[s].size(); ++l) {
            const auto& real = real_features[s][l];
            const auto& fake = fake_features[s][l];
            if (real.sizes() != fake.sizes()) {
                throw ShapeError("feature matching layer " + std::to_string(l) + " of scale " + std::to_string(s) +
                                 " has mismatched shapes");
            }
            const auto term = (fake - real.detach()).abs().mean();
            total = terms == 0 ? term : total + term;
            ++terms;
        }
    }
    if (terms == 0) throw ShapeError("feature matching received no layers");
    return total / static_cast<double>(terms);
}

torch::Tensor perceptual_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                              const fr::ImageEmbedder& feat_net, int layers) {
    std::vector<torch::Tensor> reference_maps;
    {
        torch::NoGradGuard no_grad;
        reference_maps = feat_net.feature_maps(reference);
    }
    return perceptual_loss_from_maps(feat_net.feature_maps(generated), reference_maps, layers);
}

torch::Tensor perceptual_loss_from_maps(const std::vector<torch::Tensor>& generated_maps,
                                        const std::vector<torch::Tensor>& reference_maps, int layers) {
    if (layers < 0) throw ValidationError("perceptual layer count must be non-negative");
    const std::size_t count = layers == 0 ? generated_maps.size() : static_cast<std::size_t>(layers);
    if (count == 0 || generated_maps.size() < count || reference_maps.size() < count ||
        (layers == 0 && generated_maps.size() != reference_maps.size())) {
        throw ShapeError("perceptual loss needs the same non-empty set of feature layers");
    }
    auto total = torch::zeros({}, generated_maps.front().options());
    for (std::size_t l = 0; l < count; ++l) {
        if (generated_maps[l].sizes() != reference_maps[l].sizes()) {
            throw ShapeError("perceptual loss layer " + std::to_string(l) + " has mismatched shapes");
        }
        total = total + (generated_maps[l] - reference_maps[l].detach()).abs().mean();
    }
    return total / static_cast<double>(count);
}

double total_objective(const LossParts& parts, const LossWeights& weights) {
    const std::pair<const char*, double> named[] = {{"L_adv", parts.adversarial},
                                                     {"L_FM", parts.feature_matching},
                                                     {"L_prc", parts.perceptual},
                                                     {"L_id", parts.identity}};
    for (const auto& [name, value] : named) {
        if (!std::isfinite(value)) {
            throw NumericError(std::string("loss term ") + name + " is not finite (" + std::to_string(value) + ")");
        }
    }
    return parts.adversarial + weights.feature_matching * parts.feature_matching +
           weights.perceptual * parts.perceptual + weights.identity * parts.identity;
}

torch::Tensor total_objective(const LossTensors& parts, const LossWeights& weights) {
    const std::pair<const char*, const torch::Tensor*> named[] = {{"L_adv", &parts.adversarial},
                                                                   {"L_FM", &parts.feature_matching},
                                                                   {"L_prc", &parts.perceptual},
                                                                   {"L_id", &parts.identity}};
    for (const auto& [name, tensor] : named) {
        if (!torch::isfinite(*tensor).all().item<bool>()) {
            throw NumericError(std::string("loss term ") + name + " is not finite");
        }
    }
    return parts.adversarial + weights.feature_matching * parts.feature_matching +
           weights.perceptual * parts.perceptual + weights.identity * parts.identity;
}

}  // namespace idsis::loss
