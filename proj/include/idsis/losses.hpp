#pragma once

#include <torch/torch.h>

#include <vector>

#include "idsis/identity_net.hpp"

namespace idsis::loss {

struct LossWeights {
    double feature_matching = 10.0;
    double perceptual = 10.0;
    double identity = 10.0;

    void validate() const;
};

// 1 - cos(fr(generated), fr(reference)), averaged over the batch. Range [0, 2].
torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                            const fr::ImageEmbedder& fr);
// Same objective with the reference embeddings already computed.
torch::Tensor identity_loss_from_embeddings(const torch::Tensor& generated_embedding,
                                            const torch::Tensor& reference_embedding);

struct AdversarialLosses {
    torch::Tensor generator;      // -mean(fake)
    torch::Tensor discriminator;  // mean(relu(1 - real)) + mean(relu(1 + fake))
};

// Hinge losses averaged over scales and patches.
AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits);
torch::Tensor generator_adversarial_loss(const std::vector<torch::Tensor>& fake_logits);
torch::Tensor discriminator_adversarial_loss(const std::vector<torch::Tensor>& real_logits,
                                             const std::vector<torch::Tensor>& fake_logits);

// Mean over scales and layers of mean |real - fake|; real features are constants.
torch::Tensor feature_matching_loss(const std::vector<std::vector<torch::Tensor>>& real_features,
                                    const std::vector<std::vector<torch::Tensor>>& fake_features);

// Mean over the first `layers` feature-net layers (0 = all) of mean |f(generated) - f(reference)|.
torch::Tensor perceptual_loss(const torch::Tensor& generated, const torch::Tensor& reference,
                              const fr::ImageEmbedder& feat_net, int layers = 0);
torch::Tensor perceptual_loss_from_maps(const std::vector<torch::Tensor>& generated_maps,
                                        const std::vector<torch::Tensor>& reference_maps, int layers = 0);

struct LossParts {
    double adversarial = 0.0;
    double feature_matching = 0.0;
    double perceptual = 0.0;
    double identity = 0.0;
};

// L_adv + w_fm L_fm + w_prc L_prc + w_id L_id; non-finite parts raise NumericError.
double total_objective(const LossParts& parts, const LossWeights& weights);

struct LossTensors {
    torch::Tensor adversarial;
    torch::Tensor feature_matching;
    torch::Tensor perceptual;
    torch::Tensor identity;
};

torch::Tensor total_objective(const LossTensors& parts, const LossWeights& weights);

}  // namespace idsis::loss
