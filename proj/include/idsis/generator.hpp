#pragma once

#include <torch/torch.h>

#include <utility>
#include <vector>

#include "idsis/data.hpp"
#include "idsis/encoders.hpp"

namespace idsis::gen {

// Weights of one cross-attention layer. Queries come from spatial features,
// keys and values from the conditioning tokens.
struct CrossAttentionWeights {
    torch::Tensor query;   // (F, d_k)
    torch::Tensor key;     // (d_s, d_k)
    torch::Tensor value;   // (d_s, d_k)
    torch::Tensor output;  // (d_k, F)
};

struct CrossAttentionResult {
    torch::Tensor features;   // (B, N, F): input plus attended values
    torch::Tensor attention;  // (B, N, T) row-stochastic, averaged over heads
};

// softmax(Q K^T / sqrt(d)) V projected back to F and added residually.
// features: (B, N, F) or (N, F); tokens: (B, T, d_s) or (T, d_s).
// Gradients are hand-derived (see CrossAttentionFunction in generator.cpp).
CrossAttentionResult cross_attention(const torch::Tensor& features, const torch::Tensor& tokens,
                                     const CrossAttentionWeights& weights, int heads = 1);

struct CrossAttnBlockConfig {
    int feature_dim = 64;
    int token_dim = 64;
    int key_dim = 64;
    int head_count = 1;
};

class CrossAttentionImpl : public torch::nn::Module {
public:
    explicit CrossAttentionImpl(const CrossAttnBlockConfig& cfg);
    CrossAttentionResult forward(const torch::Tensor& features, const torch::Tensor& tokens);

    CrossAttentionWeights weights() const { return {w_query_, w_key_, w_value_, w_output_}; }
    torch::Tensor& output_weight() { return w_output_; }

private:
    CrossAttnBlockConfig cfg_;
    torch::Tensor w_query_, w_key_, w_value_, w_output_;
};
TORCH_MODULE(CrossAttention);

// Optional spatial self-attention for parity experiments.
class SelfAttentionImpl : public torch::nn::Module {
public:
    SelfAttentionImpl(int feature_dim, int key_dim);
    torch::Tensor forward(const torch::Tensor& features);

private:
    torch::nn::Linear qkv_{nullptr};
    torch::nn::Linear out_{nullptr};
    int key_dim_;
};
TORCH_MODULE(SelfAttention);

struct GeneratorConfig {
    int classes = data::kToyClassCount;
    int style_dim = 64;
    int resolution = 64;
    int grid = 16;
    int base_channels = 48;   // stage s has max(min_channels, base >> s) channels
    int min_channels = 16;
    int convs_per_stage = 1;
    int heads = 1;
    bool self_attention = false;

    int stage_count() const;
    int stage_channels(int stage) const;
};

struct GeneratorOutput {
    torch::Tensor image;                       // (B, 3, H, W) in [-1, 1]
    std::vector<torch::Tensor> attention;      // per block, (B, H_i * W_i, C + 1)
    std::vector<std::pair<int, int>> attention_sizes;  // (H_i, W_i)
};

// 16x16 descriptor -> stem -> [cross-attention -> 2x nearest upsample -> conv] per stage -> tanh RGB.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const GeneratorConfig& cfg);
    GeneratorOutput forward(const torch::Tensor& descriptor, const torch::Tensor& tokens);

    const GeneratorConfig& config() const { return cfg_; }
    std::vector<CrossAttention>& attention_blocks() { return attention_; }

private:
    GeneratorConfig cfg_;
    torch::nn::Sequential stem_{nullptr};
    std::vector<CrossAttention> attention_;
    std::vector<SelfAttention> self_attention_;
    std::vector<torch::nn::Sequential> convs_;
    torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorConfig {
    int classes = data::kToyClassCount;
    int base_channels = 24;
    int scales = 2;
};

struct DiscriminatorOutput {
    std::vector<torch::Tensor> logits;                  // per scale, (B, 1, h, w) patch logits
    std::vector<std::vector<torch::Tensor>> features;   // per scale, per layer
};

class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    PatchDiscriminatorImpl(int in_channels, int base_channels);
    std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& x);

private:
    std::vector<torch::nn::Sequential> layers_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Full-resolution and 2x-downsampled patch discriminators; the mask is concatenated to the image.
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    explicit MultiScaleDiscriminatorImpl(const DiscriminatorConfig& cfg);
    DiscriminatorOutput forward(const torch::Tensor& images, const torch::Tensor& onehot);

private:
    DiscriminatorConfig cfg_;
    std::vector<PatchDiscriminator> scales_;
};
TORCH_MODULE(MultiScaleDiscriminator);

DiscriminatorOutput discriminate(MultiScaleDiscriminator& disc, const data::Image& image,
                                 const data::SemanticMask& mask);

struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<float> values;
};

// Attention column of one token for one block, upsampled bilinearly to the output resolution.
Heatmap attention_heatmap(const GeneratorOutput& out, int token_index, int block_index, int batch_index = 0);

}  // namespace idsis::gen
