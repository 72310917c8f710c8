#pragma once

#include <torch/torch.h>

#include <vector>

#include "idsis/data.hpp"
#include "idsis/identity_net.hpp"

namespace idsis::enc {

struct EncoderConfig {
    int classes = data::kToyClassCount;
    int style_dim = 64;
    int id_dim = 128;
    int grid = 16;          // descriptor side
    int mask_input = 32;    // masks are average-pooled to this side before the MLP
    int mask_hidden = 256;
    int style_channels = 32;
};

// (C, grid, grid) spatial embedding of a mask; one slice per class.
struct MaskDescriptor {
    torch::Tensor grid;
};

struct StyleCodeSet {
    torch::Tensor codes;              // (C, d_s)
    std::vector<bool> null_flags;     // true where the class is absent and the null code was used
};

// (C + 1, d_s): rows 0..C-1 style codes in class order, row C the projected identity.
struct ConditioningTokens {
    torch::Tensor tokens;

    int classes() const { return static_cast<int>(tokens.size(0)) - 1; }
    int identity_row() const { return classes(); }
};

// Per-class two-layer MLP over the flattened (downsampled) mask channel.
class MaskEmbedderImpl : public torch::nn::Module {
public:
    explicit MaskEmbedderImpl(const EncoderConfig& cfg);
    // (B, C, H, W) one-hot -> (B, C, grid, grid)
    torch::Tensor forward(const torch::Tensor& onehot);

private:
    EncoderConfig cfg_;
    torch::Tensor w1_, b1_, w2_, b2_;
};
TORCH_MODULE(MaskEmbedder);

struct StyleBatch {
    torch::Tensor codes;    // (B, C, d_s)
    torch::Tensor present;  // (B, C) bool
};

// Grouped-conv trunk with group norm and a skip connection; codes come from
// region-masked average pooling, so code c only ever sees pixels of class c.
class StyleEncoderImpl : public torch::nn::Module {
public:
    explicit StyleEncoderImpl(const EncoderConfig& cfg);
    StyleBatch forward(const torch::Tensor& images, const torch::Tensor& onehot);

    const torch::Tensor& null_codes() const { return null_codes_; }

private:
    EncoderConfig cfg_;
    torch::nn::Sequential stem_{nullptr};
    torch::nn::Sequential down_{nullptr};
    torch::nn::Sequential residual_{nullptr};
    torch::Tensor head_w_, head_b_, null_codes_;
};
TORCH_MODULE(StyleEncoder);

// Batched row-wise concatenation: (B, C, d_s) + (B, d_s) -> (B, C + 1, d_s).
torch::Tensor assemble_token_batch(const torch::Tensor& styles, const torch::Tensor& id_tokens);

MaskDescriptor embed_mask(MaskEmbedder& embedder, const data::SemanticMask& mask);
StyleCodeSet extract_styles(StyleEncoder& encoder, const data::Image& image, const data::SemanticMask& mask);
// Learned affine map d_id -> d_s.
torch::Tensor project_identity(torch::nn::Linear& projection, const fr::IdentityEmbedding& embedding);
ConditioningTokens assemble_tokens(const StyleCodeSet& styles, const torch::Tensor& id_token);

}  // namespace idsis::enc
