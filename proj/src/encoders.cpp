#include "idsis/encoders.hpp"

#include <cmath>

#include "idsis/errors.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::enc {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

MaskEmbedderImpl::MaskEmbedderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    const int in = cfg.mask_input * cfg.mask_input;
    const int out = cfg.grid * cfg.grid;
    w1_ = register_parameter("w1", torch::randn({cfg.classes, in, cfg.mask_hidden}) / std::sqrt(in / 4.0));
    b1_ = register_parameter("b1", torch::zeros({cfg.classes, cfg.mask_hidden}));
    w2_ = register_parameter("w2", torch::randn({cfg.classes, cfg.mask_hidden, out}) / std::sqrt(cfg.mask_hidden));
    b2_ = register_parameter("b2", torch::zeros({cfg.classes, out}));
}

torch::Tensor MaskEmbedderImpl::forward(const torch::Tensor& onehot) {
    if (onehot.dim() != 4 || onehot.size(1) != cfg_.classes) {
        throw ShapeError("mask embedder expects (B, " + std::to_string(cfg_.classes) + ", H, W), got " +
                         c10::str(onehot.sizes()));
    }
    const auto pooled = F::adaptive_avg_pool2d(onehot, F::AdaptiveAvgPool2dFuncOptions(cfg_.mask_input));
    const auto flat = pooled.flatten(2);  // (B, C, in)
    const auto hidden = F::leaky_relu(torch::einsum("bci,cih->bch", {flat, w1_}) + b1_,
                                      F::LeakyReLUFuncOptions().negative_slope(0.2));
    const auto out = torch::einsum("bch,cho->bco", {hidden, w2_}) + b2_;
    return out.view({onehot.size(0), cfg_.classes, cfg_.grid, cfg_.grid});
}

StyleEncoderImpl::StyleEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    const int ch = cfg.style_channels;
    stem_ = register_module("stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(4, ch / 2, 3).stride(2).padding(1)),
                                                   nn::GroupNorm(4, ch / 2),
                                                   nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2))));
    down_ = register_module(
        "down", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(ch / 2, ch, 3).stride(2).padding(1).groups(4)),
                               nn::GroupNorm(4, ch), nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2))));
    residual_ = register_module(
        "residual", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1).groups(4)), nn::GroupNorm(4, ch),
                                   nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                                   nn::Conv2d(nn::Conv2dOptions(ch, ch, 1))));
    head_w_ = register_parameter("head_w", torch::randn({cfg.classes, ch, cfg.style_dim}) / std::sqrt(ch));
    head_b_ = register_parameter("head_b", torch::zeros({cfg.classes, cfg.style_dim}));
    null_codes_ = register_parameter("null_codes", torch::zeros({cfg.classes, cfg.style_dim}));
}

StyleBatch StyleEncoderImpl::forward(const torch::Tensor& images, const torch::Tensor& onehot) {
    if (images.dim() != 4 || onehot.dim() != 4 || images.size(0) != onehot.size(0) ||
        images.size(2) != onehot.size(2) || images.size(3) != onehot.size(3)) {
        throw ShapeError("style encoder needs image and mask at the same resolution, got " +
                         c10::str(images.sizes()) + " and " + c10::str(onehot.sizes()));
    }
    const auto batch = images.size(0);
    const auto classes = onehot.size(1);
    const auto h = images.size(2);
    const auto w = images.size(3);

    // Each class region is encoded from its own masked copy of the image.
    const auto planes = onehot.unsqueeze(2);                             // (B, C, 1, H, W)
    const auto masked = torch::cat({images.unsqueeze(1) * planes, planes}, 2);  // (B, C, 4, H, W)
    auto x = masked.view({batch * classes, 4, h, w});
    x = down_->forward(stem_->forward(x));
    x = x + residual_->forward(x);

    const auto weights = F::adaptive_avg_pool2d(planes.view({batch * classes, 1, h, w}),
                                                F::AdaptiveAvgPool2dFuncOptions({x.size(2), x.size(3)}));
    const auto pooled = (x * weights).sum({2, 3}) / weights.sum({2, 3}).clamp_min(1e-6);
    const auto features = pooled.view({batch, classes, -1});
    const auto codes = torch::einsum("bcf,cfs->bcs", {features, head_w_}) + head_b_;
    const auto present = onehot.sum({2, 3}) > 0;
    return {torch::where(present.unsqueeze(2), codes, null_codes_.unsqueeze(0).expand_as(codes)), present};
}

torch::Tensor assemble_token_batch(const torch::Tensor& styles, const torch::Tensor& id_tokens) {
    if (styles.dim() != 3 || id_tokens.dim() != 2 || styles.size(0) != id_tokens.size(0) ||
        styles.size(2) != id_tokens.size(1)) {
        throw ShapeError("token assembly needs (B, C, d_s) styles and (B, d_s) identity tokens, got " +
                         c10::str(styles.sizes()) + " and " + c10::str(id_tokens.sizes()));
    }
    return torch::cat({styles, id_tokens.unsqueeze(1)}, 1);
}

MaskDescriptor embed_mask(MaskEmbedder& embedder, const data::SemanticMask& mask) {
    mask.check_partition();
    return {embedder->forward(semantic_mask_to_tensor(mask).unsqueeze(0))[0]};
}

StyleCodeSet extract_styles(StyleEncoder& encoder, const data::Image& image, const data::SemanticMask& mask) {
    if (image.height != mask.height || image.width != mask.width) {
        throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " but mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    const auto out = encoder->forward(image_to_tensor(image).unsqueeze(0), semantic_mask_to_tensor(mask).unsqueeze(0));
    StyleCodeSet set;
    set.codes = out.codes[0];
    const auto present = out.present[0].contiguous();
    for (std::int64_t c = 0; c < present.size(0); ++c) set.null_flags.push_back(!present[c].item<bool>());
    return set;
}

torch::Tensor project_identity(nn::Linear& projection, const fr::IdentityEmbedding& embedding) {
    const auto in_features = projection->options.in_features();
    if (static_cast<std::int64_t>(embedding.vector.size()) != in_features) {
        throw ShapeError("identity embedding has dimension " + std::to_string(embedding.vector.size()) +
                         ", projection expects " + std::to_string(in_features));
    }
    const auto v = torch::tensor(embedding.vector, torch::kFloat32).to(projection->weight.scalar_type());
    return projection->forward(v.unsqueeze(0))[0];
}

ConditioningTokens assemble_tokens(const StyleCodeSet& styles, const torch::Tensor& id_token) {
    if (styles.codes.dim() != 2 || id_token.dim() != 1 || styles.codes.size(1) != id_token.size(0)) {
        throw ShapeError("style codes and identity token have inconsistent d_s");
    }
    return {torch::cat({styles.codes, id_token.unsqueeze(0)}, 0)};
}

}  // namespace idsis::enc
