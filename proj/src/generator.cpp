#include "idsis/generator.hpp"

#include <cmath>

#include "idsis/errors.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::gen {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

namespace {

// (B, L, D) -> (B, h, L, D / h)
torch::Tensor split_heads(const torch::Tensor& t, std::int64_t heads) {
    return t.view({t.size(0), t.size(1), heads, t.size(2) / heads}).permute({0, 2, 1, 3});
}

// (B, h, L, d) -> (B, L, h * d)
torch::Tensor merge_heads(const torch::Tensor& t) {
    return t.permute({0, 2, 1, 3}).reshape({t.size(0), t.size(2), t.size(1) * t.size(3)});
}

// Row-major product over the flattened batch: sum_b a_b^T c_b.
torch::Tensor batched_outer(const torch::Tensor& a, const torch::Tensor& c) {
    return a.reshape({-1, a.size(-1)}).t().mm(c.reshape({-1, c.size(-1)}));
}

class CrossAttentionFunction : public torch::autograd::Function<CrossAttentionFunction> {
public:
    static variable_list forward(AutogradContext* ctx, const torch::Tensor& x, const torch::Tensor& tokens,
                                 const torch::Tensor& wq, const torch::Tensor& wk, const torch::Tensor& wv,
                                 const torch::Tensor& wo, std::int64_t heads) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(wq.size(1) / heads));
        const auto q = split_heads(x.matmul(wq), heads);        // (B, h, N, d)
        const auto k = split_heads(tokens.matmul(wk), heads);   // (B, h, T, d)
        const auto v = split_heads(tokens.matmul(wv), heads);   // (B, h, T, d)
        const auto attn = torch::softmax(q.matmul(k.transpose(-1, -2)) * scale, -1);  // (B, h, N, T)
        const auto attended = merge_heads(attn.matmul(v));      // (B, N, D)
        const auto y = x + attended.matmul(wo);

        ctx->save_for_backward({x, tokens, wq, wk, wv, wo, q, k, v, attn, attended});
        ctx->saved_data["heads"] = heads;
        ctx->saved_data["scale"] = scale;
        const auto mean_attn = attn.mean(1);
        ctx->mark_non_differentiable({mean_attn});
        return {y, mean_attn};
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_outputs) {
        const auto saved = ctx->get_saved_variables();
        const auto& x = saved[0];
        const auto& tokens = saved[1];
        const auto& wq = saved[2];
        const auto& wk = saved[3];
        const auto& wv = saved[4];
        const auto& wo = saved[5];
        const auto& q = saved[6];
        const auto& k = saved[7];
        const auto& v = saved[8];
        const auto& attn = saved[9];
        const auto& attended = saved[10];
        const auto heads = ctx->saved_data["heads"].toInt();
        const double scale = ctx->saved_data["scale"].toDouble();

        const auto& dy = grad_outputs[0];
        const auto d_wo = batched_outer(attended, dy);
        const auto d_attended = split_heads(dy.matmul(wo.t()), heads);           // (B, h, N, d)
        const auto d_attn = d_attended.matmul(v.transpose(-1, -2));             // (B, h, N, T)
        const auto d_v = attn.transpose(-1, -2).matmul(d_attended);             // (B, h, T, d)
        // Softmax Jacobian applied row-wise.
        const auto d_logits = attn * (d_attn - (d_attn * attn).sum(-1, true));  // (B, h, N, T)
        const auto d_q = merge_heads(d_logits.matmul(k) * scale);               // (B, N, D)
        const auto d_k = merge_heads(d_logits.transpose(-1, -2).matmul(q) * scale);  // (B, T, D)
        const auto d_vm = merge_heads(d_v);

        const auto d_x = dy + d_q.matmul(wq.t());
        const auto d_tokens = d_k.matmul(wk.t()) + d_vm.matmul(wv.t());
        return {d_x,
                d_tokens,
                batched_outer(x, d_q),
                batched_outer(tokens, d_k),
                batched_outer(tokens, d_vm),
                d_wo,
                torch::Tensor()};
    }
};

}  // namespace

CrossAttentionResult cross_attention(const torch::Tensor& features, const torch::Tensor& tokens,
                                     const CrossAttentionWeights& weights, int heads) {
    const bool unbatched = features.dim() == 2;
    const auto x = unbatched ? features.unsqueeze(0) : features;
    const auto t = tokens.dim() == 2 ? tokens.unsqueeze(0).expand({x.size(0), tokens.size(0), tokens.size(1)})
                                     : tokens;
    const auto dk = weights.query.size(1);
    if (x.dim() != 3 || t.dim() != 3 || x.size(0) != t.size(0)) {
        throw ShapeError("cross-attention expects (B, N, F) features and (B, T, d_s) tokens, got " +
                         c10::str(features.sizes()) + " and " + c10::str(tokens.sizes()));
    }
    if (x.size(1) < 1 || t.size(1) < 1) {
        throw ShapeError("cross-attention needs at least one query and one token");
    }
    if (weights.query.size(0) != x.size(2) || weights.key.size(0) != t.size(2) || weights.value.size(0) != t.size(2) ||
        weights.key.size(1) != dk || weights.value.size(1) != dk || weights.output.size(0) != dk ||
        weights.output.size(1) != x.size(2)) {
        throw ShapeError("cross-attention weight shapes do not match features F=" + std::to_string(x.size(2)) +
                         " and tokens d_s=" + std::to_string(t.size(2)));
    }
    if (heads < 1 || dk % heads != 0) {
        throw ShapeError("key dimension " + std::to_string(dk) + " is not divisible by " + std::to_string(heads) +
                         " heads");
    }
    auto out = CrossAttentionFunction::apply(x.contiguous(), t.contiguous(), weights.query, weights.key,
                                             weights.value, weights.output, static_cast<std::int64_t>(heads));
    if (unbatched) return {out[0][0], out[1][0]};
    return {out[0], out[1]};
}

CrossAttentionImpl::CrossAttentionImpl(const CrossAttnBlockConfig& cfg) : cfg_(cfg) {
    if (cfg.key_dim <= 0 || cfg.feature_dim % cfg.head_count != 0 || cfg.key_dim % cfg.head_count != 0) {
        throw ConfigError("cross-attention needs d_k > 0 and feature/key dims divisible by the head count");
    }
    w_query_ = register_parameter("w_query", torch::randn({cfg.feature_dim, cfg.key_dim}) / std::sqrt(cfg.feature_dim));
    w_key_ = register_parameter("w_key", torch::randn({cfg.token_dim, cfg.key_dim}) / std::sqrt(cfg.token_dim));
    w_value_ = register_parameter("w_value", torch::randn({cfg.token_dim, cfg.key_dim}) / std::sqrt(cfg.token_dim));
    w_output_ = register_parameter("w_output", torch::randn({cfg.key_dim, cfg.feature_dim}) / std::sqrt(cfg.key_dim));
}

CrossAttentionResult CrossAttentionImpl::forward(const torch::Tensor& features, const torch::Tensor& tokens) {
    return cross_attention(features, tokens, weights(), cfg_.head_count);
}

SelfAttentionImpl::SelfAttentionImpl(int feature_dim, int key_dim) : key_dim_(key_dim) {
    qkv_ = register_module("qkv", nn::Linear(feature_dim, 3 * key_dim));
    out_ = register_module("out", nn::Linear(key_dim, feature_dim));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& features) {
    const auto parts = qkv_->forward(features).chunk(3, -1);
    const auto attn = torch::softmax(parts[0].matmul(parts[1].transpose(-1, -2)) / std::sqrt(key_dim_), -1);
    return features + out_->forward(attn.matmul(parts[2]));
}

int GeneratorConfig::stage_count() const {
    if (resolution < grid || resolution % grid != 0) {
        throw ConfigError("output resolution must be a multiple of the descriptor grid");
    }
    int stages = 1;
    for (int r = grid; r < resolution; r *= 2) ++stages;
    if ((grid << (stages - 1)) != resolution) {
        throw ConfigError("output resolution must be the descriptor grid times a power of two");
    }
    return stages;
}

int GeneratorConfig::stage_channels(int stage) const { return std::max(min_channels, base_channels >> stage); }

namespace {

int groups_for(int channels) { return channels % 8 == 0 ? 8 : (channels % 4 == 0 ? 4 : 1); }

void append_conv_block(nn::Sequential& seq, int in, int out) {
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
    seq->push_back(nn::GroupNorm(groups_for(out), out));
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
}

nn::Sequential conv_block(int in, int out) {
    nn::Sequential seq;
    append_conv_block(seq, in, out);
    return seq;
}

}  // namespace

GeneratorImpl::GeneratorImpl(const GeneratorConfig& cfg) : cfg_(cfg) {
    const int stages = cfg.stage_count();
    stem_ = register_module("stem", conv_block(cfg.classes, cfg.stage_channels(0)));
    for (int s = 0; s < stages; ++s) {
        const int ch = cfg.stage_channels(s);
        const int next = s + 1 < stages ? cfg.stage_channels(s + 1) : ch;
        attention_.push_back(register_module("ca" + std::to_string(s),
                                             CrossAttention(CrossAttnBlockConfig{ch, cfg.style_dim, cfg.style_dim,
                                                                                 cfg.heads})));
        if (cfg.self_attention) {
            self_attention_.push_back(register_module("sa" + std::to_string(s), SelfAttention(ch, cfg.style_dim)));
        }
        auto convs = conv_block(ch, next);
        for (int k = 1; k < cfg.convs_per_stage; ++k) append_conv_block(convs, next, next);
        convs_.push_back(register_module("conv" + std::to_string(s), convs));
    }
    to_rgb_ = register_module("to_rgb", nn::Conv2d(nn::Conv2dOptions(cfg.stage_channels(stages - 1), 3, 3).padding(1)));
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& descriptor, const torch::Tensor& tokens) {
    if (descriptor.dim() != 4 || descriptor.size(1) != cfg_.classes || descriptor.size(2) != cfg_.grid ||
        descriptor.size(3) != cfg_.grid) {
        throw ShapeError("generator expects a (B, " + std::to_string(cfg_.classes) + ", " + std::to_string(cfg_.grid) +
                         ", " + std::to_string(cfg_.grid) + ") descriptor, got " + c10::str(descriptor.sizes()));
    }
    if (tokens.dim() != 3 || tokens.size(0) != descriptor.size(0) || tokens.size(2) != cfg_.style_dim) {
        throw ShapeError("generator expects (B, T, " + std::to_string(cfg_.style_dim) + ") tokens, got " +
                         c10::str(tokens.sizes()));
    }
    GeneratorOutput out;
    auto x = stem_->forward(descriptor);
    const auto stages = static_cast<int>(attention_.size());
    for (int s = 0; s < stages; ++s) {
        const auto b = x.size(0);
        const auto c = x.size(1);
        const auto h = x.size(2);
        const auto w = x.size(3);
        auto flat = x.flatten(2).transpose(1, 2);  // (B, N, F)
        if (cfg_.self_attention) flat = self_attention_[static_cast<std::size_t>(s)]->forward(flat);
        auto attended = attention_[static_cast<std::size_t>(s)]->forward(flat, tokens);
        out.attention.push_back(attended.attention);
        out.attention_sizes.emplace_back(static_cast<int>(h), static_cast<int>(w));
        x = attended.features.transpose(1, 2).reshape({b, c, h, w});
        if (s + 1 < stages) {
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
        }
        x = convs_[static_cast<std::size_t>(s)]->forward(x);
    }
    out.image = torch::tanh(to_rgb_->forward(x));
    return out;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int in_channels, int base_channels) {
    const auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
    const int b = base_channels;
    layers_.push_back(register_module(
        "l0", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, b, 4).stride(2).padding(1)), lrelu())));
    layers_.push_back(register_module(
        "l1", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(b, 2 * b, 4).stride(2).padding(1)),
                             nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * b)), lrelu())));
    layers_.push_back(register_module(
        "l2", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(2 * b, 2 * b, 3).padding(1)),
                             nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * b)), lrelu())));
    head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(2 * b, 1, 3).padding(1)));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> features;
    auto h = x;
    for (auto& layer : layers_) {
        h = layer->forward(h);
        features.push_back(h);
    }
    return {head_->forward(h), std::move(features)};
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    for (int s = 0; s < cfg.scales; ++s) {
        scales_.push_back(register_module("scale" + std::to_string(s),
                                          PatchDiscriminator(3 + cfg.classes, cfg.base_channels)));
    }
}

DiscriminatorOutput MultiScaleDiscriminatorImpl::forward(const torch::Tensor& images, const torch::Tensor& onehot) {
    if (images.dim() != 4 || images.size(1) != 3 || onehot.dim() != 4 || onehot.size(1) != cfg_.classes ||
        images.size(0) != onehot.size(0) || images.size(2) != onehot.size(2) || images.size(3) != onehot.size(3)) {
        throw ShapeError("discriminator expects matching (B, 3, H, W) images and (B, " +
                         std::to_string(cfg_.classes) + ", H, W) masks, got " + c10::str(images.sizes()) + " and " +
                         c10::str(onehot.sizes()));
    }
    DiscriminatorOutput out;
    auto x = torch::cat({images, onehot}, 1);
    for (std::size_t s = 0; s < scales_.size(); ++s) {
        if (s > 0) {
            x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(2).padding(1).count_include_pad(false));
        }
        auto [logits, features] = scales_[s]->forward(x);
        out.logits.push_back(logits);
        out.features.push_back(std::move(features));
    }
    return out;
}

DiscriminatorOutput discriminate(MultiScaleDiscriminator& disc, const data::Image& image,
                                 const data::SemanticMask& mask) {
    if (image.height != mask.height || image.width != mask.width) {
        throw ShapeError("image and mask sizes differ");
    }
    return disc->forward(image_to_tensor(image).unsqueeze(0), semantic_mask_to_tensor(mask).unsqueeze(0));
}

Heatmap attention_heatmap(const GeneratorOutput& out, int token_index, int block_index, int batch_index) {
    if (block_index < 0 || block_index >= static_cast<int>(out.attention.size())) {
        throw ValidationError("attention block index " + std::to_string(block_index) + " out of range [0, " +
                              std::to_string(out.attention.size()) + ")");
    }
    const auto& attn = out.attention[static_cast<std::size_t>(block_index)];
    if (token_index < 0 || token_index >= attn.size(2)) {
        throw ValidationError("token index " + std::to_string(token_index) + " out of range [0, " +
                              std::to_string(attn.size(2)) + ")");
    }
    if (batch_index < 0 || batch_index >= attn.size(0)) {
        throw ValidationError("batch index " + std::to_string(batch_index) + " out of range");
    }
    const auto [h, w] = out.attention_sizes[static_cast<std::size_t>(block_index)];
    const auto column = attn[batch_index].select(1, token_index).reshape({1, 1, h, w}).to(torch::kFloat32);
    const auto out_h = out.image.size(2);
    const auto out_w = out.image.size(3);
    const auto up = F::interpolate(column, F::InterpolateFuncOptions()
                                               .size(std::vector<std::int64_t>{out_h, out_w})
                                               .mode(torch::kBilinear)
                                               .align_corners(false))
                        .clamp_min(0.0)
                        .contiguous();
    Heatmap map;
    map.height = static_cast<int>(out_h);
    map.width = static_cast<int>(out_w);
    map.values.assign(up.data_ptr<float>(), up.data_ptr<float>() + up.numel());
    return map;
}

}  // namespace idsis::gen
