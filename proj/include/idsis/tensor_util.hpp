#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "idsis/data.hpp"

namespace idsis {

// (3, H, W) float tensor from an HWC image.
torch::Tensor image_to_tensor(const data::Image& image);
// (B, 3, H, W)
torch::Tensor images_to_tensor(std::span<const data::FaceRecord> records);
torch::Tensor images_to_tensor(std::span<const data::Image> images);
// (C, H, W) one-hot planes as float.
torch::Tensor labels_to_onehot(const data::LabelMap& labels, int classes);
// (B, C, H, W)
torch::Tensor masks_to_onehot(std::span<const data::FaceRecord> records, int classes);

torch::Tensor semantic_mask_to_tensor(const data::SemanticMask& mask);

// Accepts (3, H, W) or (1, 3, H, W).
data::Image tensor_to_image(const torch::Tensor& tensor);

// Rows of a 2-d tensor as double vectors.
std::vector<std::vector<double>> tensor_rows(const torch::Tensor& matrix);

}  // namespace idsis
