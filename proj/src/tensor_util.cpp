#include "idsis/tensor_util.hpp"

#include "idsis/errors.hpp"

namespace idsis {

torch::Tensor image_to_tensor(const data::Image& image) {
    auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()), {image.height, image.width, 3},
                                torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor images_to_tensor(std::span<const data::Image> images) {
    std::vector<torch::Tensor> parts;
    parts.reserve(images.size());
    for (const auto& image : images) parts.push_back(image_to_tensor(image));
    return torch::stack(parts);
}

torch::Tensor images_to_tensor(std::span<const data::FaceRecord> records) {
    std::vector<torch::Tensor> parts;
    parts.reserve(records.size());
    for (const auto& r : records) parts.push_back(image_to_tensor(r.image));
    return torch::stack(parts);
}

torch::Tensor labels_to_onehot(const data::LabelMap& labels, int classes) {
    auto label_tensor = torch::from_blob(const_cast<std::uint8_t*>(labels.labels.data()),
                                         {labels.height, labels.width}, torch::kUInt8)
                            .to(torch::kLong);
    if (label_tensor.numel() > 0 && label_tensor.max().item<std::int64_t>() >= classes) {
        throw ValidationError("label map contains a class index >= " + std::to_string(classes));
    }
    return torch::one_hot(label_tensor, classes).permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

torch::Tensor masks_to_onehot(std::span<const data::FaceRecord> records, int classes) {
    std::vector<torch::Tensor> parts;
    parts.reserve(records.size());
    for (const auto& r : records) parts.push_back(labels_to_onehot(r.mask, classes));
    return torch::stack(parts);
}

torch::Tensor semantic_mask_to_tensor(const data::SemanticMask& mask) {
    return torch::from_blob(const_cast<std::uint8_t*>(mask.planes.data()), {mask.classes, mask.height, mask.width},
                            torch::kUInt8)
        .to(torch::kFloat32);
}

data::Image tensor_to_image(const torch::Tensor& tensor) {
    auto t = tensor.detach().to(torch::kFloat32);
    if (t.dim() == 4) {
        if (t.size(0) != 1) throw ShapeError("expected a single image, got a batch of " + std::to_string(t.size(0)));
        t = t[0];
    }
    if (t.dim() != 3 || t.size(0) != 3) {
        throw ShapeError("expected a (3, H, W) image tensor");
    }
    const auto hwc = t.permute({1, 2, 0}).contiguous();
    data::Image image(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    std::memcpy(image.pixels.data(), hwc.data_ptr<float>(), image.pixels.size() * sizeof(float));
    return image;
}

std::vector<std::vector<double>> tensor_rows(const torch::Tensor& matrix) {
    const auto m = matrix.detach().to(torch::kFloat64).contiguous();
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.size(0)));
    const double* base = m.data_ptr<double>();
    for (std::int64_t i = 0; i < m.size(0); ++i) {
        rows[static_cast<std::size_t>(i)].assign(base + i * m.size(1), base + (i + 1) * m.size(1));
    }
    return rows;
}

}  // namespace idsis
