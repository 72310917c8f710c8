#include "idsis/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "idsis/errors.hpp"

namespace idsis::io {

std::uint8_t to_byte(float v) {
    const float scaled = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f);
    return static_cast<std::uint8_t>(scaled);
}

float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f * 2.0f - 1.0f; }

namespace {

void write_png(const std::filesystem::path& path, int height, int width, std::uint32_t format, const void* buffer) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (png_image_write_to_file(&img, path.c_str(), 0, buffer, 0, nullptr) == 0) {
        throw IngestionError("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int& height, int& width) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
        throw IngestionError("cannot read PNG '" + path.string() + "': " + img.message);
    }
    img.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr) == 0) {
        png_image_free(&img);
        throw IngestionError("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    height = static_cast<int>(img.height);
    width = static_cast<int>(img.width);
    return buffer;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const data::Image& image) {
    std::vector<std::uint8_t> bytes(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), to_byte);
    write_png(path, image.height, image.width, PNG_FORMAT_RGB, bytes.data());
}

void write_png_rgb8(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
        throw ShapeError("RGB buffer size does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    write_png(path, height, width, PNG_FORMAT_RGB, rgb.data());
}

void write_png_gray(const std::filesystem::path& path, const data::LabelMap& labels) {
    write_png(path, labels.height, labels.width, PNG_FORMAT_GRAY, labels.labels.data());
}

data::Image read_png_rgb(const std::filesystem::path& path) {
    int h = 0;
    int w = 0;
    const auto bytes = read_png(path, PNG_FORMAT_RGB, h, w);
    data::Image image(h, w);
    std::transform(bytes.begin(), bytes.end(), image.pixels.begin(), from_byte);
    return image;
}

std::vector<std::uint8_t> read_png_rgb8(const std::filesystem::path& path, int& height, int& width) {
    return read_png(path, PNG_FORMAT_RGB, height, width);
}

data::LabelMap read_png_gray(const std::filesystem::path& path) {
    int h = 0;
    int w = 0;
    auto bytes = read_png(path, PNG_FORMAT_GRAY, h, w);
    data::LabelMap labels(h, w);
    labels.labels = std::move(bytes);
    return labels;
}

std::vector<std::uint8_t> colorize_labels(const data::LabelMap& labels) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
        {0, 0, 0},
        {230, 180, 140},
        {120, 70, 30},
        {40, 110, 220},
        {250, 220, 40},
        {220, 40, 60},
        {60, 200, 120},
        {180, 80, 200},
    }};
    std::vector<std::uint8_t> rgb(labels.labels.size() * 3);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const auto& color = kPalette[labels.labels[i] % kPalette.size()];
        std::copy(color.begin(), color.end(), rgb.begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    return rgb;
}

}  // namespace idsis::io
