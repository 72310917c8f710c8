#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "idsis/data.hpp"

namespace idsis::io {

// 8-bit interchange: byte = round((v + 1) / 2 * 255).
std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);

void write_png_rgb(const std::filesystem::path& path, const data::Image& image);
void write_png_rgb8(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);
void write_png_gray(const std::filesystem::path& path, const data::LabelMap& labels);

data::Image read_png_rgb(const std::filesystem::path& path);
std::vector<std::uint8_t> read_png_rgb8(const std::filesystem::path& path, int& height, int& width);
data::LabelMap read_png_gray(const std::filesystem::path& path);

// Fixed palette for label visualisation.
std::vector<std::uint8_t> colorize_labels(const data::LabelMap& labels);

}  // namespace idsis::io
