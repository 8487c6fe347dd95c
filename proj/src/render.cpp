#include "hs3/render.hpp"

#include <png.h>

#include <cstring>
#include <vector>

namespace hs3 {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 20> kPalette = {{
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
    {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
    {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195},
    {128, 128, 0},   {255, 215, 180}, {0, 0, 128},     {128, 128, 128},
}};

void write_rgb_png(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
        fail_runtime("cannot write " + path + ": " + image.message);
}

void paint(const LabelMap& labels, std::vector<std::uint8_t>& rgb, int row_stride,
           int col_offset) {
    for (int r = 0; r < labels.height; ++r)
        for (int c = 0; c < labels.width; ++c) {
            const label_t l = labels.at(r, c);
            const auto color =
                l == kIgnore ? std::array<std::uint8_t, 3>{0, 0, 0} : class_color(l);
            const std::size_t at =
                (static_cast<std::size_t>(r) * row_stride + col_offset + c) * 3;
            rgb[at] = color[0];
            rgb[at + 1] = color[1];
            rgb[at + 2] = color[2];
        }
}

}  // namespace

std::array<std::uint8_t, 3> class_color(int class_index) {
    if (class_index < 0) fail_validation("class_color: negative class index");
    return kPalette[static_cast<std::size_t>(class_index) % kPalette.size()];
}

void render_labels_png(const LabelMap& labels, const std::string& path) {
    if (labels.height < 1 || labels.width < 1)
        fail_validation("shape error: empty label map cannot be rendered");
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(labels.height) *
                                  labels.width * 3);
    paint(labels, rgb, labels.width, 0);
    write_rgb_png(path, labels.width, labels.height, rgb);
}

void render_side_by_side_png(const LabelMap& truth, const LabelMap& pred,
                             const std::string& path) {
    if (truth.height != pred.height || truth.width != pred.width)
        fail_validation("shape error: truth " + std::to_string(truth.height) + "x" +
                        std::to_string(truth.width) + " vs prediction " +
                        std::to_string(pred.height) + "x" + std::to_string(pred.width));
    if (truth.height < 1 || truth.width < 1)
        fail_validation("shape error: empty label map cannot be rendered");

    constexpr int kBar = 2;
    const int width = truth.width * 2 + kBar;
    std::vector<std::uint8_t> rgb(
        static_cast<std::size_t>(truth.height) * width * 3, 255);
    paint(truth, rgb, width, 0);
    paint(pred, rgb, width, truth.width + kBar);
    write_rgb_png(path, width, truth.height, rgb);
}

}  // namespace hs3
