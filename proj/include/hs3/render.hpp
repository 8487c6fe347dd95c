#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "hs3/core.hpp"

namespace hs3 {

// Fixed qualitative palette; class indices cycle through it and ignored
// pixels render black, so renders are comparable across runs and tools.
std::array<std::uint8_t, 3> class_color(int class_index);

void render_labels_png(const LabelMap& labels, const std::string& path);

// Truth on the left, prediction on the right, divided by a white bar.
void render_side_by_side_png(const LabelMap& truth, const LabelMap& pred,
                             const std::string& path);

}  // namespace hs3
