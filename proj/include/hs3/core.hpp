#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hs3/common.hpp"

namespace hs3 {

// Dense H x W x C image of per-pixel spectra, row-major with the band index
// fastest. Values are float32 after loading regardless of on-disk type.
struct SpectralCube {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;                 // size height*width*channels
    std::vector<double> band_centers;          // empty or length channels, nm

    SpectralCube() = default;
    SpectralCube(int h, int w, int c)
        : height(h), width(w), channels(c),
          values(static_cast<std::size_t>(h) * w * c, 0.0f) {}

    std::size_t index(int r, int c, int b) const {
        return (static_cast<std::size_t>(r) * width + c) * channels + b;
    }
    float at(int r, int c, int b) const { return values[index(r, c, b)]; }
    float& at(int r, int c, int b) { return values[index(r, c, b)]; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }
};

// H x W integer class map; entries are class indices < K or kIgnore.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<label_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w, label_t fill = 0)
        : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    label_t at(int r, int c) const {
        return labels[static_cast<std::size_t>(r) * width + c];
    }
    label_t& at(int r, int c) {
        return labels[static_cast<std::size_t>(r) * width + c];
    }
};

struct ClassInfo {
    std::string name;
    bool evaluated = true;
};

// Ordered class list for one dataset. Classes with evaluated = false are
// remapped to kIgnore at load time; indices of evaluated classes are
// compacted so the model and confusion matrix see exactly K classes.
struct ClassCatalog {
    std::vector<ClassInfo> classes;

    int evaluated_count() const;
    // raw on-disk class index -> compact index in [0, K) or kIgnore
    std::vector<label_t> remap_table() const;
    std::vector<std::string> evaluated_names() const;
    void validate() const;
};

struct DatasetDescriptor {
    std::string name;
    ClassCatalog catalog;
    int expected_channels = 0;
    std::array<int, 3> prgb_bands{0, 1, 2};     // (r, g, b) band indices
    std::array<double, 3> split_fractions{0, 0, 0};  // (train, val, test)
    std::uint64_t split_seed = 0;
    std::string root_path;
    std::string format = "hs3f";  // loader adapter key
    // When true the on-disk layout fixes the train/test partition (ids under
    // train/ and test/) and only val is carved from the train pool.
    bool fixed_partition = false;
    std::string notes;

    void validate() const;
    int num_classes() const { return catalog.evaluated_count(); }
};

// Descriptor files are human-editable JSON documents, one per dataset.
DatasetDescriptor load_descriptor(const std::string& path);
void save_descriptor(const DatasetDescriptor& d, const std::string& path);
std::string descriptor_to_json(const DatasetDescriptor& d);
DatasetDescriptor descriptor_from_json(const std::string& text);

struct Sample {
    SpectralCube cube;
    LabelMap labels;
    std::string id;
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Checks every type invariant plus channel agreement with the descriptor.
// Violations are data, not exceptions; all of them are reported.
ValidationReport validate_sample(const Sample& sample,
                                 const DatasetDescriptor& descriptor);

}  // namespace hs3
