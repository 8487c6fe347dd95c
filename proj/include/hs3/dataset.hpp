#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hs3/core.hpp"

namespace hs3 {

struct SplitManifest {
    std::string dataset;
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct FixtureSpec {
    int n_images = 4;
    int height = 16;
    int width = 16;
    int channels = 8;
    int num_classes = 3;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

// One loader plug-in per on-disk format. Descriptors select the adapter via
// their "format" key; native-format readers for new datasets register here.
class DatasetAdapter {
public:
    virtual ~DatasetAdapter() = default;
    virtual std::vector<std::string> list_ids(const DatasetDescriptor& d) const = 0;
    virtual Sample load(const DatasetDescriptor& d, const std::string& id) const = 0;
};

void register_adapter(const std::string& format, std::unique_ptr<DatasetAdapter> adapter);
const DatasetAdapter& adapter_for(const std::string& format);

// Deterministic lexicographic listing; every id is resolvable by load_sample.
std::vector<std::string> list_samples(const DatasetDescriptor& descriptor);

// Loads one sample; unevaluated classes are already remapped to kIgnore and
// the result passes validate_sample.
Sample load_sample(const DatasetDescriptor& descriptor, const std::string& id);

// Seeded shuffle-then-partition with largest-remainder rounding. Datasets
// with a fixed published train/test partition keep it and only carve the
// validation set from the train pool.
SplitManifest make_splits(const DatasetDescriptor& descriptor,
                          const std::vector<std::string>& ids);

// Plain-text manifest: header lines, then one section per split with one
// sample id per line.
void save_manifest(const SplitManifest& m, const std::string& path);
SplitManifest load_manifest(const std::string& path);
std::string manifest_to_text(const SplitManifest& m);
SplitManifest manifest_from_text(const std::string& text);

// Self-describing binary container for fixture-scale data: magic "HS3F",
// little-endian u32 header (H, W, C, K), float32 cube values, then one u16
// label per pixel (raw catalog index or kIgnore).
void write_hs3f(const std::string& path, const SpectralCube& cube,
                const LabelMap& labels, int catalog_size);
Sample read_hs3f(const std::string& path);

// Mean spectrum the generator assigns to class c; tests recompute expected
// extrema and projections from it.
std::vector<double> fixture_class_spectrum(const FixtureSpec& spec, int c);

// Writes n_images HS3F samples plus a descriptor.json into out_dir. Every
// image contains one axis-aligned rectangular region per class with the
// class mean spectrum plus Gaussian noise; deterministic from spec.seed.
DatasetDescriptor generate_fixture(const FixtureSpec& spec, const std::string& out_dir,
                                   const std::string& name = "fixture");

}  // namespace hs3
