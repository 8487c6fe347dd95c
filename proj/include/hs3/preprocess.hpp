#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hs3/core.hpp"

namespace hs3 {

enum class FitScope { whole_dataset, train_split };

const char* to_string(FitScope scope);
FitScope fit_scope_from_string(const std::string& s);

// Per-channel min/max used by the min-max normalization. Values are exact
// over every pixel of every cube in the fit scope.
struct ChannelExtrema {
    std::vector<double> p_min;
    std::vector<double> p_max;
    FitScope scope = FitScope::whole_dataset;

    int channels() const { return static_cast<int>(p_min.size()); }
};

// First principal axis of the pixel spectra; component is unit length with
// the first nonzero entry positive.
struct PcaModel {
    std::vector<double> mean;
    std::vector<double> component;
    FitScope fit_scope = FitScope::train_split;

    int channels() const { return static_cast<int>(mean.size()); }
};

enum class Transform { horizontal_flip };

struct AugmentationPolicy {
    double probability = 0.0;
    std::vector<Transform> transforms;

    static AugmentationPolicy none() { return {}; }
    static AugmentationPolicy flip(double p) {
        return {p, {Transform::horizontal_flip}};
    }
};

// Streams cubes to a consumer; lets fits run over lazily loaded data.
using CubeSource = std::function<void(const std::function<void(const SpectralCube&)>&)>;

class ExtremaAccumulator {
public:
    void add(const SpectralCube& cube);
    ChannelExtrema finish(FitScope scope) const;

private:
    int channels_ = -1;
    std::vector<double> min_, max_;
};

ChannelExtrema compute_extrema(const CubeSource& source, FitScope scope);
ChannelExtrema compute_extrema(const std::vector<SpectralCube>& cubes, FitScope scope);

// p' = (p - p_min) / (p_max - p_min); a constant channel maps to 0.
// Values outside the fitted scope may leave [0,1] and are not clipped.
double normalize_value(double p, double p_min, double p_max);
SpectralCube normalize_cube(const SpectralCube& cube, const ChannelExtrema& extrema);

ChannelExtrema slice_extrema(const ChannelExtrema& extrema, const std::array<int, 3>& bands);

// Selects the descriptor's (r, g, b) band triplet and normalizes each band.
// Accepts extrema over the full channel set (sliced internally) or over the
// three selected bands.
SpectralCube synthesize_prgb(const SpectralCube& cube, const std::array<int, 3>& bands,
                             const ChannelExtrema& extrema);

inline constexpr std::size_t kPcaPixelCap = 2'000'000;

// Covariance accumulation with seeded uniform subsampling down to `cap`
// pixels; the source is streamed twice (pixel count, then accumulation).
PcaModel fit_pca1(const CubeSource& source, FitScope scope,
                  std::size_t cap = kPcaPixelCap, std::uint64_t seed = 0);
PcaModel fit_pca1(const std::vector<SpectralCube>& cubes, FitScope scope,
                  std::size_t cap = kPcaPixelCap, std::uint64_t seed = 0);

// out(r, c) = component . (p(r, c) - mean); single-channel result.
SpectralCube apply_pca1(const SpectralCube& cube, const PcaModel& model);

// With probability policy.probability applies one transform (uniform among
// those enabled) identically to cube and labels.
Sample augment(const Sample& sample, const AugmentationPolicy& policy, Rng& rng);

// Fitted preprocessing for one (dataset, variant), serialized to a JSON
// sidecar next to the split manifest.
struct FittedPreproc {
    std::string dataset;
    std::string variant;  // hsi | pca1 | prgb
    FitScope scope = FitScope::train_split;
    std::uint64_t seed = 0;
    std::optional<ChannelExtrema> extrema;
    std::optional<PcaModel> pca;
    std::array<int, 3> bands{0, 0, 0};

    int output_channels() const;
};

SpectralCube apply_variant(const SpectralCube& cube, const FittedPreproc& fitted);

std::string preproc_to_json(const FittedPreproc& p);
FittedPreproc preproc_from_json(const std::string& text);
void save_preproc(const FittedPreproc& p, const std::string& path);
FittedPreproc load_preproc(const std::string& path);

// Fits the preprocessing for one variant over the given cube source.
FittedPreproc fit_variant(const DatasetDescriptor& descriptor, const std::string& variant,
                          const CubeSource& source, FitScope scope, std::uint64_t seed = 0);

}  // namespace hs3
