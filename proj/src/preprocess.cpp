#include "hs3/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace hs3 {

using nlohmann::json;

const char* to_string(FitScope scope) {
    return scope == FitScope::whole_dataset ? "whole_dataset" : "train_split";
}

FitScope fit_scope_from_string(const std::string& s) {
    if (s == "whole_dataset") return FitScope::whole_dataset;
    if (s == "train_split") return FitScope::train_split;
    fail_validation("unknown fit scope: " + s);
}

void ExtremaAccumulator::add(const SpectralCube& cube) {
    if (channels_ < 0) {
        channels_ = cube.channels;
        min_.assign(channels_, std::numeric_limits<double>::infinity());
        max_.assign(channels_, -std::numeric_limits<double>::infinity());
    } else if (cube.channels != channels_) {
        fail_validation("schema mismatch: cube has " + std::to_string(cube.channels) +
                        " channels, expected " + std::to_string(channels_));
    }
    const std::size_t pixels = cube.pixel_count();
    for (std::size_t i = 0; i < pixels; ++i) {
        const float* p = cube.values.data() + i * channels_;
        for (int b = 0; b < channels_; ++b) {
            const double v = p[b];
            if (v < min_[b]) min_[b] = v;
            if (v > max_[b]) max_[b] = v;
        }
    }
}

ChannelExtrema ExtremaAccumulator::finish(FitScope scope) const {
    if (channels_ < 0) fail_validation("compute_extrema: no cubes");
    ChannelExtrema e;
    e.p_min = min_;
    e.p_max = max_;
    e.scope = scope;
    return e;
}

ChannelExtrema compute_extrema(const CubeSource& source, FitScope scope) {
    ExtremaAccumulator acc;
    source([&](const SpectralCube& cube) { acc.add(cube); });
    return acc.finish(scope);
}

ChannelExtrema compute_extrema(const std::vector<SpectralCube>& cubes, FitScope scope) {
    return compute_extrema(
        [&](const std::function<void(const SpectralCube&)>& f) {
            for (const auto& c : cubes) f(c);
        },
        scope);
}

double normalize_value(double p, double p_min, double p_max) {
    if (p_max == p_min) return 0.0;
    return (p - p_min) / (p_max - p_min);
}

SpectralCube normalize_cube(const SpectralCube& cube, const ChannelExtrema& extrema) {
    if (extrema.channels() != cube.channels)
        fail_validation("schema mismatch: extrema channels " +
                        std::to_string(extrema.channels()) + " vs cube " +
                        std::to_string(cube.channels));
    SpectralCube out = cube;
    const int c = cube.channels;
    for (std::size_t i = 0; i < cube.values.size(); ++i) {
        const int b = static_cast<int>(i % c);
        out.values[i] = static_cast<float>(
            normalize_value(cube.values[i], extrema.p_min[b], extrema.p_max[b]));
    }
    return out;
}

ChannelExtrema slice_extrema(const ChannelExtrema& extrema, const std::array<int, 3>& bands) {
    ChannelExtrema out;
    out.scope = extrema.scope;
    for (int b : bands) {
        if (b < 0 || b >= extrema.channels())
            fail_validation("invalid band " + std::to_string(b));
        out.p_min.push_back(extrema.p_min[b]);
        out.p_max.push_back(extrema.p_max[b]);
    }
    return out;
}

SpectralCube synthesize_prgb(const SpectralCube& cube, const std::array<int, 3>& bands,
                             const ChannelExtrema& extrema) {
    for (int b : bands)
        if (b < 0 || b >= cube.channels)
            fail_validation("invalid band " + std::to_string(b) + " for cube with " +
                            std::to_string(cube.channels) + " channels");
    // Full-cube extrema are sliced to the triplet; pre-sliced extrema are
    // only unambiguous when the cube itself is not 3-channel.
    ChannelExtrema ex3;
    if (extrema.channels() == cube.channels)
        ex3 = slice_extrema(extrema, bands);
    else if (extrema.channels() == 3)
        ex3 = extrema;
    else
        fail_validation("schema mismatch: extrema must cover the cube or the band triplet");

    SpectralCube out(cube.height, cube.width, 3);
    for (int r = 0; r < cube.height; ++r)
        for (int c = 0; c < cube.width; ++c)
            for (int i = 0; i < 3; ++i)
                out.at(r, c, i) = static_cast<float>(normalize_value(
                    cube.at(r, c, bands[i]), ex3.p_min[i], ex3.p_max[i]));
    return out;
}

namespace {

class CovarianceAccumulator {
public:
    explicit CovarianceAccumulator(int channels)
        : c_(channels), n_(0), sum_(Eigen::VectorXd::Zero(channels)),
          outer_(Eigen::MatrixXd::Zero(channels, channels)) {}

    void add_pixel(const float* p) {
        Eigen::VectorXd x(c_);
        for (int b = 0; b < c_; ++b) x[b] = p[b];
        sum_ += x;
        outer_.noalias() += x * x.transpose();
        ++n_;
    }

    std::size_t count() const { return n_; }

    void finish(Eigen::VectorXd& mean, Eigen::MatrixXd& cov) const {
        const double n = static_cast<double>(n_);
        mean = sum_ / n;
        cov = outer_ / n - mean * mean.transpose();
    }

private:
    int c_;
    std::size_t n_;
    Eigen::VectorXd sum_;
    Eigen::MatrixXd outer_;
};

}  // namespace

PcaModel fit_pca1(const CubeSource& source, FitScope scope, std::size_t cap,
                  std::uint64_t seed) {
    if (cap == 0) fail_validation("fit_pca1: zero pixel cap");

    std::size_t total = 0;
    int channels = -1;
    source([&](const SpectralCube& cube) {
        if (channels < 0)
            channels = cube.channels;
        else if (cube.channels != channels)
            fail_validation("schema mismatch: mixed channel counts in PCA fit");
        total += cube.pixel_count();
    });
    if (channels < 0 || total < 2)
        fail_validation("fit_pca1: need at least 2 pixels");

    CovarianceAccumulator acc(channels);
    Rng rng(seed);
    source([&](const SpectralCube& cube) {
        const std::size_t pixels = cube.pixel_count();
        if (total <= cap) {
            for (std::size_t i = 0; i < pixels; ++i)
                acc.add_pixel(cube.values.data() + i * channels);
            return;
        }
        // Prorated without-replacement subsample of this cube's pixels.
        std::size_t want = static_cast<std::size_t>(
            std::llround(static_cast<double>(cap) * static_cast<double>(pixels) /
                         static_cast<double>(total)));
        want = std::max<std::size_t>(1, std::min(want, pixels));
        std::vector<std::uint32_t> idx(pixels);
        std::iota(idx.begin(), idx.end(), 0u);
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + uniform_index(rng, pixels - i);
            std::swap(idx[i], idx[j]);
            acc.add_pixel(cube.values.data() + static_cast<std::size_t>(idx[i]) * channels);
        }
    });
    if (acc.count() < 2) fail_validation("fit_pca1: need at least 2 pixels");

    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    acc.finish(mean, cov);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) fail_runtime("fit_pca1: eigensolver failed");
    const int last = channels - 1;  // eigenvalues ascending
    const double lambda_max = solver.eigenvalues()[last];
    const double scale = std::max(1.0, mean.squaredNorm());
    if (!(lambda_max > 1e-12 * scale))
        fail_validation("degenerate spectra: no variance for PCA");
    Eigen::VectorXd comp = solver.eigenvectors().col(last);
    comp.normalize();
    for (int b = 0; b < channels; ++b) {
        if (std::fabs(comp[b]) > 1e-12) {
            if (comp[b] < 0.0) comp = -comp;
            break;
        }
    }

    PcaModel model;
    model.mean.assign(mean.data(), mean.data() + channels);
    model.component.assign(comp.data(), comp.data() + channels);
    model.fit_scope = scope;
    return model;
}

PcaModel fit_pca1(const std::vector<SpectralCube>& cubes, FitScope scope, std::size_t cap,
                  std::uint64_t seed) {
    return fit_pca1(
        [&](const std::function<void(const SpectralCube&)>& f) {
            for (const auto& c : cubes) f(c);
        },
        scope, cap, seed);
}

SpectralCube apply_pca1(const SpectralCube& cube, const PcaModel& model) {
    if (model.channels() != cube.channels)
        fail_validation("schema mismatch: PCA model channels " +
                        std::to_string(model.channels()) + " vs cube " +
                        std::to_string(cube.channels));
    SpectralCube out(cube.height, cube.width, 1);
    const int c = cube.channels;
    const std::size_t pixels = cube.pixel_count();
    for (std::size_t i = 0; i < pixels; ++i) {
        const float* p = cube.values.data() + i * c;
        double acc = 0.0;
        for (int b = 0; b < c; ++b) acc += model.component[b] * (p[b] - model.mean[b]);
        out.values[i] = static_cast<float>(acc);
    }
    return out;
}

namespace {

Sample hflip(const Sample& s) {
    Sample out = s;
    for (int r = 0; r < s.cube.height; ++r)
        for (int c = 0; c < s.cube.width; ++c) {
            const int mc = s.cube.width - 1 - c;
            out.labels.at(r, c) = s.labels.at(r, mc);
            for (int b = 0; b < s.cube.channels; ++b)
                out.cube.at(r, c, b) = s.cube.at(r, mc, b);
        }
    return out;
}

}  // namespace

Sample augment(const Sample& sample, const AugmentationPolicy& policy, Rng& rng) {
    if (policy.probability < 0.0 || policy.probability > 1.0)
        fail_validation("augmentation probability out of [0,1]");
    if (policy.transforms.empty() || policy.probability == 0.0) return sample;
    if (uniform_unit(rng) >= policy.probability) return sample;
    const std::size_t pick =
        policy.transforms.size() == 1
            ? 0
            : static_cast<std::size_t>(uniform_index(rng, policy.transforms.size()));
    switch (policy.transforms[pick]) {
        case Transform::horizontal_flip:
            return hflip(sample);
    }
    return sample;
}

int FittedPreproc::output_channels() const {
    if (variant == "hsi") return extrema ? extrema->channels() : 0;
    if (variant == "pca1") return 1;
    if (variant == "prgb") return 3;
    fail_validation("unknown data variant: " + variant);
}

SpectralCube apply_variant(const SpectralCube& cube, const FittedPreproc& fitted) {
    if (fitted.variant == "hsi") {
        if (!fitted.extrema) fail_validation("hsi preproc lacks extrema");
        return normalize_cube(cube, *fitted.extrema);
    }
    if (fitted.variant == "pca1") {
        if (!fitted.pca) fail_validation("pca1 preproc lacks model");
        return apply_pca1(cube, *fitted.pca);
    }
    if (fitted.variant == "prgb") {
        if (!fitted.extrema) fail_validation("prgb preproc lacks extrema");
        return synthesize_prgb(cube, fitted.bands, *fitted.extrema);
    }
    fail_validation("unknown data variant: " + fitted.variant);
}

std::string preproc_to_json(const FittedPreproc& p) {
    json j;
    j["dataset"] = p.dataset;
    j["variant"] = p.variant;
    j["scope"] = to_string(p.scope);
    j["seed"] = p.seed;
    if (p.extrema) {
        j["p_min"] = p.extrema->p_min;
        j["p_max"] = p.extrema->p_max;
    }
    if (p.pca) {
        j["mean"] = p.pca->mean;
        j["component"] = p.pca->component;
    }
    if (p.variant == "prgb") j["bands"] = p.bands;
    return j.dump(2) + "\n";
}

FittedPreproc preproc_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail_validation(std::string("preproc sidecar: malformed JSON: ") + e.what());
    }
    FittedPreproc p;
    try {
        p.dataset = j.at("dataset").get<std::string>();
        p.variant = j.at("variant").get<std::string>();
        p.scope = fit_scope_from_string(j.at("scope").get<std::string>());
        p.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("p_min")) {
            ChannelExtrema e;
            e.p_min = j.at("p_min").get<std::vector<double>>();
            e.p_max = j.at("p_max").get<std::vector<double>>();
            e.scope = p.scope;
            p.extrema = std::move(e);
        }
        if (j.contains("component")) {
            PcaModel m;
            m.mean = j.at("mean").get<std::vector<double>>();
            m.component = j.at("component").get<std::vector<double>>();
            m.fit_scope = p.scope;
            p.pca = std::move(m);
        }
        if (j.contains("bands")) p.bands = j.at("bands").get<std::array<int, 3>>();
    } catch (const json::exception& e) {
        fail_validation(std::string("preproc sidecar: missing field: ") + e.what());
    }
    return p;
}

void save_preproc(const FittedPreproc& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail_runtime("cannot write preproc sidecar: " + path);
    out << preproc_to_json(p);
}

FittedPreproc load_preproc(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_validation("preproc sidecar not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return preproc_from_json(ss.str());
}

FittedPreproc fit_variant(const DatasetDescriptor& descriptor, const std::string& variant,
                          const CubeSource& source, FitScope scope, std::uint64_t seed) {
    FittedPreproc p;
    p.dataset = descriptor.name;
    p.variant = variant;
    p.scope = scope;
    p.seed = seed;
    if (variant == "hsi") {
        p.extrema = compute_extrema(source, scope);
    } else if (variant == "pca1") {
        p.pca = fit_pca1(source, scope, kPcaPixelCap, seed);
    } else if (variant == "prgb") {
        p.bands = descriptor.prgb_bands;
        p.extrema = compute_extrema(source, scope);  // full set, sliced at apply time
    } else {
        fail_validation("unknown data variant: " + variant);
    }
    return p;
}

}  // namespace hs3
