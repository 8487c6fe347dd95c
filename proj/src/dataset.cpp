#include "hs3/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace hs3 {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_hs3f(const std::string& path, const SpectralCube& cube,
                const LabelMap& labels, int catalog_size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_runtime("cannot write " + path);
    out.write("HS3F", 4);
    write_u32(out, static_cast<std::uint32_t>(cube.height));
    write_u32(out, static_cast<std::uint32_t>(cube.width));
    write_u32(out, static_cast<std::uint32_t>(cube.channels));
    write_u32(out, static_cast<std::uint32_t>(catalog_size));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(cube.values.data()),
              static_cast<std::streamsize>(cube.values.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(labels.labels.data()),
              static_cast<std::streamsize>(labels.labels.size() * sizeof(label_t)));
    if (!out) fail_runtime("short write: " + path);
}

Sample read_hs3f(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_runtime("decode error: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HS3F", 4) != 0)
        fail_runtime("decode error: bad magic in " + path);
    const std::uint32_t h = read_u32(in), w = read_u32(in);
    const std::uint32_t c = read_u32(in), k = read_u32(in);
    if (!in || h == 0 || w == 0 || c == 0 || k == 0 ||
        static_cast<std::uint64_t>(h) * w * c > (1ull << 32))
        fail_runtime("decode error: bad header in " + path);
    Sample s;
    s.cube = SpectralCube(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    in.read(reinterpret_cast<char*>(s.cube.values.data()),
            static_cast<std::streamsize>(s.cube.values.size() * sizeof(float)));
    s.labels = LabelMap(static_cast<int>(h), static_cast<int>(w));
    in.read(reinterpret_cast<char*>(s.labels.labels.data()),
            static_cast<std::streamsize>(s.labels.labels.size() * sizeof(label_t)));
    if (!in) fail_runtime("decode error: truncated file " + path);
    for (label_t v : s.labels.labels)
        if (v != kIgnore && v >= k)
            fail_runtime("decode error: label " + std::to_string(v) +
                         " out of catalog range in " + path);
    return s;
}

namespace {

// Reads HS3F containers laid out under root_path; id = relative path without
// the .hs3f extension. All shipped descriptors use this adapter; readers for
// raw distribution formats can be registered under their own format key.
class Hs3fAdapter final : public DatasetAdapter {
public:
    std::vector<std::string> list_ids(const DatasetDescriptor& d) const override {
        if (!fs::is_directory(d.root_path))
            fail_validation("dataset not found: " + d.root_path);
        std::vector<std::string> ids;
        for (const auto& entry : fs::recursive_directory_iterator(d.root_path)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".hs3f")
                continue;
            std::string rel = fs::relative(entry.path(), d.root_path).generic_string();
            ids.push_back(rel.substr(0, rel.size() - 5));
        }
        if (ids.empty()) fail_validation("no samples under " + d.root_path);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    Sample load(const DatasetDescriptor& d, const std::string& id) const override {
        const std::string path = (fs::path(d.root_path) / (id + ".hs3f")).string();
        Sample s = read_hs3f(path);
        s.id = id;
        if (s.cube.channels != d.expected_channels)
            fail_runtime("schema mismatch: " + path + " has " +
                         std::to_string(s.cube.channels) + " channels, descriptor expects " +
                         std::to_string(d.expected_channels));
        const auto remap = d.catalog.remap_table();
        for (auto& v : s.labels.labels) {
            if (v == kIgnore) continue;
            if (v >= remap.size())
                fail_runtime("decode error: label out of catalog range in " + path);
            v = remap[v];
        }
        return s;
    }
};

std::map<std::string, std::unique_ptr<DatasetAdapter>>& adapter_registry() {
    static std::map<std::string, std::unique_ptr<DatasetAdapter>> registry = [] {
        std::map<std::string, std::unique_ptr<DatasetAdapter>> r;
        r.emplace("hs3f", std::make_unique<Hs3fAdapter>());
        return r;
    }();
    return registry;
}

}  // namespace

void register_adapter(const std::string& format, std::unique_ptr<DatasetAdapter> adapter) {
    adapter_registry()[format] = std::move(adapter);
}

const DatasetAdapter& adapter_for(const std::string& format) {
    auto& reg = adapter_registry();
    auto it = reg.find(format);
    if (it == reg.end()) fail_validation("no dataset adapter for format '" + format + "'");
    return *it->second;
}

std::vector<std::string> list_samples(const DatasetDescriptor& descriptor) {
    return adapter_for(descriptor.format).list_ids(descriptor);
}

Sample load_sample(const DatasetDescriptor& descriptor, const std::string& id) {
    return adapter_for(descriptor.format).load(descriptor, id);
}

namespace {

// Largest-remainder apportionment of n into parts proportional to fractions.
// Ties go to the earlier part, so train is filled first.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& fractions) {
    std::vector<std::size_t> sizes(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double quota = static_cast<double>(n) * fractions[i];
        sizes[i] = static_cast<std::size_t>(std::floor(quota));
        assigned += sizes[i];
        remainders.push_back({quota - std::floor(quota), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned)
        ++sizes[remainders[i % remainders.size()].second];
    return sizes;
}

}  // namespace

SplitManifest make_splits(const DatasetDescriptor& descriptor,
                          const std::vector<std::string>& ids) {
    if (ids.empty()) fail_validation("make_splits: empty id list");
    SplitManifest m;
    m.dataset = descriptor.name;
    m.seed = descriptor.split_seed;
    Rng rng(descriptor.split_seed);

    const auto& f = descriptor.split_fractions;  // (train, val, test)

    if (descriptor.fixed_partition) {
        std::vector<std::string> pool;
        for (const auto& id : ids) {
            if (id.rfind("train/", 0) == 0)
                pool.push_back(id);
            else if (id.rfind("test/", 0) == 0)
                m.test.push_back(id);
            else
                fail_validation("fixed partition: id '" + id +
                                "' lacks train/ or test/ prefix");
        }
        std::sort(pool.begin(), pool.end());
        std::sort(m.test.begin(), m.test.end());
        seeded_shuffle(pool, rng);
        // Only val is sampled; its share is taken relative to the train pool.
        const double denom = f[0] + f[1];
        const double val_frac = denom > 0.0 ? f[1] / denom : 0.0;
        const auto sizes = apportion(pool.size(), {1.0 - val_frac, val_frac});
        m.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
        m.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(sizes[0]), pool.end());
    } else {
        std::vector<std::string> shuffled = ids;
        std::sort(shuffled.begin(), shuffled.end());
        seeded_shuffle(shuffled, rng);
        const auto sizes = apportion(shuffled.size(), {f[0], f[1], f[2]});
        auto it = shuffled.begin();
        m.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
        it += static_cast<std::ptrdiff_t>(sizes[0]);
        m.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
        it += static_cast<std::ptrdiff_t>(sizes[1]);
        m.test.assign(it, shuffled.end());
    }

    const std::array<std::pair<const char*, std::size_t>, 3> check = {
        {{"train", m.train.size()}, {"val", m.val.size()}, {"test", m.test.size()}}};
    for (std::size_t i = 0; i < 3; ++i)
        if (check[i].second == 0 && f[i] > 0.0)
            fail_validation(std::string("degenerate split: ") + check[i].first +
                            " is empty");
    return m;
}

std::string manifest_to_text(const SplitManifest& m) {
    std::ostringstream out;
    out << "dataset: " << m.dataset << "\n";
    out << "seed: " << m.seed << "\n";
    const std::array<std::pair<const char*, const std::vector<std::string>*>, 3> sections = {
        {{"train", &m.train}, {"val", &m.val}, {"test", &m.test}}};
    for (const auto& [name, list] : sections) {
        out << "[" << name << "]\n";
        for (const auto& id : *list) out << id << "\n";
    }
    return out.str();
}

SplitManifest manifest_from_text(const std::string& text) {
    SplitManifest m;
    std::istringstream in(text);
    std::string line;
    std::vector<std::string>* current = nullptr;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("dataset: ", 0) == 0) {
            m.dataset = line.substr(9);
        } else if (line.rfind("seed: ", 0) == 0) {
            m.seed = std::stoull(line.substr(6));
        } else if (line == "[train]") {
            current = &m.train;
        } else if (line == "[val]") {
            current = &m.val;
        } else if (line == "[test]") {
            current = &m.test;
        } else {
            if (!current) fail_validation("manifest: id before section header");
            current->push_back(line);
        }
    }
    return m;
}

void save_manifest(const SplitManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail_runtime("cannot write manifest: " + path);
    out << manifest_to_text(m);
}

SplitManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_validation("manifest not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_text(ss.str());
}

std::vector<double> fixture_class_spectrum(const FixtureSpec& spec, int c) {
    std::vector<double> s(spec.channels, 0.1);
    const int bump = c % spec.channels;
    s[bump] += 0.8 + 0.3 * static_cast<double>(c / spec.channels);
    return s;
}

DatasetDescriptor generate_fixture(const FixtureSpec& spec, const std::string& out_dir,
                                   const std::string& name) {
    if (spec.n_images < 1 || spec.height < 1 || spec.width < 1 ||
        spec.channels < 1 || spec.num_classes < 1)
        fail_validation("fixture spec: all counts must be >= 1");
    if (spec.noise_sigma < 0.0) fail_validation("fixture spec: negative noise sigma");
    if (static_cast<std::int64_t>(spec.num_classes) >
        static_cast<std::int64_t>(spec.height) * spec.width)
        fail_validation("unsatisfiable layout: more classes than pixels");
    if (spec.channels < 3)
        fail_validation("fixture spec: at least 3 channels required for a pseudo-RGB "
                        "band triplet");

    fs::create_directories(out_dir);
    Rng rng(spec.seed);

    // Rectangulation: rows are cut into ceil(K/W) bands and each band is cut
    // into vertical strips; with W >= K this is K strips over the full height.
    const int k = spec.num_classes;
    const int n_bands = (k + spec.width - 1) / spec.width;

    std::vector<std::vector<double>> means;
    for (int c = 0; c < k; ++c) means.push_back(fixture_class_spectrum(spec, c));

    for (int img = 0; img < spec.n_images; ++img) {
        SpectralCube cube(spec.height, spec.width, spec.channels);
        LabelMap labels(spec.height, spec.width);

        int next_class = 0;
        int row0 = 0;
        for (int band = 0; band < n_bands; ++band) {
            const int rows_left = spec.height - row0;
            const int bands_left = n_bands - band;
            const int band_h = rows_left / bands_left;
            const int classes_here =
                std::min(spec.width, k - next_class - (bands_left - 1));
            int col0 = 0;
            for (int s = 0; s < classes_here; ++s) {
                const int cols_left = spec.width - col0;
                const int strip_w = cols_left / (classes_here - s);
                const int cls = next_class++;
                for (int r = row0; r < row0 + band_h; ++r)
                    for (int c = col0; c < col0 + strip_w; ++c) {
                        labels.at(r, c) = static_cast<label_t>(cls);
                        for (int b = 0; b < spec.channels; ++b) {
                            double v = means[cls][b];
                            if (spec.noise_sigma > 0.0)
                                v += gaussian(rng, 0.0, spec.noise_sigma);
                            cube.at(r, c, b) = static_cast<float>(v);
                        }
                    }
                col0 += strip_w;
            }
            row0 += band_h;
        }

        char fname[32];
        std::snprintf(fname, sizeof(fname), "s%03d.hs3f", img);
        write_hs3f((fs::path(out_dir) / fname).string(), cube, labels, k);
    }

    DatasetDescriptor d;
    d.name = name;
    for (int c = 0; c < k; ++c)
        d.catalog.classes.push_back({"class" + std::to_string(c), true});
    d.expected_channels = spec.channels;
    d.prgb_bands = {2, 1, 0};
    d.split_fractions = {0.5, 0.25, 0.25};
    d.split_seed = spec.seed;
    d.root_path = out_dir;
    d.format = "hs3f";
    d.validate();
    save_descriptor(d, (fs::path(out_dir) / "descriptor.json").string());
    return d;
}

}  // namespace hs3
