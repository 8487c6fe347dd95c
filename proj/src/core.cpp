#include "hs3/core.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace hs3 {

using nlohmann::json;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_runtime("file not found: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

int ClassCatalog::evaluated_count() const {
    int k = 0;
    for (const auto& c : classes)
        if (c.evaluated) ++k;
    return k;
}

std::vector<label_t> ClassCatalog::remap_table() const {
    std::vector<label_t> table(classes.size(), kIgnore);
    label_t next = 0;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].evaluated) table[i] = next++;
    return table;
}

std::vector<std::string> ClassCatalog::evaluated_names() const {
    std::vector<std::string> names;
    for (const auto& c : classes)
        if (c.evaluated) names.push_back(c.name);
    return names;
}

void ClassCatalog::validate() const {
    std::set<std::string> seen;
    for (const auto& c : classes) {
        if (!seen.insert(c.name).second)
            fail_validation("class catalog: duplicate name '" + c.name + "'");
    }
    if (evaluated_count() < 1)
        fail_validation("class catalog: no evaluated classes");
}

void DatasetDescriptor::validate() const {
    catalog.validate();
    if (name.empty()) fail_validation("descriptor: empty name");
    if (expected_channels < 1)
        fail_validation("descriptor: expected_channels must be >= 1");
    std::set<int> bands(prgb_bands.begin(), prgb_bands.end());
    if (bands.size() != 3)
        fail_validation("descriptor: prgb_bands must be three distinct indices");
    for (int b : prgb_bands)
        if (b < 0 || b >= expected_channels)
            fail_validation("descriptor: prgb band index out of range");
    double sum = 0.0;
    for (double f : split_fractions) {
        if (f < 0.0) fail_validation("descriptor: negative split fraction");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        fail_validation("descriptor: split fractions must sum to 1");
}

std::string descriptor_to_json(const DatasetDescriptor& d) {
    json j;
    j["name"] = d.name;
    json cls = json::array();
    for (const auto& c : d.catalog.classes)
        cls.push_back({{"name", c.name}, {"evaluated", c.evaluated}});
    j["classes"] = cls;
    j["expected_channels"] = d.expected_channels;
    j["prgb_bands"] = d.prgb_bands;
    j["split_fractions"] = {{"train", d.split_fractions[0]},
                            {"val", d.split_fractions[1]},
                            {"test", d.split_fractions[2]}};
    j["split_seed"] = d.split_seed;
    j["root_path"] = d.root_path;
    j["format"] = d.format;
    j["fixed_partition"] = d.fixed_partition;
    if (!d.notes.empty()) j["notes"] = d.notes;
    return j.dump(2) + "\n";
}

DatasetDescriptor descriptor_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail_validation(std::string("descriptor: malformed JSON: ") + e.what());
    }
    DatasetDescriptor d;
    try {
        d.name = j.at("name").get<std::string>();
        for (const auto& c : j.at("classes")) {
            ClassInfo info;
            info.name = c.at("name").get<std::string>();
            info.evaluated = c.value("evaluated", true);
            d.catalog.classes.push_back(info);
        }
        d.expected_channels = j.at("expected_channels").get<int>();
        d.prgb_bands = j.at("prgb_bands").get<std::array<int, 3>>();
        const auto& sf = j.at("split_fractions");
        d.split_fractions = {sf.at("train").get<double>(),
                             sf.at("val").get<double>(),
                             sf.at("test").get<double>()};
        d.split_seed = j.value("split_seed", std::uint64_t{0});
        d.root_path = j.value("root_path", std::string{});
        d.format = j.value("format", std::string{"hs3f"});
        d.fixed_partition = j.value("fixed_partition", false);
        d.notes = j.value("notes", std::string{});
    } catch (const json::exception& e) {
        fail_validation(std::string("descriptor: missing or bad field: ") + e.what());
    }
    d.validate();
    return d;
}

DatasetDescriptor load_descriptor(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_validation("descriptor file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return descriptor_from_json(ss.str());
}

void save_descriptor(const DatasetDescriptor& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail_runtime("cannot write descriptor: " + path);
    out << descriptor_to_json(d);
}

ValidationReport validate_sample(const Sample& sample,
                                 const DatasetDescriptor& descriptor) {
    ValidationReport report;
    auto add = [&](const std::string& msg) { report.violations.push_back(msg); };

    const auto& cube = sample.cube;
    const auto& lab = sample.labels;

    if (cube.height < 1 || cube.width < 1)
        add("cube has empty spatial extent");
    if (cube.channels < 1)
        add("cube must have at least one channel");
    const std::size_t expect =
        static_cast<std::size_t>(cube.height) * cube.width * cube.channels;
    if (cube.values.size() != expect)
        add("cube value count does not match height*width*channels");
    for (float v : cube.values) {
        if (!std::isfinite(v)) {
            add("cube contains non-finite values");
            break;
        }
    }
    if (!cube.band_centers.empty()) {
        if (static_cast<int>(cube.band_centers.size()) != cube.channels)
            add("band_centers length does not match channel count");
        for (std::size_t i = 1; i < cube.band_centers.size(); ++i)
            if (!(cube.band_centers[i - 1] < cube.band_centers[i])) {
                add("band_centers not strictly increasing");
                break;
            }
    }

    if (lab.height != cube.height || lab.width != cube.width)
        add("shape mismatch between cube and labels");
    if (lab.labels.size() != static_cast<std::size_t>(lab.height) * lab.width)
        add("label count does not match height*width");

    const int k = descriptor.num_classes();
    for (label_t v : lab.labels) {
        if (v != kIgnore && v >= k) {
            add("invalid class index " + std::to_string(v) +
                " (K=" + std::to_string(k) + ")");
            break;
        }
    }

    if (cube.channels != descriptor.expected_channels)
        add("channel count " + std::to_string(cube.channels) +
            " does not match descriptor (" +
            std::to_string(descriptor.expected_channels) + ")");

    if (sample.id.empty()) add("empty sample id");
    return report;
}

}  // namespace hs3
