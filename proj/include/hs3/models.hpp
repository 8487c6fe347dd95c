#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hs3/core.hpp"
#include "hs3/nn/layers.hpp"

namespace hs3 {

enum class Architecture { runet, dl3 };
enum class PretrainMode { none, backbone_bb, transfer_pt };

const char* to_string(Architecture a);
const char* to_string(PretrainMode m);
Architecture architecture_from_string(const std::string& s);
PretrainMode pretrain_from_string(const std::string& s);

struct ModelConfig {
    Architecture architecture = Architecture::runet;
    int in_channels = 3;
    int num_classes = 2;
    double dropout_p = 0.25;
    bool batchnorm = true;
    PretrainMode pretrain_mode = PretrainMode::none;
    int base_width = 64;  // encoder width multiplier, runet only

    void validate() const;
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

// A built network. Parameters are explicit named objects; forward caches the
// activations its own backward consumes, so backward must directly follow a
// forward on the same input (the training-step pattern).
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;

    // x is (N, in_channels, H, W); returns logits (N, num_classes, H, W).
    virtual nn::Tensor forward(const nn::Tensor& x, bool training) = 0;
    // dlogits has the logits shape; returns d/dx and accumulates param grads.
    virtual nn::Tensor backward(const nn::Tensor& dlogits) = 0;
    // Canonical names of the output layer (classifier) parameters.
    virtual std::vector<std::string> output_layer_names() const = 0;
    // Freezes the normalization statistics (transfer fine-tuning).
    virtual void set_bn_frozen(bool frozen) = 0;
    // Pins every activation to the branch taken by the last forward pass;
    // finite-difference gradient checks probe this exact linearization.
    virtual void set_frozen_activations(bool frozen) = 0;

    const std::vector<nn::Param*>& params() { return params_; }
    nn::Param* find_param(const std::string& name);
    const ModelConfig& config() const { return config_; }
    std::size_t trainable_parameter_count() const;

protected:
    ModelConfig config_;
    std::vector<nn::Param*> params_;
    Rng rng_{0};
};

// Deterministic build: the same (config, seed) yields identical parameters.
std::unique_ptr<SegmentationModel> build_model(const ModelConfig& config,
                                               std::uint64_t seed = 0);
std::unique_ptr<SegmentationModel> build_runet(const ModelConfig& config,
                                               std::uint64_t seed = 0);
std::unique_ptr<SegmentationModel> build_dl3(const ModelConfig& config,
                                             std::uint64_t seed = 0);

// HWC float cube -> (1, C, H, W) tensor.
nn::Tensor cube_to_tensor(const SpectralCube& cube);

// Per-pixel argmax over eval-mode logits; ties break toward the lowest class
// index and the result never contains kIgnore.
LabelMap predict_labels(SegmentationModel& model, const SpectralCube& cube);
LabelMap logits_argmax(const nn::Tensor& logits, int batch_index = 0);

// ---------------------------------------------------------------------------
// Checkpoint container: canonical parameter names -> shaped float32 tensors
// plus the model config and free-form metadata. Binary layout: magic "HS3C",
// u32 version, u64 JSON-index length, JSON index, raw little-endian payload.
struct Checkpoint {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, nn::Tensor>> tensors;  // saved order
    std::map<std::string, std::string> meta;

    const nn::Tensor* find(const std::string& name) const;
};

Checkpoint snapshot(SegmentationModel& model);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Import adapters translate external checkpoint naming onto canonical names;
// the identity adapter covers the harness's own files.
using NameMap = std::function<std::string(const std::string&)>;
NameMap identity_name_map();
NameMap strip_prefix_name_map(const std::string& prefix);

// Copies every checkpoint tensor accepted by `include` into the model;
// missing, extra or shape-incompatible tensors raise "checkpoint mismatch"
// listing the offenders.
void load_tensors(SegmentationModel& model, const Checkpoint& source,
                  const std::function<bool(const std::string&)>& include,
                  const NameMap& name_map = identity_name_map());

// backbone_bb: overwrites backbone.* from the source, all weights trainable.
// transfer_pt: loads everything except the output layer (which keeps its
// fresh K-class initialization) and freezes all non-output parameters plus
// the normalization statistics.
void apply_pretrain(SegmentationModel& model, PretrainMode mode,
                    const Checkpoint& source);

}  // namespace hs3
