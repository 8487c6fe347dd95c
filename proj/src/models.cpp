#include "hs3/models.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

namespace hs3 {

using nn::Act;
using nn::ConvBnAct;
using nn::Param;
using nn::Tensor;

const char* to_string(Architecture a) {
    return a == Architecture::runet ? "runet" : "dl3";
}
const char* to_string(PretrainMode m) {
    switch (m) {
        case PretrainMode::none: return "none";
        case PretrainMode::backbone_bb: return "backbone_bb";
        default: return "transfer_pt";
    }
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "runet") return Architecture::runet;
    if (s == "dl3") return Architecture::dl3;
    fail_validation("unknown architecture '" + s + "'");
}

PretrainMode pretrain_from_string(const std::string& s) {
    if (s == "none") return PretrainMode::none;
    if (s == "backbone_bb" || s == "bb") return PretrainMode::backbone_bb;
    if (s == "transfer_pt" || s == "pt") return PretrainMode::transfer_pt;
    fail_validation("unknown pretrain mode '" + s + "'");
}

void ModelConfig::validate() const {
    if (in_channels < 1) fail_validation("model config: in_channels must be >= 1");
    if (num_classes < 2) fail_validation("model config: num_classes must be >= 2");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        fail_validation("model config: dropout_p must lie in [0, 1)");
    if (pretrain_mode != PretrainMode::none && architecture != Architecture::dl3)
        fail_validation("model config: pretraining is only available for dl3");
    if (base_width < 1) fail_validation("model config: base_width must be >= 1");
}

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["architecture"] = to_string(c.architecture);
    j["in_channels"] = c.in_channels;
    j["num_classes"] = c.num_classes;
    j["dropout_p"] = c.dropout_p;
    j["batchnorm"] = c.batchnorm;
    j["pretrain_mode"] = to_string(c.pretrain_mode);
    j["base_width"] = c.base_width;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig c;
    try {
        auto j = nlohmann::json::parse(text);
        c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
        c.in_channels = j.at("in_channels").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.dropout_p = j.at("dropout_p").get<double>();
        c.batchnorm = j.at("batchnorm").get<bool>();
        c.pretrain_mode = pretrain_from_string(j.at("pretrain_mode").get<std::string>());
        c.base_width = j.at("base_width").get<int>();
    } catch (const nlohmann::json::exception& e) {
        fail_validation(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

Param* SegmentationModel::find_param(const std::string& name) {
    for (auto* p : params_)
        if (p->name == name) return p;
    return nullptr;
}

std::size_t SegmentationModel::trainable_parameter_count() const {
    std::size_t count = 0;
    for (const auto* p : params_)
        if (p->trainable && !p->buffer) count += p->value.size();
    return count;
}

// ---------------------------------------------------------------------------
// RU-Net: 4-level encoder/decoder with skip connections; all upsampling is
// bilinear interpolation followed by convolution.

namespace {

// conv-[bn]-relu twice, optional dropout after the second activation.
struct DoubleConv {
    ConvBnAct c1, c2;
    nn::Dropout drop;
    bool has_drop = false;

    DoubleConv() = default;
    DoubleConv(int in_ch, int mid_ch, int out_ch, bool bn, float dropout_p, Rng* rng)
        : c1(in_ch, mid_ch, 3, 1, 1, 1, 1, bn, Act::relu),
          c2(mid_ch, out_ch, 3, 1, 1, 1, 1, bn, Act::relu),
          drop(dropout_p, rng), has_drop(dropout_p > 0.0f) {}

    void init(Rng& rng, const std::string& prefix) {
        c1.init(rng, prefix + ".conv1");
        c2.init(rng, prefix + ".conv2");
    }
    Tensor forward(const Tensor& x, bool training) {
        Tensor y = c2.forward(c1.forward(x, training), training);
        return has_drop ? drop.forward(y, training) : y;
    }
    Tensor backward(const Tensor& dy) {
        Tensor g = has_drop ? drop.backward(dy) : dy;
        return c1.backward(c2.backward(g));
    }
    void collect(std::vector<Param*>& out) {
        c1.collect(out);
        c2.collect(out);
    }
};

struct Down {
    nn::MaxPool2d pool{2, 2};
    DoubleConv conv;

    Down() = default;
    Down(int in_ch, int out_ch, bool bn, float dropout_p, Rng* rng)
        : conv(in_ch, out_ch, out_ch, bn, dropout_p, rng) {}

    void init(Rng& rng, const std::string& prefix) { conv.init(rng, prefix + ".conv"); }
    Tensor forward(const Tensor& x, bool training) {
        return conv.forward(pool.forward(x), training);
    }
    Tensor backward(const Tensor& dy) { return pool.backward(conv.backward(dy)); }
    void collect(std::vector<Param*>& out) { conv.collect(out); }
};

struct Up {
    nn::Upsample up{2, true};
    DoubleConv conv;
    int skip_ch = 0, deep_ch = 0;
    int pad_b = 0, pad_r = 0;

    Up() = default;
    Up(int cat_ch, int out_ch, bool bn, float dropout_p, Rng* rng)
        : conv(cat_ch, cat_ch / 2, out_ch, bn, dropout_p, rng) {}

    void init(Rng& rng, const std::string& prefix) { conv.init(rng, prefix + ".conv"); }

    Tensor forward(const Tensor& deep, const Tensor& skip, bool training) {
        skip_ch = skip.c;
        deep_ch = deep.c;
        Tensor u = up.forward(deep);
        pad_b = skip.h - u.h;
        pad_r = skip.w - u.w;
        if (pad_b < 0 || pad_r < 0)
            fail_runtime("shape error: skip smaller than upsampled feature");
        if (pad_b > 0 || pad_r > 0) u = nn::pad2d(u, 0, pad_b, 0, pad_r);
        return conv.forward(nn::concat_channels(skip, u), training);
    }

    // Returns (d_deep, d_skip).
    std::pair<Tensor, Tensor> backward(const Tensor& dy) {
        Tensor dcat = conv.backward(dy);
        Tensor dskip(dcat.n, skip_ch, dcat.h, dcat.w);
        Tensor du(dcat.n, deep_ch, dcat.h, dcat.w);
        nn::split_channels(dcat, dskip, du);
        if (pad_b > 0 || pad_r > 0) du = nn::crop2d(du, 0, pad_b, 0, pad_r);
        return {up.backward(du), std::move(dskip)};
    }
    void collect(std::vector<Param*>& out) { conv.collect(out); }
};

constexpr int kRunetStride = 16;  // four 2x2 pools

class RuNetModel final : public SegmentationModel {
public:
    RuNetModel(const ModelConfig& config, std::uint64_t seed) {
        config_ = config;
        rng_.seed(seed);
        const int w = config.base_width;
        const bool bn = config.batchnorm;
        const float dp = static_cast<float>(config.dropout_p);
        inc_ = DoubleConv(config.in_channels, w, w, bn, dp, &rng_);
        down1_ = Down(w, 2 * w, bn, dp, &rng_);
        down2_ = Down(2 * w, 4 * w, bn, dp, &rng_);
        down3_ = Down(4 * w, 8 * w, bn, dp, &rng_);
        down4_ = Down(8 * w, 8 * w, bn, dp, &rng_);
        up1_ = Up(16 * w, 4 * w, bn, dp, &rng_);
        up2_ = Up(8 * w, 2 * w, bn, dp, &rng_);
        up3_ = Up(4 * w, w, bn, dp, &rng_);
        up4_ = Up(2 * w, w, bn, dp, &rng_);
        outc_ = nn::Conv2d(w, config.num_classes, 1, 1, 0, 1, 1, true);

        inc_.init(rng_, "inc");
        down1_.init(rng_, "down1");
        down2_.init(rng_, "down2");
        down3_.init(rng_, "down3");
        down4_.init(rng_, "down4");
        up1_.init(rng_, "up1");
        up2_.init(rng_, "up2");
        up3_.init(rng_, "up3");
        up4_.init(rng_, "up4");
        outc_.init(rng_, "outc");

        inc_.collect(params_);
        down1_.collect(params_);
        down2_.collect(params_);
        down3_.collect(params_);
        down4_.collect(params_);
        up1_.collect(params_);
        up2_.collect(params_);
        up3_.collect(params_);
        up4_.collect(params_);
        outc_.collect(params_);
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (x.c != config_.in_channels)
            fail_runtime("shape error: expected " + std::to_string(config_.in_channels) +
                         " input channels, got " + x.shape_str());
        // Pad symmetrically to the 16-pixel stride, crop the logits back.
        const int ph = (kRunetStride - x.h % kRunetStride) % kRunetStride;
        const int pw = (kRunetStride - x.w % kRunetStride) % kRunetStride;
        pad_t_ = ph / 2;
        pad_b_ = ph - pad_t_;
        pad_l_ = pw / 2;
        pad_r_ = pw - pad_l_;
        Tensor xp = (ph || pw) ? nn::pad2d(x, pad_t_, pad_b_, pad_l_, pad_r_) : x;

        Tensor x1 = inc_.forward(xp, training);
        Tensor x2 = down1_.forward(x1, training);
        Tensor x3 = down2_.forward(x2, training);
        Tensor x4 = down3_.forward(x3, training);
        Tensor x5 = down4_.forward(x4, training);
        Tensor y = up1_.forward(x5, x4, training);
        y = up2_.forward(y, x3, training);
        y = up3_.forward(y, x2, training);
        y = up4_.forward(y, x1, training);
        Tensor logits = outc_.forward(y);
        if (pad_t_ || pad_b_ || pad_l_ || pad_r_)
            logits = nn::crop2d(logits, pad_t_, pad_b_, pad_l_, pad_r_);
        return logits;
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor d = (pad_t_ || pad_b_ || pad_l_ || pad_r_)
                       ? nn::pad2d(dlogits, pad_t_, pad_b_, pad_l_, pad_r_)
                       : dlogits;
        d = outc_.backward(d);
        auto [d3, s1] = up4_.backward(d);
        auto [d2, s2] = up3_.backward(d3);
        auto [d1, s3] = up2_.backward(d2);
        auto [d5, s4] = up1_.backward(d1);
        Tensor dx4 = nn::add(down4_.backward(d5), s4);
        Tensor dx3 = nn::add(down3_.backward(dx4), s3);
        Tensor dx2 = nn::add(down2_.backward(dx3), s2);
        Tensor dx1 = nn::add(down1_.backward(dx2), s1);
        Tensor dxp = inc_.backward(dx1);
        if (pad_t_ || pad_b_ || pad_l_ || pad_r_)
            dxp = nn::crop2d(dxp, pad_t_, pad_b_, pad_l_, pad_r_);
        return dxp;
    }

    std::vector<std::string> output_layer_names() const override {
        return {"outc.weight", "outc.bias"};
    }

    void set_bn_frozen(bool frozen) override {
        for (auto* bn : bns()) bn->frozen_stats = frozen;
    }

    void set_frozen_activations(bool frozen) override {
        for_each_double_conv([frozen](DoubleConv& dc) {
            dc.c1.activation.frozen = frozen;
            dc.c2.activation.frozen = frozen;
        });
    }

private:
    template <typename Fn>
    void for_each_double_conv(Fn&& fn) {
        fn(inc_);
        fn(down1_.conv);
        fn(down2_.conv);
        fn(down3_.conv);
        fn(down4_.conv);
        fn(up1_.conv);
        fn(up2_.conv);
        fn(up3_.conv);
        fn(up4_.conv);
    }

    std::vector<nn::BatchNorm2d*> bns() {
        std::vector<nn::BatchNorm2d*> out;
        for_each_double_conv([&out](DoubleConv& dc) {
            if (dc.c1.use_bn) out.push_back(&dc.c1.bn);
            if (dc.c2.use_bn) out.push_back(&dc.c2.bn);
        });
        return out;
    }

    DoubleConv inc_;
    Down down1_, down2_, down3_, down4_;
    Up up1_, up2_, up3_, up4_;
    nn::Conv2d outc_;
    int pad_t_ = 0, pad_b_ = 0, pad_l_ = 0, pad_r_ = 0;
};

// ---------------------------------------------------------------------------
// DL3: 1x1 input adapter -> inverted-residual backbone (output stride 16) ->
// atrous pyramid -> decoder with a low-level skip -> 1x1 classifier.

struct InvertedResidual {
    std::optional<ConvBnAct> expand;  // 1x1 expansion, absent when ratio = 1
    ConvBnAct depthwise;
    ConvBnAct project;  // linear bottleneck: no activation
    bool use_res = false;

    InvertedResidual() = default;
    InvertedResidual(int in_ch, int out_ch, int stride, int expand_ratio, int dilation) {
        const int hidden = in_ch * expand_ratio;
        if (expand_ratio != 1)
            expand = ConvBnAct(in_ch, hidden, 1, 1, 0, 1, 1, true, Act::relu6);
        depthwise = ConvBnAct(hidden, hidden, 3, stride, dilation, dilation, hidden,
                              true, Act::relu6);
        project = ConvBnAct(hidden, out_ch, 1, 1, 0, 1, 1, true, Act::none);
        use_res = stride == 1 && in_ch == out_ch;
    }

    void init(Rng& rng, const std::string& prefix) {
        if (expand) expand->init(rng, prefix + ".expand");
        depthwise.init(rng, prefix + ".dw");
        project.init(rng, prefix + ".project");
    }
    Tensor forward(const Tensor& x, bool training) {
        Tensor y = expand ? expand->forward(x, training) : x;
        y = depthwise.forward(y, training);
        y = project.forward(y, training);
        return use_res ? nn::add(y, x) : y;
    }
    Tensor backward(const Tensor& dy) {
        Tensor d = project.backward(dy);
        d = depthwise.backward(d);
        if (expand) d = expand->backward(d);
        return use_res ? nn::add(d, dy) : d;
    }
    void collect(std::vector<Param*>& out) {
        if (expand) expand->collect(out);
        depthwise.collect(out);
        project.collect(out);
    }
};

struct MobileNetV2 {
    ConvBnAct stem;
    std::vector<InvertedResidual> blocks;
    int low_level_block = 2;  // output of the 24-channel stage, stride 4
    int high_channels = 320;
    int low_channels = 24;

    MobileNetV2() {
        stem = ConvBnAct(3, 32, 3, 2, 1, 1, 1, true, Act::relu6);
        // (expand ratio t, channels c, repeats n, first stride s); strides
        // past output stride 16 become dilation 2 instead.
        const int settings[7][4] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2},
                                    {6, 64, 4, 2},  {6, 96, 3, 1},  {6, 160, 3, 2},
                                    {6, 320, 1, 1}};
        int in_ch = 32;
        int stride_acc = 2;
        int dilation = 1;
        for (const auto& s : settings) {
            const int t = s[0], c = s[1], n = s[2], first_stride = s[3];
            for (int i = 0; i < n; ++i) {
                int stride = i == 0 ? first_stride : 1;
                if (stride == 2 && stride_acc >= 16) {
                    stride = 1;
                    dilation *= 2;
                } else if (stride == 2) {
                    stride_acc *= 2;
                }
                blocks.emplace_back(in_ch, c, stride, t, dilation);
                in_ch = c;
            }
        }
    }

    void init(Rng& rng, const std::string& prefix) {
        stem.init(rng, prefix + ".stem");
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].init(rng, prefix + ".block" + std::to_string(i));
    }

    // Returns (low-level features, high-level features).
    std::pair<Tensor, Tensor> forward(const Tensor& x, bool training) {
        Tensor y = stem.forward(x, training);
        Tensor low;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            y = blocks[i].forward(y, training);
            if (static_cast<int>(i) == low_level_block) low = y;
        }
        return {std::move(low), std::move(y)};
    }

    Tensor backward(const Tensor& d_high, const Tensor& d_low) {
        Tensor d = d_high;
        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
            d = blocks[i].backward(d);
            if (i == low_level_block + 1) d = nn::add(d, d_low);
        }
        return stem.backward(d);
    }

    void collect(std::vector<Param*>& out) {
        stem.collect(out);
        for (auto& b : blocks) b.collect(out);
    }
};

struct Aspp {
    ConvBnAct b0, b1, b2, b3;
    nn::GlobalAvgPool gap;
    ConvBnAct pool_conv;
    ConvBnAct project;
    nn::Dropout drop;
    int feat_h = 0, feat_w = 0;

    Aspp() = default;
    Aspp(int in_ch, float dropout_p, Rng* rng)
        : b0(in_ch, 256, 1, 1, 0, 1, 1, true, Act::relu),
          b1(in_ch, 256, 3, 1, 6, 6, 1, true, Act::relu),
          b2(in_ch, 256, 3, 1, 12, 12, 1, true, Act::relu),
          b3(in_ch, 256, 3, 1, 18, 18, 1, true, Act::relu),
          pool_conv(in_ch, 256, 1, 1, 0, 1, 1, true, Act::relu),
          project(5 * 256, 256, 1, 1, 0, 1, 1, true, Act::relu),
          drop(dropout_p, rng) {}

    void init(Rng& rng, const std::string& prefix) {
        b0.init(rng, prefix + ".b0");
        b1.init(rng, prefix + ".b1");
        b2.init(rng, prefix + ".b2");
        b3.init(rng, prefix + ".b3");
        pool_conv.init(rng, prefix + ".pool");
        project.init(rng, prefix + ".project");
    }

    Tensor forward(const Tensor& x, bool training) {
        feat_h = x.h;
        feat_w = x.w;
        Tensor y0 = b0.forward(x, training);
        Tensor y1 = b1.forward(x, training);
        Tensor y2 = b2.forward(x, training);
        Tensor y3 = b3.forward(x, training);
        Tensor p = pool_conv.forward(gap.forward(x), training);
        Tensor pu = nn::bilinear_resize(p, x.h, x.w, false);
        Tensor cat = nn::concat_channels(y0, y1);
        cat = nn::concat_channels(cat, y2);
        cat = nn::concat_channels(cat, y3);
        cat = nn::concat_channels(cat, pu);
        return drop.forward(project.forward(cat, training), training);
    }

    Tensor backward(const Tensor& dy) {
        Tensor dcat = project.backward(drop.backward(dy));
        const int n = dcat.n, h = dcat.h, w = dcat.w;
        auto slice = [&](int first) {
            Tensor out(n, 256, h, w);
            const std::size_t plane = static_cast<std::size_t>(h) * w;
            for (int i = 0; i < n; ++i)
                std::memcpy(&out.v[out.index(i, 0, 0, 0)],
                            &dcat.v[dcat.index(i, first, 0, 0)],
                            plane * 256 * sizeof(float));
            return out;
        };
        Tensor dx = b0.backward(slice(0));
        dx = nn::add(dx, b1.backward(slice(256)));
        dx = nn::add(dx, b2.backward(slice(512)));
        dx = nn::add(dx, b3.backward(slice(768)));
        Tensor dp = nn::bilinear_resize_backward(slice(1024), 1, 1, false);
        dx = nn::add(dx, gap.backward(pool_conv.backward(dp)));
        return dx;
    }

    void collect(std::vector<Param*>& out) {
        b0.collect(out);
        b1.collect(out);
        b2.collect(out);
        b3.collect(out);
        pool_conv.collect(out);
        project.collect(out);
    }
};

struct Decoder {
    ConvBnAct reduce;  // low-level 24 -> 48
    ConvBnAct conv1, conv2;
    int aspp_h = 0, aspp_w = 0;

    Decoder() = default;
    explicit Decoder(int low_ch)
        : reduce(low_ch, 48, 1, 1, 0, 1, 1, true, Act::relu),
          conv1(256 + 48, 256, 3, 1, 1, 1, 1, true, Act::relu),
          conv2(256, 256, 3, 1, 1, 1, 1, true, Act::relu) {}

    void init(Rng& rng, const std::string& prefix) {
        reduce.init(rng, prefix + ".reduce");
        conv1.init(rng, prefix + ".conv1");
        conv2.init(rng, prefix + ".conv2");
    }

    Tensor forward(const Tensor& aspp_out, const Tensor& low, bool training) {
        aspp_h = aspp_out.h;
        aspp_w = aspp_out.w;
        Tensor r = reduce.forward(low, training);
        Tensor up = nn::bilinear_resize(aspp_out, r.h, r.w, false);
        Tensor cat = nn::concat_channels(up, r);
        return conv2.forward(conv1.forward(cat, training), training);
    }

    // Returns (d_aspp, d_low).
    std::pair<Tensor, Tensor> backward(const Tensor& dy) {
        Tensor dcat = conv1.backward(conv2.backward(dy));
        Tensor dup(dcat.n, 256, dcat.h, dcat.w);
        Tensor dr(dcat.n, 48, dcat.h, dcat.w);
        nn::split_channels(dcat, dup, dr);
        Tensor d_aspp = nn::bilinear_resize_backward(dup, aspp_h, aspp_w, false);
        return {std::move(d_aspp), reduce.backward(dr)};
    }

    void collect(std::vector<Param*>& out) {
        reduce.collect(out);
        conv1.collect(out);
        conv2.collect(out);
    }
};

class Dl3Model final : public SegmentationModel {
public:
    Dl3Model(const ModelConfig& config, std::uint64_t seed)
        : aspp_(320, static_cast<float>(config.dropout_p), &rng_),
          decoder_(24) {
        config_ = config;
        rng_.seed(seed);
        adapter_ = nn::Conv2d(config.in_channels, 3, 1, 1, 0, 1, 1, true);
        classifier_ = nn::Conv2d(256, config.num_classes, 1, 1, 0, 1, 1, true);

        adapter_.init(rng_, "adapter");
        backbone_.init(rng_, "backbone");
        aspp_.init(rng_, "aspp");
        decoder_.init(rng_, "decoder");
        classifier_.init(rng_, "classifier");

        if (config.in_channels == 3 && config.pretrain_mode != PretrainMode::none) {
            // Identity adapter so pretrained RGB statistics pass through.
            adapter_.weight.value.zero();
            for (int i = 0; i < 3; ++i) adapter_.weight.value.at(i, i, 0, 0) = 1.0f;
            adapter_.bias.value.zero();
        } else {
            const double std_dev = 1.0 / config.in_channels;
            for (auto& v : adapter_.weight.value.v)
                v = static_cast<float>(gaussian(rng_, 0.0, std_dev));
            adapter_.bias.value.zero();
        }

        adapter_.collect(params_);
        backbone_.collect(params_);
        aspp_.collect(params_);
        decoder_.collect(params_);
        classifier_.collect(params_);
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (x.c != config_.in_channels)
            fail_runtime("shape error: expected " + std::to_string(config_.in_channels) +
                         " input channels, got " + x.shape_str());
        in_h_ = x.h;
        in_w_ = x.w;
        Tensor a = adapter_.forward(x);
        auto [low, high] = backbone_.forward(a, training);
        Tensor s = aspp_.forward(high, training);
        Tensor d = decoder_.forward(s, low, training);
        head_h_ = d.h;
        head_w_ = d.w;
        Tensor logits = classifier_.forward(d);
        return nn::bilinear_resize(logits, in_h_, in_w_, false);
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor d = nn::bilinear_resize_backward(dlogits, head_h_, head_w_, false);
        d = classifier_.backward(d);
        auto [d_aspp, d_low] = decoder_.backward(d);
        Tensor d_high = aspp_.backward(d_aspp);
        Tensor d_a = backbone_.backward(d_high, d_low);
        return adapter_.backward(d_a);
    }

    std::vector<std::string> output_layer_names() const override {
        return {"classifier.weight", "classifier.bias"};
    }

    void set_bn_frozen(bool frozen) override {
        for_each_cba([frozen](ConvBnAct& c) {
            if (c.use_bn) c.bn.frozen_stats = frozen;
        });
    }

    void set_frozen_activations(bool frozen) override {
        for_each_cba([frozen](ConvBnAct& c) { c.activation.frozen = frozen; });
    }

private:
    template <typename Fn>
    void for_each_cba(Fn&& fn) {
        fn(backbone_.stem);
        for (auto& b : backbone_.blocks) {
            if (b.expand) fn(*b.expand);
            fn(b.depthwise);
            fn(b.project);
        }
        fn(aspp_.b0);
        fn(aspp_.b1);
        fn(aspp_.b2);
        fn(aspp_.b3);
        fn(aspp_.pool_conv);
        fn(aspp_.project);
        fn(decoder_.reduce);
        fn(decoder_.conv1);
        fn(decoder_.conv2);
    }

    nn::Conv2d adapter_;
    MobileNetV2 backbone_;
    Aspp aspp_;
    Decoder decoder_;
    nn::Conv2d classifier_;
    int in_h_ = 0, in_w_ = 0, head_h_ = 0, head_w_ = 0;
};

}  // namespace

std::unique_ptr<SegmentationModel> build_runet(const ModelConfig& config,
                                               std::uint64_t seed) {
    config.validate();
    if (config.architecture != Architecture::runet)
        fail_validation("build_runet called with architecture " +
                        std::string(to_string(config.architecture)));
    return std::make_unique<RuNetModel>(config, seed);
}

std::unique_ptr<SegmentationModel> build_dl3(const ModelConfig& config,
                                             std::uint64_t seed) {
    config.validate();
    if (config.architecture != Architecture::dl3)
        fail_validation("build_dl3 called with architecture " +
                        std::string(to_string(config.architecture)));
    return std::make_unique<Dl3Model>(config, seed);
}

std::unique_ptr<SegmentationModel> build_model(const ModelConfig& config,
                                               std::uint64_t seed) {
    return config.architecture == Architecture::runet ? build_runet(config, seed)
                                                      : build_dl3(config, seed);
}

nn::Tensor cube_to_tensor(const SpectralCube& cube) {
    Tensor t(1, cube.channels, cube.height, cube.width);
    for (int y = 0; y < cube.height; ++y)
        for (int x = 0; x < cube.width; ++x)
            for (int b = 0; b < cube.channels; ++b)
                t.at(0, b, y, x) = cube.at(y, x, b);
    return t;
}

LabelMap logits_argmax(const nn::Tensor& logits, int batch_index) {
    LabelMap out(logits.h, logits.w);
    for (int y = 0; y < logits.h; ++y)
        for (int x = 0; x < logits.w; ++x) {
            int best = 0;
            float best_v = logits.at(batch_index, 0, y, x);
            for (int j = 1; j < logits.c; ++j) {
                const float v = logits.at(batch_index, j, y, x);
                if (v > best_v) {  // strict: ties keep the lowest index
                    best_v = v;
                    best = j;
                }
            }
            out.at(y, x) = static_cast<label_t>(best);
        }
    return out;
}

LabelMap predict_labels(SegmentationModel& model, const SpectralCube& cube) {
    if (cube.channels != model.config().in_channels)
        fail_validation("shape error: cube has " + std::to_string(cube.channels) +
                        " channels, model expects " +
                        std::to_string(model.config().in_channels));
    Tensor logits = model.forward(cube_to_tensor(cube), false);
    return logits_argmax(logits);
}

// ---------------------------------------------------------------------------
// Checkpoints

const nn::Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

Checkpoint snapshot(SegmentationModel& model) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    for (auto* p : model.params()) ckpt.tensors.emplace_back(p->name, p->value);
    return ckpt;
}

namespace {
constexpr char kCkptMagic[4] = {'H', 'S', '3', 'C'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json index;
    index["config"] = nlohmann::json::parse(model_config_to_json(ckpt.config));
    index["seed"] = ckpt.seed;
    index["meta"] = ckpt.meta;
    auto& tensors = index["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.tensors)
        tensors.push_back({{"name", name}, {"shape", {t.n, t.c, t.h, t.w}}});
    const std::string json = index.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail_runtime("cannot write checkpoint '" + path + "'");
    out.write(kCkptMagic, 4);
    const std::uint32_t version = kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t json_len = json.size();
    out.write(reinterpret_cast<const char*>(&json_len), 8);
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!out) fail_runtime("cannot write checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_runtime("checkpoint not found: '" + path + "'");
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t json_len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&json_len), 8);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0 || version != kCkptVersion)
        fail_runtime("decode error: '" + path + "' is not a checkpoint");
    std::string json(json_len, '\0');
    in.read(json.data(), static_cast<std::streamsize>(json_len));
    if (!in) fail_runtime("decode error: truncated checkpoint '" + path + "'");

    Checkpoint ckpt;
    try {
        auto index = nlohmann::json::parse(json);
        ckpt.config = model_config_from_json(index.at("config").dump());
        ckpt.seed = index.value("seed", std::uint64_t{0});
        if (index.contains("meta"))
            ckpt.meta = index.at("meta").get<std::map<std::string, std::string>>();
        for (const auto& entry : index.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<int>>();
            if (shape.size() != 4) fail_runtime("decode error: bad tensor shape");
            Tensor t(shape[0], shape[1], shape[2], shape[3]);
            in.read(reinterpret_cast<char*>(t.v.data()),
                    static_cast<std::streamsize>(t.v.size() * sizeof(float)));
            if (!in) fail_runtime("decode error: truncated checkpoint '" + path + "'");
            ckpt.tensors.emplace_back(name, std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        fail_runtime("decode error: checkpoint index: " + std::string(e.what()));
    }
    return ckpt;
}

NameMap identity_name_map() {
    return [](const std::string& s) { return s; };
}

NameMap strip_prefix_name_map(const std::string& prefix) {
    return [prefix](const std::string& s) {
        return s.rfind(prefix, 0) == 0 ? s.substr(prefix.size()) : s;
    };
}

void load_tensors(SegmentationModel& model, const Checkpoint& source,
                  const std::function<bool(const std::string&)>& include,
                  const NameMap& name_map) {
    std::vector<std::string> problems;
    std::map<std::string, const Tensor*> mapped;
    for (const auto& [raw_name, t] : source.tensors) {
        const std::string name = name_map(raw_name);
        if (include(name)) mapped[name] = &t;
    }

    std::vector<std::pair<Param*, const Tensor*>> plan;
    std::map<std::string, const Tensor*> unmatched = mapped;
    for (auto* p : model.params()) {
        if (!include(p->name)) continue;
        auto it = mapped.find(p->name);
        if (it == mapped.end()) {
            problems.push_back("missing " + p->name);
            continue;
        }
        if (!it->second->same_shape(p->value))
            problems.push_back("shape " + p->name + " " + it->second->shape_str() +
                               " vs " + p->value.shape_str());
        else
            plan.emplace_back(p, it->second);
        unmatched.erase(p->name);
    }
    for (const auto& [name, t] : unmatched) problems.push_back("unexpected " + name);

    if (!problems.empty()) {
        std::string msg = "checkpoint mismatch:";
        for (const auto& p : problems) msg += " [" + p + "]";
        fail_validation(msg);
    }
    for (auto& [param, tensor] : plan) param->value = *tensor;
}

void apply_pretrain(SegmentationModel& model, PretrainMode mode,
                    const Checkpoint& source) {
    if (mode == PretrainMode::none) return;
    if (model.config().architecture != Architecture::dl3)
        fail_validation("model config: pretraining is only available for dl3");

    if (mode == PretrainMode::backbone_bb) {
        load_tensors(model, source, [](const std::string& name) {
            return name.rfind("backbone.", 0) == 0;
        });
        return;
    }

    // transfer_pt: everything but the output layer comes from the donor; the
    // output layer keeps its fresh K-class initialization and stays the only
    // trainable part.
    const auto output_names = model.output_layer_names();
    auto is_output = [&output_names](const std::string& name) {
        return std::find(output_names.begin(), output_names.end(), name) !=
               output_names.end();
    };
    load_tensors(model, source,
                 [&](const std::string& name) { return !is_output(name); });
    for (auto* p : model.params())
        if (!is_output(p->name)) p->trainable = false;
    model.set_bn_frozen(true);
}

}  // namespace hs3
