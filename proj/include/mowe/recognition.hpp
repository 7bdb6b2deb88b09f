// Toy recognition model R for the perception-aware metric: a 3-layer fully
// convolutional segmentation net trained on rendered scene masks, then
// frozen. Exposes final logits and the mid-layer feature map.
#pragma once

#include "mowe/checkpoint.hpp"
#include "mowe/metrics.hpp"
#include "mowe/optim.hpp"

namespace mowe {

struct RecognitionModel {
    nn::Conv conv1, conv2, conv3;
    int feat_channels = 12;

    void init(int feat, uint64_t seed) {
        feat_channels = feat;
        conv1.init(feat, 3, 3, 1, 1, derive_seed(seed, "c1"));
        conv2.init(feat, feat, 3, 1, 1, derive_seed(seed, "c2"));
        conv3.init(kNumSegClasses, feat, 3, 1, 1, derive_seed(seed, "c3"));
    }

    struct Output {
        Tensor logits;  // [K x H x W]
        Tensor feat;    // [F x H x W] mid-layer feature map
    };

    Output forward(const Tensor& img) const {
        check_image(img, "recognition");
        Tensor f1 = relu(conv1.forward(img));
        Tensor f2 = relu(conv2.forward(f1));
        return {conv3.forward(f2), f2};
    }

    ParamList params() const {
        ParamList out;
        conv1.collect(out, "conv1");
        conv2.collect(out, "conv2");
        conv3.collect(out, "conv3");
        return out;
    }

    std::vector<int> predict_classes(const Tensor& img) const {
        Output o = forward(img);
        int h = o.logits.dim(1), w = o.logits.dim(2);
        int64_t plane = static_cast<int64_t>(h) * w;
        std::vector<int> pred(static_cast<size_t>(plane));
        for (int64_t px = 0; px < plane; ++px) {
            int best = 0;
            double bv = o.logits[px];
            for (int c = 1; c < kNumSegClasses; ++c)
                if (o.logits[c * plane + px] > bv) {
                    bv = o.logits[c * plane + px];
                    best = c;
                }
            pred[static_cast<size_t>(px)] = best;
        }
        return pred;
    }
};

inline double pixel_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw ShapeError("pixel_accuracy: size mismatch");
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct RecognitionTrainConfig {
    int scenes = 30;
    int height = 32;
    int width = 32;
    uint64_t seed = 77;
    int epochs = 60;
    double lr = 5e-3;
    int feat_channels = 12;
};

struct RecognitionTrainResult {
    RecognitionModel model;
    double train_accuracy = 0.0;
};

inline RecognitionTrainResult train_recognition_model(const RecognitionTrainConfig& cfg) {
    RecognitionModel model;
    model.init(cfg.feat_channels, derive_seed(cfg.seed, "r-init"));
    for (auto& p : model.params()) p.tensor.set_requires_grad(true);

    std::vector<SceneRender> scenes;
    for (int i = 0; i < cfg.scenes; ++i)
        scenes.push_back(render_scene(derive_seed(cfg.seed, "r-scene", i), cfg.height, cfg.width));

    AdamConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    AdamState opt;
    ParamList params = model.params();
    opt.init(params);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch)
        for (const auto& scene : scenes) {
            Tape tape;
            Tape::Scope scope(tape);
            for (auto& p : params) p.tensor.zero_grad();
            Tensor loss = cross_entropy_map(model.forward(scene.image).logits, scene.mask);
            tape.backward(loss);
            adam_step(params, opt, opt_cfg);
        }
    for (auto& p : params) p.tensor.set_requires_grad(false);

    double acc = 0.0;
    for (const auto& scene : scenes) acc += pixel_accuracy(model.predict_classes(scene.image), scene.mask);
    return {model, acc / cfg.scenes};
}

// ---------------------------------------------------------------------------
// Perception-aware metric: cross-entropy of R(restored) against pseudo-labels
// argmax R(clean), plus gamma-weighted MSE between mid-layer features. Reads
// only the two images and the frozen R; no semantic labels involved.

struct MpaBreakdown {
    double ce = 0.0;
    double feature = 0.0;  // pre-gamma
    double total = 0.0;
};

inline MpaBreakdown m_pa_breakdown(const Tensor& restored, const Tensor& clean, const RecognitionModel& r,
                                   double gamma = 1.0) {
    if (!same_shape(restored.shape(), clean.shape())) throw ShapeError("m_pa: image shape mismatch");
    RecognitionModel::Output oc = r.forward(clean);
    RecognitionModel::Output orr = r.forward(restored);

    int h = oc.logits.dim(1), w = oc.logits.dim(2);
    int64_t plane = static_cast<int64_t>(h) * w;
    std::vector<int> pseudo(static_cast<size_t>(plane));
    for (int64_t px = 0; px < plane; ++px) {
        int best = 0;
        double bv = oc.logits[px];
        for (int c = 1; c < kNumSegClasses; ++c)
            if (oc.logits[c * plane + px] > bv) {
                bv = oc.logits[c * plane + px];
                best = c;
            }
        pseudo[static_cast<size_t>(px)] = best;
    }

    MpaBreakdown out;
    out.ce = cross_entropy_map(orr.logits, pseudo).item();
    out.feature = mse_value(orr.feat, oc.feat);
    out.total = out.ce + gamma * out.feature;
    return out;
}

inline double m_pa(const Tensor& restored, const Tensor& clean, const RecognitionModel& r, double gamma = 1.0) {
    return m_pa_breakdown(restored, clean, r, gamma).total;
}

// ---------------------------------------------------------------------------
// Checkpoint adapters (same container format as the restoration model)

inline Checkpoint recognition_to_checkpoint(const RecognitionModel& model) {
    Checkpoint ckpt;
    ckpt.meta.emplace_back("format", "mowe-recognition");
    ckpt.meta.emplace_back("recognition.feat_channels", std::to_string(model.feat_channels));
    for (const auto& p : model.params()) ckpt.blobs.push_back(p);
    return ckpt;
}

inline RecognitionModel recognition_from_checkpoint(const Checkpoint& ckpt) {
    const std::string* fmt = ckpt.find_meta("format");
    if (!fmt || *fmt != "mowe-recognition") throw ParamError("checkpoint: not a recognition model");
    RecognitionModel model;
    model.init(std::stoi(*ckpt.find_meta("recognition.feat_channels")), 0);
    for (auto& p : model.params()) {
        const Tensor* blob = ckpt.find_blob(p.name);
        if (!blob) throw ParamError("checkpoint: missing parameter " + p.name);
        if (!same_shape(blob->shape(), p.tensor.shape())) throw ParamError("checkpoint: shape mismatch for " + p.name);
        p.tensor.vec() = blob->vec();
    }
    return model;
}

}  // namespace mowe
