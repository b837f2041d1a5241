// Training loop: SGD with classical momentum, step-decayed learning rate,
// per-epoch shuffling and augmentation, validation, and history capture.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "roct/data.hpp"
#include "roct/image.hpp"
#include "roct/layers.hpp"
#include "roct/metrics.hpp"
#include "roct/model.hpp"

namespace roct {

struct TrainConfig {
    double initial_lr = 0.045;
    double decay_rate = 0.94;
    int decay_every_epochs = 2;
    double momentum = 0.9;
    int batch_size = 10;
    int epochs = 0;
    std::uint64_t seed = 0;
    AugmentConfig augment = AugmentConfig::standard();
    double clip_max_norm = 0.0;      // 0 disables clipping; kept off by default
    std::string best_checkpoint;     // empty disables best-model saving
    bool verbose = false;
};

void validate(const TrainConfig& cfg);

// initial_lr * decay_rate^floor(epoch / decay_every_epochs)
double lr_at(int epoch, const TrainConfig& cfg);

struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

// v <- momentum*v + grad, p <- p - lr*v over every trainable parameter.
// A non-finite gradient aborts with a diagnostic naming the parameter.
void sgd_step(ParamRegistry& params, SgdState& state, double lr, double momentum,
              double clip_max_norm = 0.0);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> rows;
};

void write_history_csv(const TrainHistory& history, const std::string& path);

// Decoded-and-resized images keyed by path, so each file is read once per run.
class ImageCache {
public:
    explicit ImageCache(int size) : size_(size) {}
    const Tensor& load(const std::string& path);

private:
    int size_;
    std::unordered_map<std::string, Tensor> cache_;
};

// Runs the prediction side only: eval mode, no augmentation, argmax over
// logits. Ties go to the lowest class index.
ConfusionMatrix evaluate(ModelGraph& model, const DatasetManifest& manifest,
                         const std::vector<Sample>& samples, int batch_size, ImageCache& cache);
ConfusionMatrix evaluate(ModelGraph& model, const DatasetManifest& manifest,
                         const std::vector<Sample>& samples, int batch_size = 32);

// Per epoch: seeded shuffle, augmented mini-batches through forward/backward/
// sgd_step at lr_at(epoch), then validation accuracy on the manifest's test
// split in eval mode. Returns one history row per epoch.
TrainHistory fit(ModelGraph& model, const DatasetManifest& manifest, const TrainConfig& cfg);

}  // namespace roct
