#include "roct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "roct/checkpoint.hpp"
#include "roct/ops.hpp"

namespace roct {

namespace {

// Stream tags keep the shuffle, augmentation, and dropout draws independent
// of each other while all deriving from one run seed.
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kAugmentStream = 0x61756700ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f70ULL;

Tensor one_hot_rows(const std::vector<int>& labels, int k) {
    std::vector<double> v(labels.size() * static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        v[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from({static_cast<int>(labels.size()), k}, std::move(v));
}

Tensor stack_images(const std::vector<Tensor>& images, int size) {
    std::vector<double> buf;
    buf.reserve(images.size() * static_cast<std::size_t>(size) * size);
    for (const auto& img : images) {
        buf.insert(buf.end(), img.data().begin(), img.data().end());
    }
    return Tensor::from({static_cast<int>(images.size()), size, size, 1}, std::move(buf));
}

int argmax_row(const Tensor& logits, int row, int k) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
        if (logits.at(static_cast<std::int64_t>(row) * k + c) > logits.at(static_cast<std::int64_t>(row) * k + best)) {
            best = c;
        }
    }
    return best;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.initial_lr <= 0.0) throw std::invalid_argument("train: initial_lr must be positive");
    if (cfg.decay_rate <= 0.0) throw std::invalid_argument("train: decay_rate must be positive");
    if (cfg.decay_every_epochs < 1) throw std::invalid_argument("train: decay_every_epochs must be at least 1");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw std::invalid_argument("train: momentum must be in [0,1)");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
    if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("train: epoch must be non-negative");
    return cfg.initial_lr * std::pow(cfg.decay_rate, epoch / cfg.decay_every_epochs);
}

void sgd_step(ParamRegistry& params, SgdState& state, double lr, double momentum, double clip_max_norm) {
    for (const auto& p : params.all()) {
        if (!p->trainable) continue;
        const auto& g = p->value.grad();
        for (double v : g) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("sgd: non-finite gradient in '" + p->name + "', aborting epoch");
            }
        }
    }

    double scale = 1.0;
    if (clip_max_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : params.all()) {
            if (!p->trainable) continue;
            for (double v : p->value.grad()) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > clip_max_norm) scale = clip_max_norm / norm;
    }

    for (const auto& p : params.all()) {
        if (!p->trainable) continue;
        auto& v = state.velocity[p->name];
        const auto& g = p->value.grad();
        if (v.empty()) v.assign(g.size(), 0.0);
        if (v.size() != g.size()) {
            throw std::invalid_argument("sgd: velocity for '" + p->name + "' does not match the gradient");
        }
        auto& value = p->value.data_mut();
        for (std::size_t i = 0; i < g.size(); ++i) {
            v[i] = momentum * v[i] + scale * g[i];
            value[i] -= lr * v[i];
        }
    }
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("train: cannot write '" + path + "'");
    os << "epoch,lr,train_loss,val_accuracy\n";
    char line[160];
    for (const auto& r : history.rows) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g\n", r.epoch, r.lr, r.train_loss,
                      r.val_accuracy);
        os << line;
    }
}

const Tensor& ImageCache::load(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(path, load_and_resize(path, size_)).first->second;
}

ConfusionMatrix evaluate(ModelGraph& model, const DatasetManifest& manifest,
                         const std::vector<Sample>& samples, int batch_size, ImageCache& cache) {
    if (static_cast<int>(manifest.classes.size()) != model.class_count) {
        throw std::invalid_argument("evaluate: manifest has " + std::to_string(manifest.classes.size()) +
                                    " classes but the model expects " + std::to_string(model.class_count));
    }
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be at least 1");

    NoGradGuard guard;
    Context ctx;  // eval mode
    ConfusionMatrix cm(manifest.classes);
    const int k = model.class_count;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<Tensor> images;
        std::vector<int> labels;
        for (std::size_t i = start; i < stop; ++i) {
            images.push_back(cache.load(samples[i].path));
            labels.push_back(manifest.label_index(samples[i].label));
        }
        Tensor logits = model.forward(stack_images(images, model.input_size), ctx);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            cm.add_index(labels[i], argmax_row(logits, static_cast<int>(i), k));
        }
    }
    return cm;
}

ConfusionMatrix evaluate(ModelGraph& model, const DatasetManifest& manifest,
                         const std::vector<Sample>& samples, int batch_size) {
    ImageCache cache(model.input_size);
    return evaluate(model, manifest, samples, batch_size, cache);
}

TrainHistory fit(ModelGraph& model, const DatasetManifest& manifest, const TrainConfig& cfg) {
    validate(cfg);
    if (static_cast<int>(manifest.classes.size()) != model.class_count) {
        throw std::invalid_argument("train: manifest has " + std::to_string(manifest.classes.size()) +
                                    " classes but the model expects " + std::to_string(model.class_count));
    }
    if (manifest.train.empty()) throw std::invalid_argument("train: manifest has no training samples");

    const int size = model.input_size;
    const int k = model.class_count;
    ImageCache cache(size);
    SgdState opt;
    TrainHistory history;
    double best_acc = -1.0;

    std::vector<std::size_t> order(manifest.train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::uint64_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> images;
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                const Sample& s = manifest.train[order[i]];
                // the substream depends on the sample's identity, not its
                // position in the shuffle, so prefetch order cannot matter
                Rng aug_rng(mix_seed(cfg.seed, kAugmentStream + static_cast<std::uint64_t>(epoch), order[i]));
                images.push_back(augment(cache.load(s.path), cfg.augment, aug_rng));
                labels.push_back(manifest.label_index(s.label));
            }
            Tensor x = stack_images(images, size);
            Tensor y = one_hot_rows(labels, k);

            Rng drop_rng(mix_seed(cfg.seed, kDropoutStream + static_cast<std::uint64_t>(epoch), batch_index++));
            Context ctx;
            ctx.training = true;
            ctx.rng = &drop_rng;
            Tensor loss = cross_entropy(softmax(model.forward(x, ctx)), y);

            for (const auto& p : model.params.all()) {
                if (p->trainable) p->value.zero_grad();
            }
            loss.backward();
            sgd_step(model.params, opt, lr, cfg.momentum, cfg.clip_max_norm);

            loss_sum += loss.item() * static_cast<double>(stop - start);
            seen += stop - start;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        if (!manifest.test.empty()) {
            rec.val_accuracy = overall_accuracy(evaluate(model, manifest, manifest.test, cfg.batch_size, cache));
        }
        history.rows.push_back(rec);

        if (cfg.verbose) {
            std::printf("epoch %d: lr %.5f, loss %.5f, val %.4f\n", epoch, rec.lr, rec.train_loss,
                        rec.val_accuracy);
            std::fflush(stdout);
        }
        if (!cfg.best_checkpoint.empty() && rec.val_accuracy >= best_acc) {
            best_acc = rec.val_accuracy;
            std::map<std::string, std::string> extra;
            extra["trained_epochs"] = std::to_string(epoch + 1);
            char acc[32];
            std::snprintf(acc, sizeof acc, "%.17g", rec.val_accuracy);
            extra["val_accuracy"] = acc;
            save_checkpoint(model, cfg.best_checkpoint, extra);
        }
    }
    return history;
}

}  // namespace roct
