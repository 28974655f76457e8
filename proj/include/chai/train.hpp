#ifndef CHAI_TRAIN_HPP
#define CHAI_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "model.hpp"
#include "triplet.hpp"

namespace chai {

struct TrainConfig {
    double margin = 1.0;
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double lr = 0.01;       ///< all layers except the embedding head
    double lr_head = 0.01;  ///< final conv layer feeding GAP
    std::size_t lr_step_epochs = 10;
    double lr_gamma = 0.1;
    std::size_t n_train_triplets = 15000;
    std::size_t n_val_triplets = 5000;
    double joint_mix_ratio = 0.5;
    std::size_t epochs = 3;
    std::uint64_t seed = 7;
    /// Fraction of labeled samples kept for triplet generation.
    double subset_fraction = 1.0;
    /// Upper bound on the joint gradient L2 norm per step; 0 disables clipping.
    double clip_norm = 0.0;
    /// Return the parameters of the epoch with the lowest validation loss.
    bool keep_best = true;

    void validate() const {
        if (!(margin > 0.0)) {
            throw ConfigError("margin must be positive");
        }
        if (batch_size == 0) {
            throw ConfigError("batch_size must be positive");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw ConfigError("momentum must lie in [0, 1)");
        }
        if (lr < 0.0 || lr_head < 0.0) {
            throw ConfigError("learning rates must be non-negative");
        }
        if (lr_step_epochs == 0 || lr_gamma <= 0.0) {
            throw ConfigError("lr_step_epochs and lr_gamma must be positive");
        }
        if (joint_mix_ratio < 0.0 || joint_mix_ratio > 1.0) {
            throw ConfigError("joint_mix_ratio must lie in [0, 1]");
        }
        if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
            throw ConfigError("subset_fraction must lie in (0, 1]");
        }
        if (!(clip_norm >= 0.0)) {
            throw ConfigError("clip_norm must be non-negative");
        }
    }

    /// Learning rate multiplier of the "step" policy for a 1-based epoch.
    double lr_factor(std::size_t epoch) const {
        const auto steps = epoch == 0 ? 0 : (epoch - 1) / lr_step_epochs;
        return std::pow(lr_gamma, static_cast<double>(steps));
    }

    static TrainConfig from_key_values(const KeyValues& entries) {
        TrainConfig c;
        for (const auto& [key, value] : entries) {
            if (key == "margin") {
                c.margin = parse_number<double>(value, key);
            } else if (key == "batch_size") {
                c.batch_size = parse_number<std::size_t>(value, key);
            } else if (key == "momentum") {
                c.momentum = parse_number<double>(value, key);
            } else if (key == "lr") {
                c.lr = parse_number<double>(value, key);
            } else if (key == "lr_head") {
                c.lr_head = parse_number<double>(value, key);
            } else if (key == "lr_step_epochs") {
                c.lr_step_epochs = parse_number<std::size_t>(value, key);
            } else if (key == "lr_gamma") {
                c.lr_gamma = parse_number<double>(value, key);
            } else if (key == "n_train_triplets") {
                c.n_train_triplets = parse_number<std::size_t>(value, key);
            } else if (key == "n_val_triplets") {
                c.n_val_triplets = parse_number<std::size_t>(value, key);
            } else if (key == "joint_mix_ratio") {
                c.joint_mix_ratio = parse_number<double>(value, key);
            } else if (key == "epochs") {
                c.epochs = parse_number<std::size_t>(value, key);
            } else if (key == "seed") {
                c.seed = parse_number<std::uint64_t>(value, key);
            } else if (key == "subset_fraction") {
                c.subset_fraction = parse_number<double>(value, key);
            } else if (key == "clip_norm") {
                c.clip_norm = parse_number<double>(value, key);
            } else if (key == "keep_best") {
                c.keep_best = parse_number<int>(value, key) != 0;
            } else {
                throw ConfigError("unknown train config key '" + key + "'");
            }
        }
        c.validate();
        return c;
    }

    static TrainConfig load(const std::string& path) { return from_key_values(load_key_values(path)); }
};

struct LossPoint {
    std::size_t epoch;  ///< 0 = before any update
    double train_loss;
    double val_loss;

    friend bool operator==(const LossPoint&, const LossPoint&) = default;
};

inline void write_loss_curve_csv(std::ostream& out, const std::vector<LossPoint>& curve) {
    out << "epoch,train_loss,val_loss\n";
    for (const auto& p : curve) {
        std::ostringstream line;
        line.precision(9);
        line << p.epoch << ',' << p.train_loss << ',' << p.val_loss;
        out << line.str() << '\n';
    }
}

template<typename T>
struct TrainResult {
    ParamSet<T> params;
    std::vector<LossPoint> curve;
    std::size_t selected_epoch = 0;
};

/// Deterministic subset of labeled ids (hash order), keeping `fraction` of them.
inline LabelMap subset_labels(const LabelMap& labels, double fraction, std::uint64_t seed) {
    if (fraction >= 1.0) {
        return labels;
    }
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& [id, l] : labels) {
        keyed.emplace_back(derive_seed(seed, id), id);
    }
    std::sort(keyed.begin(), keyed.end());
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keyed.size())));
    LabelMap out;
    for (std::size_t i = 0; i < keep; ++i) {
        out.emplace(keyed[i].second, labels.find(keyed[i].second)->second);
    }
    return out;
}

/// Mean triplet loss with embeddings computed once per distinct image.
template<typename T>
double mean_triplet_loss(const ParamSet<T>& params, const ModelConfig& config, const ImageStore<T>& images,
                         const std::vector<Triplet>& triplets, double margin) {
    if (triplets.empty()) {
        return 0.0;
    }
    std::unordered_map<std::string, Tensor<T>> cache;
    auto embedding_of = [&](const std::string& id) -> const Tensor<T>& {
        auto it = cache.find(id);
        if (it == cache.end()) {
            auto img = images.find(id);
            if (img == images.end()) {
                throw InvalidInput("no image for sample '" + id + "'");
            }
            it = cache.emplace(id, embed(params, config, img->second).embedding).first;
        }
        return it->second;
    };
    double sum = 0.0;
    for (const auto& t : triplets) {
        const auto& a = embedding_of(t.anchor_id);
        const auto& b = embedding_of(t.similar_id);
        const auto& c = embedding_of(t.dissimilar_id);
        sum += static_cast<double>(triplet_loss(a, b, c, static_cast<T>(margin)).loss);
    }
    return sum / static_cast<double>(triplets.size());
}

/**
 * One SGD-momentum update on a mini-batch of triplets.
 *
 * The three branches share one parameter set: every distinct image in the
 * batch is embedded once on its own tape, triplet gradients are summed per
 * image, and each tape is replayed backwards into a single gradient map.
 * Returns the mean batch loss before the update.
 */
template<typename T>
double train_step(ParamSet<T>& params, const ModelConfig& config, const ImageStore<T>& images,
                  std::span<const Triplet> batch, double margin, const LearningRates<T>& lr, T momentum,
                  double clip_norm = 0.0) {
    std::unordered_map<std::string, std::size_t> slot_of;
    std::vector<Tape<T>> tapes;
    std::vector<Var> embeddings;
    std::vector<Tensor<T>> seeds;
    tapes.reserve(batch.size() * 3);
    auto slot = [&](const std::string& id) {
        auto it = slot_of.find(id);
        if (it != slot_of.end()) {
            return it->second;
        }
        auto img = images.find(id);
        if (img == images.end()) {
            throw InvalidInput("no image for sample '" + id + "'");
        }
        check_image(img->second, config);
        auto& tape = tapes.emplace_back(&params);
        const auto vars = forward_on_tape(tape, config, tape.input(img->second));
        embeddings.push_back(vars.embedding);
        seeds.emplace_back(tape.value(vars.embedding).shape());
        slot_of.emplace(id, tapes.size() - 1);
        return tapes.size() - 1;
    };

    const T scale = T{1} / static_cast<T>(batch.size());
    double loss_sum = 0.0;
    std::vector<bool> touched;
    for (const auto& t : batch) {
        const auto sa = slot(t.anchor_id), sb = slot(t.similar_id), sc = slot(t.dissimilar_id);
        touched.resize(tapes.size(), false);
        const auto& fa = tapes[sa].value(embeddings[sa]);
        const auto& fb = tapes[sb].value(embeddings[sb]);
        const auto& fc = tapes[sc].value(embeddings[sc]);
        const auto value = triplet_loss(fa, fb, fc, static_cast<T>(margin));
        loss_sum += static_cast<double>(value.loss);
        if (value.active) {
            auto g = triplet_loss_backward(fa, fb, fc, static_cast<T>(margin));
            seeds[sa].add_scaled(g.anchor, scale);
            seeds[sb].add_scaled(g.similar, scale);
            seeds[sc].add_scaled(g.dissimilar, scale);
            touched[sa] = touched[sb] = touched[sc] = true;
        }
    }
    const double mean_loss = loss_sum / static_cast<double>(batch.size());
    if (!std::isfinite(mean_loss)) {
        return mean_loss;
    }
    auto grads = params.zeros_like();
    for (std::size_t s = 0; s < tapes.size(); ++s) {
        if (touched[s]) {
            tapes[s].backward_into({{embeddings[s], std::move(seeds[s])}}, grads);
        }
    }
    tapes.clear();
    clip_grad_norm(grads, clip_norm);
    sgd_momentum_step(params, grads, lr, momentum);
    return mean_loss;
}

template<typename T>
using EpochCallback = std::function<void(const LossPoint&)>;

/// Mini-batch training over pre-generated triplet lists.
template<typename T>
TrainResult<T> train_on_triplets(const ModelConfig& config, ParamSet<T> params, const ImageStore<T>& images,
                                 std::vector<Triplet> train_triplets, const std::vector<Triplet>& val_triplets,
                                 const TrainConfig& cfg, const EpochCallback<T>& on_epoch = {}) {
    cfg.validate();
    check_params(params, config);
    if (train_triplets.empty()) {
        throw InvalidInput("no training triplets");
    }
    params.reset_velocity();
    TrainResult<T> result;
    auto record = [&](LossPoint p) {
        result.curve.push_back(p);
        if (on_epoch) {
            on_epoch(p);
        }
    };
    record({0, mean_triplet_loss(params, config, images, train_triplets, cfg.margin),
            mean_triplet_loss(params, config, images, val_triplets, cfg.margin)});

    ParamSet<T> best = params;
    double best_val = result.curve.back().val_loss;
    const auto head = head_group(config);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng(derive_seed(cfg.seed, "epoch" + std::to_string(epoch)));
        shuffle(train_triplets, order_rng);
        const double factor = cfg.lr_factor(epoch);
        LearningRates<T> lr{static_cast<T>(cfg.lr * factor), {{head, static_cast<T>(cfg.lr_head * factor)}}};
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train_triplets.size(); start += cfg.batch_size) {
            const auto n = std::min(cfg.batch_size, train_triplets.size() - start);
            double loss = 0.0;
            try {
                loss = train_step(params, config, images, std::span<const Triplet>(train_triplets).subspan(start, n),
                                  cfg.margin, lr, static_cast<T>(cfg.momentum), cfg.clip_norm);
            } catch (const NumericDomainError& e) {
                // Inputs and weights were finite before this run, so overflow here is the run's own doing.
                throw TrainingDiverged("activations overflowed at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batches) + " (" + e.what() + "); try a smaller learning rate");
            }
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batches) + "; try a smaller learning rate");
            }
            for (const auto& [name, t] : params.values()) {
                if (!t.all_finite()) {
                    throw TrainingDiverged("parameter '" + name + "' became non-finite at epoch " +
                                           std::to_string(epoch) + ", batch " + std::to_string(batches));
                }
            }
            loss_sum += loss;
            ++batches;
        }
        double val = 0.0;
        try {
            val = mean_triplet_loss(params, config, images, val_triplets, cfg.margin);
        } catch (const NumericDomainError& e) {
            throw TrainingDiverged("validation activations overflowed at epoch " + std::to_string(epoch) + " (" +
                                   e.what() + ")");
        }
        if (!std::isfinite(val)) {
            throw TrainingDiverged("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        record({epoch, loss_sum / static_cast<double>(batches), val});
        if (!cfg.keep_best || val < best_val) {
            best_val = val;
            best = params;
            result.selected_epoch = epoch;
        }
    }
    result.params = std::move(best);
    return result;
}

/// Samples train/validation triplets for `regime` from `labels`, then trains.
template<typename T>
TrainResult<T> train(const ModelConfig& config, ParamSet<T> params, const ImageStore<T>& images,
                     const LabelMap& labels, const TrainConfig& cfg, Regime regime,
                     const EpochCallback<T>& on_epoch = {}) {
    cfg.validate();
    const auto pool = subset_labels(labels, cfg.subset_fraction, derive_seed(cfg.seed, "subset"));
    auto train_set = sample_triplets(pool, regime, cfg.n_train_triplets, derive_seed(cfg.seed, "train"),
                                     cfg.joint_mix_ratio);
    const auto val_set = sample_triplets(pool, regime, cfg.n_val_triplets, derive_seed(cfg.seed, "val"),
                                         cfg.joint_mix_ratio);
    return train_on_triplets(config, std::move(params), images, std::move(train_set), val_set, cfg, on_epoch);
}

}

#endif
