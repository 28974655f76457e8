#ifndef CHAI_PIPELINE_HPP
#define CHAI_PIPELINE_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eval.hpp"
#include "manifest.hpp"
#include "train.hpp"

namespace chai {

/**
 * The full comparison: an untrained reference, a disease-label model, a
 * joint model (disease labels mixed with unconstrained similarity groups),
 * and hierarchical / non-hierarchical models fine-tuned from the disease
 * model on a subset of the hierarchically annotated training images.
 */
struct PipelineConfig {
    ModelConfig model = ModelConfig::desk_default();
    TrainConfig base;      ///< disease and joint training from scratch
    TrainConfig finetune;  ///< hierarchical / non-hierarchical stages
    EvalOptions eval;

    static PipelineConfig desk_default() {
        PipelineConfig c;
        c.base.batch_size = 32;
        c.base.lr = c.base.lr_head = 0.05;
        c.base.clip_norm = 1.0;
        c.base.epochs = 7;
        c.base.lr_step_epochs = 5;
        c.finetune = c.base;
        c.finetune.lr = c.finetune.lr_head = 0.005;
        c.finetune.epochs = 3;
        c.finetune.lr_step_epochs = 2;
        c.finetune.subset_fraction = 0.5;
        return c;
    }
};

template<typename T>
struct PipelineResult {
    std::map<std::string, ParamSet<T>> models;
    std::map<std::string, std::vector<LossPoint>> curves;
    EvalReport report;
};

inline const std::vector<std::string>& pipeline_regimes() {
    static const std::vector<std::string> names{"untrained", "disease", "joint", "non_hierarchical", "hierarchical"};
    return names;
}

template<typename T>
EvalSplit<T> load_eval_split(const DatasetManifest& manifest, Split split) {
    EvalSplit<T> out;
    out.images = manifest.load_images<T>(split);
    out.labels = manifest.labels(split);
    for (const auto* r : manifest.in_split(split)) {
        if (!r->mask_path.empty()) {
            out.masks.emplace(r->id, load_mask(manifest.resolve(r->mask_path)));
        }
    }
    return out;
}

using PipelineLog = std::function<void(const std::string&)>;

template<typename T>
PipelineResult<T> run_pipeline(const DatasetManifest& manifest, const DatasetManifest* pool, const PipelineConfig& cfg,
                               const PipelineLog& log = {}) {
    auto say = [&](const std::string& s) {
        if (log) {
            log(s);
        }
    };
    const auto train_split = load_eval_split<T>(manifest, Split::train);
    const auto test_split = load_eval_split<T>(manifest, Split::test);

    ImageStore<T> joint_images = train_split.images;
    LabelMap joint_labels = train_split.labels;
    if (pool != nullptr) {
        for (auto& [id, img] : pool->load_images<T>()) {
            joint_images.emplace(id, std::move(img));
        }
        for (auto& [id, l] : pool->labels()) {
            if (!joint_labels.emplace(id, l).second) {
                throw DuplicateIdError("pool sample '" + id + "' collides with a training id");
            }
        }
    }

    PipelineResult<T> result;
    auto untrained = init_model<T>(cfg.model);
    result.models.emplace("untrained", untrained);

    auto stage = [&](const std::string& name, const ParamSet<T>& init, const ImageStore<T>& images,
                     const LabelMap& labels, const TrainConfig& tc, Regime regime) {
        say("training " + name);
        auto trained = train(cfg.model, init, images, labels, tc, regime, [&](const LossPoint& p) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "  %s epoch %zu train %.4f val %.4f", name.c_str(), p.epoch, p.train_loss,
                          p.val_loss);
            say(buf);
        });
        result.curves[name] = trained.curve;
        result.models.emplace(name, std::move(trained.params));
    };

    stage("disease", untrained, train_split.images, train_split.labels, cfg.base, Regime::disease);
    if (pool != nullptr) {
        stage("joint", untrained, joint_images, joint_labels, cfg.base, Regime::joint);
    }
    const auto& disease_model = result.models.at("disease");
    stage("non_hierarchical", disease_model, train_split.images, train_split.labels, cfg.finetune,
          Regime::non_hierarchical);
    stage("hierarchical", disease_model, train_split.images, train_split.labels, cfg.finetune, Regime::hierarchical);

    say("evaluating");
    std::vector<ModelUnderTest<T>> models;
    for (const auto& name : pipeline_regimes()) {
        auto it = result.models.find(name);
        if (it != result.models.end()) {
            models.push_back({name, &it->second});
        }
    }
    result.report = evaluate(models, cfg.model, train_split, test_split, cfg.eval);
    return result;
}

}

#endif
