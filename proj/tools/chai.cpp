// Command-line front end: dataset synthesis, triplet export, training,
// indexing, querying with evidence, and the metric report.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "chai/chai.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

chai::ModelConfig model_config_or_default(const std::string& path) {
    return path.empty() ? chai::ModelConfig::desk_default() : chai::ModelConfig::load(path);
}

chai::TrainConfig train_config_or_default(const std::string& path) {
    return path.empty() ? chai::TrainConfig{} : chai::TrainConfig::load(path);
}

std::vector<std::size_t> parse_ks(const std::string& text) {
    std::vector<std::size_t> ks;
    for (const auto& part : chai::split(text, ',')) {
        ks.push_back(chai::parse_number<std::size_t>(part, "k"));
    }
    return ks;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        chai::write_file(path, text);
    }
}

// Labels for a regime: the hierarchical manifest's training split, plus the
// unconstrained pool for the joint regime.
std::pair<chai::LabelMap, chai::ImageStore<Scalar>> training_data(const chai::DatasetManifest& manifest,
                                                                   const std::string& pool_path, chai::Regime regime,
                                                                   bool want_images) {
    auto labels = manifest.labels(chai::Split::train);
    chai::ImageStore<Scalar> images;
    if (want_images) {
        images = manifest.load_images<Scalar>(chai::Split::train);
    }
    if (regime == chai::Regime::joint && !pool_path.empty()) {
        const auto pool = chai::load_manifest(pool_path);
        for (auto& [id, l] : pool.labels()) {
            labels.emplace(id, l);
        }
        if (want_images) {
            for (auto& [id, img] : pool.load_images<Scalar>()) {
                images.emplace(id, std::move(img));
            }
        }
    }
    return {std::move(labels), std::move(images)};
}

}

int main(int argc, char** argv) {
    CLI::App app{"Evidence-based kNN lesion classification with triplet-trained GAP embeddings"};
    app.require_subcommand(1);

    // synth
    chai::SynthConfig synth;
    std::string synth_out = "data";
    std::string synth_groups = "5,3,4";
    auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic dataset");
    synth_cmd->add_option("--out", synth_out, "Output directory")->capture_default_str();
    synth_cmd->add_option("--train", synth.n_train, "Training images")->capture_default_str();
    synth_cmd->add_option("--test", synth.n_test, "Test images")->capture_default_str();
    synth_cmd->add_option("--pool", synth.n_pool, "Unconstrained-annotation images")->capture_default_str();
    synth_cmd->add_option("--pool-groups", synth.pool_groups, "Groups in the unconstrained set")->capture_default_str();
    synth_cmd->add_option("--groups", synth_groups, "Similarity groups per disease (mel,sk,nevus)")->capture_default_str();
    synth_cmd->add_option("--pool-purity", synth.pool_purity, "Share of a pool group with its dominant disease")->capture_default_str();
    synth_cmd->add_option("--prototypes", synth.style_prototypes, "Lesion looks shared across diseases")->capture_default_str();
    synth_cmd->add_option("--size", synth.image_size, "Image side in pixels")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Master seed")->capture_default_str();

    // triplets
    std::string trip_manifest, trip_pool, trip_regime = "hierarchical", trip_out;
    std::size_t trip_count = 15000;
    std::uint64_t trip_seed = 1;
    double trip_mix = 0.5;
    auto* trip_cmd = app.add_subcommand("triplets", "Sample triplets and write them as CSV");
    trip_cmd->add_option("--manifest", trip_manifest, "Dataset manifest")->required();
    trip_cmd->add_option("--pool-manifest", trip_pool, "Unconstrained annotation manifest (joint regime)");
    trip_cmd->add_option("--regime", trip_regime, "disease|joint|hierarchical|non_hierarchical")->capture_default_str();
    trip_cmd->add_option("--count", trip_count, "Number of triplets")->capture_default_str();
    trip_cmd->add_option("--seed", trip_seed, "Sampler seed")->capture_default_str();
    trip_cmd->add_option("--joint-mix", trip_mix, "Fraction of group-source triplets for joint")->capture_default_str();
    trip_cmd->add_option("--out", trip_out, "Output CSV (default stdout)");

    // train
    std::string tr_manifest, tr_pool, tr_regime = "disease", tr_model_cfg, tr_train_cfg, tr_init, tr_out = "model.weights",
                                      tr_curve, tr_triplets;
    auto* train_cmd = app.add_subcommand("train", "Train an embedding with the triplet objective");
    train_cmd->add_option("--manifest", tr_manifest, "Dataset manifest")->required();
    train_cmd->add_option("--pool-manifest", tr_pool, "Unconstrained annotation manifest (joint regime)");
    train_cmd->add_option("--regime", tr_regime, "disease|joint|hierarchical|non_hierarchical")->capture_default_str();
    train_cmd->add_option("--model-config", tr_model_cfg, "Model config file (default: desk architecture)");
    train_cmd->add_option("--train-config", tr_train_cfg, "Training config file");
    train_cmd->add_option("--init", tr_init, "Start from these weights (fine-tuning stage)");
    train_cmd->add_option("--triplets", tr_triplets, "Train on an exported triplet CSV instead of sampling");
    train_cmd->add_option("--out", tr_out, "Output weights")->capture_default_str();
    train_cmd->add_option("--curve", tr_curve, "Loss curve CSV");

    // index
    std::string ix_manifest, ix_weights, ix_model_cfg, ix_out = "train.index";
    auto* index_cmd = app.add_subcommand("index", "Embed the training split into a search index");
    index_cmd->add_option("--manifest", ix_manifest, "Dataset manifest")->required();
    index_cmd->add_option("--weights", ix_weights, "Model weights")->required();
    index_cmd->add_option("--model-config", ix_model_cfg, "Model config file");
    index_cmd->add_option("--out", ix_out, "Output index")->capture_default_str();

    // query
    std::string q_manifest, q_weights, q_index, q_model_cfg, q_id, q_image, q_evidence_dir;
    std::size_t q_k = 5;
    double q_alpha = 0.5;
    auto* query_cmd = app.add_subcommand("query", "Classify one image and emit its evidence");
    query_cmd->add_option("--manifest", q_manifest, "Dataset manifest (to look up --id)");
    query_cmd->add_option("--weights", q_weights, "Model weights")->required();
    query_cmd->add_option("--index", q_index, "Search index")->required();
    query_cmd->add_option("--model-config", q_model_cfg, "Model config file");
    query_cmd->add_option("--id", q_id, "Query by manifest sample id");
    query_cmd->add_option("--image", q_image, "Query by PPM file");
    query_cmd->add_option("-k", q_k, "Neighbors")->capture_default_str();
    query_cmd->add_option("--evidence-dir", q_evidence_dir, "Write query/result heatmap PPMs here");
    query_cmd->add_option("--alpha", q_alpha, "Heatmap overlay opacity")->capture_default_str();

    // evaluate
    std::string ev_manifest, ev_model_cfg, ev_ks = "3,5,10,20,40", ev_csv, ev_table;
    std::vector<std::string> ev_models;
    chai::EvalOptions ev_options;
    auto* eval_cmd = app.add_subcommand("evaluate", "AUC / REL / JA report over trained models");
    eval_cmd->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--model", ev_models, "name=weights (repeatable)")->required();
    eval_cmd->add_option("--model-config", ev_model_cfg, "Model config file");
    eval_cmd->add_option("--ks", ev_ks, "Comma-separated k values")->capture_default_str();
    eval_cmd->add_option("--tau", ev_options.tau, "QAM binarisation threshold")->capture_default_str();
    eval_cmd->add_flag("--sweep-tau", ev_options.sweep_tau, "Also report the best JA over tau in 0.1..0.9");
    eval_cmd->add_option("--ja-results", ev_options.ja_results, "Top results averaged for JA")->capture_default_str();
    eval_cmd->add_option("--csv", ev_csv, "Report CSV path");
    eval_cmd->add_option("--table", ev_table, "Aligned table path (default stdout)");

    // pipeline
    std::string pl_data = "data", pl_out = "run", pl_model_cfg, pl_base_cfg, pl_ft_cfg;
    bool pl_sweep = false;
    auto* pipe_cmd = app.add_subcommand("pipeline", "Train every regime and write the comparison report");
    pipe_cmd->add_option("--data", pl_data, "Directory produced by 'synth'")->capture_default_str();
    pipe_cmd->add_option("--out", pl_out, "Output directory")->capture_default_str();
    pipe_cmd->add_option("--model-config", pl_model_cfg, "Model config file");
    pipe_cmd->add_option("--train-config", pl_base_cfg, "Config for disease/joint training");
    pipe_cmd->add_option("--finetune-config", pl_ft_cfg, "Config for hierarchical/non-hierarchical fine-tuning");
    pipe_cmd->add_flag("--sweep-tau", pl_sweep, "Also report the best JA over tau");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) {
            const auto groups = parse_ks(synth_groups);
            if (groups.size() != chai::disease_count) {
                throw chai::ConfigError("--groups needs one count per disease");
            }
            std::copy(groups.begin(), groups.end(), synth.groups_per_disease.begin());
            auto ds = chai::generate_synthetic(synth, synth_out);
            std::cout << "wrote " << ds.manifest.records.size() << " samples and " << ds.pool_manifest.records.size()
                      << " pool samples to " << synth_out << '\n';
        } else if (*trip_cmd) {
            const auto regime = chai::parse_regime(trip_regime);
            const auto manifest = chai::load_manifest(trip_manifest);
            auto [labels, images] = training_data(manifest, trip_pool, regime, false);
            const auto triplets = chai::sample_triplets(labels, regime, trip_count, trip_seed, trip_mix);
            write_text(trip_out, chai::triplets_to_csv(triplets));
        } else if (*train_cmd) {
            const auto regime = chai::parse_regime(tr_regime);
            const auto config = model_config_or_default(tr_model_cfg);
            const auto tc = train_config_or_default(tr_train_cfg);
            const auto manifest = chai::load_manifest(tr_manifest);
            auto [labels, images] = training_data(manifest, tr_pool, regime, true);
            auto init = tr_init.empty() ? chai::init_model<Scalar>(config) : chai::load_weights<Scalar>(tr_init, config);
            auto report = [](const chai::LossPoint& p) {
                std::cout << "epoch " << p.epoch << " train " << p.train_loss << " val " << p.val_loss << std::endl;
            };
            chai::TrainResult<Scalar> result;
            if (!tr_triplets.empty()) {
                std::ifstream in(tr_triplets);
                if (!in) {
                    throw chai::IoError("cannot open " + tr_triplets);
                }
                auto triplets = chai::read_triplets_csv(in);
                for (const auto& t : triplets) {
                    for (const auto* id : {&t.anchor_id, &t.similar_id, &t.dissimilar_id}) {
                        if (!images.count(*id)) {
                            throw chai::InvalidInput("triplet references unknown sample '" + *id + "'");
                        }
                    }
                }
                const std::size_t n_val = std::min(triplets.size() / 4, tc.n_val_triplets);
                std::vector<chai::Triplet> val(triplets.end() - static_cast<std::ptrdiff_t>(n_val), triplets.end());
                triplets.resize(triplets.size() - n_val);
                result = chai::train_on_triplets(config, std::move(init), images, std::move(triplets), val, tc, report);
            } else {
                result = chai::train(config, std::move(init), images, labels, tc, regime, report);
            }
            chai::save_weights(result.params, tr_out);
            if (!tr_curve.empty()) {
                std::ostringstream curve;
                chai::write_loss_curve_csv(curve, result.curve);
                chai::write_file(tr_curve, curve.str());
            }
        } else if (*index_cmd) {
            const auto config = model_config_or_default(ix_model_cfg);
            const auto params = chai::load_weights<Scalar>(ix_weights, config);
            const auto manifest = chai::load_manifest(ix_manifest);
            const auto index = chai::build_index(params, config, manifest.load_images<Scalar>(chai::Split::train),
                                                 manifest.labels(chai::Split::train));
            chai::save_index(index, ix_out);
            std::cout << "indexed " << index.size() << " samples (d=" << index.dim() << ")\n";
        } else if (*query_cmd) {
            const auto config = model_config_or_default(q_model_cfg);
            const auto params = chai::load_weights<Scalar>(q_weights, config);
            const auto index = chai::load_index<Scalar>(q_index);
            chai::RgbImage query_rgb;
            std::string query_id;
            std::optional<chai::DatasetManifest> manifest;
            if (!q_manifest.empty()) {
                manifest = chai::load_manifest(q_manifest);
            }
            if (!q_id.empty()) {
                if (!manifest) {
                    throw chai::ConfigError("--id requires --manifest");
                }
                const auto* rec = manifest->find(q_id);
                if (rec == nullptr) {
                    throw chai::InvalidInput("unknown sample id '" + q_id + "'");
                }
                query_rgb = chai::read_ppm(manifest->resolve(rec->image_path));
                query_id = q_id;
            } else if (!q_image.empty()) {
                query_rgb = chai::read_ppm(q_image);
                query_id = fs::path(q_image).stem().string();
            } else {
                throw chai::ConfigError("give --id or --image");
            }
            const auto q = chai::embed(params, config, chai::image_to_tensor<Scalar>(query_rgb), query_id);
            const auto neighbors = index.knn_query(q.embedding, q_k, query_id);
            std::cout << "melanoma_score " << chai::melanoma_score(neighbors, index) << '\n';
            std::cout << "rank,id,distance,disease,group\n";
            for (std::size_t r = 0; r < neighbors.size(); ++r) {
                const auto& rec = index.record(neighbors[r].index);
                std::cout << r + 1 << ',' << neighbors[r].id << ',' << neighbors[r].distance << ','
                          << (rec.label.disease ? chai::disease_name(*rec.label.disease) : "") << ',' << rec.label.group
                          << '\n';
                if (!q_evidence_dir.empty() && manifest) {
                    const auto* rrec = manifest->find(neighbors[r].id);
                    if (rrec == nullptr) {
                        continue;
                    }
                    fs::create_directories(q_evidence_dir);
                    const auto result_rgb = chai::read_ppm(manifest->resolve(rrec->image_path));
                    const auto res = chai::embed(params, config, chai::image_to_tensor<Scalar>(result_rgb), rrec->id);
                    const auto pair = chai::activation_pair(q, res);
                    const auto stem = (fs::path(q_evidence_dir) / ("rank" + std::to_string(r + 1))).string();
                    chai::write_ppm(stem + "_qam.ppm",
                                    chai::render_heatmap(chai::upsample_map(pair.qam, query_rgb.height, query_rgb.width),
                                                         query_rgb, q_alpha));
                    chai::write_ppm(stem + "_ram.ppm",
                                    chai::render_heatmap(chai::upsample_map(pair.ram, result_rgb.height, result_rgb.width),
                                                         result_rgb, q_alpha));
                }
            }
        } else if (*eval_cmd) {
            const auto config = model_config_or_default(ev_model_cfg);
            const auto manifest = chai::load_manifest(ev_manifest);
            ev_options.ks = parse_ks(ev_ks);
            std::vector<std::pair<std::string, chai::ParamSet<Scalar>>> loaded;
            for (const auto& spec : ev_models) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos) {
                    throw chai::ConfigError("--model expects name=weights, got '" + spec + "'");
                }
                loaded.emplace_back(spec.substr(0, eq), chai::load_weights<Scalar>(spec.substr(eq + 1), config));
            }
            std::vector<chai::ModelUnderTest<Scalar>> models;
            for (const auto& [name, params] : loaded) {
                models.push_back({name, &params});
            }
            const auto report = chai::evaluate(models, config, chai::load_eval_split<Scalar>(manifest, chai::Split::train),
                                               chai::load_eval_split<Scalar>(manifest, chai::Split::test), ev_options);
            if (!ev_csv.empty()) {
                chai::write_file(ev_csv, report.to_csv());
            }
            write_text(ev_table, report.to_table());
        } else if (*pipe_cmd) {
            auto cfg = chai::PipelineConfig::desk_default();
            if (!pl_model_cfg.empty()) {
                cfg.model = chai::ModelConfig::load(pl_model_cfg);
            }
            if (!pl_base_cfg.empty()) {
                cfg.base = chai::TrainConfig::load(pl_base_cfg);
            }
            if (!pl_ft_cfg.empty()) {
                cfg.finetune = chai::TrainConfig::load(pl_ft_cfg);
            }
            cfg.eval.sweep_tau = pl_sweep;
            const auto manifest = chai::load_manifest((fs::path(pl_data) / "manifest.csv").string());
            std::optional<chai::DatasetManifest> pool;
            if (fs::exists(fs::path(pl_data) / "pool_manifest.csv")) {
                pool = chai::load_manifest((fs::path(pl_data) / "pool_manifest.csv").string());
                if (pool->records.empty()) {
                    pool.reset();
                }
            }
            const auto start = std::chrono::steady_clock::now();
            auto result = chai::run_pipeline<Scalar>(manifest, pool ? &*pool : nullptr, cfg, [&](const std::string& s) {
                const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                std::cout << "[" << static_cast<long>(secs) << "s] " << s << std::endl;
            });
            fs::create_directories(pl_out);
            for (const auto& [name, params] : result.models) {
                chai::save_weights(params, (fs::path(pl_out) / (name + ".weights")).string());
            }
            for (const auto& [name, curve] : result.curves) {
                std::ostringstream out;
                chai::write_loss_curve_csv(out, curve);
                chai::write_file((fs::path(pl_out) / (name + "_loss.csv")).string(), out.str());
            }
            chai::write_file((fs::path(pl_out) / "model.cfg").string(), cfg.model.to_text());
            chai::write_file((fs::path(pl_out) / "report.csv").string(), result.report.to_csv());
            chai::write_file((fs::path(pl_out) / "report.txt").string(), result.report.to_table());
            std::cout << result.report.to_table();
        }
    } catch (const chai::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
