#ifndef CHAI_EVAL_HPP
#define CHAI_EVAL_HPP

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evidence.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "retrieval.hpp"

namespace chai {

/// Images, labels and optional ground-truth masks of one split.
template<typename T>
struct EvalSplit {
    ImageStore<T> images;
    LabelMap labels;
    std::map<std::string, BinaryMask, std::less<>> masks;
};

struct EvalOptions {
    std::vector<std::size_t> ks{3, 5, 10, 20, 40};
    double tau = 0.5;
    bool sweep_tau = false;
    /// Number of top results whose QAMs are scored per query (1 = rank-1 only).
    std::size_t ja_results = 1;
};

struct RegimeMetrics {
    std::string regime;
    std::map<std::size_t, double> auc;
    std::map<std::size_t, double> rel;
    double ja = 0.0;
    /// Filled when sweeping tau: best mean JA and the tau achieving it.
    std::optional<std::pair<double, double>> best_ja;
};

struct EvalReport {
    std::vector<std::size_t> ks;
    std::vector<RegimeMetrics> regimes;
    std::vector<std::pair<std::string, std::string>> metadata;

    const RegimeMetrics& at(std::string_view regime) const {
        for (const auto& r : regimes) {
            if (r.regime == regime) {
                return r;
            }
        }
        throw InvalidInput("report has no regime '" + std::string(regime) + "'");
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "regime,k,auc,rel,ja\n";
        char buf[160];
        for (const auto& r : regimes) {
            for (auto k : ks) {
                std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f\n", r.regime.c_str(), k, r.auc.at(k), r.rel.at(k), r.ja);
                out << buf;
            }
        }
        return out.str();
    }

    /// Metrics as rows, regimes as columns.
    std::string to_table() const {
        std::ostringstream out;
        for (const auto& [key, value] : metadata) {
            out << "# " << key << ": " << value << '\n';
        }
        char buf[64];
        auto row = [&](const std::string& name, auto value_of) {
            std::snprintf(buf, sizeof buf, "%-8s", name.c_str());
            out << buf;
            for (const auto& r : regimes) {
                std::snprintf(buf, sizeof buf, " %17s", value_of(r).c_str());
                out << buf;
            }
            out << '\n';
        };
        auto fmt = [](double v) {
            char b[32];
            std::snprintf(b, sizeof b, "%.3f", v);
            return std::string(b);
        };
        row("", [](const RegimeMetrics& r) { return r.regime; });
        for (auto k : ks) {
            row("AUC k" + std::to_string(k), [&](const RegimeMetrics& r) { return fmt(r.auc.at(k)); });
        }
        for (auto k : ks) {
            row("REL k" + std::to_string(k), [&](const RegimeMetrics& r) { return fmt(r.rel.at(k)); });
        }
        row("JA", [&](const RegimeMetrics& r) { return fmt(r.ja); });
        if (!regimes.empty() && regimes.front().best_ja) {
            row("JA best", [&](const RegimeMetrics& r) { return fmt(r.best_ja->first); });
            row("tau", [&](const RegimeMetrics& r) { return fmt(r.best_ja->second); });
        }
        return out.str();
    }
};

template<typename T>
EmbeddingIndex<T> build_index(const ParamSet<T>& params, const ModelConfig& config, const ImageStore<T>& images,
                              const LabelMap& labels) {
    EmbeddingIndex<T> index(config.embed_dim);
    for (const auto& [id, label] : labels) {
        auto img = images.find(id);
        if (img == images.end()) {
            throw InvalidInput("no image for labeled sample '" + id + "'");
        }
        index.add(id, label, embed(params, config, img->second).embedding);
    }
    return index;
}

template<typename T>
struct ModelUnderTest {
    std::string name;
    const ParamSet<T>* params;
};

/// Taus tried by the sweep mode.
inline std::vector<double> tau_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

/**
 * Metric suite per model: AUC of the neighbor-vote melanoma score, mean REL
 * for each k, and mean Jaccard between binarised query activation maps and
 * the query's ground-truth mask. The index is built from `train`, queries
 * come from `test`.
 */
template<typename T>
RegimeMetrics evaluate_model(const std::string& name, const ParamSet<T>& params, const ModelConfig& config,
                             const EvalSplit<T>& train, const EvalSplit<T>& test, const EvalOptions& options) {
    const auto index = build_index(params, config, train.images, train.labels);
    std::size_t kmax = options.ja_results;
    for (auto k : options.ks) {
        kmax = std::max(kmax, k);
    }
    std::map<std::size_t, std::vector<ScoredLabel>> scores;
    std::map<std::size_t, double> rel_sum;
    const auto taus = options.sweep_tau ? tau_grid() : std::vector<double>{};
    double ja_sum = 0.0;
    std::vector<double> ja_sweep(taus.size(), 0.0);
    std::size_t ja_count = 0;

    for (const auto& [id, label] : test.labels) {
        auto img = test.images.find(id);
        if (img == test.images.end()) {
            throw InvalidInput("no image for test sample '" + id + "'");
        }
        if (!label.disease) {
            throw InvalidInput("test sample '" + id + "' has no disease label");
        }
        const auto q = embed(params, config, img->second, id);
        const auto neighbors = index.knn_query(q.embedding, kmax, id);
        for (auto k : options.ks) {
            const auto top = neighbors.prefix(k);
            scores[k].push_back({melanoma_score(top, index), *label.disease == positive_disease});
            rel_sum[k] += static_cast<double>(rel_at_k(label, top, train.labels));
        }
        auto mask = test.masks.find(id);
        if (mask == test.masks.end()) {
            continue;
        }
        for (std::size_t r = 0; r < options.ja_results; ++r) {
            const auto pos = *index.find(neighbors[r].id);
            Tensor<T> result(Shape{index.dim()}, std::vector<T>(index.embedding(pos).begin(), index.embedding(pos).end()));
            const auto qam = upsample_map(query_activation_map(q, result), mask->second.height, mask->second.width);
            ja_sum += jaccard(binarize_map(qam, options.tau), mask->second);
            for (std::size_t t = 0; t < taus.size(); ++t) {
                ja_sweep[t] += jaccard(binarize_map(qam, taus[t]), mask->second);
            }
            ++ja_count;
        }
    }

    RegimeMetrics m;
    m.regime = name;
    const double n = static_cast<double>(test.labels.size());
    for (auto k : options.ks) {
        m.auc[k] = auc(scores[k]);
        m.rel[k] = rel_sum[k] / n;
    }
    if (ja_count > 0) {
        m.ja = ja_sum / static_cast<double>(ja_count);
        if (!taus.empty()) {
            std::size_t best = 0;
            for (std::size_t t = 1; t < taus.size(); ++t) {
                if (ja_sweep[t] > ja_sweep[best]) {
                    best = t;
                }
            }
            m.best_ja = std::make_pair(ja_sweep[best] / static_cast<double>(ja_count), taus[best]);
        }
    }
    return m;
}

template<typename T>
EvalReport evaluate(const std::vector<ModelUnderTest<T>>& models, const ModelConfig& config, const EvalSplit<T>& train,
                    const EvalSplit<T>& test, const EvalOptions& options = {}) {
    for (const auto& [id, label] : test.labels) {
        if (train.labels.count(id)) {
            throw ConfigError("sample '" + id + "' appears in both the index and the test split");
        }
    }
    if (options.ks.empty() || options.ja_results == 0) {
        throw ConfigError("evaluation needs at least one k and one JA result");
    }
    EvalReport report;
    report.ks = options.ks;
    for (const auto& m : models) {
        report.regimes.push_back(evaluate_model(m.name, *m.params, config, train, test, options));
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.to_text())));
    report.metadata.emplace_back("model_config_hash", buf);
    report.metadata.emplace_back("index_size", std::to_string(train.labels.size()));
    report.metadata.emplace_back("test_size", std::to_string(test.labels.size()));
    report.metadata.emplace_back("tau", std::to_string(options.tau));
    return report;
}

}

#endif
