#ifndef CHAI_SERVICE_HPP
#define CHAI_SERVICE_HPP

#include <chrono>
#include <ctime>
#include <list>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"

#include "chai.hpp"

namespace chai {

/// Least-recently-used map whose entries also expire `ttl` after insertion.
template<typename K, typename V>
class LruCache {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    LruCache(std::size_t capacity, std::chrono::steady_clock::duration ttl, Clock clock = {})
        : capacity_(capacity), ttl_(ttl), clock_(clock ? std::move(clock) : [] { return std::chrono::steady_clock::now(); }) {
        if (capacity_ == 0) {
            throw InvalidInput("cache capacity must be positive");
        }
    }

    void put(const K& key, V value) {
        std::lock_guard lock(mutex_);
        if (auto it = map_.find(key); it != map_.end()) {
            order_.erase(it->second);
            map_.erase(it);
        }
        order_.push_front({key, std::move(value), clock_() + ttl_});
        map_[key] = order_.begin();
        while (order_.size() > capacity_) {
            map_.erase(order_.back().key);
            order_.pop_back();
        }
    }

    std::optional<V> get(const K& key) {
        std::lock_guard lock(mutex_);
        auto it = map_.find(key);
        if (it == map_.end()) {
            return std::nullopt;
        }
        if (clock_() >= it->second->expires) {
            order_.erase(it->second);
            map_.erase(it);
            return std::nullopt;
        }
        order_.splice(order_.begin(), order_, it->second);
        return it->second->value;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return order_.size();
    }

private:
    struct Entry {
        K key;
        V value;
        std::chrono::steady_clock::time_point expires;
    };
    std::size_t capacity_;
    std::chrono::steady_clock::duration ttl_;
    Clock clock_;
    mutable std::mutex mutex_;
    std::list<Entry> order_;
    std::unordered_map<K, typename std::list<Entry>::iterator> map_;
};

inline constexpr std::string_view feedback_csv_header = "timestamp,session,query_id,result_id,verdict";

struct FeedbackEvent {
    std::string timestamp;
    std::string session;
    std::string query_id;
    std::string result_id;
    std::string verdict;  ///< relevant | irrelevant
};

struct ServiceOptions {
    std::string annotations_path;  ///< empty keeps annotations in memory only
    std::string feedback_path;
    std::size_t cache_capacity = 256;
    std::chrono::steady_clock::duration cache_ttl = std::chrono::minutes(15);
    std::size_t max_upload_bytes = 4u << 20;
    std::size_t default_k = 10;
    double heatmap_alpha = 0.5;
    LruCache<std::string, int>::Clock clock;
    std::function<std::string()> timestamp;  ///< defaults to UTC ISO-8601 now
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/**
 * HTTP backend: dataset browsing, query with evidence, group annotation,
 * relevance feedback and triplet export. Model and index are immutable
 * after construction; annotation and feedback writes are serialized.
 */
class Service {
public:
    using json = nlohmann::json;

    Service(ModelConfig config, ParamSet<float> params, EmbeddingIndex<float> index, DatasetManifest manifest,
            ServiceOptions options = {})
        : config_(std::move(config)),
          params_(std::move(params)),
          index_(std::move(index)),
          manifest_(std::move(manifest)),
          options_(std::move(options)),
          by_id_(index_records(manifest_)),
          cache_(options_.cache_capacity, options_.cache_ttl, options_.clock),
          annotations_([this](const std::string& id) { return disease_lookup(id); }, options_.annotations_path) {
        config_.validate();
        check_params(params_, config_);
        if (index_.dim() != config_.embed_dim) {
            throw ConfigError("index dimension " + std::to_string(index_.dim()) + " does not match the model (" +
                              std::to_string(config_.embed_dim) + ")");
        }
        if (!options_.timestamp) {
            options_.timestamp = utc_timestamp;
        }
        load_feedback();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void mount(httplib::Server& server) {
        server.set_payload_max_length(options_.max_upload_bytes + 1024);
        server.Get("/api/samples", [this](const auto& req, auto& res) { guard(res, [&] { samples(req, res); }); });
        server.Get(R"(/api/image/([^/]+))", [this](const auto& req, auto& res) { guard(res, [&] { image(req, res); }); });
        server.Post("/api/query", [this](const auto& req, auto& res) { guard(res, [&] { query(req, res); }); });
        server.Get(R"(/api/evidence/([^/]+)/([^/]+))",
                   [this](const auto& req, auto& res) { guard(res, [&] { evidence(req, res); }); });
        server.Get("/api/groups", [this](const auto&, auto& res) { guard(res, [&] { get_groups(res); }); });
        server.Post("/api/groups", [this](const auto& req, auto& res) { guard(res, [&] { post_groups(req, res); }); });
        server.Post("/api/feedback", [this](const auto& req, auto& res) { guard(res, [&] { post_feedback(req, res); }); });
        server.Get("/api/feedback/export", [this](const auto&, auto& res) { guard(res, [&] { export_feedback(res); }); });
        server.Post("/api/triplets/export",
                    [this](const auto& req, auto& res) { guard(res, [&] { export_triplets(req, res); }); });
    }

    /// GET /api/groups body, also used to compare state across restarts.
    std::string groups_json() const {
        std::shared_lock lock(annotations_mutex_);
        json sets = json::array();
        for (const auto& [name, s] : annotations_.sets()) {
            sets.push_back(set_json(name, s));
        }
        return json{{"sets", sets}}.dump();
    }

private:
    struct HttpError {
        int status;
        std::string message;
    };

    struct CachedQuery {
        std::string query_id;
        EmbeddingOutput<float> output;
        RgbImage image;
    };

    template<typename F>
    static void guard(httplib::Response& res, F&& body) {
        auto fail = [&](int status, const std::string& message) {
            res.status = status;
            res.set_content(json{{"code", status}, {"message", message}}.dump(), "application/json");
        };
        try {
            body();
        } catch (const HttpError& e) {
            fail(e.status, e.message);
        } catch (const AnnotationError& e) {
            fail(e.status(), e.what());
        } catch (const json::exception& e) {
            fail(400, std::string("malformed JSON: ") + e.what());
        } catch (const DatasetStructureError& e) {
            fail(422, e.what());
        } catch (const Error& e) {
            fail(400, e.what());
        } catch (const std::exception& e) {
            fail(500, e.what());
        }
    }

    static std::map<std::string, const ManifestRecord*, std::less<>> index_records(const DatasetManifest& m) {
        std::map<std::string, const ManifestRecord*, std::less<>> out;
        for (const auto& r : m.records) {
            out.emplace(r.id, &r);
        }
        return out;
    }

    std::optional<std::optional<Disease>> disease_lookup(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) {
            return std::nullopt;
        }
        return it->second->disease;
    }

    const ManifestRecord& record(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) {
            throw HttpError{404, "unknown sample '" + id + "'"};
        }
        return *it->second;
    }

    static std::size_t query_number(const httplib::Request& req, const char* key, std::size_t fallback) {
        if (!req.has_param(key)) {
            return fallback;
        }
        try {
            return parse_number<std::size_t>(req.get_param_value(key), key);
        } catch (const ConfigError& e) {
            throw HttpError{400, e.what()};
        }
    }

    static json label_json(const std::optional<Disease>& d) {
        return d ? json(std::string(disease_name(*d))) : json(nullptr);
    }

    void samples(const httplib::Request& req, httplib::Response& res) const {
        std::optional<Split> split;
        if (req.has_param("split") && !req.get_param_value("split").empty()) {
            split = try_parse_split(req.get_param_value("split"));
            if (!split) {
                throw HttpError{400, "split must be train or test"};
            }
        }
        const auto disease = req.has_param("disease") ? req.get_param_value("disease") : std::string{};
        const auto offset = query_number(req, "offset", 0);
        const auto limit = query_number(req, "limit", 50);
        if (limit > 1000) {
            throw HttpError{400, "limit must be at most 1000"};
        }
        std::vector<const ManifestRecord*> hits;
        for (const auto& [id, r] : by_id_) {
            if (split && r->split != *split) {
                continue;
            }
            if (!disease.empty() && (!r->disease || disease_name(*r->disease) != disease)) {
                continue;
            }
            hits.push_back(r);
        }
        json items = json::array();
        for (std::size_t i = offset; i < hits.size() && i < offset + limit; ++i) {
            const auto& r = *hits[i];
            items.push_back({{"id", r.id},
                             {"disease", label_json(r.disease)},
                             {"group", r.group},
                             {"split", split_name(r.split)},
                             {"has_mask", !r.mask_path.empty()},
                             {"thumbnail", "/api/image/" + r.id + "?kind=raw"}});
        }
        res.set_content(json{{"total", hits.size()}, {"offset", offset}, {"limit", limit}, {"items", items}}.dump(),
                        "application/json");
    }

    void image(const httplib::Request& req, httplib::Response& res) const {
        const auto& r = record(req.matches[1]);
        const auto kind = req.has_param("kind") ? req.get_param_value("kind") : std::string("raw");
        if (kind == "raw") {
            res.set_content(encode_bmp(read_ppm(manifest_.resolve(r.image_path))), "image/bmp");
        } else if (kind == "mask") {
            if (r.mask_path.empty()) {
                throw HttpError{404, "sample '" + r.id + "' has no mask"};
            }
            res.set_content(encode_bmp(rgb_from_gray(read_pgm(manifest_.resolve(r.mask_path)))), "image/bmp");
        } else {
            throw HttpError{400, "kind must be raw or mask"};
        }
    }

    std::string handle_of(const Tensor<float>& t) const {
        std::string bytes(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(bytes, fnv1a64(config_.to_text()))));
        return buf;
    }

    void query(const httplib::Request& req, httplib::Response& res) {
        if (req.body.size() > options_.max_upload_bytes) {
            throw HttpError{413, "upload exceeds " + std::to_string(options_.max_upload_bytes) + " bytes"};
        }
        RgbImage img;
        std::string query_id;
        std::size_t k = options_.default_k;
        const auto type = req.get_header_value("Content-Type");
        if (type.rfind("image/x-portable-pixmap", 0) == 0) {
            try {
                img = decode_ppm(req.body);
            } catch (const Error& e) {
                throw HttpError{400, std::string("cannot decode upload: ") + e.what()};
            }
            k = query_number(req, "k", k);
        } else {
            const auto body = json::parse(req.body);
            if (!body.is_object() || !body.contains("sample_id")) {
                throw HttpError{400, "expected {\"sample_id\": ..., \"k\": ...} or a PPM upload"};
            }
            query_id = body.at("sample_id").get<std::string>();
            if (body.contains("k")) {
                const auto& kv = body.at("k");
                if (!kv.is_number_unsigned()) {
                    throw HttpError{400, "k must be a positive integer"};
                }
                k = kv.get<std::size_t>();
            }
            img = read_ppm(manifest_.resolve(record(query_id).image_path));
        }
        if (img.width != config_.input_size || img.height != config_.input_size) {
            throw HttpError{422, "image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                     ", model expects " + std::to_string(config_.input_size) + "x" +
                                     std::to_string(config_.input_size)};
        }
        if (k == 0 || k > index_.size()) {
            throw HttpError{400, "k must lie in [1, " + std::to_string(index_.size()) + "]"};
        }
        const auto tensor = image_to_tensor<float>(img);
        const auto handle = handle_of(tensor);
        if (query_id.empty()) {
            query_id = "upload:" + handle;
        }
        auto output = embed(params_, config_, tensor, query_id);
        const auto neighbors = index_.knn_query(output.embedding.data(), k, query_id);
        json items = json::array();
        json links = json::array();
        for (std::size_t i = 0; i < neighbors.size(); ++i) {
            const auto& n = neighbors[i];
            const auto& l = index_.record(n.index).label;
            items.push_back({{"rank", i + 1},
                             {"id", n.id},
                             {"distance", n.distance},
                             {"disease", label_json(l.disease)},
                             {"group", l.group}});
            links.push_back("/api/evidence/" + handle + "/" + n.id);
        }
        const double score = melanoma_score(neighbors, index_);
        cache_.put(handle, CachedQuery{query_id, std::move(output), std::move(img)});
        res.set_content(json{{"handle", handle},
                             {"query_id", query_id},
                             {"k", k},
                             {"melanoma_score", score},
                             {"neighbors", items},
                             {"evidence", links}}
                            .dump(),
                        "application/json");
    }

    std::string heatmap_bmp(const Tensor<float>& map, const RgbImage& base, double alpha) const {
        return encode_bmp(render_heatmap(upsample_map(map, base.height, base.width), base, alpha));
    }

    void evidence(const httplib::Request& req, httplib::Response& res) {
        const std::string handle = req.matches[1];
        const std::string result_id = req.matches[2];
        auto cached = cache_.get(handle);
        if (!cached) {
            throw HttpError{404, "query handle '" + handle + "' is unknown or expired"};
        }
        if (!index_.find(result_id)) {
            throw HttpError{404, "result '" + result_id + "' is not in the index"};
        }
        double alpha = options_.heatmap_alpha;
        if (req.has_param("alpha")) {
            try {
                alpha = parse_number<double>(req.get_param_value("alpha"), "alpha");
            } catch (const ConfigError& e) {
                throw HttpError{400, e.what()};
            }
            if (!(alpha >= 0.0 && alpha <= 1.0)) {
                throw HttpError{400, "alpha must lie in [0, 1]"};
            }
        }
        const auto result_image = read_ppm(manifest_.resolve(record(result_id).image_path));
        const auto result = embed(params_, config_, image_to_tensor<float>(result_image), result_id);
        const auto pair = activation_pair(cached->output, result);
        std::vector<std::size_t> order(pair.weights.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pair.weights[a] > pair.weights[b]; });
        json top = json::array();
        for (std::size_t i = 0; i < std::min<std::size_t>(8, order.size()); ++i) {
            top.push_back({{"channel", order[i]}, {"weight", pair.weights[order[i]]}});
        }
        const double distance = squared_distance(cached->output.embedding, result.embedding);
        res.set_content(json{{"query_id", cached->query_id},
                             {"result_id", result_id},
                             {"distance", distance},
                             {"weight_top_channels", top},
                             {"qam_heatmap", httplib::detail::base64_encode(heatmap_bmp(pair.qam, cached->image, alpha))},
                             {"ram_heatmap", httplib::detail::base64_encode(heatmap_bmp(pair.ram, result_image, alpha))}}
                            .dump(),
                        "application/json");
    }

    static json set_json(const std::string& name, const AnnotationSet& s) {
        json groups = json::array();
        for (const auto& [g, group] : s.groups) {
            groups.push_back({{"name", g}, {"disease", label_json(group.disease)}, {"members", group.members}});
        }
        return {{"name", name}, {"mode", s.unconstrained ? "unconstrained" : "hierarchical"}, {"groups", groups}};
    }

    void get_groups(httplib::Response& res) const { res.set_content(groups_json(), "application/json"); }

    void post_groups(const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        auto text = [&](const char* key, std::string fallback = {}) {
            return body.contains(key) ? body.at(key).get<std::string>() : fallback;
        };
        AnnotationEvent e;
        const auto op = try_parse_op(text("action"));
        if (!op) {
            throw HttpError{400, "action must be create, assign or unassign"};
        }
        e.op = *op;
        e.set = text("set", "default");
        const auto mode = text("mode", "hierarchical");
        if (mode != "hierarchical" && mode != "unconstrained") {
            throw HttpError{400, "mode must be hierarchical or unconstrained"};
        }
        e.unconstrained = mode == "unconstrained";
        e.group = text("group");
        if (const auto d = text("disease"); !d.empty()) {
            e.disease = try_parse_disease(d);
            if (!e.disease) {
                throw HttpError{400, "unknown disease '" + d + "'"};
            }
        }
        e.image = text("image");
        std::unique_lock lock(annotations_mutex_);
        annotations_.apply(e);
        res.set_content(set_json(e.set, annotations_.set(e.set)).dump(), "application/json");
    }

    static std::string feedback_line(const FeedbackEvent& e) {
        return e.timestamp + ',' + e.session + ',' + e.query_id + ',' + e.result_id + ',' + e.verdict;
    }

    void load_feedback() {
        if (options_.feedback_path.empty()) {
            return;
        }
        std::ifstream in(options_.feedback_path);
        if (!in) {
            std::ofstream create(options_.feedback_path);
            if (!create) {
                throw IoError("cannot create feedback log " + options_.feedback_path);
            }
            create << feedback_csv_header << '\n';
            return;
        }
        std::string line;
        if (!std::getline(in, line) || trim(line) != feedback_csv_header) {
            throw FormatError("feedback log " + options_.feedback_path + " must start with '" +
                              std::string(feedback_csv_header) + "'");
        }
        while (std::getline(in, line)) {
            if (trim(line).empty()) {
                continue;
            }
            const auto f = split(trim(line), ',');
            if (f.size() != 5) {
                throw FormatError("feedback log line needs 5 fields: '" + line + "'");
            }
            feedback_.push_back({f[0], f[1], f[2], f[3], f[4]});
        }
    }

    void post_feedback(const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        FeedbackEvent e;
        e.query_id = body.at("query_id").get<std::string>();
        e.result_id = body.at("result_id").get<std::string>();
        e.verdict = body.at("verdict").get<std::string>();
        e.session = body.contains("session") ? body.at("session").get<std::string>() : std::string{};
        if (e.verdict != "relevant" && e.verdict != "irrelevant") {
            throw HttpError{400, "verdict must be relevant or irrelevant"};
        }
        for (const auto* s : {&e.query_id, &e.result_id, &e.session}) {
            if (s->find_first_of(",\n\r") != std::string::npos) {
                throw HttpError{400, "feedback fields must not contain commas or newlines"};
            }
        }
        const bool upload = e.query_id.rfind("upload:", 0) == 0;
        if (!by_id_.count(e.query_id) && !(upload && cache_.get(e.query_id.substr(7)))) {
            throw HttpError{404, "unknown query '" + e.query_id + "'"};
        }
        if (!by_id_.count(e.result_id)) {
            throw HttpError{404, "unknown result '" + e.result_id + "'"};
        }
        e.timestamp = options_.timestamp();
        std::lock_guard lock(feedback_mutex_);
        if (!options_.feedback_path.empty()) {
            std::ofstream out(options_.feedback_path, std::ios::app);
            out << feedback_line(e) << '\n';
            if (!out.flush()) {
                throw IoError("failed writing feedback log " + options_.feedback_path);
            }
        }
        feedback_.push_back(std::move(e));
        res.status = 204;
    }

    void export_feedback(httplib::Response& res) const {
        std::lock_guard lock(feedback_mutex_);
        std::string out(feedback_csv_header);
        out += '\n';
        for (const auto& e : feedback_) {
            out += feedback_line(e) + '\n';
        }
        res.set_content(out, "text/csv");
    }

    void export_triplets(const httplib::Request& req, httplib::Response& res) const {
        const auto body = json::parse(req.body);
        const auto regime = parse_regime(body.at("regime").get<std::string>());
        const auto count = body.contains("count") ? body.at("count").get<std::size_t>() : std::size_t{1000};
        const auto seed = body.contains("seed") ? body.at("seed").get<std::uint64_t>() : std::uint64_t{1};
        const auto set = body.contains("set") ? body.at("set").get<std::string>() : std::string("default");
        if (count == 0 || count > 1'000'000) {
            throw HttpError{400, "count must lie in [1, 1000000]"};
        }
        LabelMap base;
        for (const auto& [id, l] : manifest_.labels(Split::train)) {
            base.emplace(id, HierLabel{l.disease, {}, false});
        }
        LabelMap labels;
        {
            std::shared_lock lock(annotations_mutex_);
            labels = annotations_.sets().count(set) ? annotations_.labels(set, base) : base;
        }
        const auto triplets = sample_triplets(labels, regime, count, seed);
        res.set_content(triplets_to_csv(triplets), "text/csv");
    }

    ModelConfig config_;
    ParamSet<float> params_;
    EmbeddingIndex<float> index_;
    DatasetManifest manifest_;
    ServiceOptions options_;
    std::map<std::string, const ManifestRecord*, std::less<>> by_id_;
    LruCache<std::string, CachedQuery> cache_;
    mutable std::shared_mutex annotations_mutex_;
    AnnotationStore annotations_;
    mutable std::mutex feedback_mutex_;
    std::vector<FeedbackEvent> feedback_;
};

}

#endif
