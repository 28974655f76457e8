#ifndef CHAI_RETRIEVAL_HPP
#define CHAI_RETRIEVAL_HPP

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "binary_io.hpp"
#include "labels.hpp"
#include "tensor.hpp"

namespace chai {

struct Neighbor {
    std::string id;
    double distance;
    std::size_t index;  ///< insertion position in the index

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Neighbors by non-decreasing squared distance; equal distances keep insertion order.
struct NeighborList {
    std::string query_id;
    std::vector<Neighbor> items;

    std::size_t size() const { return items.size(); }
    const Neighbor& operator[](std::size_t i) const { return items[i]; }

    /// The first k entries (lists from one query nest).
    NeighborList prefix(std::size_t k) const {
        NeighborList out{query_id, {}};
        out.items.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(std::min(k, items.size())));
        return out;
    }
};

/**
 * Exact nearest-neighbor index under squared Euclidean distance.
 *
 * Records are stored contiguously and scanned linearly; queries never mutate
 * the index, so concurrent readers are safe once building is done.
 */
template<typename T>
class EmbeddingIndex {
public:
    struct Record {
        std::string id;
        HierLabel label;
    };

    explicit EmbeddingIndex(std::size_t dim) : dim_(dim) {
        if (dim == 0) {
            throw InvalidInput("index dimension must be positive");
        }
    }

    void add(std::string id, HierLabel label, std::span<const T> embedding) {
        if (embedding.size() != dim_) {
            throw InvalidInput("embedding dimension " + std::to_string(embedding.size()) + " does not match index " +
                               std::to_string(dim_));
        }
        if (position_.count(id)) {
            throw DuplicateIdError("duplicate index id '" + id + "'");
        }
        position_.emplace(id, records_.size());
        records_.push_back({std::move(id), std::move(label)});
        data_.insert(data_.end(), embedding.begin(), embedding.end());
    }

    void add(std::string id, HierLabel label, const Tensor<T>& embedding) {
        add(std::move(id), std::move(label), embedding.data());
    }

    std::size_t size() const { return records_.size(); }
    std::size_t dim() const { return dim_; }
    const Record& record(std::size_t i) const { return records_.at(i); }
    std::span<const T> embedding(std::size_t i) const { return std::span<const T>(data_).subspan(i * dim_, dim_); }

    std::optional<std::size_t> find(std::string_view id) const {
        auto it = position_.find(std::string(id));
        if (it == position_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    LabelMap labels() const {
        LabelMap out;
        for (const auto& r : records_) {
            out.emplace(r.id, r.label);
        }
        return out;
    }

    NeighborList knn_query(std::span<const T> query, std::size_t k, std::string query_id = {}) const {
        if (records_.empty()) {
            throw InvalidInput("knn_query on an empty index");
        }
        if (k == 0 || k > records_.size()) {
            throw InvalidInput("k must lie in [1, " + std::to_string(records_.size()) + "], got " + std::to_string(k));
        }
        if (query.size() != dim_) {
            throw InvalidInput("query dimension " + std::to_string(query.size()) + " does not match index " +
                               std::to_string(dim_));
        }
        std::vector<T> dist(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) {
            dist[i] = squared_distance<T>(query, embedding(i));
        }
        std::vector<std::size_t> order(records_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
        NeighborList out{std::move(query_id), {}};
        out.items.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const auto idx = order[i];
            out.items.push_back({records_[idx].id, static_cast<double>(dist[idx]), idx});
        }
        return out;
    }

    NeighborList knn_query(const Tensor<T>& query, std::size_t k, std::string query_id = {}) const {
        return knn_query(query.data(), k, std::move(query_id));
    }

private:
    std::size_t dim_;
    std::vector<Record> records_;
    std::vector<T> data_;
    std::unordered_map<std::string, std::size_t> position_;
};

/// Fraction of neighbors whose disease is the positive class (unweighted vote).
inline double melanoma_score(const NeighborList& neighbors, const LabelMap& labels) {
    if (neighbors.items.empty()) {
        throw InvalidInput("melanoma_score needs at least one neighbor");
    }
    std::size_t positive = 0;
    for (const auto& n : neighbors.items) {
        auto it = labels.find(n.id);
        if (it == labels.end() || !it->second.disease) {
            throw InvalidInput("neighbor '" + n.id + "' has no disease label");
        }
        positive += *it->second.disease == positive_disease ? 1 : 0;
    }
    return static_cast<double>(positive) / static_cast<double>(neighbors.items.size());
}

template<typename T>
double melanoma_score(const NeighborList& neighbors, const EmbeddingIndex<T>& index) {
    if (neighbors.items.empty()) {
        throw InvalidInput("melanoma_score needs at least one neighbor");
    }
    std::size_t positive = 0;
    for (const auto& n : neighbors.items) {
        const auto pos = index.find(n.id);
        if (!pos || !index.record(*pos).label.disease) {
            throw InvalidInput("neighbor '" + n.id + "' has no disease label");
        }
        positive += *index.record(*pos).label.disease == positive_disease ? 1 : 0;
    }
    return static_cast<double>(positive) / static_cast<double>(neighbors.items.size());
}

inline constexpr std::string_view index_magic = "CHAIX001";
inline constexpr std::uint8_t no_disease = 0xFF;

// Layout: magic, u32 d, u32 N, then per record (string id, u8 disease,
// string group, u8 unconstrained, d x f32). Strings are u32 length + bytes.
template<typename T>
std::string encode_index(const EmbeddingIndex<T>& index) {
    ByteWriter w;
    w.bytes(index_magic);
    w.u32(static_cast<std::uint32_t>(index.dim()));
    w.u32(static_cast<std::uint32_t>(index.size()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& r = index.record(i);
        w.string(r.id);
        w.u8(r.label.disease ? static_cast<std::uint8_t>(*r.label.disease) : no_disease);
        w.string(r.label.group);
        w.u8(r.label.unconstrained ? 1 : 0);
        for (auto v : index.embedding(i)) {
            w.f32(static_cast<float>(v));
        }
    }
    return w.buffer();
}

template<typename T>
EmbeddingIndex<T> decode_index(std::string_view bytes) {
    if (bytes.size() < index_magic.size()) {
        throw CorruptFile("index file shorter than its header");
    }
    if (bytes.substr(0, index_magic.size()) != index_magic) {
        throw FormatError("not an index file (bad magic)");
    }
    ByteReader r(bytes.substr(index_magic.size()));
    const auto dim = r.u32();
    const auto count = r.u32();
    if (dim == 0) {
        throw CorruptFile("index dimension is zero");
    }
    EmbeddingIndex<T> index(dim);
    std::vector<T> buf(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto id = r.string();
        HierLabel label;
        const auto d = r.u8();
        if (d != no_disease) {
            if (d >= disease_count) {
                throw CorruptFile("invalid disease code " + std::to_string(d));
            }
            label.disease = static_cast<Disease>(d);
        }
        label.group = r.string();
        const auto flag = r.u8();
        if (flag > 1) {
            throw CorruptFile("invalid annotation flag");
        }
        label.unconstrained = flag == 1;
        for (auto& v : buf) {
            v = static_cast<T>(r.f32());
        }
        index.add(std::move(id), std::move(label), std::span<const T>(buf));
    }
    if (!r.at_end()) {
        throw CorruptFile("trailing bytes after last index record");
    }
    return index;
}

template<typename T>
void save_index(const EmbeddingIndex<T>& index, const std::string& path) {
    write_file(path, encode_index(index));
}

template<typename T>
EmbeddingIndex<T> load_index(const std::string& path) {
    return decode_index<T>(read_file(path));
}

}

#endif
