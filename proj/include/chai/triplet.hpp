#ifndef CHAI_TRIPLET_HPP
#define CHAI_TRIPLET_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kv_config.hpp"
#include "labels.hpp"
#include "random.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace chai {

enum class Regime : std::uint8_t { disease, joint, hierarchical, non_hierarchical };

inline std::string_view regime_name(Regime r) {
    switch (r) {
    case Regime::disease:
        return "disease";
    case Regime::joint:
        return "joint";
    case Regime::hierarchical:
        return "hierarchical";
    case Regime::non_hierarchical:
        return "non_hierarchical";
    }
    return "unknown";
}

inline Regime parse_regime(std::string_view s) {
    for (auto r : {Regime::disease, Regime::joint, Regime::hierarchical, Regime::non_hierarchical}) {
        if (regime_name(r) == s) {
            return r;
        }
    }
    throw InvalidInput("unknown regime '" + std::string(s) + "'");
}

struct Triplet {
    std::string anchor_id;
    std::string similar_id;
    std::string dissimilar_id;
    Regime regime = Regime::disease;

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

template<typename T>
struct TripletLossValue {
    T loss;
    bool active;  ///< hinge strictly positive
};

namespace detail {

template<typename T>
void check_triplet_dims(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c, T margin) {
    if (a.shape() != b.shape() || a.shape() != c.shape()) {
        throw InvalidInput("triplet embeddings differ in shape: " + shape_string(a.shape()) + ", " +
                           shape_string(b.shape()) + ", " + shape_string(c.shape()));
    }
    if (!(margin > T{0})) {
        throw InvalidInput("triplet margin must be positive");
    }
}

}

/// max(0, margin + D(a,b) - (D(a,c) + D(b,c)) / 2) with D the squared Euclidean distance.
template<typename T>
TripletLossValue<T> triplet_loss(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c, T margin) {
    detail::check_triplet_dims(a, b, c, margin);
    const T pre = margin + squared_distance(a, b) - T{0.5} * (squared_distance(a, c) + squared_distance(b, c));
    return pre > T{0} ? TripletLossValue<T>{pre, true} : TripletLossValue<T>{T{0}, false};
}

template<typename T>
struct TripletGrads {
    Tensor<T> anchor, similar, dissimilar;
};

/// Exact gradients of triplet_loss; all zero when the hinge is inactive or exactly at its kink.
template<typename T>
TripletGrads<T> triplet_loss_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c, T margin) {
    const auto value = triplet_loss(a, b, c, margin);
    TripletGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(a.shape()), Tensor<T>(a.shape())};
    if (!value.active) {
        return g;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T ab = a[i] - b[i], ac = a[i] - c[i], bc = b[i] - c[i];
        g.anchor[i] = T{2} * ab - ac;
        g.similar[i] = -T{2} * ab - bc;
        g.dissimilar[i] = ac + bc;
    }
    return g;
}

/// The same objective composed from tape primitives (squared distance, affine combine, ReLU hinge).
template<typename T>
Var triplet_loss_on_tape(Tape<T>& tape, Var a, Var b, Var c, T margin) {
    auto dab = tape.squared_distance(a, b);
    auto dac = tape.squared_distance(a, c);
    auto dbc = tape.squared_distance(b, c);
    return tape.relu(tape.affine({{T{1}, dab}, {T{-0.5}, dac}, {T{-0.5}, dbc}}, margin));
}

struct TripletCheck {
    bool valid = true;
    std::string reason;

    explicit operator bool() const { return valid; }

    static TripletCheck fail(std::string why) { return {false, std::move(why)}; }
};

namespace detail {

inline TripletCheck disease_rule(const HierLabel& a, const HierLabel& b, const HierLabel& c) {
    if (!a.disease || !b.disease || !c.disease) {
        return TripletCheck::fail("missing disease label");
    }
    if (*a.disease != *b.disease) {
        return TripletCheck::fail("similar pair has different diseases");
    }
    if (*c.disease == *a.disease) {
        return TripletCheck::fail("dissimilar shares the disease");
    }
    return {};
}

inline TripletCheck hierarchical_rule(const HierLabel& a, const HierLabel& b, const HierLabel& c) {
    if (!a.disease || !b.disease || !c.disease) {
        return TripletCheck::fail("missing disease label");
    }
    if (!a.has_group() || !b.has_group() || a.unconstrained || b.unconstrained) {
        return TripletCheck::fail("similar pair lacks hierarchical group annotation");
    }
    if (a.group_key() != b.group_key()) {
        return TripletCheck::fail("similar pair are not siblings");
    }
    if (*c.disease == *a.disease) {
        if (c.has_group() && c.group_key() != a.group_key()) {
            return TripletCheck::fail("cousin as dissimilar");
        }
        return TripletCheck::fail("dissimilar shares the disease");
    }
    return {};
}

inline TripletCheck group_rule(const HierLabel& a, const HierLabel& b, const HierLabel& c, bool unconstrained) {
    for (const auto* l : {&a, &b, &c}) {
        if (!l->has_group()) {
            return TripletCheck::fail("missing group annotation");
        }
        if (l->unconstrained != unconstrained) {
            return TripletCheck::fail("group from a different annotation set");
        }
    }
    if (a.group_key() != b.group_key()) {
        return TripletCheck::fail("similar pair in different groups");
    }
    if (c.group_key() == a.group_key()) {
        return TripletCheck::fail("dissimilar in the similar pair's group");
    }
    return {};
}

inline const HierLabel& label_of(const LabelMap& labels, const std::string& id) {
    auto it = labels.find(id);
    if (it == labels.end()) {
        throw InvalidInput("unlabeled sample id '" + id + "'");
    }
    return it->second;
}

}

/// Checks a triplet against its regime's selection logic.
inline TripletCheck validate_triplet(const Triplet& t, const LabelMap& labels) {
    const auto& a = detail::label_of(labels, t.anchor_id);
    const auto& b = detail::label_of(labels, t.similar_id);
    const auto& c = detail::label_of(labels, t.dissimilar_id);
    if (t.anchor_id == t.similar_id || t.anchor_id == t.dissimilar_id || t.similar_id == t.dissimilar_id) {
        return TripletCheck::fail("repeated sample id");
    }
    switch (t.regime) {
    case Regime::disease:
        return detail::disease_rule(a, b, c);
    case Regime::hierarchical:
        return detail::hierarchical_rule(a, b, c);
    case Regime::non_hierarchical:
        return detail::group_rule(a, b, c, a.unconstrained);
    case Regime::joint: {
        auto by_disease = detail::disease_rule(a, b, c);
        if (by_disease) {
            return by_disease;
        }
        auto by_group = detail::group_rule(a, b, c, true);
        if (by_group) {
            return by_group;
        }
        return TripletCheck::fail("neither disease rule (" + by_disease.reason + ") nor unconstrained group rule (" +
                                  by_group.reason + ")");
    }
    }
    return TripletCheck::fail("unknown regime");
}

inline constexpr std::size_t max_rejections = 1000;

namespace detail {

// One way of forming similar pairs: buckets of mutually similar samples plus
// the predicate a dissimilar candidate must satisfy.
struct PairSource {
    Regime rule;  // disease, hierarchical or non_hierarchical logic
    bool unconstrained = false;
    std::vector<std::vector<std::size_t>> buckets;  // only buckets that admit a triplet
    std::vector<std::uint64_t> cumulative;          // ordered-pair counts, running sum

    bool viable() const { return !buckets.empty(); }
};

inline TripletCheck apply_rule(const PairSource& src, const HierLabel& a, const HierLabel& b, const HierLabel& c) {
    switch (src.rule) {
    case Regime::disease:
        return disease_rule(a, b, c);
    case Regime::hierarchical:
        return hierarchical_rule(a, b, c);
    default:
        return group_rule(a, b, c, src.unconstrained);
    }
}

inline PairSource build_source(const std::vector<const HierLabel*>& labels, Regime rule, bool unconstrained) {
    std::map<std::string, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& l = *labels[i];
        std::string key;
        if (rule == Regime::disease) {
            if (l.disease) {
                key = std::string(disease_name(*l.disease));
            }
        } else if (l.has_group() && l.unconstrained == unconstrained &&
                   (rule != Regime::hierarchical || l.disease)) {
            key = l.group_key();
        }
        if (!key.empty()) {
            buckets[key].push_back(i);
        }
    }
    PairSource src{rule, unconstrained, {}, {}};
    std::uint64_t total = 0;
    for (auto& [key, members] : buckets) {
        if (members.size() < 2) {
            continue;
        }
        const auto& a = *labels[members[0]];
        const auto& b = *labels[members[1]];
        bool has_dissimilar = false;
        for (const auto* c : labels) {
            if (apply_rule(src, a, b, *c)) {
                has_dissimilar = true;
                break;
            }
        }
        if (!has_dissimilar) {
            continue;
        }
        total += static_cast<std::uint64_t>(members.size()) * (members.size() - 1);
        src.buckets.push_back(std::move(members));
        src.cumulative.push_back(total);
    }
    return src;
}

}

/**
 * Draws `count` triplets for a regime.
 *
 * Each draw picks an ordered similar pair uniformly from the pair buckets and
 * a dissimilar candidate uniformly from the labeled set; invalid draws are
 * rejected and redrawn whole, so accepted triplets are uniform over all valid
 * (pair, dissimilar) combinations. The Joint regime draws each triplet from the
 * unconstrained-group source with probability `joint_mix_ratio` and from the
 * disease source otherwise.
 */
inline std::vector<Triplet> sample_triplets(const LabelMap& labels, Regime regime, std::size_t count,
                                            std::uint64_t seed, double joint_mix_ratio = 0.5) {
    if (joint_mix_ratio < 0.0 || joint_mix_ratio > 1.0) {
        throw InvalidInput("joint_mix_ratio must lie in [0, 1]");
    }
    std::vector<const std::string*> ids;
    std::vector<const HierLabel*> flat;
    for (const auto& [id, label] : labels) {
        ids.push_back(&id);
        flat.push_back(&label);
    }

    std::vector<detail::PairSource> sources;
    switch (regime) {
    case Regime::disease:
        sources.push_back(detail::build_source(flat, Regime::disease, false));
        break;
    case Regime::hierarchical:
        sources.push_back(detail::build_source(flat, Regime::hierarchical, false));
        break;
    case Regime::non_hierarchical:
        sources.push_back(detail::build_source(flat, Regime::non_hierarchical, false));
        break;
    case Regime::joint:
        sources.push_back(detail::build_source(flat, Regime::disease, false));
        sources.push_back(detail::build_source(flat, Regime::non_hierarchical, true));
        break;
    }
    const bool need_disease = regime != Regime::joint || joint_mix_ratio < 1.0;
    const bool need_groups = regime == Regime::joint && joint_mix_ratio > 0.0;
    if ((need_disease && !sources[0].viable()) || (need_groups && !sources[1].viable())) {
        throw DatasetStructureError("labels admit no valid " + std::string(regime_name(regime)) + " triplet");
    }

    Rng rng(seed);
    std::vector<Triplet> out;
    out.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        const detail::PairSource* src = &sources[0];
        if (regime == Regime::joint && uniform01(rng) < joint_mix_ratio) {
            src = &sources[1];
        }
        std::size_t rejections = 0;
        while (true) {
            const auto pick = uniform_index(rng, src->cumulative.back());
            const auto bucket_idx = static_cast<std::size_t>(
                std::upper_bound(src->cumulative.begin(), src->cumulative.end(), pick) - src->cumulative.begin());
            const auto& bucket = src->buckets[bucket_idx];
            const auto first = uniform_index(rng, bucket.size());
            auto second = uniform_index(rng, bucket.size() - 1);
            if (second >= first) {
                ++second;
            }
            const std::size_t a = bucket[first], b = bucket[second];
            const auto c = static_cast<std::size_t>(uniform_index(rng, flat.size()));
            if (c != a && c != b && detail::apply_rule(*src, *flat[a], *flat[b], *flat[c])) {
                out.push_back({*ids[a], *ids[b], *ids[c], regime});
                break;
            }
            if (++rejections >= max_rejections) {
                throw DatasetStructureError("no valid " + std::string(regime_name(regime)) + " triplet found after " +
                                            std::to_string(max_rejections) + " draws");
            }
        }
    }
    return out;
}

inline constexpr std::string_view triplet_csv_header = "anchor_id,similar_id,dissimilar_id,regime";

inline void write_triplets_csv(std::ostream& out, const std::vector<Triplet>& triplets) {
    out << triplet_csv_header << '\n';
    for (const auto& t : triplets) {
        out << t.anchor_id << ',' << t.similar_id << ',' << t.dissimilar_id << ',' << regime_name(t.regime) << '\n';
    }
}

inline std::string triplets_to_csv(const std::vector<Triplet>& triplets) {
    std::ostringstream out;
    write_triplets_csv(out, triplets);
    return out.str();
}

inline std::vector<Triplet> read_triplets_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != triplet_csv_header) {
        throw FormatError("triplet CSV must start with header '" + std::string(triplet_csv_header) + "'");
    }
    std::vector<Triplet> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split(trim(line), ',');
        if (fields.size() != 4) {
            throw FormatError("triplet CSV line " + std::to_string(lineno) + ": expected 4 fields");
        }
        out.push_back({fields[0], fields[1], fields[2], parse_regime(fields[3])});
    }
    return out;
}

}

#endif
