#ifndef CHAI_LABELS_HPP
#define CHAI_LABELS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace chai {

enum class Disease : std::uint8_t { melanoma = 0, seborrheic_keratosis = 1, benign_nevus = 2 };

inline constexpr Disease positive_disease = Disease::melanoma;
inline constexpr std::size_t disease_count = 3;

inline std::string_view disease_name(Disease d) {
    switch (d) {
    case Disease::melanoma:
        return "melanoma";
    case Disease::seborrheic_keratosis:
        return "seborrheic_keratosis";
    case Disease::benign_nevus:
        return "benign_nevus";
    }
    return "unknown";
}

inline std::optional<Disease> try_parse_disease(std::string_view s) {
    for (std::uint8_t i = 0; i < disease_count; ++i) {
        if (disease_name(static_cast<Disease>(i)) == s) {
            return static_cast<Disease>(i);
        }
    }
    return std::nullopt;
}

inline Disease parse_disease(std::string_view s) {
    if (auto d = try_parse_disease(s)) {
        return *d;
    }
    throw InvalidInput("unknown disease '" + std::string(s) + "'");
}

/**
 * Two-level annotation: a disease and an optional similarity group.
 *
 * Hierarchical groups live under their disease, so the same group name under
 * two diseases denotes two different groups. Unconstrained groups (the
 * Joint-style annotation set) ignore disease and may mix diseases.
 */
struct HierLabel {
    std::optional<Disease> disease;
    std::string group;
    bool unconstrained = false;

    bool has_group() const { return !group.empty(); }

    /// Identity of the similarity group, or empty when there is none.
    std::string group_key() const {
        if (group.empty()) {
            return {};
        }
        if (unconstrained) {
            return "*/" + group;
        }
        return std::string(disease ? disease_name(*disease) : "?") + "/" + group;
    }

    friend bool operator==(const HierLabel&, const HierLabel&) = default;
};

/// Sample id -> label. Ordered so iteration is deterministic.
using LabelMap = std::map<std::string, HierLabel, std::less<>>;

}

#endif
