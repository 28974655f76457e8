#ifndef CHAI_MANIFEST_HPP
#define CHAI_MANIFEST_HPP

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "image.hpp"
#include "kv_config.hpp"
#include "labels.hpp"
#include "model.hpp"

namespace chai {

enum class Split : std::uint8_t { train, test };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

inline std::optional<Split> try_parse_split(std::string_view s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "test") {
        return Split::test;
    }
    return std::nullopt;
}

struct ManifestRecord {
    std::string id;
    std::string image_path;  ///< relative to the manifest's directory unless absolute
    std::optional<Disease> disease;
    std::string group;
    Split split = Split::train;
    std::string mask_path;  ///< empty when there is no segmentation

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline constexpr std::string_view manifest_header = "id,image_path,disease,group,split,mask_path";
inline constexpr std::string_view unconstrained_marker = "# annotation=unconstrained";

/**
 * Dataset listing. A manifest whose first line is the unconstrained marker
 * holds a Joint-style annotation set: its groups ignore disease.
 */
struct DatasetManifest {
    std::vector<ManifestRecord> records;
    bool unconstrained = false;
    std::filesystem::path base_dir;

    std::string resolve(const std::string& rel) const {
        const std::filesystem::path p(rel);
        return (p.is_absolute() ? p : base_dir / p).string();
    }

    const ManifestRecord* find(std::string_view id) const {
        for (const auto& r : records) {
            if (r.id == id) {
                return &r;
            }
        }
        return nullptr;
    }

    std::vector<const ManifestRecord*> in_split(Split s) const {
        std::vector<const ManifestRecord*> out;
        for (const auto& r : records) {
            if (r.split == s) {
                out.push_back(&r);
            }
        }
        return out;
    }

    HierLabel label_of(const ManifestRecord& r) const { return HierLabel{r.disease, r.group, unconstrained}; }

    LabelMap labels(std::optional<Split> split = std::nullopt) const {
        LabelMap out;
        for (const auto& r : records) {
            if (!split || r.split == *split) {
                out.emplace(r.id, label_of(r));
            }
        }
        return out;
    }

    template<typename T>
    ImageStore<T> load_images(std::optional<Split> split = std::nullopt) const {
        ImageStore<T> out;
        for (const auto& r : records) {
            if (!split || r.split == *split) {
                out.emplace(r.id, load_image<T>(resolve(r.image_path)));
            }
        }
        return out;
    }
};

namespace detail {

inline void check_field(const std::string& value, const char* what) {
    if (value.find_first_of(",\n\r") != std::string::npos) {
        throw InvalidInput(std::string(what) + " '" + value + "' contains a CSV separator");
    }
}

}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
    if (m.unconstrained) {
        out << unconstrained_marker << '\n';
    }
    out << manifest_header << '\n';
    for (const auto& r : m.records) {
        detail::check_field(r.id, "id");
        detail::check_field(r.image_path, "image path");
        detail::check_field(r.group, "group");
        detail::check_field(r.mask_path, "mask path");
        out << r.id << ',' << r.image_path << ',' << (r.disease ? disease_name(*r.disease) : "") << ',' << r.group
            << ',' << split_name(r.split) << ',' << r.mask_path << '\n';
    }
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ostringstream out;
    write_manifest(out, m);
    write_file(path, out.str());
}

/// Parses manifest text; does not touch referenced files.
inline DatasetManifest parse_manifest(std::istream& in) {
    DatasetManifest m;
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("empty manifest");
    }
    if (trim(line) == unconstrained_marker) {
        m.unconstrained = true;
        if (!std::getline(in, line)) {
            throw FormatError("manifest has no header");
        }
    }
    if (trim(line) != manifest_header) {
        throw FormatError("manifest header must be '" + std::string(manifest_header) + "'");
    }
    std::set<std::string, std::less<>> seen;
    std::size_t lineno = m.unconstrained ? 2 : 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto f = split(body, ',');
        const auto where = "manifest line " + std::to_string(lineno);
        if (f.size() != 6) {
            throw FormatError(where + ": expected 6 fields, got " + std::to_string(f.size()));
        }
        ManifestRecord r;
        r.id = f[0];
        r.image_path = f[1];
        if (r.id.empty() || r.image_path.empty()) {
            throw FormatError(where + ": id and image_path are required");
        }
        if (!f[2].empty()) {
            auto d = try_parse_disease(f[2]);
            if (!d) {
                throw FormatError(where + ": unknown disease '" + f[2] + "'");
            }
            r.disease = d;
        }
        r.group = f[3];
        auto s = try_parse_split(f[4]);
        if (!s) {
            throw FormatError(where + ": split must be train or test, got '" + f[4] + "'");
        }
        r.split = *s;
        r.mask_path = f[5];
        if (!m.unconstrained && !r.group.empty() && !r.disease) {
            throw FormatError(where + ": hierarchical group '" + r.group + "' without a disease");
        }
        if (!seen.insert(r.id).second) {
            throw DuplicateIdError(where + ": duplicate id '" + r.id + "'");
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

/// Loads a manifest and checks that every referenced file exists.
inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path);
    }
    auto m = parse_manifest(in);
    m.base_dir = std::filesystem::path(path).parent_path();
    for (const auto& r : m.records) {
        if (!std::filesystem::exists(m.resolve(r.image_path))) {
            throw IoError("missing image file for '" + r.id + "': " + m.resolve(r.image_path));
        }
        if (!r.mask_path.empty() && !std::filesystem::exists(m.resolve(r.mask_path))) {
            throw IoError("missing mask file for '" + r.id + "': " + m.resolve(r.mask_path));
        }
    }
    return m;
}

}

#endif
