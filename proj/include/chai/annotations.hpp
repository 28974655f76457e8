#ifndef CHAI_ANNOTATIONS_HPP
#define CHAI_ANNOTATIONS_HPP

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "kv_config.hpp"
#include "labels.hpp"

namespace chai {

/// Rejected annotation operation; `status` follows HTTP (404 unknown, 409 conflict).
class AnnotationError : public Error {
public:
    AnnotationError(int status, const std::string& what) : Error(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

enum class AnnotationOp { create, assign, unassign };

inline std::string_view op_name(AnnotationOp op) {
    switch (op) {
    case AnnotationOp::create: return "create";
    case AnnotationOp::assign: return "assign";
    case AnnotationOp::unassign: return "unassign";
    }
    return "?";
}

inline std::optional<AnnotationOp> try_parse_op(std::string_view s) {
    for (auto op : {AnnotationOp::create, AnnotationOp::assign, AnnotationOp::unassign}) {
        if (op_name(op) == s) {
            return op;
        }
    }
    return std::nullopt;
}

/// One journal line: `op,set,mode,group,disease,image`.
struct AnnotationEvent {
    AnnotationOp op = AnnotationOp::create;
    std::string set = "default";
    bool unconstrained = false;  ///< mode column; only read by create
    std::string group;
    std::optional<Disease> disease;
    std::string image;
};

inline constexpr std::string_view annotation_journal_header = "op,set,mode,group,disease,image";

struct AnnotationGroup {
    std::optional<Disease> disease;
    std::set<std::string> members;
};

struct AnnotationSet {
    bool unconstrained = false;
    std::map<std::string, AnnotationGroup> groups;
    std::map<std::string, std::string> group_of;  ///< image -> group
};

/**
 * Similarity-group annotations kept as an append-only journal plus the
 * materialized view it replays to. Hierarchical sets require each group to
 * sit under one disease and only accept images of that disease.
 */
class AnnotationStore {
public:
    /// Disease label of a known image, or nullopt for unknown ids.
    using ImageLookup = std::function<std::optional<std::optional<Disease>>(const std::string&)>;

    explicit AnnotationStore(ImageLookup lookup, std::string journal_path = {})
        : lookup_(std::move(lookup)), path_(std::move(journal_path)) {
        if (!path_.empty()) {
            replay();
        }
    }

    /// Validates, journals and applies one event. Throws AnnotationError.
    void apply(const AnnotationEvent& e) {
        check(e);
        append(e);
        mutate(e);
        journal_.push_back(e);
    }

    const std::map<std::string, AnnotationSet>& sets() const { return sets_; }
    const std::vector<AnnotationEvent>& journal() const { return journal_; }

    const AnnotationSet& set(const std::string& name) const {
        auto it = sets_.find(name);
        if (it == sets_.end()) {
            throw AnnotationError(404, "unknown annotation set '" + name + "'");
        }
        return it->second;
    }

    /// `base` labels with groups taken from annotation set `name` (empty when unassigned).
    LabelMap labels(const std::string& name, const LabelMap& base) const {
        const auto& s = set(name);
        LabelMap out;
        for (const auto& [id, l] : base) {
            auto it = s.group_of.find(id);
            out.emplace(id, HierLabel{l.disease, it == s.group_of.end() ? std::string{} : it->second, s.unconstrained});
        }
        return out;
    }

    static std::string to_line(const AnnotationEvent& e) {
        std::ostringstream out;
        out << op_name(e.op) << ',' << e.set << ',' << (e.unconstrained ? "unconstrained" : "hierarchical") << ','
            << e.group << ',' << (e.disease ? disease_name(*e.disease) : "") << ',' << e.image;
        return out.str();
    }

    static AnnotationEvent parse_line(const std::string& line) {
        const auto f = split(line, ',');
        if (f.size() != 6) {
            throw FormatError("annotation journal line needs 6 fields: '" + line + "'");
        }
        AnnotationEvent e;
        auto op = try_parse_op(f[0]);
        if (!op) {
            throw FormatError("unknown annotation op '" + f[0] + "'");
        }
        e.op = *op;
        e.set = f[1];
        if (f[2] != "hierarchical" && f[2] != "unconstrained") {
            throw FormatError("annotation mode must be hierarchical or unconstrained, got '" + f[2] + "'");
        }
        e.unconstrained = f[2] == "unconstrained";
        e.group = f[3];
        if (!f[4].empty()) {
            e.disease = try_parse_disease(f[4]);
            if (!e.disease) {
                throw FormatError("unknown disease '" + f[4] + "' in annotation journal");
            }
        }
        e.image = f[5];
        return e;
    }

private:
    static void check_name(const std::string& s, const char* what) {
        if (s.empty() || s.find_first_of(",\n\r") != std::string::npos) {
            throw AnnotationError(400, std::string(what) + " must be non-empty and free of commas and newlines");
        }
    }

    void check(const AnnotationEvent& e) const {
        check_name(e.set, "set");
        if (e.op != AnnotationOp::unassign) {
            check_name(e.group, "group");
        }
        auto sit = sets_.find(e.set);
        if (e.op == AnnotationOp::create) {
            if (sit != sets_.end()) {
                if (sit->second.unconstrained != e.unconstrained) {
                    throw AnnotationError(409, "set '" + e.set + "' already exists in the other mode");
                }
                if (sit->second.groups.count(e.group)) {
                    throw AnnotationError(409, "group '" + e.group + "' already exists");
                }
            }
            if (!e.unconstrained && !e.disease) {
                throw AnnotationError(400, "hierarchical groups need a parent disease");
            }
            return;
        }
        if (sit == sets_.end()) {
            throw AnnotationError(404, "unknown annotation set '" + e.set + "'");
        }
        const auto disease = lookup_(e.image);
        if (!disease) {
            throw AnnotationError(404, "unknown image '" + e.image + "'");
        }
        if (e.op == AnnotationOp::unassign) {
            if (!sit->second.group_of.count(e.image)) {
                throw AnnotationError(404, "image '" + e.image + "' is not assigned in set '" + e.set + "'");
            }
            return;
        }
        auto git = sit->second.groups.find(e.group);
        if (git == sit->second.groups.end()) {
            throw AnnotationError(404, "unknown group '" + e.group + "'");
        }
        if (!sit->second.unconstrained && *disease != git->second.disease) {
            throw AnnotationError(409, "image '" + e.image + "' is " +
                                           (*disease ? std::string(disease_name(**disease)) : "unlabeled") +
                                           " but group '" + e.group + "' sits under " +
                                           std::string(disease_name(*git->second.disease)));
        }
    }

    void mutate(const AnnotationEvent& e) {
        if (e.op == AnnotationOp::create) {
            auto& s = sets_[e.set];
            s.unconstrained = e.unconstrained;
            s.groups[e.group].disease = e.unconstrained ? std::nullopt : e.disease;
            return;
        }
        auto& s = sets_.at(e.set);
        if (auto it = s.group_of.find(e.image); it != s.group_of.end()) {
            s.groups.at(it->second).members.erase(e.image);
            s.group_of.erase(it);
        }
        if (e.op == AnnotationOp::assign) {
            s.groups.at(e.group).members.insert(e.image);
            s.group_of[e.image] = e.group;
        }
    }

    void append(const AnnotationEvent& e) {
        if (path_.empty()) {
            return;
        }
        std::ofstream out(path_, std::ios::app);
        if (!out) {
            throw IoError("cannot append to annotation journal " + path_);
        }
        out << to_line(e) << '\n';
        if (!out.flush()) {
            throw IoError("failed writing annotation journal " + path_);
        }
    }

    void replay() {
        std::ifstream in(path_);
        if (!in) {
            std::ofstream create(path_);
            if (!create) {
                throw IoError("cannot create annotation journal " + path_);
            }
            create << annotation_journal_header << '\n';
            return;
        }
        std::string line;
        if (!std::getline(in, line) || trim(line) != annotation_journal_header) {
            throw FormatError("annotation journal " + path_ + " must start with '" +
                              std::string(annotation_journal_header) + "'");
        }
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) {
                continue;
            }
            const auto e = parse_line(std::string(trim(line)));
            try {
                check(e);
            } catch (const AnnotationError& err) {
                throw FormatError("annotation journal line " + std::to_string(lineno) + ": " + err.what());
            }
            mutate(e);
            journal_.push_back(e);
        }
    }

    ImageLookup lookup_;
    std::string path_;
    std::map<std::string, AnnotationSet> sets_;
    std::vector<AnnotationEvent> journal_;
};

}

#endif
