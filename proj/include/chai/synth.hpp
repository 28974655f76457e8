#ifndef CHAI_SYNTH_HPP
#define CHAI_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "image.hpp"
#include "manifest.hpp"
#include "random.hpp"

namespace chai {

/// Synthetic dermoscopy-like dataset with the disease -> similarity-group hierarchy.
struct SynthConfig {
    std::size_t n_train = 600;
    std::size_t n_test = 200;
    std::size_t n_pool = 300;         ///< unconstrained-annotation images (0 disables)
    std::size_t pool_groups = 8;      ///< groups in the unconstrained set
    double pool_purity = 0.8;         ///< share of a pool group carrying its dominant disease
    std::array<std::size_t, disease_count> groups_per_disease{5, 3, 4};
    std::size_t style_prototypes = 4;  ///< lesion looks shared across diseases
    std::size_t image_size = 64;
    std::uint64_t seed = 2018;

    void validate() const {
        for (auto g : groups_per_disease) {
            if (g == 0) {
                throw ConfigError("groups_per_disease entries must be positive");
            }
        }
        if (style_prototypes == 0) {
            throw ConfigError("style_prototypes must be positive");
        }
        if (image_size < 16) {
            throw ConfigError("image_size must be at least 16");
        }
        if (n_train + n_test == 0) {
            throw ConfigError("dataset is empty");
        }
        if (n_pool > 0 && pool_groups == 0) {
            throw ConfigError("pool_groups must be positive when n_pool > 0");
        }
        if (!(pool_purity >= 0.0 && pool_purity <= 1.0)) {
            throw ConfigError("pool_purity must lie in [0, 1]");
        }
    }
};

/// Appearance fixed by a similarity group: lesion colour, shape, size, orientation and texture phase.
struct LesionStyle {
    double hue, saturation, value;
    double radius;      ///< fraction of the image side
    double axis_ratio;  ///< minor / major
    double phase;
    double orientation;  ///< radians; lesion axis and texture direction
};

/// Disease-level appearance: border irregularity and texture frequency.
struct DiseaseFamily {
    double irregularity;
    double texture_freq;  ///< radians per pixel at 64 px
    double texture_amp;
};

inline DiseaseFamily disease_family(Disease d) {
    switch (d) {
    case Disease::melanoma:
        return {0.22, 1.15, 0.35};
    case Disease::seborrheic_keratosis:
        return {0.12, 0.65, 0.35};
    case Disease::benign_nevus:
        return {0.03, 0.30, 0.35};
    }
    return {0.0, 0.0, 0.0};
}

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(h, 360.0);
    if (h < 0) {
        h += 360.0;
    }
    const double c = v * s;
    const double x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1));
    const double m = v - c;
    double r = 0, g = 0, b = 0;
    if (h < 60) {
        r = c, g = x;
    } else if (h < 120) {
        r = x, g = c;
    } else if (h < 180) {
        g = c, b = x;
    } else if (h < 240) {
        g = x, b = c;
    } else if (h < 300) {
        r = x, b = c;
    } else {
        r = c, b = x;
    }
    return {r + m, g + m, b + m};
}

inline LesionStyle random_style(Rng& rng) {
    LesionStyle s;
    s.hue = uniform_real(rng, 0.0, 50.0);
    s.saturation = uniform_real(rng, 0.35, 0.9);
    s.value = uniform_real(rng, 0.18, 0.6);
    s.radius = uniform_real(rng, 0.17, 0.26);
    s.axis_ratio = uniform_real(rng, 0.55, 1.0);
    s.phase = uniform_real(rng, 0.0, 6.283185307179586);
    s.orientation = uniform_real(rng, 0.0, 3.141592653589793);
    return s;
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}

struct SynthSample {
    RgbImage image;
    BinaryMask mask;
};

/// Renders one image; all per-image nuisance is drawn from `seed`.
inline SynthSample render_lesion(const LesionStyle& style, const DiseaseFamily& family, std::size_t size,
                                 std::uint64_t seed) {
    Rng rng(seed);
    const double S = static_cast<double>(size);
    const double scale = S / 64.0;

    // Skin background: tone, brightness, linear shading and sensor noise.
    const auto skin = detail::hsv_to_rgb(uniform_real(rng, 12.0, 38.0), uniform_real(rng, 0.15, 0.55),
                                         uniform_real(rng, 0.7, 0.97));
    const double shade_angle = uniform_real(rng, 0.0, 6.283185307179586);
    const double shade = uniform_real(rng, 0.0, 0.3);

    const double cx = S / 2 + uniform_real(rng, -5.0, 5.0) * scale;
    const double cy = S / 2 + uniform_real(rng, -5.0, 5.0) * scale;
    const double major = style.radius * S * uniform_real(rng, 0.9, 1.1);
    const double minor = major * style.axis_ratio;
    const double rot = style.orientation + uniform_real(rng, -0.25, 0.25);
    const double irr = family.irregularity * uniform_real(rng, 0.8, 1.2);
    const double b1 = uniform_real(rng, 0.0, 6.283185307179586);
    const double b2 = uniform_real(rng, 0.0, 6.283185307179586);
    const double tex_angle = style.orientation + uniform_real(rng, -0.25, 0.25);
    const double tex_freq = family.texture_freq / scale * uniform_real(rng, 0.92, 1.08);
    const double tex_phase = style.phase + uniform_real(rng, -0.3, 0.3);
    const auto lesion = detail::hsv_to_rgb(style.hue + uniform_real(rng, -3.0, 3.0), style.saturation,
                                           style.value * uniform_real(rng, 0.93, 1.07));

    SynthSample out{RgbImage(size, size), BinaryMask(size, size)};
    const double ca = std::cos(rot), sa = std::sin(rot);
    const double ta = std::cos(tex_angle), tb = std::sin(tex_angle);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double ramp = 1.0 + shade * (((px / S) - 0.5) * std::cos(shade_angle) + ((py / S) - 0.5) * std::sin(shade_angle));
            std::array<double, 3> rgb{};
            for (std::size_t c = 0; c < 3; ++c) {
                rgb[c] = skin[c] * ramp;
            }
            // Lesion support: ellipse with an angularly modulated border.
            const double dx = px - cx, dy = py - cy;
            const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
            const double theta = std::atan2(v / minor, u / major);
            const double border = 1.0 + irr * (0.6 * std::sin(3 * theta + b1) + 0.4 * std::sin(5 * theta + b2));
            const double rho = std::sqrt((u / major) * (u / major) + (v / minor) * (v / minor));
            if (rho < border) {
                out.mask.set(x, y, true);
                const double tex = 1.0 + family.texture_amp * std::sin(tex_freq * (px * ta + py * tb) + tex_phase);
                for (std::size_t c = 0; c < 3; ++c) {
                    rgb[c] = lesion[c] * tex * ramp;
                }
            }
            auto* p = out.image.at(x, y);
            for (std::size_t c = 0; c < 3; ++c) {
                p[c] = detail::to_byte(rgb[c] + uniform_real(rng, -0.03, 0.03));
            }
        }
    }
    return out;
}

struct SynthDataset {
    DatasetManifest manifest;       ///< hierarchical labels, train + test
    DatasetManifest pool_manifest;  ///< unconstrained annotation set (may be empty)
};

/**
 * Generates images, masks and manifests under `out_dir`:
 * `manifest.csv`, `pool_manifest.csv`, `images/`, `masks/`.
 * Output is a pure function of the config.
 */
inline SynthDataset generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "masks");
    Rng rng(config.seed);

    struct GroupDef {
        Disease disease;
        std::string name;
        LesionStyle style;
    };
    // Groups cycle through a few shared looks, so colour and size say nothing
    // about the disease; only border and texture do.
    std::vector<LesionStyle> prototypes;
    for (std::size_t p = 0; p < config.style_prototypes; ++p) {
        prototypes.push_back(detail::random_style(rng));
    }
    std::vector<GroupDef> groups;
    std::size_t group_no = 0;
    for (std::size_t d = 0; d < disease_count; ++d) {
        for (std::size_t g = 0; g < config.groups_per_disease[d]; ++g) {
            LesionStyle style = prototypes[group_no % prototypes.size()];
            style.hue += uniform_real(rng, -4.0, 4.0);
            style.phase = uniform_real(rng, 0.0, 6.283185307179586);
            style.orientation = uniform_real(rng, 0.0, 3.141592653589793);
            groups.push_back({static_cast<Disease>(d), "G" + std::to_string(++group_no), style});
        }
    }
    std::vector<LesionStyle> pool_styles;
    for (std::size_t g = 0; g < config.pool_groups; ++g) {
        LesionStyle style = prototypes[g % prototypes.size()];
        style.hue += uniform_real(rng, -4.0, 4.0);
        style.phase = uniform_real(rng, 0.0, 6.283185307179586);
        style.orientation = uniform_real(rng, 0.0, 3.141592653589793);
        pool_styles.push_back(style);
    }

    auto emit = [&](DatasetManifest& m, const std::string& id, Disease disease, std::string group, Split split,
                    const LesionStyle& style) {
        auto sample = render_lesion(style, disease_family(disease), config.image_size, derive_seed(config.seed, id));
        const std::string img = "images/" + id + ".ppm";
        const std::string mask = "masks/" + id + ".pgm";
        write_ppm((out_dir / img).string(), sample.image);
        write_pgm((out_dir / mask).string(), mask_to_gray(sample.mask));
        m.records.push_back({id, img, disease, std::move(group), split, mask});
    };

    SynthDataset ds;
    ds.manifest.base_dir = out_dir;
    const std::size_t total = config.n_train + config.n_test;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < total; ++i) {
        if (i % groups.size() == 0) {
            order.resize(groups.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            shuffle(order, rng);
        }
        const auto& g = groups[order[i % groups.size()]];
        char id[32];
        std::snprintf(id, sizeof id, "s%04zu", i);
        emit(ds.manifest, id, g.disease, g.name, i < config.n_train ? Split::train : Split::test, g.style);
    }
    save_manifest(ds.manifest, (out_dir / "manifest.csv").string());

    ds.pool_manifest.unconstrained = true;
    ds.pool_manifest.base_dir = out_dir;
    for (std::size_t i = 0; i < config.n_pool; ++i) {
        const auto g = i % config.pool_groups;
        // Annotators group by look without seeing labels, so groups lean towards
        // one disease but mix in others.
        const auto disease = uniform_real(rng, 0.0, 1.0) < config.pool_purity
                                 ? static_cast<Disease>(g % disease_count)
                                 : static_cast<Disease>(uniform_index(rng, disease_count));
        char id[32];
        std::snprintf(id, sizeof id, "p%04zu", i);
        emit(ds.pool_manifest, id, disease, "U" + std::to_string(g + 1), Split::train, pool_styles[g]);
    }
    save_manifest(ds.pool_manifest, (out_dir / "pool_manifest.csv").string());
    return ds;
}

}

#endif
