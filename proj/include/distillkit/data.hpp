// Dataset types, half-face occlusion, the synthetic privileged-information
// task generator, and the on-disk dataset directory format
// (images/*.png + labels.csv).
//
// Synthetic construction (classification): a class id over K classes is
// encoded as B = ceil(log2 K) bits. Every bit is rendered twice, once per
// image half, with asymmetric strength. Bits 0 and 1 carry a single bright
// 2x2 block in their primary half (bit 0 upper, bit 1 lower) and a redundant
// copy in the opposite half as six scattered signed 2x2 blocks of small
// amplitude; higher bits fall back to plain strong/faint block pairs. Both
// copies are linearly decodable, but the compact copy is high-SNR and
// trivially learnable while the scattered copy is faint and statistically
// expensive to learn, so Bayes accuracy orders as full > upper-half-only >
// lower-half-only and the occluded view keeps real headroom for privileged
// supervision. Regression targets on [20, 70] are encoded as block intensity
// ramps (strong upper copy, faint lower copy).
//
// Train-split annotation noise: a fraction 0.8*noise of the training
// samples have their labels exchanged pairwise across classes (counts stay
// exact, validation/test labels stay clean). Facial-expression corpora carry
// exactly this kind of annotation noise, and it is what a teacher with
// privileged access to the clean-signal view can compensate for during
// distillation. At noise = 0 the construction is exactly labeled and
// linearly separable.

#pragma once

#include <distillkit/png_io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace distillkit {

enum class Occlusion { none, upper_half_hidden, lower_half_hidden };

inline std::string occlusion_name(Occlusion o) {
    switch (o) {
        case Occlusion::none: return "none";
        case Occlusion::upper_half_hidden: return "upper_half_hidden";
        case Occlusion::lower_half_hidden: return "lower_half_hidden";
    }
    return "none";
}

inline Occlusion occlusion_from_name(const std::string& name) {
    if (name == "none") return Occlusion::none;
    if (name == "upper_half_hidden") return Occlusion::upper_half_hidden;
    if (name == "lower_half_hidden") return Occlusion::lower_half_hidden;
    throw std::invalid_argument("unknown occlusion mode '" + name + "'");
}

struct TaskKind {
    enum Type { classification, regression };
    Type type = classification;
    std::size_t num_classes = 2;

    bool is_classification() const { return type == classification; }

    static TaskKind make_classification(std::size_t k) { return TaskKind{classification, k}; }
    static TaskKind make_regression() { return TaskKind{regression, 0}; }
};

/// Presets mirroring the three studied tasks at desk scale.
inline TaskKind expression_like() { return TaskKind::make_classification(4); }
inline TaskKind gender_like() { return TaskKind::make_classification(2); }
inline TaskKind age_like() { return TaskKind::make_regression(); }

struct LabeledImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;  // row-major grayscale in [0,1]
    int label = 0;               // class id (classification tasks)
    double target = 0.0;         // age-like scalar (regression tasks)
    Occlusion occlusion = Occlusion::none;
};

struct DatasetSplit {
    TaskKind task;
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> validation;
    std::vector<LabeledImage> test;
};

/// Copy with the designated half zeroed; mode none is the identity copy.
inline LabeledImage occlude(const LabeledImage& image, Occlusion mode) {
    if (image.occlusion != Occlusion::none)
        throw std::runtime_error("occlude: image is already occluded (" + occlusion_name(image.occlusion) + ")");
    LabeledImage out = image;
    if (mode == Occlusion::none) return out;
    if (image.height % 2 != 0)
        throw std::invalid_argument("occlude: image height " + std::to_string(image.height) + " must be even");
    const std::size_t half = image.height / 2;
    const std::size_t begin = mode == Occlusion::upper_half_hidden ? 0 : half;
    std::fill(out.pixels.begin() + static_cast<std::ptrdiff_t>(begin * image.width),
              out.pixels.begin() + static_cast<std::ptrdiff_t>((begin + half) * image.width), 0.0);
    out.occlusion = mode;
    return out;
}

inline std::vector<LabeledImage> occlude_all(const std::vector<LabeledImage>& images, Occlusion mode) {
    std::vector<LabeledImage> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(occlude(img, mode));
    return out;
}

inline DatasetSplit occlude_split(const DatasetSplit& split, Occlusion mode) {
    DatasetSplit out;
    out.task = split.task;
    out.train = occlude_all(split.train, mode);
    out.validation = occlude_all(split.validation, mode);
    out.test = occlude_all(split.test, mode);
    return out;
}

namespace detail {

// Snap to the 8-bit grid the PNG container stores, so exporting and
// reloading a synthetic dataset is an exact identity.
inline double quantize_pixel(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

struct SignalBlock {
    std::size_t row, col, size;
    double amplitude;
};

// Per-bit block geometry and amplitudes; `scale` stretches the canonical
// 16x16 layout to larger images.
inline void bit_blocks(std::size_t bit, std::size_t scale, std::vector<SignalBlock>& out) {
    const bool even = bit % 2 == 0;
    const std::size_t col = (2 + 4 * bit) * scale;
    if (bit == 0) {
        // strong compact copy up, faint scattered copy down
        out.push_back({2 * scale, col, 2 * scale, 0.60});
        for (std::size_t i = 0; i < 6; ++i)
            out.push_back({13 * scale, (1 + 2 * i) * scale, 2 * scale, i % 2 == 0 ? 0.15 : -0.15});
    } else if (bit == 1) {
        // strong compact copy down, faint scattered copy up
        out.push_back({10 * scale, col, 2 * scale, 0.60});
        for (std::size_t i = 0; i < 6; ++i)
            out.push_back({5 * scale, (1 + 2 * i) * scale, 2 * scale, i % 2 == 0 ? -0.18 : 0.18});
    } else {
        out.push_back({2 * scale, col, 2 * scale, even ? 0.60 : 0.33});   // upper-half copy
        out.push_back({10 * scale, col, 2 * scale, even ? 0.21 : 0.60});  // lower-half copy
    }
}

inline void paint_block(LabeledImage& img, const SignalBlock& block, double value) {
    for (std::size_t r = 0; r < block.size; ++r)
        for (std::size_t c = 0; c < block.size; ++c)
            img.pixels[(block.row + r) * img.width + block.col + c] += block.amplitude * value;
}

}  // namespace detail

inline constexpr double kAgeMin = 20.0;
inline constexpr double kAgeMax = 70.0;

/// Deterministic synthetic dataset with a 60/20/20 split. Class balance is
/// exact (within one sample) inside every split; regression targets are
/// uniform on [20, 70].
inline DatasetSplit generate_synthetic(TaskKind task, std::size_t n, double noise, std::uint64_t seed,
                                       std::size_t image_size = 16) {
    if (task.is_classification() && task.num_classes < 2)
        throw std::invalid_argument("generate_synthetic: classification needs at least 2 classes");
    if (task.is_classification() && n < 10 * task.num_classes)
        throw std::invalid_argument("generate_synthetic: n must be at least 10 * num_classes, got " +
                                    std::to_string(n));
    if (!task.is_classification() && n < 10)
        throw std::invalid_argument("generate_synthetic: n must be at least 10");
    if (!(noise >= 0.0 && noise < 1.0))
        throw std::invalid_argument("generate_synthetic: noise must be in [0,1)");
    if (image_size % 16 != 0 || image_size == 0)
        throw std::invalid_argument("generate_synthetic: image_size must be a positive multiple of 16");
    const std::size_t scale = image_size / 16;

    std::size_t bits = 0;
    if (task.is_classification()) {
        while ((std::size_t{1} << bits) < task.num_classes) ++bits;
        bits = std::max<std::size_t>(bits, 1);
        if (2 + 4 * (bits - 1) + 2 > 16)
            throw std::invalid_argument("generate_synthetic: too many classes for the block layout");
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto make_sample = [&](int klass, double target) {
        LabeledImage img;
        img.height = img.width = image_size;
        img.pixels.assign(image_size * image_size, 0.25);
        img.label = klass;
        img.target = target;
        std::vector<detail::SignalBlock> blocks;
        if (task.is_classification()) {
            for (std::size_t j = 0; j < bits; ++j) {
                blocks.clear();
                detail::bit_blocks(j, scale, blocks);
                const double bit_on = (static_cast<unsigned>(klass) >> j) & 1u ? 1.0 : 0.0;
                for (const auto& b : blocks) detail::paint_block(img, b, bit_on);
            }
        } else {
            const double tn = (target - kAgeMin) / (kAgeMax - kAgeMin);
            detail::paint_block(img, {2 * scale, 2 * scale, 4 * scale, 0.70}, tn);
            detail::paint_block(img, {10 * scale, 2 * scale, 3 * scale, 0.35}, tn);
        }
        for (double& p : img.pixels) p = detail::quantize_pixel(p + noise * gauss(rng));
        return img;
    };

    auto fill_split = [&](std::vector<LabeledImage>& out, std::size_t count) {
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (task.is_classification()) {
                out.push_back(make_sample(static_cast<int>(i % task.num_classes), 0.0));
            } else {
                out.push_back(make_sample(0, kAgeMin + (kAgeMax - kAgeMin) * unit(rng)));
            }
        }
        std::shuffle(out.begin(), out.end(), rng);
    };

    DatasetSplit split;
    split.task = task;
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    fill_split(split.train, n_train);
    fill_split(split.validation, n_val);
    fill_split(split.test, n - n_train - n_val);

    if (task.is_classification() && noise > 0.0) {
        // pairwise label swaps on the train split only, restricted to class
        // pairs that differ exactly in bit 0 (the weak-half bit, i.e. the
        // distinction an annotator without the occluded half confuses);
        // disjoint pairs keep the class counts exact
        const std::size_t mislabeled = static_cast<std::size_t>(0.8 * noise * static_cast<double>(n_train));
        std::vector<std::vector<std::size_t>> by_label(task.num_classes);
        for (std::size_t i = 0; i < n_train; ++i)
            by_label[static_cast<std::size_t>(split.train[i].label)].push_back(i);
        for (auto& bucket : by_label) std::shuffle(bucket.begin(), bucket.end(), rng);
        const std::size_t families = (task.num_classes + 1) / 2;
        std::size_t per_family = mislabeled / 2 / families;
        for (std::size_t k = 0; k + 1 < task.num_classes; k += 2) {
            const auto& lo = by_label[k];
            const auto& hi = by_label[k + 1];
            const std::size_t pairs = std::min({per_family, lo.size(), hi.size()});
            for (std::size_t i = 0; i < pairs; ++i)
                std::swap(split.train[lo[i]].label, split.train[hi[i]].label);
        }
    }
    return split;
}

// -- dataset directory format -------------------------------------------------
//
// <dir>/images/img_NNNNNN.png   8-bit grayscale
// <dir>/labels.csv              first line: "task,classification,<K>" or
//                               "task,regression"; then one line per sample:
//                               "<split>,<relative path>,<target>"

namespace detail {

inline std::string format_target(const TaskKind& task, const LabeledImage& img) {
    if (task.is_classification()) return std::to_string(img.label);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", img.target);
    return buf;
}

}  // namespace detail

inline void save_directory(const DatasetSplit& split, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw std::runtime_error("save_directory: cannot create '" + dir + "': " + ec.message());
    std::ofstream manifest(fs::path(dir) / "labels.csv");
    if (!manifest) throw std::runtime_error("save_directory: cannot write manifest in '" + dir + "'");
    if (split.task.is_classification())
        manifest << "task,classification," << split.task.num_classes << '\n';
    else
        manifest << "task,regression\n";

    std::size_t counter = 0;
    auto dump = [&](const std::vector<LabeledImage>& images, const char* name) {
        for (const auto& img : images) {
            char file[32];
            std::snprintf(file, sizeof(file), "images/img_%06zu.png", counter++);
            png::GrayImage gray;
            gray.width = img.width;
            gray.height = img.height;
            gray.pixels.resize(img.pixels.size());
            for (std::size_t i = 0; i < img.pixels.size(); ++i)
                gray.pixels[i] = static_cast<std::uint8_t>(
                    std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
            png::write_file(gray, (fs::path(dir) / file).string());
            manifest << name << ',' << file << ',' << detail::format_target(split.task, img) << '\n';
        }
    };
    dump(split.train, "train");
    dump(split.validation, "validation");
    dump(split.test, "test");
}

inline DatasetSplit load_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "labels.csv";
    std::ifstream manifest(manifest_path);
    if (!manifest) throw std::runtime_error("load_directory: missing manifest " + manifest_path.string());

    std::string line;
    if (!std::getline(manifest, line))
        throw std::runtime_error("load_directory: empty manifest " + manifest_path.string());
    DatasetSplit split;
    {
        std::istringstream header(line);
        std::string tag, kind, classes;
        std::getline(header, tag, ',');
        std::getline(header, kind, ',');
        if (tag != "task" || (kind != "classification" && kind != "regression"))
            throw std::runtime_error("load_directory: malformed task header in " + manifest_path.string());
        if (kind == "classification") {
            std::getline(header, classes, ',');
            const int k = std::stoi(classes);
            if (k < 2) throw std::runtime_error("load_directory: invalid class count in " + manifest_path.string());
            split.task = TaskKind::make_classification(static_cast<std::size_t>(k));
        } else {
            split.task = TaskKind::make_regression();
        }
    }

    std::size_t line_no = 1;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string split_name, file, target;
        std::getline(row, split_name, ',');
        std::getline(row, file, ',');
        std::getline(row, target, ',');
        if (file.empty() || target.empty())
            throw std::runtime_error("load_directory: malformed line " + std::to_string(line_no) + " in " +
                                     manifest_path.string());
        const fs::path image_path = fs::path(dir) / file;
        if (!fs::exists(image_path)) throw std::runtime_error("load_directory: missing file " + image_path.string());
        png::GrayImage gray;
        try {
            gray = png::read_file(image_path.string());
        } catch (const std::exception& e) {
            throw std::runtime_error("load_directory: corrupt image " + image_path.string() + ": " + e.what());
        }
        LabeledImage img;
        img.width = gray.width;
        img.height = gray.height;
        img.pixels.resize(gray.pixels.size());
        for (std::size_t i = 0; i < gray.pixels.size(); ++i) img.pixels[i] = gray.pixels[i] / 255.0;
        if (split.task.is_classification()) {
            img.label = std::stoi(target);
            if (img.label < 0 || static_cast<std::size_t>(img.label) >= split.task.num_classes)
                throw std::runtime_error("load_directory: label out of range for " + image_path.string());
        } else {
            img.target = std::stod(target);
        }
        if (split_name == "train") split.train.push_back(std::move(img));
        else if (split_name == "validation") split.validation.push_back(std::move(img));
        else if (split_name == "test") split.test.push_back(std::move(img));
        else
            throw std::runtime_error("load_directory: unknown split '" + split_name + "' at line " +
                                     std::to_string(line_no));
    }

    if (split.task.is_classification()) {
        std::vector<bool> present(split.task.num_classes, false);
        for (const auto& img : split.train) present[static_cast<std::size_t>(img.label)] = true;
        for (std::size_t k = 0; k < present.size(); ++k)
            if (!present[k])
                throw std::runtime_error("load_directory: class " + std::to_string(k) + " missing from train split");
    }
    return split;
}

}  // namespace distillkit
