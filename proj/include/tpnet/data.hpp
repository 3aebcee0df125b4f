#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/error.hpp"
#include "tpnet/format.hpp"

namespace tpnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Features are stored one column per sample (n x D); labels are 0-based.
/// The class slice is the first `num_classes` feature components.
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    int num_classes = 0;

    Eigen::Index size() const noexcept { return features.cols(); }
    Eigen::Index dim() const noexcept { return features.rows(); }

    void validate() const {
        if (size() < 1) {
            throw ValidationError("dataset: no samples");
        }
        if (static_cast<Eigen::Index>(labels.size()) != size()) {
            throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(size()) + " samples");
        }
        if (num_classes < 2) {
            throw ValidationError("dataset: num_classes must be >= 2");
        }
        if (dim() < num_classes) {
            throw ValidationError("dataset: feature dimension " + std::to_string(dim()) +
                                  " is smaller than the class count " +
                                  std::to_string(num_classes));
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw ValidationError("dataset: label of sample " + std::to_string(i) +
                                      " out of range");
            }
        }
        if (!features.allFinite()) {
            throw ValidationError("dataset: non-finite features");
        }
    }
};

/// Samples [begin, begin + count) in file order.
inline Dataset subset(const Dataset& ds, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > ds.size()) {
        throw ValidationError("subset: range out of bounds");
    }
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features = ds.features.middleCols(begin, count);
    out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + begin + count);
    return out;
}

struct SpiralOptions {
    int n_per_class = 240;
    double noise_std = 0.02;
    double turns = 1.5;
    double r_max = 1.0;
    std::uint64_t seed = 0;
};

/// Two intertwined spirals in the plane. Class 0 is
/// (r cos th, r sin th) with r = r_max t, th = 2 pi turns t for t = j / n_per_class,
/// j = 1..n_per_class; class 1 is its point-wise negation. Gaussian noise is
/// then added to every coordinate. Class-0 samples come first.
inline Dataset two_spirals(const SpiralOptions& opts) {
    if (opts.n_per_class < 1) {
        throw ValidationError("two_spirals: n_per_class must be >= 1");
    }
    if (!(opts.noise_std >= 0.0) || !std::isfinite(opts.noise_std)) {
        throw ValidationError("two_spirals: noise_std must be a nonnegative number");
    }
    const int n = opts.n_per_class;
    Dataset ds;
    ds.num_classes = 2;
    ds.features.resize(2, 2 * n);
    ds.labels.resize(static_cast<std::size_t>(2 * n));
    for (int j = 0; j < n; ++j) {
        const double t = static_cast<double>(j + 1) / n;
        const double theta = 2.0 * std::numbers::pi * opts.turns * t;
        const double r = opts.r_max * t;
        ds.features(0, j) = r * std::cos(theta);
        ds.features(1, j) = r * std::sin(theta);
        ds.features(0, n + j) = -ds.features(0, j);
        ds.features(1, n + j) = -ds.features(1, j);
        ds.labels[static_cast<std::size_t>(j)] = 0;
        ds.labels[static_cast<std::size_t>(n + j)] = 1;
    }
    if (opts.noise_std > 0.0) {
        std::mt19937_64 rng(opts.seed);
        std::normal_distribution<double> noise(0.0, opts.noise_std);
        for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
            ds.features(0, j) += noise(rng);
            ds.features(1, j) += noise(rng);
        }
    }
    return ds;
}

namespace idx {

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(path + ": cannot open file");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::string& path) {
    if (bytes.size() < offset + 4) {
        throw ParseError(path, "byte " + std::to_string(bytes.size()),
                         "truncated IDX header (need " + std::to_string(offset + 4) + " bytes)");
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>((v >> 24) & 0xff),
                                static_cast<char>((v >> 16) & 0xff),
                                static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
    out.write(b.data(), 4);
}

inline std::string hex(std::uint32_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) {
        s += digits[(v >> shift) & 0xf];
    }
    return s;
}

} // namespace idx

/// Reads MNIST-style IDX files: images (magic 0x00000803, u8, D x rows x cols)
/// and labels (magic 0x00000801, u8 digits 0..9). Pixels are scaled to [0, 1];
/// digit d becomes class d. `limit` keeps the first samples in file order.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::optional<std::size_t> limit = std::nullopt) {
    const auto images = idx::read_file(images_path);
    const auto labels = idx::read_file(labels_path);

    const std::uint32_t img_magic = idx::read_be32(images, 0, images_path);
    if (img_magic != idx::kImagesMagic) {
        throw ParseError(images_path, "byte 0",
                         "magic mismatch: expected " + idx::hex(idx::kImagesMagic) +
                             " (u8 images), found " + idx::hex(img_magic));
    }
    const std::uint32_t lbl_magic = idx::read_be32(labels, 0, labels_path);
    if (lbl_magic != idx::kLabelsMagic) {
        throw ParseError(labels_path, "byte 0",
                         "magic mismatch: expected " + idx::hex(idx::kLabelsMagic) +
                             " (u8 labels), found " + idx::hex(lbl_magic));
    }
    const std::size_t count = idx::read_be32(images, 4, images_path);
    const std::size_t rows = idx::read_be32(images, 8, images_path);
    const std::size_t cols = idx::read_be32(images, 12, images_path);
    const std::size_t label_count = idx::read_be32(labels, 4, labels_path);
    if (count != label_count) {
        throw ValidationError("IDX count mismatch: " + images_path + " has " +
                              std::to_string(count) + " images, " + labels_path + " has " +
                              std::to_string(label_count) + " labels");
    }
    const std::size_t pixels = rows * cols;
    if (images.size() < 16 + count * pixels) {
        throw ParseError(images_path, "byte " + std::to_string(images.size()),
                         "truncated image data: expected " + std::to_string(16 + count * pixels) +
                             " bytes");
    }
    if (labels.size() < 8 + count) {
        throw ParseError(labels_path, "byte " + std::to_string(labels.size()),
                         "truncated label data: expected " + std::to_string(8 + count) + " bytes");
    }
    const std::size_t n = limit ? std::min(*limit, count) : count;
    if (n == 0) {
        throw ValidationError("IDX: no samples selected");
    }

    Dataset ds;
    ds.num_classes = 10;
    ds.features.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(n));
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* src = images.data() + 16 + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            ds.features(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = src[p] / 255.0;
        }
        const unsigned digit = labels[8 + i];
        if (digit > 9) {
            throw ParseError(labels_path, "byte " + std::to_string(8 + i),
                             "label " + std::to_string(digit) + " outside 0..9");
        }
        ds.labels[i] = static_cast<int>(digit);
    }
    return ds;
}

/// Writes a dataset with features in [0, 1] back to IDX image/label files.
inline void write_mnist_idx(const Dataset& ds, const std::string& images_path,
                            const std::string& labels_path, int rows = 28, int cols = 28) {
    if (ds.dim() != static_cast<Eigen::Index>(rows) * cols) {
        throw ValidationError("write_mnist_idx: feature dimension does not match image size");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lbl(labels_path, std::ios::binary);
    if (!img || !lbl) {
        throw ValidationError("write_mnist_idx: cannot open output files");
    }
    idx::write_be32(img, idx::kImagesMagic);
    idx::write_be32(img, static_cast<std::uint32_t>(ds.size()));
    idx::write_be32(img, static_cast<std::uint32_t>(rows));
    idx::write_be32(img, static_cast<std::uint32_t>(cols));
    idx::write_be32(lbl, idx::kLabelsMagic);
    idx::write_be32(lbl, static_cast<std::uint32_t>(ds.size()));
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index p = 0; p < ds.dim(); ++p) {
            img.put(static_cast<char>(std::lround(ds.features(p, i) * 255.0)));
        }
        lbl.put(static_cast<char>(ds.labels[static_cast<std::size_t>(i)]));
    }
}

/// Concatenates the samples in order: (x^1, ..., x^D).
inline std::pair<Vector, std::vector<int>> stack(const Dataset& ds) {
    // Column-major storage already lays samples out back to back.
    return {Eigen::Map<const Vector>(ds.features.data(), ds.features.size()), ds.labels};
}

inline Dataset unstack(const Vector& stacked, const std::vector<int>& labels, int state_dim,
                       int num_classes) {
    if (state_dim < 1 || stacked.size() != state_dim * static_cast<Eigen::Index>(labels.size())) {
        throw ValidationError("unstack: length does not match state_dim x sample count");
    }
    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Eigen::Map<const Matrix>(stacked.data(), state_dim,
                                           static_cast<Eigen::Index>(labels.size()));
    ds.labels = labels;
    return ds;
}

/// One row per sample: x1,...,xn,label with 1-based labels.
inline void write_dataset_csv(std::ostream& out, const Dataset& ds) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        out << 'x' << (j + 1) << ',';
    }
    out << "label\n";
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.dim(); ++j) {
            out << format_double(ds.features(j, i)) << ',';
        }
        out << ds.labels[static_cast<std::size_t>(i)] + 1 << '\n';
    }
}

} // namespace tpnet
