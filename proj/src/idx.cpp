#include "bnnshift/idx.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "bnnshift/errors.hpp"

namespace bnnshift {

namespace {

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset) {
    if (offset + 4 > buf.size())
        throw FormatError("idx: truncated file at byte offset " + std::to_string(offset));
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

}  // namespace

IdxTensor load_idx_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("idx: cannot open '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 4)
        throw FormatError("idx: file shorter than the 4-byte magic (size " +
                          std::to_string(buf.size()) + ")");
    if (buf[0] != 0 || buf[1] != 0)
        throw FormatError("idx: bad magic at byte offset 0");
    if (buf[2] != 0x08)
        throw FormatError("idx: unsupported type byte at offset 2 (only unsigned byte)");
    const std::size_t ndims = buf[3];
    if (ndims == 0 || ndims > 4)
        throw FormatError("idx: unsupported dimension count at byte offset 3");

    IdxTensor t;
    std::size_t offset = 4;
    std::size_t total = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        const std::uint32_t dim = read_be32(buf, offset);
        offset += 4;
        t.dims.push_back(dim);
        total *= dim;
    }
    if (buf.size() - offset != total)
        throw FormatError("idx: expected " + std::to_string(total) + " data bytes, found " +
                          std::to_string(buf.size() - offset) + " at byte offset " +
                          std::to_string(offset));
    t.values.assign(buf.begin() + static_cast<std::ptrdiff_t>(offset), buf.end());
    return t;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    IdxTensor images = load_idx_tensor(images_path);
    IdxTensor labels = load_idx_tensor(labels_path);
    if (images.dims.size() != 3)
        throw FormatError("idx: image file must have 3 dimensions (count, h, w)");
    if (labels.dims.size() != 1) throw FormatError("idx: label file must have 1 dimension");
    if (images.dims[0] != labels.dims[0])
        throw FormatError("idx: image count " + std::to_string(images.dims[0]) +
                          " does not match label count " + std::to_string(labels.dims[0]));

    LabeledDataset data;
    const std::size_t n = images.dims[0], h = images.dims[1], w = images.dims[2];
    data.image_h = h;
    data.image_w = w;
    data.channels = 1;
    data.inputs = Matrix(n, h * w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t px = 0; px < h * w; ++px)
            data.inputs(i, px) = static_cast<double>(images.values[i * h * w + px]) / 255.0;
    data.targets_class.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        data.targets_class[i] = static_cast<int>(labels.values[i]);
    return data;
}

void save_dataset(const LabeledDataset& data, const std::string& path_prefix) {
    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw FormatError("save_dataset: cannot open '" + path_prefix + ".bin'");
    bin.write(reinterpret_cast<const char*>(data.inputs.data().data()),
              static_cast<std::streamsize>(data.inputs.size() * sizeof(double)));

    nlohmann::ordered_json meta;
    meta["n"] = data.n();
    meta["feature_dim"] = data.feature_dim();
    meta["image_h"] = data.image_h;
    meta["image_w"] = data.image_w;
    meta["channels"] = data.channels;
    meta["targets_class"] = data.targets_class;
    meta["targets_value"] = data.targets_value;
    meta["dependence_kind"] = data.meta.dependence_kind;
    meta["corruption"] = data.meta.corruption;
    meta["constraint_offsets"] = data.meta.constraint_offsets;
    meta["constraints_rows"] = data.meta.constraints.rows();
    meta["constraints"] = data.meta.constraints.data();
    meta["teacher_direction"] = data.meta.teacher_direction;
    std::ofstream js(path_prefix + ".json");
    js << meta.dump(2) << "\n";
}

LabeledDataset load_dataset(const std::string& path_prefix) {
    std::ifstream js(path_prefix + ".json");
    if (!js) throw FormatError("load_dataset: cannot open '" + path_prefix + ".json'");
    nlohmann::json meta = nlohmann::json::parse(js, nullptr, true, true);

    LabeledDataset data;
    const std::size_t n = meta.at("n").get<std::size_t>();
    const std::size_t d = meta.at("feature_dim").get<std::size_t>();
    data.image_h = meta.value("image_h", std::size_t{0});
    data.image_w = meta.value("image_w", std::size_t{0});
    data.channels = meta.value("channels", std::size_t{1});
    data.targets_class = meta.value("targets_class", std::vector<int>{});
    data.targets_value = meta.value("targets_value", Vector{});
    data.meta.dependence_kind = meta.value("dependence_kind", std::string{});
    data.meta.corruption = meta.value("corruption", std::string{});
    data.meta.constraint_offsets = meta.value("constraint_offsets", Vector{});
    data.meta.teacher_direction = meta.value("teacher_direction", Vector{});
    const std::size_t crows = meta.value("constraints_rows", std::size_t{0});
    if (crows > 0) {
        Vector flat = meta.at("constraints").get<Vector>();
        data.meta.constraints = Matrix(crows, flat.size() / crows);
        data.meta.constraints.data() = flat;
    }

    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw FormatError("load_dataset: cannot open '" + path_prefix + ".bin'");
    data.inputs = Matrix(n, d);
    if (!bin.read(reinterpret_cast<char*>(data.inputs.data().data()),
                  static_cast<std::streamsize>(n * d * sizeof(double))))
        throw FormatError("load_dataset: truncated input payload");
    return data;
}

void normalize_with_train_stats(LabeledDataset& train, LabeledDataset* test) {
    const std::size_t n = train.n(), d = train.feature_dim();
    if (n < 2) throw ConfigError("normalize: need at least 2 training rows");
    Vector mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += train.inputs(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double r = train.inputs(i, j) - mean[j];
            var[j] += r * r;
        }
    for (double& v : var) v /= static_cast<double>(n - 1);

    auto apply = [&](LabeledDataset& ds) {
        for (std::size_t i = 0; i < ds.n(); ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double x = ds.inputs(i, j) - mean[j];
                if (var[j] > 0.0) x /= std::sqrt(var[j]);
                ds.inputs(i, j) = x;
            }
    };
    apply(train);
    if (test) {
        if (test->feature_dim() != d)
            throw ShapeError("normalize: test feature dimension mismatch");
        apply(*test);
    }
}

}  // namespace bnnshift
