#include "bnnshift/patches.hpp"

#include "bnnshift/errors.hpp"

namespace bnnshift {

Matrix extract_patches(const Matrix& images, std::size_t h, std::size_t w,
                       std::size_t channels, std::size_t k, bool padding) {
    if (h == 0 || w == 0 || k == 0) throw ConfigError("extract_patches: empty shape");
    if (images.cols() != h * w * channels)
        throw ShapeError("extract_patches: row length does not match image shape");
    const std::size_t pad = padding ? k / 2 : 0;
    if (!padding && (h < k || w < k))
        throw ConfigError("extract_patches: kernel larger than image");
    if (padding && k > h + 2 * pad)
        throw ConfigError("extract_patches: kernel larger than padded image");

    const std::size_t oh = padding ? h : h - k + 1;
    const std::size_t ow = padding ? w : w - k + 1;
    const std::size_t n = images.rows();
    Matrix patches(n * oh * ow, k * k * channels);

    for (std::size_t img = 0; img < n; ++img) {
        const auto row = images.row(img);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t out_row = (img * oh + oy) * ow + ox;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t c = 0; c < channels; ++c) {
                            double v = 0.0;
                            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                                ix < static_cast<std::ptrdiff_t>(w))
                                v = row[(static_cast<std::size_t>(iy) * w +
                                         static_cast<std::size_t>(ix)) * channels + c];
                            patches(out_row, (ky * k + kx) * channels + c) = v;
                        }
                    }
                }
            }
    }
    return patches;
}

Matrix extract_patches(const LabeledDataset& data, std::size_t k, bool padding) {
    if (!data.is_image()) throw ConfigError("extract_patches: dataset is not image-shaped");
    return extract_patches(data.inputs, data.image_h, data.image_w, data.channels, k,
                           padding);
}

LabeledDataset crop_images(const LabeledDataset& data, std::size_t margin) {
    if (!data.is_image()) throw ConfigError("crop_images: dataset is not image-shaped");
    if (2 * margin >= data.image_h || 2 * margin >= data.image_w)
        throw ConfigError("crop_images: margin too large");
    const std::size_t h = data.image_h - 2 * margin, w = data.image_w - 2 * margin;
    const std::size_t c = data.channels;
    LabeledDataset out;
    out.image_h = h;
    out.image_w = w;
    out.channels = c;
    out.targets_class = data.targets_class;
    out.targets_value = data.targets_value;
    out.meta = data.meta;
    out.inputs = Matrix(data.n(), h * w * c);
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t ch = 0; ch < c; ++ch)
                    out.inputs(i, (y * w + x) * c + ch) =
                        data.inputs(i, ((y + margin) * data.image_w + (x + margin)) * c + ch);
    return out;
}

}  // namespace bnnshift
