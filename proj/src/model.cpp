#include "bnnshift/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bnnshift/errors.hpp"
#include "bnnshift/prior.hpp"

namespace bnnshift {

namespace {

double act_fn(Activation a, double slope, double z) {
    switch (a) {
        case Activation::Relu: return z > 0.0 ? z : 0.0;
        case Activation::LeakyRelu: return z > 0.0 ? z : slope * z;
        case Activation::Identity: return z;
    }
    return z;
}

// Subgradient at 0 fixed to 0 for determinism.
double act_deriv(Activation a, double slope, double z) {
    switch (a) {
        case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::LeakyRelu: return z > 0.0 ? 1.0 : slope;
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

double logsumexp(const Vector& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

Vector softmax_stable(const Vector& logits) {
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    Vector p(logits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

// Cached intermediate values of one forward pass, for reverse accumulation.
struct Trace {
    std::vector<Vector> acts;  // acts[0] = dense-stack input
    std::vector<Vector> pres;  // pre-activation per dense layer
    Vector conv_pre;           // (oh*ow) x F, row-major over positions
    Vector conv_act;
    Vector patch_cache;        // im2col rows for the conv gradient
};

struct DenseStackDims {
    std::vector<std::size_t> widths;  // input, hidden..., out
    std::size_t first_index;          // layer number of the first dense layer
};

DenseStackDims dense_dims(const ModelSpec& spec) {
    DenseStackDims d;
    if (spec.kind == ModelKind::Mlp) {
        d.widths = spec.widths;
        d.first_index = 1;
    } else {  // Cnn head
        d.widths.push_back(spec.flatten_dim());
        d.widths.insert(d.widths.end(), spec.widths.begin(), spec.widths.end());
        d.first_index = 2;
    }
    return d;
}

// z = a W + b through the named dense blocks; logits in acts.back().
void dense_forward(const ModelSpec& spec, const ParamVector& params,
                   const DenseStackDims& dims, Trace& tr) {
    const std::size_t layers = dims.widths.size() - 1;
    for (std::size_t t = 0; t < layers; ++t) {
        const std::size_t idx = dims.first_index + t;
        const auto w = params.block_span("W" + std::to_string(idx));
        const auto b = params.block_span("b" + std::to_string(idx));
        const std::size_t in = dims.widths[t], out = dims.widths[t + 1];
        const Vector& a = tr.acts.back();
        Vector z(out);
        for (std::size_t j = 0; j < out; ++j) z[j] = b[j];
        for (std::size_t i = 0; i < in; ++i) {
            const double ai = a[i];
            if (ai == 0.0) continue;
            for (std::size_t j = 0; j < out; ++j) z[j] += ai * w[i * out + j];
        }
        tr.pres.push_back(z);
        Vector act(out);
        const bool last = (t + 1 == layers);
        for (std::size_t j = 0; j < out; ++j)
            act[j] = last ? z[j] : act_fn(spec.activation, spec.leaky_slope, z[j]);
        tr.acts.push_back(std::move(act));
    }
}

void dense_backward(const ModelSpec& spec, const ParamVector& params,
                    const DenseStackDims& dims, const Trace& tr,
                    const Vector& dlogits, Vector& grad, Vector& dinput) {
    const std::size_t layers = dims.widths.size() - 1;
    Vector delta = dlogits;  // d loglik / d z at the current layer
    for (std::size_t t = layers; t-- > 0;) {
        const std::size_t idx = dims.first_index + t;
        const auto& wb = params.block("W" + std::to_string(idx));
        const auto& bb = params.block("b" + std::to_string(idx));
        const auto w = params.block_span("W" + std::to_string(idx));
        const std::size_t in = dims.widths[t], out = dims.widths[t + 1];
        const Vector& a = tr.acts[t];
        for (std::size_t j = 0; j < out; ++j) grad[bb.offset + j] += delta[j];
        for (std::size_t i = 0; i < in; ++i) {
            const double ai = a[i];
            for (std::size_t j = 0; j < out; ++j)
                grad[wb.offset + i * out + j] += ai * delta[j];
        }
        Vector prev(in, 0.0);
        for (std::size_t i = 0; i < in; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < out; ++j) s += w[i * out + j] * delta[j];
            prev[i] = s;
        }
        if (t > 0) {
            const Vector& pre = tr.pres[t - 1];
            for (std::size_t i = 0; i < in; ++i)
                prev[i] *= act_deriv(spec.activation, spec.leaky_slope, pre[i]);
        }
        delta = std::move(prev);
    }
    dinput = std::move(delta);
}

void conv_forward(const ModelSpec& spec, const ParamVector& params,
                  std::span<const double> x, Trace& tr) {
    const std::size_t K = spec.conv.kernel, C = spec.channels, F = spec.conv.filters;
    const std::size_t H = spec.image_h, W = spec.image_w;
    const std::size_t oh = spec.conv_out_h(), ow = spec.conv_out_w();
    const std::ptrdiff_t pad = spec.conv.zero_padding
                                   ? static_cast<std::ptrdiff_t>(K / 2)
                                   : 0;
    const auto wf = params.block_span("W1");
    const auto bf = params.block_span("b1");
    const std::size_t patch_dim = K * K * C;

    tr.patch_cache.assign(oh * ow * patch_dim, 0.0);
    tr.conv_pre.assign(oh * ow * F, 0.0);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double* patch = tr.patch_cache.data() + (oy * ow + ox) * patch_dim;
            for (std::size_t ky = 0; ky < K; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                    for (std::size_t c = 0; c < C; ++c) {
                        double v = 0.0;
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(H) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(W))
                            v = x[(static_cast<std::size_t>(iy) * W +
                                   static_cast<std::size_t>(ix)) * C + c];
                        patch[(ky * K + kx) * C + c] = v;
                    }
                }
            }
            double* out = tr.conv_pre.data() + (oy * ow + ox) * F;
            for (std::size_t f = 0; f < F; ++f) out[f] = bf[f];
            for (std::size_t i = 0; i < patch_dim; ++i) {
                const double pi = patch[i];
                if (pi == 0.0) continue;
                for (std::size_t f = 0; f < F; ++f) out[f] += pi * wf[i * F + f];
            }
        }
    }

    tr.conv_act.resize(tr.conv_pre.size());
    for (std::size_t i = 0; i < tr.conv_pre.size(); ++i)
        tr.conv_act[i] = act_fn(spec.activation, spec.leaky_slope, tr.conv_pre[i]);

    if (spec.conv.avg_pool) {
        const std::size_t ph = oh / 2, pw = ow / 2;
        Vector pooled(ph * pw * F, 0.0);
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t xq = 0; xq < pw; ++xq)
                for (std::size_t f = 0; f < F; ++f) {
                    double s = 0.0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx)
                            s += tr.conv_act[((2 * y + dy) * ow + (2 * xq + dx)) * F + f];
                    pooled[(y * pw + xq) * F + f] = 0.25 * s;
                }
        tr.acts.push_back(std::move(pooled));
    } else {
        tr.acts.push_back(tr.conv_act);
    }
}

void conv_backward(const ModelSpec& spec, const ParamVector& params,
                   const Trace& tr, const Vector& dflat, Vector& grad) {
    const std::size_t K = spec.conv.kernel, C = spec.channels, F = spec.conv.filters;
    const std::size_t oh = spec.conv_out_h(), ow = spec.conv_out_w();
    const std::size_t patch_dim = K * K * C;

    Vector dact(oh * ow * F, 0.0);
    if (spec.conv.avg_pool) {
        const std::size_t ph = oh / 2, pw = ow / 2;
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t xq = 0; xq < pw; ++xq)
                for (std::size_t f = 0; f < F; ++f) {
                    const double d = 0.25 * dflat[(y * pw + xq) * F + f];
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx)
                            dact[((2 * y + dy) * ow + (2 * xq + dx)) * F + f] += d;
                }
    } else {
        dact = dflat;
    }

    const auto& wb = params.block("W1");
    const auto& bb = params.block("b1");
    for (std::size_t pos = 0; pos < oh * ow; ++pos) {
        const double* patch = tr.patch_cache.data() + pos * patch_dim;
        for (std::size_t f = 0; f < F; ++f) {
            const double dz = dact[pos * F + f] *
                              act_deriv(spec.activation, spec.leaky_slope,
                                        tr.conv_pre[pos * F + f]);
            if (dz == 0.0) continue;
            grad[bb.offset + f] += dz;
            for (std::size_t i = 0; i < patch_dim; ++i)
                grad[wb.offset + i * F + f] += patch[i] * dz;
        }
    }
}

// Logits (pre-link outputs) for one input; NALU yields the log-product.
Vector eval_logits(const ModelSpec& spec, const ParamVector& params,
                   std::span<const double> x, Trace& tr) {
    if (x.size() != spec.input_dim())
        throw ShapeError("forward: input has dimension " + std::to_string(x.size()) +
                         ", model expects " + std::to_string(spec.input_dim()));
    switch (spec.kind) {
        case ModelKind::Mlp: {
            tr.acts.push_back(Vector(x.begin(), x.end()));
            dense_forward(spec, params, dense_dims(spec), tr);
            return tr.acts.back();
        }
        case ModelKind::Cnn: {
            conv_forward(spec, params, x, tr);
            dense_forward(spec, params, dense_dims(spec), tr);
            return tr.acts.back();
        }
        case ModelKind::Nalu: {
            const auto w = params.block_span("W1");
            double u = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                if (x[j] <= 0.0)
                    throw DomainError("nalu: inputs must be strictly positive");
                u += w[j] * std::log(x[j]);
            }
            return {u};
        }
        case ModelKind::LinearFeatures: {
            const auto w = params.block_span("W1");
            double f = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) f += w[j] * x[j];
            if (spec.link == Link::Softmax) return {f, 0.0};
            return {f};
        }
    }
    throw ConfigError("forward: unknown model kind");
}

// d loglik / d logits for one data point.
Vector dloglik_dlogits(const ModelSpec& spec, const Vector& logits,
                       const LabeledDataset& data, std::size_t i) {
    if (spec.likelihood.kind == LikelihoodKind::Categorical) {
        Vector g = softmax_stable(logits);
        for (double& v : g) v = -v;
        g[static_cast<std::size_t>(data.targets_class[i])] += 1.0;
        return g;
    }
    const double s2 = spec.likelihood.sigma2;
    Vector g(logits.size());
    if (spec.kind == ModelKind::Nalu) {
        g[0] = (std::log(data.targets_value[i]) - logits[0]) / s2;
    } else {
        g[0] = (data.targets_value[i] - logits[0]) / s2;
    }
    return g;
}

double loglik_point(const ModelSpec& spec, const Vector& logits,
                    const LabeledDataset& data, std::size_t i) {
    if (spec.likelihood.kind == LikelihoodKind::Categorical) {
        const int y = data.targets_class[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.size())
            throw ConfigError("log_likelihood: class target out of range");
        return logits[static_cast<std::size_t>(y)] - logsumexp(logits);
    }
    const double s2 = spec.likelihood.sigma2;
    double r;
    if (spec.kind == ModelKind::Nalu) {
        if (data.targets_value[i] <= 0.0)
            throw DomainError("nalu: gaussian likelihood needs positive targets");
        r = std::log(data.targets_value[i]) - logits[0];
    } else {
        r = data.targets_value[i] - logits[0];
    }
    return -0.5 * r * r / s2 - 0.5 * std::log(2.0 * M_PI * s2);
}

void check_targets(const ModelSpec& spec, const LabeledDataset& data) {
    if (data.n() == 0) throw ConfigError("log_likelihood: dataset is empty");
    if (spec.likelihood.kind == LikelihoodKind::Categorical) {
        if (data.targets_class.size() != data.n())
            throw ShapeError("log_likelihood: class target count mismatch");
    } else if (data.targets_value.size() != data.n()) {
        throw ShapeError("log_likelihood: value target count mismatch");
    }
}

}  // namespace

std::size_t ModelSpec::input_dim() const {
    switch (kind) {
        case ModelKind::Mlp: return widths.front();
        case ModelKind::Cnn: return image_h * image_w * channels;
        case ModelKind::Nalu:
        case ModelKind::LinearFeatures: return widths.front();
    }
    return 0;
}

std::size_t ModelSpec::output_dim() const {
    switch (kind) {
        case ModelKind::Mlp:
        case ModelKind::Cnn: return widths.back();
        case ModelKind::Nalu: return 1;
        case ModelKind::LinearFeatures: return link == Link::Softmax ? 2 : 1;
    }
    return 0;
}

std::size_t ModelSpec::conv_out_h() const {
    return conv.zero_padding ? image_h : image_h - conv.kernel + 1;
}

std::size_t ModelSpec::conv_out_w() const {
    return conv.zero_padding ? image_w : image_w - conv.kernel + 1;
}

std::size_t ModelSpec::flatten_dim() const {
    std::size_t oh = conv_out_h(), ow = conv_out_w();
    if (conv.avg_pool) {
        oh /= 2;
        ow /= 2;
    }
    return oh * ow * conv.filters;
}

void ModelSpec::validate() const {
    if (likelihood.kind == LikelihoodKind::Categorical && link != Link::Softmax)
        throw ConfigError("model: categorical likelihood requires softmax link");
    if (likelihood.kind == LikelihoodKind::Gaussian && link == Link::Softmax &&
        kind != ModelKind::Nalu)
        throw ConfigError("model: gaussian likelihood requires identity link");
    if (likelihood.sigma2 <= 0.0) throw ConfigError("model: sigma2 must be positive");
    switch (kind) {
        case ModelKind::Mlp:
            if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
            break;
        case ModelKind::Cnn: {
            if (image_h == 0 || image_w == 0) throw ConfigError("cnn: image shape required");
            if (widths.empty()) throw ConfigError("cnn: dense head widths required");
            if (!conv.zero_padding && (image_h < conv.kernel || image_w < conv.kernel))
                throw ConfigError("cnn: kernel larger than image");
            if (conv.avg_pool && (conv_out_h() % 2 != 0 || conv_out_w() % 2 != 0))
                throw ConfigError("cnn: average pooling requires even conv output dims");
            break;
        }
        case ModelKind::Nalu:
        case ModelKind::LinearFeatures:
            if (widths.size() != 1 || widths.front() == 0)
                throw ConfigError("nalu/linear-features: widths must be {input_dim}");
            break;
    }
}

ParamVector ModelSpec::make_params() const {
    validate();
    ParamVector p;
    switch (kind) {
        case ModelKind::Mlp:
            for (std::size_t t = 1; t < widths.size(); ++t) {
                p.add_block("W" + std::to_string(t), {widths[t - 1], widths[t]});
                p.add_block("b" + std::to_string(t), {widths[t]});
            }
            break;
        case ModelKind::Cnn: {
            p.add_block("W1", {conv.kernel * conv.kernel * channels, conv.filters});
            p.add_block("b1", {conv.filters});
            std::size_t prev = flatten_dim();
            for (std::size_t t = 0; t < widths.size(); ++t) {
                p.add_block("W" + std::to_string(t + 2), {prev, widths[t]});
                p.add_block("b" + std::to_string(t + 2), {widths[t]});
                prev = widths[t];
            }
            break;
        }
        case ModelKind::Nalu:
        case ModelKind::LinearFeatures:
            p.add_block("W1", {widths.front()});
            break;
    }
    return p;
}

Vector forward_logits(const ModelSpec& spec, const ParamVector& params,
                      std::span<const double> x) {
    Trace tr;
    return eval_logits(spec, params, x, tr);
}

Vector forward(const ModelSpec& spec, const ParamVector& params,
               std::span<const double> x) {
    Trace tr;
    Vector logits = eval_logits(spec, params, x, tr);
    if (spec.kind == ModelKind::Nalu) return {std::exp(logits[0])};
    if (spec.link == Link::Softmax) return softmax_stable(logits);
    return logits;
}

double log_likelihood(const ModelSpec& spec, const ParamVector& params,
                      const LabeledDataset& data) {
    check_targets(spec, data);
    double total = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
        Trace tr;
        Vector logits = eval_logits(spec, params, data.inputs.row(i), tr);
        for (double v : logits)
            if (std::isnan(v)) throw NumericError("log_likelihood: NaN in forward pass");
        total += loglik_point(spec, logits, data, i);
    }
    return total;
}

double log_likelihood_grad(const ModelSpec& spec, const ParamVector& params,
                           const LabeledDataset& data, Vector& grad) {
    check_targets(spec, data);
    if (grad.size() != params.dim()) grad.assign(params.dim(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
        Trace tr;
        Vector logits = eval_logits(spec, params, data.inputs.row(i), tr);
        for (double v : logits)
            if (std::isnan(v)) throw NumericError("log_likelihood: NaN in forward pass");
        total += loglik_point(spec, logits, data, i);
        Vector dlogits = dloglik_dlogits(spec, logits, data, i);
        switch (spec.kind) {
            case ModelKind::Mlp: {
                Vector dinput;
                dense_backward(spec, params, dense_dims(spec), tr, dlogits, grad, dinput);
                break;
            }
            case ModelKind::Cnn: {
                Vector dflat;
                dense_backward(spec, params, dense_dims(spec), tr, dlogits, grad, dflat);
                conv_backward(spec, params, tr, dflat, grad);
                break;
            }
            case ModelKind::Nalu: {
                const auto& wb = params.block("W1");
                const auto x = data.inputs.row(i);
                for (std::size_t j = 0; j < x.size(); ++j)
                    grad[wb.offset + j] += dlogits[0] * std::log(x[j]);
                break;
            }
            case ModelKind::LinearFeatures: {
                const auto& wb = params.block("W1");
                const auto x = data.inputs.row(i);
                for (std::size_t j = 0; j < x.size(); ++j)
                    grad[wb.offset + j] += dlogits[0] * x[j];
                break;
            }
        }
    }
    return total;
}

Vector grad_log_posterior(const ModelSpec& spec, const PriorSpec& prior,
                          const ParamVector& params, const LabeledDataset& data,
                          double temperature) {
    if (temperature <= 0.0) throw ConfigError("grad_log_posterior: temperature must be positive");
    Vector grad(params.dim(), 0.0);
    if (data.n() > 0) log_likelihood_grad(spec, params, data, grad);
    Vector pgrad(params.dim(), 0.0);
    prior_logpdf_grad(prior, params, pgrad);
    for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] = (grad[i] + pgrad[i]) / temperature;
    return grad;
}

FirstLayerView::FirstLayerView(const ModelSpec& spec, const ParamVector& params)
    : params_(&params) {
    const auto& wb = params.block("W1");
    w_offset_ = wb.offset;
    if (spec.kind == ModelKind::Nalu || spec.kind == ModelKind::LinearFeatures) {
        rows_ = wb.shape[0];
        cols_ = 1;
        b_offset_ = 0;
        has_bias_ = false;
    } else {
        rows_ = wb.shape[0] + 1;
        cols_ = wb.shape[1];
        b_offset_ = params.block("b1").offset;
        has_bias_ = true;
    }
}

double FirstLayerView::operator()(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) throw ShapeError("FirstLayerView: index out of range");
    if (has_bias_ && i + 1 == rows_) return params_->data[b_offset_ + j];
    return params_->data[w_offset_ + i * cols_ + j];
}

}  // namespace bnnshift
