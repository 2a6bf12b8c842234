#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bnnshift/dataset.hpp"
#include "bnnshift/matrix.hpp"
#include "bnnshift/param_vector.hpp"

namespace bnnshift {

struct PriorSpec;

enum class ModelKind { Mlp, Cnn, Nalu, LinearFeatures };
enum class Activation { Relu, LeakyRelu, Identity };
enum class Link { Softmax, Identity };
enum class LikelihoodKind { Categorical, Gaussian };

struct Likelihood {
    LikelihoodKind kind = LikelihoodKind::Categorical;
    double sigma2 = 1.0;  // gaussian observation noise
};

struct ConvLayer {
    std::size_t kernel = 3;
    std::size_t filters = 4;
    bool zero_padding = false;  // "same" zero padding; off keeps shift identities exact
    bool avg_pool = true;       // 2x2 average pooling, stride 2
};

// Architecture description. widths:
//   Mlp            {in, hidden..., out}
//   Cnn            dense head widths after the conv/pool flatten, ending in out
//   Nalu           {in}   output is prod_j x_j^{w_j}, inputs must be positive
//   LinearFeatures {in}   scalar f = w.x; softmax link reads logits (f, 0)
struct ModelSpec {
    ModelKind kind = ModelKind::Mlp;
    std::vector<std::size_t> widths;
    ConvLayer conv;
    std::size_t image_h = 0, image_w = 0, channels = 1;  // Cnn input shape
    Activation activation = Activation::Relu;
    double leaky_slope = 0.01;
    Link link = Link::Softmax;
    Likelihood likelihood;

    std::size_t input_dim() const;
    std::size_t output_dim() const;      // logits / output vector length
    std::size_t conv_out_h() const;      // Cnn conv output spatial dims
    std::size_t conv_out_w() const;
    std::size_t flatten_dim() const;     // Cnn dense-head input size

    void validate() const;
    ParamVector make_params() const;     // zero-initialized, layout populated
};

// Output after the link function: softmax probabilities, raw outputs, or the
// NALU product.
Vector forward(const ModelSpec& spec, const ParamVector& params,
               std::span<const double> x);

// Pre-link outputs (logits for softmax models); NALU reports the log-product.
Vector forward_logits(const ModelSpec& spec, const ParamVector& params,
                      std::span<const double> x);

double log_likelihood(const ModelSpec& spec, const ParamVector& params,
                      const LabeledDataset& data);

// Accumulates the gradient of the log likelihood into grad (sized dim());
// returns the log likelihood value.
double log_likelihood_grad(const ModelSpec& spec, const ParamVector& params,
                           const LabeledDataset& data, Vector& grad);

// grad of [log p(D|w) + log p(w)] / T by exact reverse-mode accumulation.
Vector grad_log_posterior(const ModelSpec& spec, const PriorSpec& prior,
                          const ParamVector& params, const LabeledDataset& data,
                          double temperature);

// Read-only view of the first-layer weight matrix with the bias appended as
// the last row: (m+1) x h for Mlp, (K*K*C+1) x filters for Cnn, m x 1 without
// a bias row for Nalu / LinearFeatures. Aliases the flat parameter storage.
class FirstLayerView {
public:
    FirstLayerView(const ModelSpec& spec, const ParamVector& params);
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool has_bias_row() const { return has_bias_; }
    double operator()(std::size_t i, std::size_t j) const;

private:
    const ParamVector* params_;
    std::size_t w_offset_, b_offset_;
    std::size_t rows_, cols_;
    bool has_bias_;
};

}  // namespace bnnshift
