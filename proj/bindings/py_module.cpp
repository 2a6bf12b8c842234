#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bnnshift/analysis.hpp"
#include "bnnshift/blr.hpp"
#include "bnnshift/bma.hpp"
#include "bnnshift/corrupt.hpp"
#include "bnnshift/experiment.hpp"
#include "bnnshift/generators.hpp"
#include "bnnshift/grid.hpp"
#include "bnnshift/hmc.hpp"
#include "bnnshift/idx.hpp"
#include "bnnshift/linalg.hpp"
#include "bnnshift/map.hpp"
#include "bnnshift/patches.hpp"
#include "bnnshift/prior.hpp"
#include "bnnshift/sampling.hpp"

namespace py = pybind11;
using namespace bnnshift;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data().begin());
    return m;
}

Vector to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw ShapeError("expected a 1-d array");
    return Vector(a.data(), a.data() + a.size());
}

py::array_t<double> from_matrix(const Matrix& m) {
    return py::array_t<double>(
        {static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())},
        m.data().data());
}

py::array_t<double> from_vector(const Vector& v) {
    return py::array_t<double>({static_cast<py::ssize_t>(v.size())}, v.data());
}

py::array_t<double> samples_to_array(const std::vector<ParamVector>& samples) {
    if (samples.empty()) return py::array_t<double>(std::vector<std::size_t>{0, 0});
    py::array_t<double> a({samples.size(), samples.front().dim()});
    double* out = a.mutable_data();
    for (const auto& s : samples) out = std::copy(s.data.begin(), s.data.end(), out);
    return a;
}

std::vector<ParamVector> array_to_samples(const ModelSpec& spec,
                                          const py::array_t<double>& arr) {
    ParamVector proto = spec.make_params();
    auto buf = arr.unchecked<2>();
    if (static_cast<std::size_t>(buf.shape(1)) != proto.dim())
        throw ShapeError("sample array width does not match the parameter dimension");
    std::vector<ParamVector> out;
    out.reserve(static_cast<std::size_t>(buf.shape(0)));
    for (py::ssize_t i = 0; i < buf.shape(0); ++i) {
        ParamVector p = proto;
        for (py::ssize_t j = 0; j < buf.shape(1); ++j)
            p.data[static_cast<std::size_t>(j)] = buf(i, j);
        out.push_back(std::move(p));
    }
    return out;
}

ParamVector array_to_params(const ModelSpec& spec, const py::array_t<double>& arr) {
    ParamVector p = spec.make_params();
    auto v = to_vector(arr);
    if (v.size() != p.dim()) throw ShapeError("parameter array has the wrong length");
    p.data = std::move(v);
    return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Posterior contraction laboratory: HMC, MAP, data-dependent priors and "
              "covariate-shift diagnostics";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

    // ----- numkit ---------------------------------------------------------
    py::class_<RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"),
             py::arg("stream_id") = 0)
        .def("next_u64", &RngStream::next_u64)
        .def("next_unit", &RngStream::next_unit)
        .def("next_gaussian", &RngStream::next_gaussian)
        .def("substream", &RngStream::substream, py::arg("id"));

    m.def("eigh_symmetric", [](const py::array_t<double>& a, double tol) {
        auto r = eigh_symmetric(to_matrix(a), tol);
        return py::make_tuple(from_vector(r.eigenvalues), from_matrix(r.eigenvectors));
    }, py::arg("a"), py::arg("tol") = 1e-10);

    m.def("cholesky",
          [](const py::array_t<double>& a) { return from_matrix(cholesky(to_matrix(a))); });

    m.def("sample_gaussian",
          [](RngStream& rng, const py::array_t<double>& mean,
             const py::array_t<double>& factor) {
              return from_vector(sample_gaussian(rng, to_vector(mean), to_matrix(factor)));
          });

    // ----- models ----------------------------------------------------------
    py::enum_<ModelKind>(m, "ModelKind")
        .value("mlp", ModelKind::Mlp)
        .value("cnn", ModelKind::Cnn)
        .value("nalu", ModelKind::Nalu)
        .value("linear_features", ModelKind::LinearFeatures);
    py::enum_<Activation>(m, "Activation")
        .value("relu", Activation::Relu)
        .value("leaky_relu", Activation::LeakyRelu)
        .value("identity", Activation::Identity);
    py::enum_<Link>(m, "Link")
        .value("softmax", Link::Softmax)
        .value("identity", Link::Identity);
    py::enum_<LikelihoodKind>(m, "LikelihoodKind")
        .value("categorical", LikelihoodKind::Categorical)
        .value("gaussian", LikelihoodKind::Gaussian);

    py::class_<Likelihood>(m, "Likelihood")
        .def(py::init<>())
        .def_readwrite("kind", &Likelihood::kind)
        .def_readwrite("sigma2", &Likelihood::sigma2);

    py::class_<ConvLayer>(m, "ConvLayer")
        .def(py::init<>())
        .def_readwrite("kernel", &ConvLayer::kernel)
        .def_readwrite("filters", &ConvLayer::filters)
        .def_readwrite("zero_padding", &ConvLayer::zero_padding)
        .def_readwrite("avg_pool", &ConvLayer::avg_pool);

    py::class_<ModelSpec>(m, "ModelSpec")
        .def(py::init<>())
        .def_readwrite("kind", &ModelSpec::kind)
        .def_readwrite("widths", &ModelSpec::widths)
        .def_readwrite("conv", &ModelSpec::conv)
        .def_readwrite("image_h", &ModelSpec::image_h)
        .def_readwrite("image_w", &ModelSpec::image_w)
        .def_readwrite("channels", &ModelSpec::channels)
        .def_readwrite("activation", &ModelSpec::activation)
        .def_readwrite("leaky_slope", &ModelSpec::leaky_slope)
        .def_readwrite("link", &ModelSpec::link)
        .def_readwrite("likelihood", &ModelSpec::likelihood)
        .def("validate", &ModelSpec::validate)
        .def("input_dim", &ModelSpec::input_dim)
        .def("output_dim", &ModelSpec::output_dim)
        .def("param_dim",
             [](const ModelSpec& s) { return s.make_params().dim(); });

    py::class_<LabeledDataset>(m, "LabeledDataset")
        .def(py::init<>())
        .def_property(
            "inputs",
            [](const LabeledDataset& d) { return from_matrix(d.inputs); },
            [](LabeledDataset& d, const py::array_t<double>& a) { d.inputs = to_matrix(a); })
        .def_readwrite("image_h", &LabeledDataset::image_h)
        .def_readwrite("image_w", &LabeledDataset::image_w)
        .def_readwrite("channels", &LabeledDataset::channels)
        .def_readwrite("targets_class", &LabeledDataset::targets_class)
        .def_readwrite("targets_value", &LabeledDataset::targets_value)
        .def("n", &LabeledDataset::n)
        .def("feature_dim", &LabeledDataset::feature_dim)
        .def("teacher_direction",
             [](const LabeledDataset& d) { return from_vector(d.meta.teacher_direction); })
        .def("planted_constraints",
             [](const LabeledDataset& d) {
                 return py::make_tuple(from_matrix(d.meta.constraints),
                                       from_vector(d.meta.constraint_offsets));
             });

    m.def("forward", [](const ModelSpec& spec, const py::array_t<double>& params,
                        const py::array_t<double>& x) {
        return from_vector(forward(spec, array_to_params(spec, params), to_vector(x)));
    });
    m.def("log_likelihood",
          [](const ModelSpec& spec, const py::array_t<double>& params,
             const LabeledDataset& data) {
              return log_likelihood(spec, array_to_params(spec, params), data);
          });
    m.def("grad_log_posterior",
          [](const ModelSpec& spec, const PriorSpec& prior,
             const py::array_t<double>& params, const LabeledDataset& data, double t) {
              return from_vector(grad_log_posterior(
                  spec, prior, array_to_params(spec, params), data, t));
          },
          py::arg("spec"), py::arg("prior"), py::arg("params"), py::arg("data"),
          py::arg("temperature") = 1.0);

    // ----- priors -----------------------------------------------------------
    py::enum_<PriorFamily>(m, "PriorFamily")
        .value("gaussian", PriorFamily::Gaussian)
        .value("laplace", PriorFamily::Laplace)
        .value("student_t", PriorFamily::StudentT)
        .value("exp_norm", PriorFamily::ExpNorm);

    py::class_<BasePrior>(m, "BasePrior")
        .def(py::init<>())
        .def_readwrite("family", &BasePrior::family)
        .def_readwrite("alpha2", &BasePrior::alpha2)
        .def_readwrite("alpha", &BasePrior::alpha)
        .def_readwrite("nu", &BasePrior::nu)
        .def_readwrite("p", &BasePrior::p);

    py::class_<CovariancePrior, std::shared_ptr<CovariancePrior>>(m, "CovariancePrior")
        .def_readonly("dim", &CovariancePrior::dim)
        .def_readonly("includes_bias", &CovariancePrior::includes_bias)
        .def_readonly("epsilon", &CovariancePrior::epsilon)
        .def_property_readonly(
            "eigenvalues",
            [](const CovariancePrior& cp) { return from_vector(cp.eigenvalues); })
        .def("variance_along",
             [](const CovariancePrior& cp, const py::array_t<double>& dir) {
                 return cp.variance_along(to_vector(dir));
             })
        .def("planted_direction",
             [](const CovariancePrior& cp, const py::array_t<double>& c, double c0) {
                 return from_vector(cp.planted_direction(to_vector(c), c0));
             });

    py::class_<PriorSpec>(m, "PriorSpec")
        .def(py::init<>())
        .def_readwrite("base", &PriorSpec::base)
        .def_property(
            "first_layer",
            [](const PriorSpec& p) { return p.first_layer; },
            [](PriorSpec& p, std::shared_ptr<CovariancePrior> cp) {
                p.first_layer = std::move(cp);
            })
        .def("set_sum_filter",
             [](PriorSpec& p, double gamma2) { p.sum_filter = SumFilterPrior{gamma2}; })
        .def("reference_std", &PriorSpec::reference_std);

    m.def("prior_logpdf",
          [](const PriorSpec& prior, const ModelSpec& spec,
             const py::array_t<double>& params) {
              return prior_logpdf(prior, array_to_params(spec, params));
          });
    m.def("sample_prior",
          [](const PriorSpec& prior, const ModelSpec& spec, RngStream& rng) {
              return from_vector(sample_prior(prior, spec.make_params(), rng).data);
          });
    m.def("build_empcov",
          [](const py::array_t<double>& inputs, double alpha, double eps, bool bias) {
              return std::make_shared<CovariancePrior>(
                  build_empcov(to_matrix(inputs), alpha, eps, bias));
          },
          py::arg("inputs"), py::arg("alpha"), py::arg("epsilon"),
          py::arg("include_bias") = true);
    m.def("build_pca_prior",
          [](const py::array_t<double>& inputs, double alpha, double eps, double lam) {
              return std::make_shared<CovariancePrior>(
                  build_pca_prior(to_matrix(inputs), alpha, eps, lam));
          });
    m.def("build_sumfilter", &build_sumfilter, py::arg("alpha2"), py::arg("gamma2"),
          py::arg("model"));

    // ----- inference ----------------------------------------------------------
    py::enum_<TrajectoryRule>(m, "TrajectoryRule")
        .value("explicit", TrajectoryRule::Explicit)
        .value("pi_sigma_half", TrajectoryRule::PiSigmaHalf);

    py::class_<HmcConfig>(m, "HmcConfig")
        .def(py::init<>())
        .def_readwrite("step_size", &HmcConfig::step_size)
        .def_readwrite("leapfrog_steps", &HmcConfig::leapfrog_steps)
        .def_readwrite("trajectory", &HmcConfig::trajectory)
        .def_readwrite("num_iterations", &HmcConfig::num_iterations)
        .def_readwrite("burn_in", &HmcConfig::burn_in)
        .def_readwrite("temperature", &HmcConfig::temperature)
        .def_readwrite("seed", &HmcConfig::seed)
        .def_readwrite("stream", &HmcConfig::stream);

    py::class_<Chain>(m, "Chain")
        .def_property_readonly(
            "samples", [](const Chain& c) { return samples_to_array(c.samples); })
        .def_readonly("accept_rate", &Chain::accept_rate)
        .def_readonly("low_accept_warning", &Chain::low_accept_warning)
        .def_readonly("divergences", &Chain::divergences)
        .def_property_readonly("energies",
                               [](const Chain& c) { return from_vector(c.energies); })
        .def_property_readonly("step_size",
                               [](const Chain& c) { return c.config.step_size; });

    m.def("hmc_sample", &hmc_sample, py::arg("spec"), py::arg("prior"), py::arg("data"),
          py::arg("config"));

    py::enum_<OptimizerKind>(m, "OptimizerKind")
        .value("sgd_momentum", OptimizerKind::SgdMomentum)
        .value("adam", OptimizerKind::Adam)
        .value("adadelta", OptimizerKind::Adadelta);
    py::enum_<LrSchedule>(m, "LrSchedule")
        .value("constant", LrSchedule::Constant)
        .value("cosine", LrSchedule::Cosine);

    py::class_<OptimizerConfig>(m, "OptimizerConfig")
        .def(py::init<>())
        .def_readwrite("kind", &OptimizerConfig::kind)
        .def_readwrite("learning_rate", &OptimizerConfig::learning_rate)
        .def_readwrite("schedule", &OptimizerConfig::schedule)
        .def_readwrite("momentum", &OptimizerConfig::momentum)
        .def_readwrite("weight_decay", &OptimizerConfig::weight_decay)
        .def_readwrite("epochs", &OptimizerConfig::epochs)
        .def_readwrite("init_bound", &OptimizerConfig::init_bound)
        .def_readwrite("seed", &OptimizerConfig::seed)
        .def_readwrite("stream", &OptimizerConfig::stream);

    m.def("map_fit", [](const ModelSpec& spec, const PriorSpec& prior,
                        const LabeledDataset& data, const OptimizerConfig& cfg) {
        MapResult r = map_fit(spec, prior, data, cfg);
        return py::make_tuple(from_vector(r.params.data), from_vector(r.loss_trace));
    });
    m.def("ensemble_fit",
          [](const ModelSpec& spec, const PriorSpec& prior, const LabeledDataset& data,
             const OptimizerConfig& cfg, std::size_t n, std::size_t threads) {
              auto members = ensemble_fit(spec, prior, data, cfg, n, threads);
              std::vector<ParamVector> params;
              for (auto& mres : members) params.push_back(std::move(mres.params));
              return samples_to_array(params);
          },
          py::arg("spec"), py::arg("prior"), py::arg("data"), py::arg("config"),
          py::arg("n"), py::arg("threads") = 1);

    m.def("bma_predict",
          [](const ModelSpec& spec, const py::array_t<double>& samples,
             const py::array_t<double>& inputs) {
              Predictive p =
                  bma_predict(array_to_samples(spec, samples), spec, to_matrix(inputs));
              return py::make_tuple(from_matrix(p.mean), from_matrix(p.variance),
                                    p.decision);
          });

    // ----- data ----------------------------------------------------------------
    m.def("gen_dead_feature",
          [](std::size_t n, std::size_t m, std::size_t dead_index, std::uint64_t seed) {
              DependenceSpec dep;
              dep.kind = DependenceSpec::Kind::DeadFeature;
              dep.dead_index = dead_index;
              GeneratorConfig cfg;
              cfg.n = n;
              cfg.m = m;
              RngStream rng(seed, 0);
              return gen_planted(dep, cfg, rng);
          },
          py::arg("n"), py::arg("m"), py::arg("dead_index"), py::arg("seed"));
    m.def("gen_affine",
          [](std::size_t n, const py::array_t<double>& c, double c0, std::uint64_t seed) {
              DependenceSpec dep;
              dep.kind = DependenceSpec::Kind::Affine;
              Vector cv = to_vector(c);
              dep.affine_c = Matrix(1, cv.size());
              for (std::size_t j = 0; j < cv.size(); ++j) dep.affine_c(0, j) = cv[j];
              dep.affine_c0 = {c0};
              GeneratorConfig cfg;
              cfg.n = n;
              cfg.m = cv.size();
              RngStream rng(seed, 0);
              return gen_planted(dep, cfg, rng);
          },
          py::arg("n"), py::arg("c"), py::arg("c0"), py::arg("seed"));
    m.def("gen_teacher_cloud",
          [](std::size_t n, std::size_t m, std::uint64_t seed, std::size_t classes) {
              GeneratorConfig cfg;
              cfg.n = n;
              cfg.m = m;
              cfg.classes = classes;
              RngStream rng(seed, 0);
              return gen_teacher_cloud(cfg, rng);
          },
          py::arg("n"), py::arg("m"), py::arg("seed"), py::arg("classes") = 2);

    m.def("gaussian_noise",
          [](const LabeledDataset& d, double sigma, std::uint64_t seed) {
              CorruptionSpec c;
              c.kind = CorruptionSpec::Kind::GaussianNoise;
              c.sigma = sigma;
              RngStream rng(seed, 0);
              return corrupt(d, c, rng);
          });
    m.def("constant_shift", [](const LabeledDataset& d, double shift) {
        CorruptionSpec c;
        c.kind = CorruptionSpec::Kind::ConstantShift;
        c.shift = shift;
        RngStream rng(0, 0);
        return corrupt(d, c, rng);
    });
    m.def("extract_patches",
          [](const py::array_t<double>& images, std::size_t h, std::size_t w,
             std::size_t channels, std::size_t k, bool padding) {
              return from_matrix(
                  extract_patches(to_matrix(images), h, w, channels, k, padding));
          },
          py::arg("images"), py::arg("h"), py::arg("w"), py::arg("channels"),
          py::arg("k"), py::arg("padding") = false);
    m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));

    // ----- analysis ---------------------------------------------------------------
    m.def("pca", [](const py::array_t<double>& inputs) {
        PcaBasis basis = pca(to_matrix(inputs));
        return py::make_tuple(from_vector(basis.mean), from_matrix(basis.components),
                              from_vector(basis.variances));
    });
    m.def("evaluate",
          [](const ModelSpec& spec, const py::array_t<double>& samples,
             const LabeledDataset& data) {
              MetricBundle b = evaluate(spec, array_to_samples(spec, samples), data);
              return py::make_tuple(b.accuracy, b.nll, b.ece);
          });
    m.def("planted_projections",
          [](const ModelSpec& spec, const py::array_t<double>& samples,
             const py::array_t<double>& c, double c0) {
              return from_vector(planted_projections(array_to_samples(spec, samples),
                                                     spec, to_vector(c), c0));
          });
    m.def("prior_match_test",
          [](const py::array_t<double>& samples, double prior_mean, double prior_var,
             const py::array_t<double>& prior_draws) {
              PriorMatchResult r = prior_match_test(to_vector(samples), prior_mean,
                                                    prior_var, to_vector(prior_draws));
              return py::make_tuple(r.z, r.variance_ratio, r.ks, r.pass);
          });

    // ----- blr oracle ----------------------------------------------------------------
    m.def("blr_posterior",
          [](const py::array_t<double>& phi, const py::array_t<double>& y,
             const py::array_t<double>& mu0, const py::array_t<double>& sigma0,
             double sigma2) {
              BlrPosterior post = blr_posterior(to_matrix(phi), to_vector(y),
                                                to_vector(mu0), to_matrix(sigma0), sigma2);
              return py::make_tuple(from_vector(post.mean), from_matrix(post.covariance));
          });
    m.def("blr_predict",
          [](const py::array_t<double>& mean, const py::array_t<double>& cov,
             double sigma2, const py::array_t<double>& x) {
              BlrPosterior post;
              post.mean = to_vector(mean);
              post.covariance = to_matrix(cov);
              post.sigma2 = sigma2;
              auto [mu, var] = blr_predict(post, to_vector(x));
              return py::make_tuple(mu, var);
          });

    // ----- experiments ----------------------------------------------------------------
    m.def("run_experiment_json",
          [](const std::string& config_json, std::optional<std::string> out_dir,
             std::optional<std::uint64_t> seed, std::optional<std::size_t> threads) {
              RunOverrides ov;
              ov.output_dir = std::move(out_dir);
              ov.seed = seed;
              ov.threads = threads;
              RunReport r = run_experiment(
                  nlohmann::ordered_json::parse(config_json), ov);
              return r.summary.dump();
          },
          py::arg("config_json"), py::arg("output_dir") = std::nullopt,
          py::arg("seed") = std::nullopt, py::arg("threads") = std::nullopt);
    m.def("run_experiment_file",
          [](const std::string& path, std::optional<std::string> out_dir,
             std::optional<std::uint64_t> seed, std::optional<std::size_t> threads) {
              RunOverrides ov;
              ov.output_dir = std::move(out_dir);
              ov.seed = seed;
              ov.threads = threads;
              RunReport r = run_experiment_file(path, ov);
              return r.summary.dump();
          },
          py::arg("path"), py::arg("output_dir") = std::nullopt,
          py::arg("seed") = std::nullopt, py::arg("threads") = std::nullopt);
    m.def("list_experiments", [] {
        py::list entries;
        for (const auto& e : experiment_registry()) {
            py::dict d;
            d["name"] = e.name;
            d["criterion"] = e.criterion;
            d["config_file"] = e.config_file;
            d["description"] = e.description;
            entries.append(d);
        }
        return entries;
    });
    m.def("default_config_dir", &default_config_dir);


#ifdef VERSION_INFO
    m.attr("__version__") = VERSION_INFO;
#else
    m.attr("__version__") = "dev";
#endif
}
