#include "bnnshift/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bnnshift/analysis.hpp"
#include "bnnshift/blr.hpp"
#include "bnnshift/bma.hpp"
#include "bnnshift/corrupt.hpp"
#include "bnnshift/errors.hpp"
#include "bnnshift/generators.hpp"
#include "bnnshift/grid.hpp"
#include "bnnshift/hmc.hpp"
#include "bnnshift/idx.hpp"
#include "bnnshift/map.hpp"
#include "bnnshift/patches.hpp"
#include "bnnshift/sidecar.hpp"

#ifndef BNNSHIFT_GIT_DESCRIBE
#define BNNSHIFT_GIT_DESCRIBE "unknown"
#endif

namespace bnnshift {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config access with field-path error messages.
// ---------------------------------------------------------------------------

struct Cfg {
    const ojson* node;
    std::string path;

    bool has(const std::string& key) const { return node->contains(key); }

    Cfg child(const std::string& key) const {
        require(key);
        const auto& j = (*node)[key];
        if (!j.is_object()) throw ConfigError(path + key + ": expected an object");
        return {&j, path + key + "."};
    }

    std::optional<Cfg> maybe_child(const std::string& key) const {
        if (!has(key) || (*node)[key].is_null()) return std::nullopt;
        return child(key);
    }

    void require(const std::string& key) const {
        if (!has(key)) throw ConfigError(path + key + ": required field is missing");
    }

    double number(const std::string& key) const {
        require(key);
        const auto& j = (*node)[key];
        if (!j.is_number()) throw ConfigError(path + key + ": expected a number");
        return j.get<double>();
    }

    double number_or(const std::string& key, double fallback) const {
        return has(key) && !(*node)[key].is_null() ? number(key) : fallback;
    }

    double positive(const std::string& key) const {
        const double v = number(key);
        if (!(v > 0.0)) throw ConfigError(path + key + ": must be positive");
        return v;
    }

    double positive_or(const std::string& key, double fallback) const {
        const double v = number_or(key, fallback);
        if (!(v > 0.0)) throw ConfigError(path + key + ": must be positive");
        return v;
    }

    std::size_t count(const std::string& key) const {
        const double v = number(key);
        if (v < 0.0 || v != std::floor(v))
            throw ConfigError(path + key + ": expected a non-negative integer");
        return static_cast<std::size_t>(v);
    }

    std::size_t count_or(const std::string& key, std::size_t fallback) const {
        return has(key) && !(*node)[key].is_null() ? count(key) : fallback;
    }

    bool flag_or(const std::string& key, bool fallback) const {
        if (!has(key) || (*node)[key].is_null()) return fallback;
        const auto& j = (*node)[key];
        if (!j.is_boolean()) throw ConfigError(path + key + ": expected a boolean");
        return j.get<bool>();
    }

    std::string text(const std::string& key) const {
        require(key);
        const auto& j = (*node)[key];
        if (!j.is_string()) throw ConfigError(path + key + ": expected a string");
        return j.get<std::string>();
    }

    std::string text_or(const std::string& key, const std::string& fallback) const {
        return has(key) && !(*node)[key].is_null() ? text(key) : fallback;
    }

    Vector numbers(const std::string& key) const {
        require(key);
        const auto& j = (*node)[key];
        if (!j.is_array()) throw ConfigError(path + key + ": expected an array of numbers");
        Vector v;
        for (const auto& x : j) {
            if (!x.is_number()) throw ConfigError(path + key + ": expected numbers");
            v.push_back(x.get<double>());
        }
        return v;
    }

    std::vector<std::size_t> counts(const std::string& key) const {
        Vector v = numbers(key);
        std::vector<std::size_t> out;
        for (double x : v) {
            if (x < 0.0 || x != std::floor(x))
                throw ConfigError(path + key + ": expected non-negative integers");
            out.push_back(static_cast<std::size_t>(x));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Plan structures.
// ---------------------------------------------------------------------------

struct DatasetPlan {
    enum class Source { Generator, Idx } source = Source::Generator;
    DependenceSpec dep;
    bool has_dep = false;
    GeneratorConfig gen;
    std::vector<std::size_t> n_sweep;  // empty -> single gen.n
    std::size_t replicates = 1;        // independent draws per sweep entry
    std::size_t test_n = 200;
    bool center = false;
    std::string idx_images, idx_labels;
    bool normalize = false;
};

struct FirstLayerPlan {
    enum class Kind { EmpCov, PcaDecay } kind = Kind::EmpCov;
    double alpha = 1.0;
    double epsilon = 0.0;      // 0 -> epsilon_rel * alpha
    double epsilon_rel = 1e-4;
    double lambda = 0.5;
    bool include_bias = true;
    bool from_patches = false;
    std::size_t patch_kernel = 3;
    std::string cache;  // optional sidecar path (relative to output dir)
};

struct PriorPlan {
    BasePrior base;
    std::optional<FirstLayerPlan> first_layer;
    std::optional<double> sum_filter_gamma2;
};

struct HmcPlan {
    bool enabled = false;
    HmcConfig cfg;
    std::optional<HmcConfig> baseline_cfg;  // trajectory overrides for the baseline prior
    std::optional<double> baseline_temperature;
};

struct MapPlan {
    bool enabled = false;
    OptimizerConfig cfg;
    Vector init_sweep;  // empty -> single cfg.init_bound
};

struct EnsemblePlan {
    bool enabled = false;
    std::size_t size = 10;
};

struct RobustnessPlan {
    std::string name;
    std::string corruption;  // pca_low | pca_high | gaussian_noise | constant_shift
    std::size_t components = 3;
    Vector magnitudes;
    bool shift_in_std = false;
};

struct SpectrumPlan {
    std::string name;
    std::string space;       // inputs | patches
    std::string corruption;  // gaussian_noise | translate
    double sigma = 1.0;
    int dx = 0, dy = 0;
    std::size_t patch_kernel = 3;
    std::size_t interior_margin = 1;
    double reference_sigma2 = 0.0;
};

struct ProjectionPlan {
    std::string directions;  // planted | pca_bottom | pca_all
    std::size_t count = 3;
    bool include_bias = false;
};

struct GridCheckPlan {
    std::string mode;  // dead | rotated
    std::size_t axis = 1;
    std::size_t nodes = 201;
    double halfwidth_sigmas = 6.5;
    double tolerance = 1e-8;
};

struct PredictionShiftPlan {
    Vector c_values{0.0, 1.0, 5.0, 10.0};
    double tv_a = 0.0, tv_b = 5.0;
    double tv_min = 0.05;
    double epsilon = 0.1;
    double large_c = 1000.0;
    std::size_t probes = 10;
};

struct ZeroDataVariancePlan {
    double temperature = 0.01;
    double tolerance = 0.2;
    std::size_t iterations = 1300;
    std::size_t burn_in = 100;
    std::size_t leapfrog_steps = 150;
};

struct AnalysisPlan {
    bool metrics = true;
    std::optional<ProjectionPlan> projections;
    std::vector<RobustnessPlan> robustness;
    std::vector<SpectrumPlan> spectra;
    bool blr_check = false;
    std::optional<GridCheckPlan> grid_check;
    std::optional<PredictionShiftPlan> prediction_shift;
    std::optional<ZeroDataVariancePlan> zero_data_variance;
    bool conv_shift_identity = false;
    bool numerics = false;
};

struct Plan {
    std::uint64_t seed = 0;
    fs::path output_dir;
    std::size_t threads = 1;
    ModelSpec model;
    PriorPlan prior;
    std::optional<PriorPlan> baseline_prior;
    DatasetPlan dataset;
    HmcPlan hmc;
    MapPlan map;
    EnsemblePlan ensemble;
    AnalysisPlan analysis;
};

// ---------------------------------------------------------------------------
// Parsing.
// ---------------------------------------------------------------------------

ModelSpec parse_model(const Cfg& m) {
    ModelSpec spec;
    const std::string kind = m.text("kind");
    if (kind == "mlp")
        spec.kind = ModelKind::Mlp;
    else if (kind == "cnn")
        spec.kind = ModelKind::Cnn;
    else if (kind == "nalu")
        spec.kind = ModelKind::Nalu;
    else if (kind == "linear_features")
        spec.kind = ModelKind::LinearFeatures;
    else
        throw ConfigError(m.path + "kind: unknown model kind '" + kind + "'");

    for (std::size_t w : m.counts("widths")) spec.widths.push_back(w);

    const std::string act = m.text_or("activation", "relu");
    if (act == "relu")
        spec.activation = Activation::Relu;
    else if (act == "leaky_relu")
        spec.activation = Activation::LeakyRelu;
    else if (act == "identity")
        spec.activation = Activation::Identity;
    else
        throw ConfigError(m.path + "activation: unknown activation '" + act + "'");
    spec.leaky_slope = m.number_or("leaky_slope", 0.01);

    const std::string link = m.text_or("link", "softmax");
    if (link == "softmax")
        spec.link = Link::Softmax;
    else if (link == "identity")
        spec.link = Link::Identity;
    else
        throw ConfigError(m.path + "link: unknown link '" + link + "'");

    if (auto lk = m.maybe_child("likelihood")) {
        const std::string lkind = lk->text("kind");
        if (lkind == "categorical")
            spec.likelihood.kind = LikelihoodKind::Categorical;
        else if (lkind == "gaussian")
            spec.likelihood.kind = LikelihoodKind::Gaussian;
        else
            throw ConfigError(lk->path + "kind: unknown likelihood '" + lkind + "'");
        spec.likelihood.sigma2 = lk->positive_or("sigma2", 1.0);
    }

    if (auto img = m.maybe_child("image")) {
        spec.image_h = img->count("h");
        spec.image_w = img->count("w");
        spec.channels = img->count_or("channels", 1);
    }
    if (auto conv = m.maybe_child("conv")) {
        spec.conv.kernel = conv->count("kernel");
        spec.conv.filters = conv->count("filters");
        spec.conv.zero_padding = conv->flag_or("zero_padding", false);
        spec.conv.avg_pool = conv->flag_or("avg_pool", true);
    }
    spec.validate();
    return spec;
}

PriorPlan parse_prior(const Cfg& p) {
    PriorPlan plan;
    const std::string family = p.text_or("family", "gaussian");
    if (family == "gaussian") {
        plan.base.family = PriorFamily::Gaussian;
        plan.base.alpha2 = p.positive("alpha2");
    } else if (family == "laplace") {
        plan.base.family = PriorFamily::Laplace;
        plan.base.alpha = p.positive("alpha");
    } else if (family == "student_t") {
        plan.base.family = PriorFamily::StudentT;
        plan.base.nu = p.positive("nu");
        plan.base.alpha2 = p.positive("alpha2");
    } else if (family == "exp_norm") {
        plan.base.family = PriorFamily::ExpNorm;
        plan.base.p = p.positive("p");
        plan.base.alpha2 = p.positive("alpha2");
    } else {
        throw ConfigError(p.path + "family: unknown prior family '" + family + "'");
    }

    if (auto fl = p.maybe_child("first_layer")) {
        FirstLayerPlan f;
        const std::string kind = fl->text("kind");
        if (kind == "emp_cov")
            f.kind = FirstLayerPlan::Kind::EmpCov;
        else if (kind == "pca_decay")
            f.kind = FirstLayerPlan::Kind::PcaDecay;
        else
            throw ConfigError(fl->path + "kind: unknown first-layer prior '" + kind + "'");
        f.alpha = fl->positive("alpha");
        f.epsilon = fl->number_or("epsilon", 0.0);
        f.epsilon_rel = fl->positive_or("epsilon_rel", 1e-4);
        if (f.epsilon < 0.0) throw ConfigError(fl->path + "epsilon: must be >= 0");
        f.lambda = fl->number_or("lambda", 0.5);
        f.include_bias = fl->flag_or("include_bias", kind == "emp_cov");
        f.from_patches = fl->text_or("source", "inputs") == "patches";
        f.patch_kernel = fl->count_or("patch_kernel", 3);
        f.cache = fl->text_or("cache", "");
        plan.first_layer = f;
    }
    if (auto sf = p.maybe_child("sum_filter")) {
        plan.sum_filter_gamma2 = sf->positive("gamma2");
    }
    return plan;
}

DatasetPlan parse_dataset(const Cfg& d) {
    DatasetPlan plan;
    plan.center = d.flag_or("center", false);
    if (auto idx = d.maybe_child("idx")) {
        plan.source = DatasetPlan::Source::Idx;
        plan.idx_images = idx->text("images");
        plan.idx_labels = idx->text("labels");
        plan.normalize = idx->flag_or("normalize", true);
        return plan;
    }
    Cfg g = d.child("generator");
    plan.gen.n = g.count_or("n", 100);
    plan.gen.m = g.count_or("m", 8);
    if (auto img = g.maybe_child("image")) {
        plan.gen.image_h = img->count("h");
        plan.gen.image_w = img->count("w");
        plan.gen.channels = img->count_or("channels", 1);
    }
    plan.gen.classes = g.count_or("classes", 2);
    plan.gen.teacher_margin = g.number_or("teacher_margin", 0.3);
    plan.gen.teacher_noise = g.number_or("teacher_noise", 0.1);
    plan.gen.regression = g.flag_or("regression", false);
    plan.test_n = g.count_or("test_n", 200);
    if (g.has("n_sweep")) plan.n_sweep = g.counts("n_sweep");
    plan.replicates = g.count_or("replicates", 1);
    if (plan.replicates == 0) throw ConfigError(g.path + "replicates: must be >= 1");

    const std::string kind = g.text("kind");
    if (kind == "cloud") {
        plan.has_dep = false;
    } else if (kind == "dead_feature") {
        plan.has_dep = true;
        plan.dep.kind = DependenceSpec::Kind::DeadFeature;
        plan.dep.dead_index = g.count_or("dead_index", 0);
    } else if (kind == "affine") {
        plan.has_dep = true;
        plan.dep.kind = DependenceSpec::Kind::Affine;
        g.require("c");
        const auto& cj = (*g.node)["c"];
        if (!cj.is_array() || cj.empty())
            throw ConfigError(g.path + "c: expected a non-empty array");
        std::vector<Vector> rows;
        if (cj.front().is_array()) {
            for (const auto& row : cj) rows.push_back(row.get<Vector>());
        } else {
            rows.push_back(cj.get<Vector>());
        }
        plan.dep.affine_c = Matrix::from_rows(rows);
        if ((*g.node).contains("c0") && (*g.node)["c0"].is_array())
            plan.dep.affine_c0 = g.numbers("c0");
        else
            plan.dep.affine_c0 = Vector(rows.size(), g.number_or("c0", 0.0));
    } else if (kind == "patch_affine") {
        plan.has_dep = true;
        plan.dep.kind = DependenceSpec::Kind::PatchAffine;
        plan.dep.patch_gamma = g.numbers("patch_gamma");
        plan.dep.patch_gamma0 = g.number_or("patch_gamma0", 0.0);
        plan.dep.patch_kernel = g.count_or("patch_kernel", 3);
    } else if (kind == "multiplicative") {
        plan.has_dep = true;
        plan.dep.kind = DependenceSpec::Kind::Multiplicative;
        plan.dep.mult_p = g.numbers("p");
    } else if (kind == "spurious") {
        plan.has_dep = true;
        plan.dep.kind = DependenceSpec::Kind::Spurious;
        plan.dep.spurious_index = g.count_or("spurious_index", 0);
        plan.dep.spurious_value = g.number_or("spurious_value", 1.0);
    } else {
        throw ConfigError(g.path + "kind: unknown generator kind '" + kind + "'");
    }
    return plan;
}

HmcPlan parse_hmc(const Cfg& h) {
    HmcPlan plan;
    plan.enabled = true;
    plan.cfg.num_iterations = h.count_or("num_iterations", 100);
    plan.cfg.burn_in = h.count_or("burn_in", plan.cfg.num_iterations / 10);
    plan.cfg.leapfrog_steps = h.count_or("leapfrog_steps", 60);
    const std::string traj = h.text_or("trajectory", "pi_sigma_half");
    if (traj == "pi_sigma_half")
        plan.cfg.trajectory = TrajectoryRule::PiSigmaHalf;
    else if (traj == "explicit")
        plan.cfg.trajectory = TrajectoryRule::Explicit;
    else
        throw ConfigError(h.path + "trajectory: unknown rule '" + traj + "'");
    plan.cfg.step_size = h.number_or("step_size", 0.0);
    plan.cfg.temperature = h.positive_or("temperature", 1.0);
    if (h.has("baseline_temperature"))
        plan.baseline_temperature = h.positive("baseline_temperature");
    plan.cfg.validate();
    return plan;
}

MapPlan parse_map(const Cfg& m) {
    MapPlan plan;
    plan.enabled = true;
    const std::string opt = m.text_or("optimizer", "sgd");
    if (opt == "sgd")
        plan.cfg.kind = OptimizerKind::SgdMomentum;
    else if (opt == "adam")
        plan.cfg.kind = OptimizerKind::Adam;
    else if (opt == "adadelta")
        plan.cfg.kind = OptimizerKind::Adadelta;
    else
        throw ConfigError(m.path + "optimizer: unknown optimizer '" + opt + "'");
    plan.cfg.learning_rate = m.positive_or("learning_rate", 0.1);
    const std::string sched = m.text_or("schedule", "cosine");
    if (sched == "cosine")
        plan.cfg.schedule = LrSchedule::Cosine;
    else if (sched == "constant")
        plan.cfg.schedule = LrSchedule::Constant;
    else
        throw ConfigError(m.path + "schedule: unknown schedule '" + sched + "'");
    plan.cfg.momentum = m.number_or("momentum", 0.9);
    plan.cfg.epochs = m.count_or("epochs", 2000);
    plan.cfg.init_bound = m.number_or("init_bound", 0.01);
    if (m.has("weight_decay") && !(*m.node)["weight_decay"].is_null()) {
        const double wd = m.number("weight_decay");
        if (wd < 0.0) throw ConfigError(m.path + "weight_decay: must be >= 0");
        plan.cfg.weight_decay = wd;
    }
    if (m.has("init_sweep")) plan.init_sweep = m.numbers("init_sweep");
    plan.cfg.validate();
    return plan;
}

AnalysisPlan parse_analysis(const Cfg& a) {
    AnalysisPlan plan;
    plan.metrics = a.flag_or("metrics", true);
    if (auto pr = a.maybe_child("projections")) {
        ProjectionPlan p;
        p.directions = pr->text_or("directions", "planted");
        if (p.directions != "planted" && p.directions != "pca_bottom" &&
            p.directions != "pca_all")
            throw ConfigError(pr->path + "directions: unknown mode '" + p.directions + "'");
        p.count = pr->count_or("count", 3);
        p.include_bias = pr->flag_or("include_bias", false);
        plan.projections = p;
    }
    if (a.has("robustness")) {
        const auto& arr = (*a.node)["robustness"];
        if (!arr.is_array()) throw ConfigError(a.path + "robustness: expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Cfg r{&arr[i], a.path + "robustness[" + std::to_string(i) + "]."};
            RobustnessPlan rp;
            rp.name = r.text_or("name", "curve" + std::to_string(i));
            rp.corruption = r.text("corruption");
            if (rp.corruption != "pca_low" && rp.corruption != "pca_high" &&
                rp.corruption != "gaussian_noise" && rp.corruption != "constant_shift")
                throw ConfigError(r.path + "corruption: unknown family '" + rp.corruption + "'");
            rp.components = r.count_or("components", 3);
            rp.magnitudes = r.numbers("magnitudes");
            rp.shift_in_std = r.flag_or("shift_in_std", false);
            plan.robustness.push_back(std::move(rp));
        }
    }
    if (a.has("spectra")) {
        const auto& arr = (*a.node)["spectra"];
        if (!arr.is_array()) throw ConfigError(a.path + "spectra: expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Cfg s{&arr[i], a.path + "spectra[" + std::to_string(i) + "]."};
            SpectrumPlan sp;
            sp.name = s.text_or("name", "spectrum" + std::to_string(i));
            sp.space = s.text_or("space", "inputs");
            sp.corruption = s.text("corruption");
            sp.sigma = s.number_or("sigma", 1.0);
            sp.dx = static_cast<int>(s.number_or("dx", 1));
            sp.dy = static_cast<int>(s.number_or("dy", 0));
            sp.patch_kernel = s.count_or("patch_kernel", 3);
            sp.interior_margin = s.count_or("interior_margin", 1);
            sp.reference_sigma2 = s.number_or("reference_sigma2", 0.0);
            plan.spectra.push_back(std::move(sp));
        }
    }
    plan.blr_check = a.flag_or("blr_check", false);
    if (auto gc = a.maybe_child("grid_check")) {
        GridCheckPlan g;
        g.mode = gc->text("mode");
        if (g.mode != "dead" && g.mode != "rotated")
            throw ConfigError(gc->path + "mode: unknown grid check '" + g.mode + "'");
        g.axis = gc->count_or("axis", 1);
        g.nodes = gc->count_or("nodes", 201);
        g.halfwidth_sigmas = gc->positive_or("halfwidth_sigmas", 6.5);
        g.tolerance = gc->positive_or("tolerance", g.mode == "dead" ? 1e-10 : 1e-8);
        plan.grid_check = g;
    }
    if (auto ps = a.maybe_child("prediction_shift")) {
        PredictionShiftPlan p;
        if (ps->has("c_values")) p.c_values = ps->numbers("c_values");
        if (ps->has("tv_pair")) {
            Vector pair = ps->numbers("tv_pair");
            if (pair.size() != 2) throw ConfigError(ps->path + "tv_pair: expected 2 values");
            p.tv_a = pair[0];
            p.tv_b = pair[1];
        }
        p.tv_min = ps->positive_or("tv_min", 0.05);
        p.epsilon = ps->positive_or("epsilon", 0.1);
        p.large_c = ps->positive_or("large_c", 1000.0);
        p.probes = ps->count_or("probes", 10);
        plan.prediction_shift = p;
    }
    if (auto zv = a.maybe_child("zero_data_variance")) {
        ZeroDataVariancePlan z;
        z.temperature = zv->positive_or("temperature", 0.01);
        z.tolerance = zv->positive_or("tolerance", 0.2);
        z.iterations = zv->count_or("iterations", 1300);
        z.burn_in = zv->count_or("burn_in", 100);
        z.leapfrog_steps = zv->count_or("leapfrog_steps", 150);
        plan.zero_data_variance = z;
    }
    plan.conv_shift_identity = a.flag_or("conv_shift_identity", false);
    plan.numerics = a.flag_or("numerics", false);
    return plan;
}

Plan parse_plan(const ojson& config, const RunOverrides& ov) {
    Cfg root{&config, ""};
    Plan plan;
    root.require("seed");
    plan.seed = ov.seed.value_or(static_cast<std::uint64_t>(root.number("seed")));
    plan.output_dir = ov.output_dir.value_or(root.text_or("output_dir", "out"));
    plan.threads = ov.threads.value_or(root.count_or("threads", 1));
    if (plan.threads == 0) plan.threads = 1;

    plan.model = parse_model(root.child("model"));
    plan.prior = parse_prior(root.child("prior"));
    if (auto bp = root.maybe_child("baseline_prior")) plan.baseline_prior = parse_prior(*bp);
    plan.dataset = parse_dataset(root.child("dataset"));

    Cfg inference = root.child("inference");
    if (auto h = inference.maybe_child("hmc")) plan.hmc = parse_hmc(*h);
    if (auto bh = inference.maybe_child("baseline_hmc")) {
        if (!plan.hmc.enabled)
            throw ConfigError("inference.baseline_hmc: requires an hmc block");
        plan.hmc.baseline_cfg = parse_hmc(*bh).cfg;
    }
    if (auto m = inference.maybe_child("map")) plan.map = parse_map(*m);
    if (auto e = inference.maybe_child("ensemble")) {
        plan.ensemble.enabled = true;
        plan.ensemble.size = e->count_or("size", 10);
        if (plan.ensemble.size == 0)
            throw ConfigError(e->path + "size: must be at least 1");
        if (!plan.map.enabled)
            throw ConfigError(inference.path + "ensemble: requires a map block");
    }
    if (auto a = root.maybe_child("analysis"))
        plan.analysis = parse_analysis(*a);

    // Oracle-only analyses (grid checks, spectra, numerics, zero-data runs,
    // conv identities) run without predictors; everything else needs one.
    const bool oracle_only = plan.analysis.grid_check || !plan.analysis.spectra.empty() ||
                             plan.analysis.numerics || plan.analysis.zero_data_variance ||
                             plan.analysis.conv_shift_identity;
    if (!plan.hmc.enabled && !plan.map.enabled && !oracle_only)
        throw ConfigError("inference: at least one of hmc/map must be present");
    return plan;
}

// ---------------------------------------------------------------------------
// CSV / summary helpers.
// ---------------------------------------------------------------------------

std::string fmt10(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

struct CsvWriter {
    std::ofstream out;
    explicit CsvWriter(const fs::path& path, const std::string& header) : out(path) {
        if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
        out << header << "\r\n";
    }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ",";
            out << fields[i];
        }
        out << "\r\n";
    }
};

double mean_feature_std(const Matrix& inputs) {
    auto [mean, sigma] = empirical_covariance(inputs);
    double s = 0.0;
    for (std::size_t j = 0; j < sigma.rows(); ++j) s += std::sqrt(sigma(j, j));
    return s / static_cast<double>(sigma.rows());
}

// ---------------------------------------------------------------------------
// Pipeline pieces.
// ---------------------------------------------------------------------------

struct BuiltPrior {
    PriorSpec spec;
    Vector planted_direction;  // augmented direction for variance reporting
    double planted_variance = -1.0;
};

BuiltPrior build_prior(const PriorPlan& plan, const ModelSpec& model,
                       const LabeledDataset& train) {
    BuiltPrior out;
    out.spec.base = plan.base;
    if (plan.first_layer) {
        const auto& f = *plan.first_layer;
        const double eps = f.epsilon > 0.0 ? f.epsilon : f.epsilon_rel * f.alpha;
        std::optional<CovariancePrior> cached;
        if (!f.cache.empty() && fs::exists(f.cache)) cached = load_covariance_prior(f.cache);
        if (cached) {
            out.spec.first_layer = std::make_shared<CovariancePrior>(std::move(*cached));
        } else {
            Matrix source = f.from_patches
                                ? extract_patches(train, f.patch_kernel,
                                                  model.kind == ModelKind::Cnn &&
                                                      model.conv.zero_padding)
                                : train.inputs;
            CovariancePrior cp =
                f.kind == FirstLayerPlan::Kind::EmpCov
                    ? build_empcov(source, f.alpha, eps, f.include_bias)
                    : build_pca_prior(source, f.alpha, eps, f.lambda);
            if (!f.cache.empty()) save_covariance_prior(cp, f.cache);
            out.spec.first_layer = std::make_shared<CovariancePrior>(std::move(cp));
        }
    }
    if (plan.sum_filter_gamma2) {
        if (model.kind != ModelKind::Cnn)
            throw ConfigError("prior.sum_filter: first layer must be convolutional");
        out.spec.sum_filter = SumFilterPrior{*plan.sum_filter_gamma2};
    }
    out.spec.validate();

    // Planted-direction prior variance in the first-layer frame, for reports.
    if (train.meta.constraints.rows() >= 1) {
        Vector c = Vector(train.meta.constraints.row(0).begin(),
                          train.meta.constraints.row(0).end());
        const double c0 = train.meta.constraint_offsets.empty()
                              ? 0.0
                              : train.meta.constraint_offsets[0];
        if (out.spec.first_layer) {
            out.planted_direction = out.spec.first_layer->planted_direction(c, c0);
            out.planted_variance =
                out.spec.first_layer->variance_along(out.planted_direction);
        } else {
            double nrm2 = c0 * c0;
            for (double v : c) nrm2 += v * v;
            out.planted_variance = out.spec.base.alpha2 * nrm2;
        }
    }
    return out;
}

struct VariantData {
    std::string name;
    LabeledDataset train;
    LabeledDataset test;
};

std::vector<VariantData> build_datasets(const DatasetPlan& plan, std::uint64_t seed) {
    std::vector<VariantData> out;
    if (plan.source == DatasetPlan::Source::Idx) {
        VariantData v;
        v.name = "main";
        v.train = load_idx(plan.idx_images, plan.idx_labels);
        v.test = v.train;  // optional small-subset runs reuse the file
        if (plan.normalize) normalize_with_train_stats(v.train, &v.test);
        out.push_back(std::move(v));
        return out;
    }
    std::vector<std::size_t> sizes =
        plan.n_sweep.empty() ? std::vector<std::size_t>{plan.gen.n} : plan.n_sweep;
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      for (std::size_t rep = 0; rep < plan.replicates; ++rep) {
        const std::size_t vi = si * plan.replicates + rep;
        VariantData v;
        v.name = plan.n_sweep.empty() ? "main" : "n" + std::to_string(sizes[si]);
        if (plan.replicates > 1) v.name += "_r" + std::to_string(rep);
        GeneratorConfig gen = plan.gen;
        gen.n = sizes[si] + plan.test_n;
        RngStream rng = RngStream(seed, 100 + vi);
        LabeledDataset all =
            plan.has_dep ? gen_planted(plan.dep, gen, rng) : gen_teacher_cloud(gen, rng);
        // split: first rows train, rest test
        auto take = [&](std::size_t begin, std::size_t count) {
            LabeledDataset d;
            d.image_h = all.image_h;
            d.image_w = all.image_w;
            d.channels = all.channels;
            d.meta = all.meta;
            d.inputs = Matrix(count, all.feature_dim());
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t j = 0; j < all.feature_dim(); ++j)
                    d.inputs(i, j) = all.inputs(begin + i, j);
            if (!all.targets_class.empty())
                d.targets_class.assign(all.targets_class.begin() + begin,
                                       all.targets_class.begin() + begin + count);
            if (!all.targets_value.empty())
                d.targets_value.assign(all.targets_value.begin() + begin,
                                       all.targets_value.begin() + begin + count);
            return d;
        };
        v.train = take(0, sizes[si]);
        v.test = take(sizes[si], plan.test_n);
        if (plan.center) {
            Vector mean = center_dataset(v.train);
            for (std::size_t i = 0; i < v.test.n(); ++i)
                for (std::size_t j = 0; j < v.test.feature_dim(); ++j)
                    v.test.inputs(i, j) -= mean[j];
            v.test.meta = v.train.meta;
        }
        out.push_back(std::move(v));
      }
    }
    return out;
}

}  // namespace

std::string config_hash_hex(const ojson& config) {
    // canonical form: sorted keys, no whitespace
    const std::string canon = nlohmann::json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunReport run_experiment(const ojson& config, const RunOverrides& ov) {
    const auto t0 = std::chrono::steady_clock::now();
    Plan plan = parse_plan(config, ov);

    RunReport report;
    report.config_hash = config_hash_hex(config);
    report.git_describe = BNNSHIFT_GIT_DESCRIBE;
    report.output_dir = plan.output_dir.string();
    report.summary = ojson::object();
    report.summary["config_hash"] = report.config_hash;
    report.summary["git_describe"] = report.git_describe;
    report.summary["seed"] = plan.seed;
    report.summary["config"] = nlohmann::json(config);  // canonical key order
    ojson results = ojson::object();
    std::vector<std::string> warnings;

    fs::create_directories(plan.output_dir);

    CsvWriter metrics_csv(plan.output_dir / "metrics.csv",
                          "variant,predictor,split,accuracy,nll,ece");
    CsvWriter projections_csv(
        plan.output_dir / "projections.csv",
        "variant,predictor,direction,sample_mean,sample_variance,prior_variance,z,ks,pass");
    CsvWriter robustness_csv(plan.output_dir / "robustness.csv",
                             "variant,curve,magnitude,predictor,accuracy,nll,ece");
    CsvWriter spectrum_csv(plan.output_dir / "spectrum.csv",
                           "variant,name,component,variance_before,variance_after");

    std::vector<VariantData> variants = build_datasets(plan.dataset, plan.seed);

    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        VariantData& vd = variants[vi];
        ojson vres = ojson::object();

        BuiltPrior prior = build_prior(plan.prior, plan.model, vd.train);
        std::optional<BuiltPrior> baseline;
        if (plan.baseline_prior)
            baseline = build_prior(*plan.baseline_prior, plan.model, vd.train);
        if (prior.planted_variance >= 0.0)
            vres["planted_prior_variance"] = prior.planted_variance;

        // ---- inference --------------------------------------------------
        std::vector<std::pair<std::string, std::vector<ParamVector>>> predictors;
        std::optional<Chain> chain;

        if (plan.hmc.enabled) {
            HmcConfig cfg = plan.hmc.cfg;
            cfg.seed = plan.seed;
            cfg.stream = 10 + vi;
            chain = hmc_sample(plan.model, prior.spec, vd.train, cfg);
            if (chain->low_accept_warning)
                warnings.push_back(vd.name + ": hmc accept rate below 0.1");
            save_chain(*chain, (plan.output_dir / ("chain_" + vd.name)).string());
            predictors.push_back({"bma", chain->samples});
            vres["hmc"] = {{"accept_rate", chain->accept_rate},
                           {"divergences", chain->divergences},
                           {"step_size", chain->config.step_size}};

            if (baseline) {
                HmcConfig bcfg = plan.hmc.baseline_cfg.value_or(cfg);
                bcfg.seed = plan.seed;
                bcfg.stream = 40 + vi;
                Chain bchain = hmc_sample(plan.model, baseline->spec, vd.train, bcfg);
                save_chain(bchain,
                           (plan.output_dir / ("chain_" + vd.name + "_baseline")).string());
                predictors.push_back({"bma_baseline", bchain.samples});
                vres["hmc_baseline"] = {{"accept_rate", bchain.accept_rate}};
            }
            if (plan.hmc.baseline_temperature) {
                HmcConfig wcfg = cfg;
                wcfg.temperature = *plan.hmc.baseline_temperature;
                wcfg.stream = 70 + vi;
                Chain wchain = hmc_sample(plan.model, prior.spec, vd.train, wcfg);
                save_chain(wchain,
                           (plan.output_dir / ("chain_" + vd.name + "_warm")).string());
                predictors.push_back({"bma_warm", wchain.samples});
                vres["hmc_warm"] = {{"accept_rate", wchain.accept_rate}};
            }
        }

        std::vector<std::pair<std::string, MapResult>> map_fits;
        if (plan.map.enabled) {
            Vector sweep = plan.map.init_sweep.empty() ? Vector{plan.map.cfg.init_bound}
                                                       : plan.map.init_sweep;
            for (std::size_t bi = 0; bi < sweep.size(); ++bi) {
                OptimizerConfig cfg = plan.map.cfg;
                cfg.init_bound = sweep[bi];
                cfg.seed = plan.seed;
                cfg.stream = 1000 + 10 * vi + bi;
                const std::string name = plan.map.init_sweep.empty()
                                             ? "map"
                                             : "map_b" + fmt10(sweep[bi]);
                MapResult fit = map_fit(plan.model, prior.spec, vd.train, cfg);
                predictors.push_back({name, {fit.params}});
                map_fits.push_back({name, std::move(fit)});
            }
            if (plan.ensemble.enabled) {
                OptimizerConfig cfg = plan.map.cfg;
                cfg.seed = plan.seed;
                cfg.stream = 1000 + 10 * vi;  // member 0 == map
                auto members = ensemble_fit(plan.model, prior.spec, vd.train, cfg,
                                            plan.ensemble.size, plan.threads);
                std::vector<ParamVector> params;
                for (auto& m : members) params.push_back(std::move(m.params));
                predictors.push_back({"ensemble", std::move(params)});
            }
        }

        // ---- metrics -----------------------------------------------------
        const bool classify = plan.model.likelihood.kind == LikelihoodKind::Categorical;
        if (plan.analysis.metrics && classify) {
            ojson mres = ojson::object();
            for (const auto& [name, samples] : predictors) {
                for (const auto& [split, data] :
                     {std::pair<const char*, const LabeledDataset*>{"train", &vd.train},
                      {"test", &vd.test}}) {
                    if (data->n() == 0) continue;
                    MetricBundle m = evaluate(plan.model, samples, *data);
                    metrics_csv.row({vd.name, name, split, fmt10(m.accuracy),
                                     fmt10(m.nll), fmt10(m.ece)});
                    if (std::string(split) == "test")
                        mres[name] = {{"accuracy", m.accuracy},
                                      {"nll", m.nll},
                                      {"ece", m.ece}};
                }
            }
            vres["metrics"] = mres;
        }

        // ---- projection reports -------------------------------------------
        if (plan.analysis.projections) {
            const auto& pp = *plan.analysis.projections;
            ojson pres = ojson::object();
            RngStream prior_rng(plan.seed, 900 + vi);

            Vector c;
            double c0 = 0.0;
            if (vd.train.meta.constraints.rows() > 0) {
                c = Vector(vd.train.meta.constraints.row(0).begin(),
                           vd.train.meta.constraints.row(0).end());
                c0 = vd.train.meta.constraint_offsets.empty()
                         ? 0.0
                         : vd.train.meta.constraint_offsets[0];
            } else if (vd.train.meta.dependence_kind == "multiplicative") {
                c = vd.train.meta.multiplicative_p;
            }

            for (const auto& [name, samples] : predictors) {
                if (name == "ensemble") continue;
                if (pp.directions == "planted") {
                    if (c.empty())
                        throw ConfigError(
                            "analysis.projections: dataset has no planted direction");
                    Vector projs = planted_projections(samples, plan.model, c, c0);
                    // prior variance of the statistic: |(c, -c0)|^2 * alpha^2
                    // for the isotropic base; covariance form otherwise
                    double pv;
                    FirstLayerView probe(plan.model, samples.front());
                    const bool has_bias = probe.has_bias_row();
                    Vector dir = c;
                    if (has_bias) dir.push_back(-c0);
                    if (prior.spec.first_layer) {
                        pv = prior.spec.first_layer->variance_along(dir);
                    } else {
                        double nrm2 = 0.0;
                        for (double v : dir) nrm2 += v * v;
                        pv = prior.spec.base.alpha2 * nrm2;
                    }
                    if (samples.size() == 1) {
                        double mx = 0.0;
                        for (double p : projs) mx = std::max(mx, std::abs(p));
                        projections_csv.row({vd.name, name, "planted", fmt10(projs[0]),
                                             "0", fmt10(pv), "nan", "nan",
                                             mx < 1e-3 ? "true" : "false"});
                        pres[name] = {{"max_abs_projection", mx}};
                    } else {
                        Vector draws(10000);
                        const double sd = std::sqrt(pv);
                        for (double& d : draws) d = sd * prior_rng.next_gaussian();
                        PriorMatchResult r = prior_match_test(projs, 0.0, pv, draws);
                        double mean = 0.0;
                        for (double p : projs) mean += p;
                        mean /= static_cast<double>(projs.size());
                        double var = 0.0;
                        for (double p : projs) var += (p - mean) * (p - mean);
                        var /= static_cast<double>(projs.size() - 1);
                        projections_csv.row({vd.name, name, "planted", fmt10(mean),
                                             fmt10(var), fmt10(pv), fmt10(r.z),
                                             fmt10(r.ks), r.pass ? "true" : "false"});
                        pres[name] = {{"z", r.z},
                                      {"variance_ratio", r.variance_ratio},
                                      {"ks", r.ks},
                                      {"pass", r.pass}};
                    }
                } else {
                    PcaBasis basis = pca(vd.train.inputs);
                    const std::size_t m = basis.components.rows();
                    const std::size_t k = std::min(pp.count, basis.components.cols());
                    Matrix dirs(m, k);
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::size_t src = pp.directions == "pca_bottom"
                                                    ? basis.components.cols() - k + kk
                                                    : kk;
                        for (std::size_t i = 0; i < m; ++i)
                            dirs(i, kk) = basis.components(i, src);
                    }
                    if (samples.size() == 1) {
                        auto projs = first_layer_projections(samples, plan.model, dirs,
                                                             false);
                        ojson dirres = ojson::array();
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            double mx = 0.0;
                            for (double p : projs[kk]) mx = std::max(mx, std::abs(p));
                            projections_csv.row({vd.name, name,
                                                 pp.directions + std::to_string(kk),
                                                 fmt10(projs[kk][0]), "0", "nan", "nan",
                                                 "nan", mx < 1e-3 ? "true" : "false"});
                            dirres.push_back({{"max_abs_projection", mx}});
                        }
                        pres[name] = dirres;
                    } else {
                        ProjectionReport rep =
                            project_first_layer(samples, plan.model, dirs, false,
                                                prior.spec, prior_rng);
                        ojson dirres = ojson::array();
                        for (const auto& d : rep.directions) {
                            projections_csv.row(
                                {vd.name, name, pp.directions + std::to_string(d.direction),
                                 fmt10(d.sample_mean), fmt10(d.sample_variance),
                                 fmt10(d.prior_variance), fmt10(d.z), fmt10(d.ks),
                                 d.pass ? "true" : "false"});
                            dirres.push_back({{"z", d.z},
                                              {"variance_ratio",
                                               d.sample_variance / d.prior_variance},
                                              {"ks", d.ks},
                                              {"pass", d.pass}});
                        }
                        pres[name] = dirres;
                    }
                }
            }
            vres["projections"] = pres;
        }

        // ---- robustness curves --------------------------------------------
        if (!plan.analysis.robustness.empty() && classify) {
            ojson rres = ojson::object();
            PcaBasis basis = pca(vd.train.inputs);
            for (std::size_t ri = 0; ri < plan.analysis.robustness.size(); ++ri) {
                const auto& rp = plan.analysis.robustness[ri];
                CorruptionSpec family;
                Vector mags = rp.magnitudes;
                if (rp.corruption == "pca_low" || rp.corruption == "pca_high") {
                    family.kind = CorruptionSpec::Kind::PcaDirectionalNoise;
                    family.basis = basis.components;
                    const std::size_t m = basis.components.cols();
                    const std::size_t k = std::min(rp.components, m);
                    if (rp.corruption == "pca_low") {
                        family.component_begin = m - k;
                        family.component_end = m;
                    } else {
                        family.component_begin = 0;
                        family.component_end = k;
                    }
                } else if (rp.corruption == "gaussian_noise") {
                    family.kind = CorruptionSpec::Kind::GaussianNoise;
                } else {
                    family.kind = CorruptionSpec::Kind::ConstantShift;
                    if (rp.shift_in_std) {
                        const double s = mean_feature_std(vd.train.inputs);
                        for (double& mg : mags) mg *= s;
                    }
                }
                RngStream rng(plan.seed, 2000 + 10 * vi + ri);
                auto rows = robustness_curve(plan.model, predictors, vd.test, family,
                                             mags, rng);
                ojson curve = ojson::object();
                for (const auto& row : rows) {
                    robustness_csv.row({vd.name, rp.name, fmt10(row.magnitude),
                                        row.predictor, fmt10(row.metrics.accuracy),
                                        fmt10(row.metrics.nll), fmt10(row.metrics.ece)});
                    curve[row.predictor][fmt10(row.magnitude)] = row.metrics.accuracy;
                }
                rres[rp.name] = curve;
            }
            vres["robustness"] = rres;
        }

        // ---- spectra --------------------------------------------------------
        for (const auto& sp : plan.analysis.spectra) {
            RngStream rng(plan.seed, 3000 + vi);
            CorruptionSpec c;
            if (sp.corruption == "gaussian_noise") {
                c.kind = CorruptionSpec::Kind::GaussianNoise;
                c.sigma = sp.sigma;
            } else if (sp.corruption == "translate") {
                c.kind = CorruptionSpec::Kind::Translate;
                c.dx = sp.dx;
                c.dy = sp.dy;
            } else {
                throw ConfigError("analysis.spectra: unknown corruption '" + sp.corruption +
                                  "'");
            }
            LabeledDataset corrupted = corrupt(vd.test, c, rng);

            Matrix clean_rows, corrupted_rows;
            PcaBasis basis;
            if (sp.space == "patches") {
                LabeledDataset clean_inner = sp.interior_margin > 0
                                                 ? crop_images(vd.test, sp.interior_margin)
                                                 : vd.test;
                LabeledDataset corr_inner = sp.interior_margin > 0
                                                ? crop_images(corrupted, sp.interior_margin)
                                                : corrupted;
                clean_rows = extract_patches(clean_inner, sp.patch_kernel, false);
                corrupted_rows = extract_patches(corr_inner, sp.patch_kernel, false);
                basis = pca(extract_patches(vd.train, sp.patch_kernel, false));
            } else {
                clean_rows = vd.test.inputs;
                corrupted_rows = corrupted.inputs;
                basis = pca(vd.train.inputs);
            }
            auto rows = corruption_spectrum(clean_rows, corrupted_rows, basis);
            for (const auto& r : rows)
                spectrum_csv.row({vd.name, sp.name, std::to_string(r.component),
                                  fmt10(r.variance_before), fmt10(r.variance_after)});

            ojson sres;
            sres["components"] = rows.size();
            if (sp.corruption == "gaussian_noise") {
                // every component's increase within a 3-sigma sampling band
                const double n = static_cast<double>(clean_rows.rows());
                bool ok = true;
                double worst = 0.0;
                for (const auto& r : rows) {
                    const double inc = r.variance_after - r.variance_before;
                    const double band = 3.0 * std::sqrt(2.0 / (n - 1.0)) *
                                        (r.variance_before + sp.sigma * sp.sigma);
                    worst = std::max(worst, std::abs(inc - sp.sigma * sp.sigma) /
                                                std::max(band, 1e-300));
                    if (std::abs(inc - sp.sigma * sp.sigma) > band) ok = false;
                }
                sres["sigma2"] = sp.sigma * sp.sigma;
                sres["max_band_fraction"] = worst;
                sres["pass"] = ok;
            } else {
                const double inc = rows.back().variance_after - rows.back().variance_before;
                sres["bottom_component_increase"] = inc;
                if (sp.reference_sigma2 > 0.0) {
                    sres["reference_sigma2"] = sp.reference_sigma2;
                    sres["pass"] = inc < 0.05 * sp.reference_sigma2;
                }
            }
            vres["spectra"][sp.name] = sres;
        }

        // ---- conjugate blr check -------------------------------------------
        if (plan.analysis.blr_check) {
            if (plan.model.kind != ModelKind::LinearFeatures ||
                plan.model.likelihood.kind != LikelihoodKind::Gaussian)
                throw ConfigError(
                    "analysis.blr_check: needs a linear_features model with gaussian "
                    "likelihood");
            if (!chain) throw ConfigError("analysis.blr_check: needs an hmc block");
            const std::size_t d = plan.model.widths.front();
            BlrPosterior oracle = blr_posterior(
                vd.train.inputs, vd.train.targets_value, Vector(d, 0.0),
                plan.prior.base.alpha2 * Matrix::identity(d),
                plan.model.likelihood.sigma2);

            const std::size_t s = chain->samples.size();
            double max_z = 0.0;
            Vector mean(d, 0.0);
            for (const auto& w : chain->samples)
                for (std::size_t j = 0; j < d; ++j) mean[j] += w.data[j];
            for (double& m : mean) m /= static_cast<double>(s);
            // batch-means standard error
            const std::size_t batches = 50, bs = s / batches;
            for (std::size_t j = 0; j < d; ++j) {
                Vector bm(batches, 0.0);
                for (std::size_t b = 0; b < batches; ++b) {
                    for (std::size_t i = b * bs; i < (b + 1) * bs; ++i)
                        bm[b] += chain->samples[i].data[j];
                    bm[b] /= static_cast<double>(bs);
                }
                double mu = 0.0;
                for (double x : bm) mu += x;
                mu /= batches;
                double var = 0.0;
                for (double x : bm) var += (x - mu) * (x - mu);
                var /= (batches - 1);
                const double se = std::sqrt(var / batches);
                max_z = std::max(max_z, std::abs(mean[j] - oracle.mean[j]) / se);
            }
            Matrix cov(d, d);
            for (const auto& w : chain->samples)
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t b = 0; b < d; ++b)
                        cov(a, b) += (w.data[a] - mean[a]) * (w.data[b] - mean[b]);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b)
                    cov(a, b) /= static_cast<double>(s - 1);
            const double cov_err = frobenius_norm(cov - oracle.covariance) /
                                   frobenius_norm(oracle.covariance);

            double map_err = std::numeric_limits<double>::quiet_NaN();
            for (const auto& [name, fit] : map_fits)
                if (name == "map") {
                    map_err = 0.0;
                    for (std::size_t j = 0; j < d; ++j)
                        map_err = std::max(map_err,
                                           std::abs(fit.params.data[j] - oracle.mean[j]));
                }
            ojson b;
            b["max_mean_z"] = max_z;
            b["cov_frobenius_rel_error"] = cov_err;
            if (!std::isnan(map_err)) b["map_inf_error"] = map_err;
            b["pass"] = max_z < 3.0 && cov_err < 0.1 &&
                        (std::isnan(map_err) || map_err < 1e-4);
            vres["blr_check"] = b;
        }

        // ---- grid oracle check ----------------------------------------------
        if (plan.analysis.grid_check) {
            const auto& gc = *plan.analysis.grid_check;
            const double a2 = plan.prior.base.alpha2;
            const double sd = std::sqrt(a2);
            ojson g;
            if (gc.mode == "dead") {
                PriorSpec prior_spec;
                prior_spec.base = plan.prior.base;
                auto axes = std::vector<Vector>(
                    2, make_axis(0.0, gc.halfwidth_sigmas * sd, gc.nodes));
                GridPosterior gp =
                    grid_posterior(plan.model, prior_spec, vd.train, axes);
                Vector marg = gp.marginal(gc.axis);
                // prior normalized on the same grid by the same rule
                GridPosterior pg = grid_posterior_fn(
                    [a2](const Vector& w) { return -0.5 * w[0] * w[0] / a2; },
                    {axes[gc.axis]});
                double sup = 0.0;
                for (std::size_t i = 0; i < marg.size(); ++i)
                    sup = std::max(sup, std::abs(marg[i] - std::exp(pg.log_density[i] -
                                                                    pg.log_normalizer)));
                g["sup_norm"] = sup;
                g["pass"] = sup < gc.tolerance;
            } else {
                // rotated marginal for the multiplicative dependence
                if (vd.train.meta.multiplicative_p.empty())
                    throw ConfigError(
                        "analysis.grid_check: rotated mode needs multiplicative data");
                Vector p = vd.train.meta.multiplicative_p;
                if (p.size() != 2)
                    throw ConfigError("analysis.grid_check: rotated mode is 2-D only");
                const ModelSpec& spec = plan.model;
                const LabeledDataset& data = vd.train;
                auto log_unnorm = [&spec, &data, p, a2](const Vector& wbar) {
                    ParamVector w;
                    w.add_block("W1", {2});
                    w.data[0] = wbar[0] * p[0] - wbar[1] * p[1];
                    w.data[1] = wbar[0] * p[1] + wbar[1] * p[0];
                    double lp = -0.5 * (w.data[0] * w.data[0] + w.data[1] * w.data[1]) / a2;
                    lp += log_likelihood(spec, w, data);
                    return lp;
                };
                auto axes = std::vector<Vector>(
                    2, make_axis(0.0, gc.halfwidth_sigmas * sd, gc.nodes));
                GridPosterior gp = grid_posterior_fn(log_unnorm, axes);
                Vector marg = gp.marginal(0);
                double sup = 0.0;
                for (std::size_t i = 0; i < marg.size(); ++i) {
                    const double w = axes[0][i];
                    const double exact = std::exp(-0.5 * w * w / a2) /
                                         (sd * std::sqrt(2.0 * M_PI));
                    sup = std::max(sup, std::abs(marg[i] - exact));
                }
                g["sup_norm"] = sup;
                g["pass"] = sup < gc.tolerance;
            }
            vres["grid_check"] = g;
        }

        // ---- prediction shift (Prop 1' / 1'') -------------------------------
        if (plan.analysis.prediction_shift) {
            const auto& ps = *plan.analysis.prediction_shift;
            if (vd.train.meta.dependence_kind != "dead_feature")
                throw ConfigError(
                    "analysis.prediction_shift: needs a dead_feature dataset");
            const std::size_t dead = vd.train.meta.dead_index;
            const std::size_t probes = std::min<std::size_t>(ps.probes, vd.test.n());
            if (probes == 0) throw ConfigError("analysis.prediction_shift: no test rows");

            auto probe_at = [&](std::size_t i, double cval) {
                Vector x(vd.test.inputs.row(i).begin(), vd.test.inputs.row(i).end());
                x[dead] = cval;
                return x;
            };

            ojson g;
            // MAP argmax invariance over every c value
            bool map_invariant = true;
            for (const auto& [name, fit] : map_fits) {
                for (std::size_t i = 0; i < probes; ++i) {
                    int ref = -1;
                    for (double cval : ps.c_values) {
                        Vector out = forward(plan.model, fit.params, probe_at(i, cval));
                        int arg = 0;
                        for (std::size_t j = 1; j < out.size(); ++j)
                            if (out[j] > out[static_cast<std::size_t>(arg)])
                                arg = static_cast<int>(j);
                        if (ref < 0) ref = arg;
                        if (arg != ref) map_invariant = false;
                    }
                }
            }
            g["map_argmax_invariant"] = map_invariant;

            if (chain) {
                // BMA total-variation shift between the two reference c values
                double tv_sum = 0.0;
                for (std::size_t i = 0; i < probes; ++i) {
                    Matrix xa(1, vd.test.feature_dim()), xb(1, vd.test.feature_dim());
                    Vector a = probe_at(i, ps.tv_a), b = probe_at(i, ps.tv_b);
                    for (std::size_t j = 0; j < a.size(); ++j) {
                        xa(0, j) = a[j];
                        xb(0, j) = b[j];
                    }
                    Predictive pa = bma_predict(chain->samples, plan.model, xa);
                    Predictive pb = bma_predict(chain->samples, plan.model, xb);
                    double tv = 0.0;
                    for (std::size_t j = 0; j < pa.mean.cols(); ++j)
                        tv += std::abs(pa.mean(0, j) - pb.mean(0, j));
                    tv_sum += 0.5 * tv;
                }
                const double mean_tv = tv_sum / static_cast<double>(probes);
                g["bma_tv"] = mean_tv;
                g["bma_tv_pass"] = mean_tv > ps.tv_min;

                // Prop 1'': per-sample class at large c equals argmax of the
                // dead-row logit direction for eps-separable samples.
                std::size_t separable = 0, matched = 0;
                for (const auto& w : chain->samples) {
                    Vector z = dead_row_logit_direction(plan.model, w, dead);
                    if (!is_epsilon_separable(z, ps.epsilon)) continue;
                    ++separable;
                    std::size_t zarg = 0;
                    for (std::size_t j = 1; j < z.size(); ++j)
                        if (z[j] > z[zarg]) zarg = j;
                    Vector out = forward(plan.model, w, probe_at(0, ps.large_c));
                    std::size_t farg = 0;
                    for (std::size_t j = 1; j < out.size(); ++j)
                        if (out[j] > out[farg]) farg = j;
                    if (farg == zarg) ++matched;
                }
                g["epsilon_separable_samples"] = separable;
                g["epsilon_separable_matched"] = matched;
                g["epsilon_separable_pass"] = separable > 0 && separable == matched;
            }
            vres["prediction_shift"] = g;
        }

        // ---- zero-data tempered variance -------------------------------------
        if (plan.analysis.zero_data_variance) {
            const auto& zv = *plan.analysis.zero_data_variance;
            HmcConfig cfg;
            cfg.trajectory = TrajectoryRule::PiSigmaHalf;
            cfg.leapfrog_steps = zv.leapfrog_steps;
            cfg.num_iterations = zv.iterations;
            cfg.burn_in = zv.burn_in;
            cfg.temperature = zv.temperature;
            cfg.seed = plan.seed;
            cfg.stream = 5000 + vi;
            LabeledDataset empty;
            Chain zchain = hmc_sample(plan.model, prior.spec, empty, cfg);
            const double expect = plan.prior.base.alpha2 * zv.temperature;
            double worst = 0.0;
            const std::size_t dim = zchain.samples.front().dim();
            for (std::size_t j = 0; j < dim; ++j) {
                double var = 0.0;
                for (const auto& w : zchain.samples) var += w.data[j] * w.data[j];
                var /= static_cast<double>(zchain.samples.size());
                worst = std::max(worst, std::abs(var / expect - 1.0));
            }
            ojson z;
            z["temperature"] = zv.temperature;
            z["expected_variance"] = expect;
            z["worst_coordinate_deviation"] = worst;
            z["pass"] = worst < zv.tolerance;
            vres["zero_data_variance"] = z;
        }

        // ---- conv shift identity ----------------------------------------------
        if (plan.analysis.conv_shift_identity) {
            if (plan.model.kind != ModelKind::Cnn || plan.model.conv.zero_padding)
                throw ConfigError(
                    "analysis.conv_shift_identity: needs an unpadded cnn first layer");
            RngStream rng(plan.seed, 6000 + vi);
            const std::size_t K = plan.model.conv.kernel, F = plan.model.conv.filters;
            const std::size_t dim = vd.test.feature_dim();
            Matrix img(1, dim), img_shift(1, dim);
            const double c = 0.7;
            for (std::size_t j = 0; j < dim; ++j) {
                img(0, j) = rng.next_gaussian();
                img_shift(0, j) = img(0, j) + c;
            }
            Matrix p0 = extract_patches(img, plan.model.image_h, plan.model.image_w,
                                        plan.model.channels, K, false);
            Matrix p1 = extract_patches(img_shift, plan.model.image_h, plan.model.image_w,
                                        plan.model.channels, K, false);
            Vector wf(K * K * plan.model.channels * F);
            for (double& w : wf) w = rng.next_gaussian();
            double worst = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
                double wsum = 0.0;
                for (std::size_t i = 0; i < K * K * plan.model.channels; ++i)
                    wsum += wf[i * F + f];
                for (std::size_t pos = 0; pos < p0.rows(); ++pos) {
                    double o0 = 0.0, o1 = 0.0;
                    for (std::size_t i = 0; i < K * K * plan.model.channels; ++i) {
                        o0 += p0(pos, i) * wf[i * F + f];
                        o1 += p1(pos, i) * wf[i * F + f];
                    }
                    worst = std::max(worst, std::abs(o1 - (o0 + c * wsum)));
                }
            }
            ojson ci;
            ci["max_abs_error"] = worst;
            ci["pass"] = worst < 1e-12;
            vres["conv_shift_identity"] = ci;
        }

        results[vd.name] = vres;
    }

    // ---- numerics (model-independent) ------------------------------------
    if (plan.analysis.numerics) {
        ojson num;
        RngStream rng(plan.seed, 7000);
        auto fd_check = [&](const ModelSpec& spec, const LabeledDataset& data) {
            PriorSpec prior;
            prior.base.alpha2 = 0.25;
            ParamVector p = spec.make_params();
            for (double& w : p.data) w = 0.4 * rng.next_gaussian();
            Vector g = grad_log_posterior(spec, prior, p, data, 1.0);
            double worst = 0.0;
            ParamVector q = p;
            for (std::size_t i = 0; i < q.dim(); ++i) {
                const double w0 = q.data[i], h = 1e-5;
                q.data[i] = w0 + h;
                double up = prior_logpdf(prior, q) + log_likelihood(spec, q, data);
                q.data[i] = w0 - h;
                double um = prior_logpdf(prior, q) + log_likelihood(spec, q, data);
                q.data[i] = w0;
                const double fd = (up - um) / (2.0 * h);
                const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-3});
                worst = std::max(worst, std::abs(fd - g[i]) / scale);
            }
            return worst;
        };

        {
            ModelSpec mlp;
            mlp.kind = ModelKind::Mlp;
            mlp.widths = {3, 4, 2};
            LabeledDataset d;
            d.inputs = Matrix(5, 3);
            d.targets_class = {0, 1, 0, 1, 1};
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 3; ++j) d.inputs(i, j) = rng.next_gaussian();
            num["grad_max_rel_err_mlp"] = fd_check(mlp, d);
        }
        {
            ModelSpec cnn;
            cnn.kind = ModelKind::Cnn;
            cnn.image_h = cnn.image_w = 6;
            cnn.conv = {3, 2, false, true};
            cnn.widths = {3, 2};
            LabeledDataset d;
            d.inputs = Matrix(3, 36);
            d.image_h = d.image_w = 6;
            d.targets_class = {1, 0, 1};
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 36; ++j) d.inputs(i, j) = rng.next_gaussian();
            num["grad_max_rel_err_cnn"] = fd_check(cnn, d);
        }
        {
            ModelSpec nalu;
            nalu.kind = ModelKind::Nalu;
            nalu.widths = {3};
            nalu.link = Link::Identity;
            nalu.likelihood = {LikelihoodKind::Gaussian, 0.5};
            LabeledDataset d;
            d.inputs = Matrix(4, 3);
            d.targets_value.resize(4);
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 3; ++j)
                    d.inputs(i, j) = 0.5 + 2.0 * rng.next_unit();
                d.targets_value[i] = 0.5 + rng.next_unit();
            }
            num["grad_max_rel_err_nalu"] = fd_check(nalu, d);
        }
        {
            // leapfrog reversibility on a random 10-D quadratic
            Matrix g(10, 10);
            for (std::size_t i = 0; i < 10; ++i)
                for (std::size_t j = i; j < 10; ++j) g(i, j) = g(j, i) = rng.next_gaussian();
            Matrix a = matmul(g, transpose(g));
            for (std::size_t i = 0; i < 10; ++i) a(i, i) += 10.0;
            auto grad = [&a](const ParamVector& x) {
                Vector v = matvec(a, x.data);
                for (double& y : v) y = -y;
                return v;
            };
            ParamVector q0;
            q0.add_block("w", {10});
            Vector p0(10);
            for (std::size_t i = 0; i < 10; ++i) {
                q0.data[i] = rng.next_gaussian();
                p0[i] = rng.next_gaussian();
            }
            LeapfrogResult fwd = leapfrog_trajectory(q0, p0, grad, 0.02, 50);
            Vector pn = fwd.p;
            for (double& x : pn) x = -x;
            LeapfrogResult back = leapfrog_trajectory(fwd.q, pn, grad, 0.02, 50);
            double worst = 0.0;
            for (std::size_t i = 0; i < 10; ++i) {
                worst = std::max(worst, std::abs(back.q.data[i] - q0.data[i]));
                worst = std::max(worst, std::abs(-back.p[i] - p0[i]));
            }
            num["leapfrog_reversibility_err"] = worst;
        }
        num["pass"] = num["grad_max_rel_err_mlp"].get<double>() < 1e-4 &&
                      num["grad_max_rel_err_cnn"].get<double>() < 1e-4 &&
                      num["grad_max_rel_err_nalu"].get<double>() < 1e-4 &&
                      num["leapfrog_reversibility_err"].get<double>() < 1e-8;
        results["numerics"] = num;
    }

    report.summary["results"] = results;
    report.summary["warnings"] = warnings;
    report.summary["files"] = {"metrics.csv", "projections.csv", "robustness.csv",
                               "spectrum.csv", "report.json"};

    {
        std::ofstream rj(plan.output_dir / "report.json");
        rj << report.summary.dump(2) << "\n";
    }

    const auto t1 = std::chrono::steady_clock::now();
    report.wall_clock_seconds = std::chrono::duration<double>(t1 - t0).count();
    {
        std::ofstream log(plan.output_dir / "run.log");
        log << "wall_clock_seconds " << report.wall_clock_seconds << "\n";
        for (const auto& w : warnings) log << "warning " << w << "\n";
    }
    return report;
}

RunReport run_experiment_file(const std::string& config_path, const RunOverrides& ov) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config '" + config_path + "'");
    ojson config;
    try {
        config = ojson::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in '" + config_path + "': " + e.what());
    }
    return run_experiment(config, ov);
}

}  // namespace bnnshift
