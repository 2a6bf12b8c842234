#include "bnnshift/generators.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "bnnshift/errors.hpp"
#include "bnnshift/linalg.hpp"

namespace bnnshift {

namespace {

// Orthogonal projector machinery for a stacked constraint system M x = b:
// projects points onto the affine solution set and directions onto null(M).
struct AffineProjector {
    Matrix m;         // k x d
    Vector b;         // k
    Matrix gram_inv;  // (M M^T)^+ via spectral pseudo-inverse

    static AffineProjector build(Matrix constraints, Vector offsets) {
        AffineProjector p;
        p.m = std::move(constraints);
        p.b = std::move(offsets);
        Matrix gram = matmul(p.m, transpose(p.m));
        auto eig = eigh_symmetric(gram, 1e-9);
        const std::size_t k = gram.rows();
        const double tol = 1e-12 * std::max(1.0, eig.eigenvalues.front());
        p.gram_inv = Matrix(k, k);
        for (std::size_t e = 0; e < k; ++e) {
            if (eig.eigenvalues[e] <= tol) continue;
            const double inv = 1.0 / eig.eigenvalues[e];
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    p.gram_inv(i, j) += inv * eig.eigenvectors(i, e) * eig.eigenvectors(j, e);
        }
        return p;
    }

    void project_point(Vector& x) const {
        Vector r = matvec(m, x);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
        Vector lam = matvec(gram_inv, r);
        Vector corr = matvec_t(m, lam);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= corr[i];
    }

    void project_direction(Vector& t) const {
        Vector r = matvec(m, t);
        Vector lam = matvec(gram_inv, r);
        Vector corr = matvec_t(m, lam);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] -= corr[i];
    }

    double residual(const Vector& x) const {
        Vector r = matvec(m, x);
        double worst = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i)
            worst = std::max(worst, std::abs(r[i] - b[i]));
        return worst;
    }
};

Vector unit_teacher(std::size_t d, const AffineProjector* proj, RngStream& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Vector t(d);
        for (double& v : t) v = rng.next_gaussian();
        if (proj) proj->project_direction(t);
        const double nrm = norm2(t);
        if (nrm > 1e-6) {
            for (double& v : t) v /= nrm;
            return t;
        }
    }
    throw ConfigError("generator: dependence leaves no free direction for the teacher");
}

// k teacher directions inside the admissible subspace, orthonormalized.
std::vector<Vector> teacher_bank(std::size_t k, std::size_t d,
                                 const AffineProjector* proj, RngStream& rng) {
    std::vector<Vector> bank;
    while (bank.size() < k) {
        Vector t = unit_teacher(d, proj, rng);
        for (const Vector& prev : bank) {
            const double c = dot(t, prev);
            for (std::size_t j = 0; j < d; ++j) t[j] -= c * prev[j];
        }
        const double nrm = norm2(t);
        if (nrm < 1e-6) continue;
        for (double& v : t) v /= nrm;
        bank.push_back(std::move(t));
    }
    return bank;
}

// argmax class over the teacher bank; margin is the top-2 score gap.
int argmax_label(const std::vector<Vector>& bank, const Vector& x, double& gap) {
    int best = 0;
    double s1 = -std::numeric_limits<double>::infinity();
    double s2 = s1;
    for (std::size_t k = 0; k < bank.size(); ++k) {
        const double s = dot(bank[k], x);
        if (s > s1) {
            s2 = s1;
            s1 = s;
            best = static_cast<int>(k);
        } else if (s > s2) {
            s2 = s;
        }
    }
    gap = s1 - s2;
    return best;
}

// Patch constraint matrix: one row per patch position of a single image.
Matrix patch_constraint_matrix(std::size_t h, std::size_t w, std::size_t c,
                               std::size_t k, const Vector& gamma) {
    if (gamma.size() != k * k * c)
        throw ConfigError("generator: patch gamma length must be K*K*C");
    if (h < k || w < k) throw ConfigError("generator: kernel larger than image");
    const std::size_t oh = h - k + 1, ow = w - k + 1;
    Matrix m(oh * ow, h * w * c);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t row = oy * ow + ox;
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        m(row, ((oy + ky) * w + (ox + kx)) * c + ch) =
                            gamma[(ky * k + kx) * c + ch];
        }
    return m;
}

}  // namespace

LabeledDataset gen_planted(const DependenceSpec& dep, const GeneratorConfig& cfg,
                           RngStream& rng) {
    if (cfg.n < 2) throw ConfigError("generator: need n >= 2");

    const bool image = cfg.image_h > 0;
    const std::size_t d = image ? cfg.image_h * cfg.image_w * cfg.channels : cfg.m;

    LabeledDataset data;
    data.image_h = image ? cfg.image_h : 0;
    data.image_w = image ? cfg.image_w : 0;
    data.channels = image ? cfg.channels : 1;
    data.inputs = Matrix(cfg.n, d);

    // Assemble the projector for the planted dependence (in log space for the
    // multiplicative kind).
    std::unique_ptr<AffineProjector> proj;
    switch (dep.kind) {
        case DependenceSpec::Kind::DeadFeature: {
            if (dep.dead_index >= d) throw ConfigError("generator: dead index out of range");
            Matrix c(1, d);
            c(0, dep.dead_index) = 1.0;
            proj = std::make_unique<AffineProjector>(AffineProjector::build(c, {0.0}));
            data.meta.dependence_kind = "dead_feature";
            data.meta.dead_index = dep.dead_index;
            data.meta.constraints = c;
            data.meta.constraint_offsets = {0.0};
            break;
        }
        case DependenceSpec::Kind::Affine: {
            if (dep.affine_c.cols() != d || dep.affine_c.rows() == 0 ||
                dep.affine_c.rows() != dep.affine_c0.size())
                throw ConfigError("generator: affine constraint shape mismatch");
            if (dep.affine_c.rows() >= d)
                throw ConfigError("generator: dependence dimension must be < m");
            Matrix c = dep.affine_c;
            Vector c0 = dep.affine_c0;
            for (std::size_t r = 0; r < c.rows(); ++r) {
                double nrm = c0[r] * c0[r];
                for (std::size_t j = 0; j < d; ++j) nrm += c(r, j) * c(r, j);
                nrm = std::sqrt(nrm);
                if (nrm == 0.0) throw ConfigError("generator: zero affine constraint");
                for (std::size_t j = 0; j < d; ++j) c(r, j) /= nrm;
                c0[r] /= nrm;
            }
            proj = std::make_unique<AffineProjector>(AffineProjector::build(c, c0));
            data.meta.dependence_kind = "affine";
            data.meta.constraints = c;
            data.meta.constraint_offsets = c0;
            break;
        }
        case DependenceSpec::Kind::PatchAffine: {
            if (!image) throw ConfigError("generator: patch dependence needs image data");
            // Normalize (gamma, gamma0) jointly to unit norm; same constraint set.
            Vector gamma = dep.patch_gamma;
            double gamma0 = dep.patch_gamma0;
            double nrm = gamma0 * gamma0;
            for (double v : gamma) nrm += v * v;
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) throw ConfigError("generator: zero patch constraint");
            for (double& v : gamma) v /= nrm;
            gamma0 /= nrm;
            Matrix m = patch_constraint_matrix(cfg.image_h, cfg.image_w, cfg.channels,
                                               dep.patch_kernel, gamma);
            Vector b(m.rows(), gamma0);
            proj = std::make_unique<AffineProjector>(AffineProjector::build(m, b));
            // Feasibility: project a probe point and check the residual.
            Vector probe(d, 0.0);
            proj->project_point(probe);
            if (proj->residual(probe) > 1e-10)
                throw ConfigError("generator: patch constraint system is inconsistent");
            data.meta.dependence_kind = "patch_affine";
            Matrix g(1, gamma.size());
            for (std::size_t j = 0; j < gamma.size(); ++j) g(0, j) = gamma[j];
            data.meta.constraints = g;
            data.meta.constraint_offsets = {gamma0};
            break;
        }
        case DependenceSpec::Kind::Multiplicative: {
            if (dep.mult_p.size() != d)
                throw ConfigError("generator: multiplicative p dimension mismatch");
            Matrix c(1, d);
            double nrm = 0.0;
            for (std::size_t j = 0; j < d; ++j) nrm += dep.mult_p[j] * dep.mult_p[j];
            nrm = std::sqrt(nrm);
            for (std::size_t j = 0; j < d; ++j) c(0, j) = dep.mult_p[j] / nrm;
            proj = std::make_unique<AffineProjector>(AffineProjector::build(c, {0.0}));
            data.meta.dependence_kind = "multiplicative";
            data.meta.multiplicative_p = dep.mult_p;
            break;
        }
        case DependenceSpec::Kind::Spurious: {
            if (dep.spurious_index >= d)
                throw ConfigError("generator: spurious index out of range");
            data.meta.dependence_kind = "spurious";
            data.meta.spurious_index = dep.spurious_index;
            data.meta.spurious_value = dep.spurious_value;
            break;
        }
    }

    const bool multiclass = !cfg.regression && cfg.classes > 2;
    std::vector<Vector> bank;
    if (multiclass) bank = teacher_bank(cfg.classes, d, proj.get(), rng);
    Vector teacher = multiclass ? bank.front() : unit_teacher(d, proj.get(), rng);
    data.meta.teacher_direction = teacher;

    const bool multiplicative = dep.kind == DependenceSpec::Kind::Multiplicative;
    if (cfg.regression || multiplicative) data.targets_value.resize(cfg.n);
    if (!cfg.regression) data.targets_class.resize(cfg.n);

    for (std::size_t i = 0; i < cfg.n; ++i) {
        Vector x(d);
        double score = 0.0;
        int label = 0;
        for (int attempt = 0;; ++attempt) {
            for (double& v : x) v = rng.next_gaussian();
            if (proj) proj->project_point(x);
            if (multiclass) {
                double gap = 0.0;
                label = argmax_label(bank, x, gap);
                if (gap >= cfg.teacher_margin || attempt > 256) break;
            } else {
                score = dot(teacher, x);
                if (std::abs(score) >= cfg.teacher_margin || cfg.regression ||
                    attempt > 256)
                    break;
            }
        }
        if (multiplicative) {
            // x holds log inputs; store exp and a log-space teacher target.
            for (std::size_t j = 0; j < d; ++j) data.inputs(i, j) = std::exp(x[j]);
            data.targets_value[i] =
                std::exp(score + cfg.teacher_noise * rng.next_gaussian());
        } else {
            for (std::size_t j = 0; j < d; ++j) data.inputs(i, j) = x[j];
            if (cfg.regression)
                data.targets_value[i] = score + cfg.teacher_noise * rng.next_gaussian();
        }
        if (!cfg.regression)
            data.targets_class[i] = multiclass ? label : (score > 0.0 ? 1 : 0);
    }

    if (dep.kind == DependenceSpec::Kind::Spurious) {
        for (std::size_t i = 0; i < cfg.n; ++i)
            data.inputs(i, dep.spurious_index) =
                dep.spurious_value * static_cast<double>(data.targets_class[i]);
    }

    return data;
}

LabeledDataset gen_teacher_cloud(const GeneratorConfig& cfg, RngStream& rng) {
    if (cfg.n < 1) throw ConfigError("generator: need n >= 1");
    const std::size_t d = cfg.m;
    LabeledDataset data;
    data.inputs = Matrix(cfg.n, d);
    if (cfg.regression)
        data.targets_value.resize(cfg.n);
    else
        data.targets_class.resize(cfg.n);
    Vector teacher = unit_teacher(d, nullptr, rng);
    data.meta.teacher_direction = teacher;
    for (std::size_t i = 0; i < cfg.n; ++i) {
        Vector x(d);
        double score = 0.0;
        do {
            for (double& v : x) v = rng.next_gaussian();
            score = dot(teacher, x);
        } while (!cfg.regression && std::abs(score) < cfg.teacher_margin);
        for (std::size_t j = 0; j < d; ++j) data.inputs(i, j) = x[j];
        if (cfg.regression)
            data.targets_value[i] = score + cfg.teacher_noise * rng.next_gaussian();
        else
            data.targets_class[i] = score > 0.0 ? 1 : 0;
    }
    return data;
}

Vector center_dataset(LabeledDataset& data) {
    const std::size_t n = data.n(), d = data.feature_dim();
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += data.inputs(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) data.inputs(i, j) -= mean[j];
    // Constraint rows c.x = c0 become c.x' = c0 - c.mean in the new frame.
    for (std::size_t r = 0; r < data.meta.constraints.rows(); ++r) {
        double shift = 0.0;
        for (std::size_t j = 0; j < d && j < data.meta.constraints.cols(); ++j)
            shift += data.meta.constraints(r, j) * mean[j];
        if (data.meta.dependence_kind != "patch_affine")
            data.meta.constraint_offsets[r] -= shift;
    }
    return mean;
}

}  // namespace bnnshift
