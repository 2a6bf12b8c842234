#include "bnnshift/sidecar.hpp"

#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "bnnshift/errors.hpp"
#include "bnnshift/linalg.hpp"

namespace bnnshift {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw FormatError("sidecar: truncated while reading " + what);
    return v;
}
std::uint64_t read_u64(std::istream& in, const std::string& what) {
    std::uint64_t v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw FormatError("sidecar: truncated while reading " + what);
    return v;
}
double read_f64(std::istream& in, const std::string& what) {
    double v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw FormatError("sidecar: truncated while reading " + what);
    return v;
}

constexpr std::uint32_t kChainMagic = 0x424e5343;  // "BNSC"
constexpr std::uint32_t kCovMagic = 0x424e4356;    // "BNCV"

}  // namespace

void save_chain(const Chain& chain, const std::string& path_prefix) {
    if (chain.samples.empty()) throw ConfigError("save_chain: empty chain");
    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw FormatError("save_chain: cannot open '" + path_prefix + ".bin'");

    const ParamVector& first = chain.samples.front();
    write_u32(bin, kChainMagic);
    write_u32(bin, 1);  // version
    write_u64(bin, first.dim());
    write_u64(bin, chain.samples.size());
    write_u32(bin, static_cast<std::uint32_t>(first.layout.size()));
    for (const auto& b : first.layout) {
        write_u32(bin, static_cast<std::uint32_t>(b.name.size()));
        bin.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        write_u32(bin, static_cast<std::uint32_t>(b.shape.size()));
        for (std::size_t s : b.shape) write_u64(bin, s);
        write_u64(bin, b.offset);
        write_u64(bin, b.size);
    }
    for (const auto& s : chain.samples)
        for (double v : s.data) write_f64(bin, v);

    nlohmann::ordered_json meta;
    meta["step_size"] = chain.config.step_size;
    meta["leapfrog_steps"] = chain.config.leapfrog_steps;
    meta["trajectory"] =
        chain.config.trajectory == TrajectoryRule::PiSigmaHalf ? "pi_sigma_half" : "explicit";
    meta["num_iterations"] = chain.config.num_iterations;
    meta["burn_in"] = chain.config.burn_in;
    meta["temperature"] = chain.config.temperature;
    meta["seed"] = chain.config.seed;
    meta["stream"] = chain.config.stream;
    meta["accept_rate"] = chain.accept_rate;
    meta["low_accept_warning"] = chain.low_accept_warning;
    meta["divergences"] = chain.divergences;
    meta["energies"] = chain.energies;
    std::ofstream js(path_prefix + ".json");
    js << meta.dump(2) << "\n";
}

Chain load_chain(const std::string& path_prefix) {
    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw FormatError("load_chain: cannot open '" + path_prefix + ".bin'");
    if (read_u32(bin, "magic") != kChainMagic) throw FormatError("load_chain: bad magic");
    if (read_u32(bin, "version") != 1) throw FormatError("load_chain: unknown version");
    const std::uint64_t dim = read_u64(bin, "dim");
    const std::uint64_t count = read_u64(bin, "sample count");
    const std::uint32_t blocks = read_u32(bin, "block count");

    ParamVector proto;
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const std::uint32_t name_len = read_u32(bin, "block name length");
        std::string name(name_len, '\0');
        if (!bin.read(name.data(), name_len))
            throw FormatError("load_chain: truncated block name");
        const std::uint32_t shape_len = read_u32(bin, "shape length");
        std::vector<std::size_t> shape(shape_len);
        for (auto& s : shape) s = read_u64(bin, "shape entry");
        read_u64(bin, "offset");
        read_u64(bin, "size");
        proto.add_block(name, shape);
    }
    if (proto.dim() != dim) throw FormatError("load_chain: layout does not tile dim");

    Chain chain;
    for (std::uint64_t s = 0; s < count; ++s) {
        ParamVector p = proto;
        for (std::uint64_t i = 0; i < dim; ++i) p.data[i] = read_f64(bin, "sample value");
        chain.samples.push_back(std::move(p));
    }

    std::ifstream js(path_prefix + ".json");
    if (js) {
        nlohmann::json meta = nlohmann::json::parse(js, nullptr, true, true);
        chain.config.step_size = meta.value("step_size", 0.0);
        chain.config.leapfrog_steps = meta.value("leapfrog_steps", std::size_t{1});
        chain.config.num_iterations = meta.value("num_iterations", count);
        chain.config.burn_in = meta.value("burn_in", std::size_t{0});
        chain.config.temperature = meta.value("temperature", 1.0);
        chain.config.seed = meta.value("seed", std::uint64_t{0});
        chain.config.stream = meta.value("stream", std::uint64_t{0});
        chain.accept_rate = meta.value("accept_rate", 0.0);
        chain.low_accept_warning = meta.value("low_accept_warning", false);
        chain.divergences = meta.value("divergences", std::size_t{0});
        if (meta.contains("energies"))
            chain.energies = meta["energies"].get<Vector>();
    }
    return chain;
}

void save_covariance_prior(const CovariancePrior& cp, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_covariance_prior: cannot open '" + path + "'");
    write_u32(out, kCovMagic);
    write_u32(out, 1);
    write_u64(out, cp.dim);
    write_u32(out, cp.includes_bias ? 1 : 0);
    write_f64(out, cp.alpha);
    write_f64(out, cp.epsilon);
    write_u64(out, cp.data_mean.size());
    for (double v : cp.data_mean) write_f64(out, v);
    for (std::size_t i = 0; i < cp.dim; ++i)
        for (std::size_t j = 0; j < cp.dim; ++j) write_f64(out, cp.cov(i, j));
}

CovariancePrior load_covariance_prior(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_covariance_prior: cannot open '" + path + "'");
    if (read_u32(in, "magic") != kCovMagic)
        throw FormatError("load_covariance_prior: bad magic");
    if (read_u32(in, "version") != 1)
        throw FormatError("load_covariance_prior: unknown version");
    CovariancePrior cp;
    cp.dim = read_u64(in, "dim");
    cp.includes_bias = read_u32(in, "bias flag") != 0;
    cp.alpha = read_f64(in, "alpha");
    cp.epsilon = read_f64(in, "epsilon");
    const std::uint64_t mean_len = read_u64(in, "mean length");
    cp.data_mean.resize(mean_len);
    for (double& v : cp.data_mean) v = read_f64(in, "mean entry");
    cp.cov = Matrix(cp.dim, cp.dim);
    for (std::size_t i = 0; i < cp.dim; ++i)
        for (std::size_t j = 0; j < cp.dim; ++j) cp.cov(i, j) = read_f64(in, "cov entry");
    cp.factor = cholesky(cp.cov);
    cp.precision = cholesky_inverse(cp.factor);
    auto eig = eigh_symmetric(cp.cov, 1e-9);
    cp.eigenvalues = std::move(eig.eigenvalues);
    cp.eigenvectors = std::move(eig.eigenvectors);
    cp.log_det_half = 0.0;
    for (std::size_t i = 0; i < cp.dim; ++i) cp.log_det_half += std::log(cp.factor(i, i));
    return cp;
}

}  // namespace bnnshift
