#include "bnnshift/param_vector.hpp"

#include <numeric>

#include "bnnshift/errors.hpp"

namespace bnnshift {

const BlockLayout& ParamVector::block(const std::string& name) const {
    for (const auto& b : layout)
        if (b.name == name) return b;
    throw ConfigError("ParamVector: no block named '" + name + "'");
}

bool ParamVector::has_block(const std::string& name) const {
    for (const auto& b : layout)
        if (b.name == name) return true;
    return false;
}

std::span<double> ParamVector::block_span(const std::string& name) {
    const auto& b = block(name);
    return {data.data() + b.offset, b.size};
}

std::span<const double> ParamVector::block_span(const std::string& name) const {
    const auto& b = block(name);
    return {data.data() + b.offset, b.size};
}

void ParamVector::add_block(const std::string& name, std::vector<std::size_t> shape) {
    BlockLayout b;
    b.name = name;
    b.shape = std::move(shape);
    b.size = std::accumulate(b.shape.begin(), b.shape.end(), std::size_t{1},
                             std::multiplies<>());
    b.offset = data.size();
    layout.push_back(b);
    data.resize(data.size() + b.size, 0.0);
}

}  // namespace bnnshift
