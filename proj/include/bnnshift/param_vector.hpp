#pragma once

#include <span>
#include <string>
#include <vector>

#include "bnnshift/matrix.hpp"

namespace bnnshift {

struct BlockLayout {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Flat parameter vector with a named layout into weight/bias blocks.
struct ParamVector {
    Vector data;
    std::vector<BlockLayout> layout;

    std::size_t dim() const { return data.size(); }

    const BlockLayout& block(const std::string& name) const;
    bool has_block(const std::string& name) const;

    std::span<double> block_span(const std::string& name);
    std::span<const double> block_span(const std::string& name) const;

    // Append a block; offsets tile the data exactly.
    void add_block(const std::string& name, std::vector<std::size_t> shape);
};

}  // namespace bnnshift
