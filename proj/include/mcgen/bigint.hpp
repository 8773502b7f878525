#ifndef MCGEN_BIGINT_HPP
#define MCGEN_BIGINT_HPP

#include <string>

#include "mcgen/common.hpp"

namespace mcgen {

// Exact decimal string of 2^d (d >= 1), via repeated decimal doubling.
std::string pow2_decimal(int d);

}  // namespace mcgen

#endif  // MCGEN_BIGINT_HPP
