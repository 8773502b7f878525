#include "mcgen/bigint.hpp"

#include <algorithm>

namespace mcgen {

std::string pow2_decimal(int d) {
  if (d < 1) throw ValueError("pow2_decimal: exponent must be >= 1");
  // Little-endian decimal digits.
  std::string digits = "1";
  for (int step = 0; step < d; ++step) {
    int carry = 0;
    for (char& ch : digits) {
      int v = (ch - '0') * 2 + carry;
      ch = static_cast<char>('0' + v % 10);
      carry = v / 10;
    }
    if (carry) digits.push_back(static_cast<char>('0' + carry));
  }
  std::reverse(digits.begin(), digits.end());
  return digits;
}

}  // namespace mcgen
