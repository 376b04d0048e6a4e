#include "km/qmc.hpp"

#include <stdexcept>

#include "km/rng.hpp"

namespace km::qmc {
namespace {

// Primitive-polynomial degrees, coefficients and initial direction integers
// for dimensions 2..24 (dimension 1 is the van der Corput sequence). These are
// the standard Joe–Kuo style parameters; any odd m_k < 2^k yields a valid
// digital net, and these give good low-dimensional projections.
struct DimSpec {
  int s;                 // polynomial degree
  std::uint32_t a;       // interior coefficients
  std::uint32_t m[8];    // initial odd direction integers (s entries used)
};

const DimSpec kSpecs[] = {
    {1, 0, {1, 0, 0, 0, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0, 0, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0, 0, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0, 0, 0, 0}},
    {4, 4, {1, 3, 5, 13, 0, 0, 0, 0}},
    {5, 2, {1, 1, 5, 5, 17, 0, 0, 0}},
    {5, 4, {1, 1, 5, 5, 5, 0, 0, 0}},
    {5, 7, {1, 1, 7, 11, 19, 0, 0, 0}},
    {5, 11, {1, 1, 5, 1, 1, 0, 0, 0}},
    {5, 13, {1, 1, 1, 3, 11, 0, 0, 0}},
    {5, 14, {1, 3, 5, 5, 31, 0, 0, 0}},
    {6, 1, {1, 3, 3, 9, 7, 49, 0, 0}},
    {6, 13, {1, 1, 1, 15, 21, 21, 0, 0}},
    {6, 16, {1, 3, 1, 13, 27, 49, 0, 0}},
    {6, 19, {1, 1, 1, 15, 7, 5, 0, 0}},
    {6, 22, {1, 3, 1, 15, 13, 25, 0, 0}},
    {6, 25, {1, 1, 5, 5, 19, 61, 0, 0}},
    {7, 1, {1, 3, 7, 11, 23, 15, 103, 0}},
    {7, 4, {1, 3, 7, 13, 13, 15, 69, 0}},
    {7, 7, {1, 1, 3, 13, 7, 35, 63, 0}},
    {7, 8, {1, 3, 5, 9, 1, 25, 53, 0}},
    {7, 14, {1, 3, 1, 13, 9, 35, 107, 0}},
};

inline std::uint32_t reverse_bits32(std::uint32_t x) {
  x = ((x & 0x55555555u) << 1) | ((x >> 1) & 0x55555555u);
  x = ((x & 0x33333333u) << 2) | ((x >> 2) & 0x33333333u);
  x = ((x & 0x0f0f0f0fu) << 4) | ((x >> 4) & 0x0f0f0f0fu);
  x = ((x & 0x00ff00ffu) << 8) | ((x >> 8) & 0x00ff00ffu);
  return (x << 16) | (x >> 16);
}

// Laine–Karras style hash: each bit of the output depends only on equal or
// lower bits of the input, which on reversed bits realizes an Owen-style
// nested scramble.
inline std::uint32_t owen_hash(std::uint32_t x, std::uint32_t seed) {
  x ^= x * 0x3d20adeau;
  x += seed;
  x *= (seed >> 16) | 1u;
  x ^= x * 0x05526c56u;
  x ^= x * 0x53a22864u;
  return x;
}

inline std::uint32_t owen_scramble(std::uint32_t x, std::uint32_t seed) {
  x = reverse_bits32(x);
  x = owen_hash(x, seed);
  return reverse_bits32(x);
}

}  // namespace

SobolSequence::SobolSequence(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1 || dim > kMaxDim) {
    throw std::invalid_argument("SobolSequence: dimension must be in [1, " +
                                std::to_string(kMaxDim) + "], got " + std::to_string(dim));
  }
  dir_.assign(static_cast<std::size_t>(dim) * 32, 0);
  // Dimension 0: van der Corput (direction numbers 2^(31-k)).
  for (int k = 0; k < 32; ++k) dir_[static_cast<std::size_t>(k)] = 1u << (31 - k);
  for (int d = 1; d < dim; ++d) {
    const DimSpec& spec = kSpecs[d - 1];
    std::uint32_t* v = &dir_[static_cast<std::size_t>(d) * 32];
    const int s = spec.s;
    for (int k = 0; k < s && k < 32; ++k) v[k] = spec.m[k] << (31 - k);
    for (int k = s; k < 32; ++k) {
      std::uint32_t val = v[k - s] ^ (v[k - s] >> s);
      for (int j = 1; j < s; ++j) {
        if ((spec.a >> (s - 1 - j)) & 1u) val ^= v[k - j];
      }
      v[k] = val;
    }
  }
}

Eigen::VectorXd SobolSequence::point(std::uint64_t i) const {
  Eigen::VectorXd out(dim_);
  for (int d = 0; d < dim_; ++d) {
    const std::uint32_t* v = &dir_[static_cast<std::size_t>(d) * 32];
    std::uint32_t x = 0;
    std::uint64_t bits = i;
    for (int k = 0; bits != 0 && k < 32; ++k, bits >>= 1) {
      if (bits & 1u) x ^= v[k];
    }
    const std::uint32_t dim_seed = static_cast<std::uint32_t>(
        derive_seed(seed_, "sobol-dim", static_cast<std::uint64_t>(d)));
    x = owen_scramble(x, dim_seed);
    // Center within the 2^-32 cell so coordinates stay strictly inside (0,1).
    out[d] = (static_cast<double>(x) + 0.5) * 0x1.0p-32;
  }
  return out;
}

Eigen::MatrixXd SobolSequence::points(int n) const {
  Eigen::MatrixXd out(n, dim_);
  for (int i = 0; i < n; ++i) out.row(i) = point(static_cast<std::uint64_t>(i)).transpose();
  return out;
}

}  // namespace km::qmc
