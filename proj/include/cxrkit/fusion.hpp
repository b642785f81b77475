#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cxrkit {

// Dense row-major matrix of doubles.
struct matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    matrix() = default;
    matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    bool operator==(const matrix&) const = default;
};

matrix matmul(const matrix& a, const matrix& b);  // shape_error on mismatch

// Encoder patch embeddings are rows of width 768.
inline constexpr std::size_t kEncoderDim = 768;

enum class provenance { encoder1, encoder2, fused };

struct embedding_matrix {
    matrix values;
    provenance tag = provenance::fused;
};

// Wraps encoder output, enforcing the 768-wide row contract.
embedding_matrix make_encoder_embedding(matrix values, provenance tag);

// Row-wise stacking, first argument's rows first. Column mismatch raises
// shape_error.
matrix concat_rows(const matrix& a, const matrix& b);
embedding_matrix concat_embeddings(const embedding_matrix& z1, const embedding_matrix& z2);

struct group_options {
    bool pad_incomplete = false;  // zero-pad rows instead of rejecting P % 5 != 0
};

// Folds every 5 adjacent rows into one row of 5x the width; M = P/5.
// Strict mode raises domain_error naming P when P % 5 != 0.
matrix group_tokens(const matrix& tokens, const group_options& options = {});

inline constexpr std::size_t kGroupSize = 5;

// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
double gelu(double x);
matrix gelu(matrix values);
// d/dx gelu(x) = Phi(x) + x * phi(x).
double gelu_derivative(double x);

enum class activation { gelu, identity };

// Two-layer projection head: V = act(Q*W1 + b1)*W2 + b2.
struct projection_weights {
    matrix w1;               // K x H
    std::vector<double> b1;  // H
    matrix w2;               // H x D
    std::vector<double> b2;  // D

    void validate() const;  // shape_error on inconsistency

    // Deterministic fixture weights: uniform in [-scale, scale] from a
    // seeded generator.
    static projection_weights seeded(std::size_t input_dim, std::size_t hidden_dim,
                                     std::size_t output_dim, std::uint64_t seed,
                                     double scale = 0.02);
};

matrix project(const matrix& grouped, const projection_weights& weights,
               activation act = activation::gelu);

// concat -> group -> project.
matrix fused_forward(const matrix& z1, const matrix& z2, const projection_weights& weights,
                     const group_options& options = {}, activation act = activation::gelu);

// Compares the analytic directional derivative of project() against a
// central finite difference along a seeded random direction over all of
// (Q, W1, b1, W2, b2). Returns the max relative error (floored at unit
// magnitude). Epsilon must lie in (0, 1e-2].
double check_gradient(const projection_weights& weights, const matrix& grouped, double epsilon,
                      activation act = activation::gelu, std::uint64_t seed = 0);

// Flat binary matrix format: two little-endian int64 (rows, cols) followed
// by rows*cols little-endian float64 values, row-major.
void save_matrix(const std::filesystem::path& path, const matrix& m);
matrix load_matrix(const std::filesystem::path& path);

// Deterministic uniform value in [lo, hi) from standardized mt19937_64
// bits; used for seeded fixtures.
double uniform_from_bits(std::uint64_t bits, double lo, double hi);
matrix seeded_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo,
                     double hi);

}  // namespace cxrkit
