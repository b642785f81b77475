#include "cxrkit/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "cxrkit/errors.hpp"

namespace cxrkit {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

std::string shape_string(const matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// V = act(Q*W1 + b1)*W2 + b2 together with its directional derivative
// along (dq, dw). Pass nullptr to skip the derivative.
matrix project_with_jvp(const matrix& q, const projection_weights& w, activation act,
                        const matrix* dq, const projection_weights* dw, matrix* jvp) {
    const std::size_t m = q.rows;
    const std::size_t k = q.cols;
    const std::size_t h = w.w1.cols;
    const std::size_t d = w.w2.cols;

    matrix pre(m, h);   // Q*W1 + b1
    matrix dpre(jvp ? m : 0, jvp ? h : 0);
    for (std::size_t r = 0; r < m; ++r) {
        double* row = pre.row_ptr(r);
        for (std::size_t c = 0; c < h; ++c) row[c] = w.b1[c];
        for (std::size_t t = 0; t < k; ++t) {
            const double v = q.at(r, t);
            const double* wrow = w.w1.row_ptr(t);
            for (std::size_t c = 0; c < h; ++c) row[c] += v * wrow[c];
        }
        if (jvp) {
            double* drow = dpre.row_ptr(r);
            for (std::size_t c = 0; c < h; ++c) drow[c] = dw->b1[c];
            for (std::size_t t = 0; t < k; ++t) {
                const double v = q.at(r, t);
                const double dv = dq->at(r, t);
                const double* wrow = w.w1.row_ptr(t);
                const double* dwrow = dw->w1.row_ptr(t);
                for (std::size_t c = 0; c < h; ++c) {
                    drow[c] += dv * wrow[c] + v * dwrow[c];
                }
            }
        }
    }

    matrix hidden(m, h);
    matrix dhidden(jvp ? m : 0, jvp ? h : 0);
    for (std::size_t i = 0; i < m * h; ++i) {
        if (act == activation::gelu) {
            hidden.data[i] = gelu(pre.data[i]);
            if (jvp) dhidden.data[i] = gelu_derivative(pre.data[i]) * dpre.data[i];
        } else {
            hidden.data[i] = pre.data[i];
            if (jvp) dhidden.data[i] = dpre.data[i];
        }
    }

    matrix out(m, d);
    if (jvp) *jvp = matrix(m, d);
    for (std::size_t r = 0; r < m; ++r) {
        double* row = out.row_ptr(r);
        for (std::size_t c = 0; c < d; ++c) row[c] = w.b2[c];
        for (std::size_t t = 0; t < h; ++t) {
            const double v = hidden.at(r, t);
            const double* wrow = w.w2.row_ptr(t);
            for (std::size_t c = 0; c < d; ++c) row[c] += v * wrow[c];
        }
        if (jvp) {
            double* drow = jvp->row_ptr(r);
            for (std::size_t c = 0; c < d; ++c) drow[c] = dw->b2[c];
            for (std::size_t t = 0; t < h; ++t) {
                const double v = hidden.at(r, t);
                const double dv = dhidden.at(r, t);
                const double* wrow = w.w2.row_ptr(t);
                const double* dwrow = dw->w2.row_ptr(t);
                for (std::size_t c = 0; c < d; ++c) {
                    drow[c] += dv * wrow[c] + v * dwrow[c];
                }
            }
        }
    }
    return out;
}

}  // namespace

matrix matmul(const matrix& a, const matrix& b) {
    if (a.cols != b.rows) {
        throw shape_error("matmul: " + shape_string(a) + " incompatible with " +
                          shape_string(b));
    }
    matrix out(a.rows, b.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t t = 0; t < a.cols; ++t) {
            const double v = a.at(r, t);
            for (std::size_t c = 0; c < b.cols; ++c) {
                out.at(r, c) += v * b.at(t, c);
            }
        }
    }
    return out;
}

embedding_matrix make_encoder_embedding(matrix values, provenance tag) {
    if (tag != provenance::fused && values.cols != kEncoderDim) {
        throw shape_error("encoder embedding must have " + std::to_string(kEncoderDim) +
                          " columns, got " + std::to_string(values.cols));
    }
    return embedding_matrix{std::move(values), tag};
}

matrix concat_rows(const matrix& a, const matrix& b) {
    if (a.rows == 0) return b;
    if (b.rows == 0) return a;
    if (a.cols != b.cols) {
        throw shape_error("concat_rows: column mismatch " + shape_string(a) + " vs " +
                          shape_string(b));
    }
    matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

embedding_matrix concat_embeddings(const embedding_matrix& z1, const embedding_matrix& z2) {
    return embedding_matrix{concat_rows(z1.values, z2.values), provenance::fused};
}

matrix group_tokens(const matrix& tokens, const group_options& options) {
    std::size_t p = tokens.rows;
    if (p % kGroupSize != 0 && !options.pad_incomplete) {
        throw domain_error("group_tokens: P = " + std::to_string(p) + " not divisible by " +
                           std::to_string(kGroupSize));
    }
    const std::size_t m = (p + kGroupSize - 1) / kGroupSize;
    matrix out(m, tokens.cols * kGroupSize);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < kGroupSize; ++j) {
            const std::size_t row = i * kGroupSize + j;
            if (row >= p) break;  // zero padding
            std::copy(tokens.data.begin() + row * tokens.cols,
                      tokens.data.begin() + (row + 1) * tokens.cols,
                      out.data.begin() + i * out.cols + j * tokens.cols);
        }
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

matrix gelu(matrix values) {
    for (double& v : values.data) v = gelu(v);
    return values;
}

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

void projection_weights::validate() const {
    if (w1.cols != b1.size()) {
        throw shape_error("projection weights: b1 size " + std::to_string(b1.size()) +
                          " does not match W1 " + shape_string(w1));
    }
    if (w1.cols != w2.rows) {
        throw shape_error("projection weights: W1 " + shape_string(w1) +
                          " incompatible with W2 " + shape_string(w2));
    }
    if (w2.cols != b2.size()) {
        throw shape_error("projection weights: b2 size " + std::to_string(b2.size()) +
                          " does not match W2 " + shape_string(w2));
    }
    for (const auto* m : {&w1, &w2}) {
        for (double v : m->data) {
            if (!std::isfinite(v)) throw shape_error("projection weights: non-finite entry");
        }
    }
}

projection_weights projection_weights::seeded(std::size_t input_dim, std::size_t hidden_dim,
                                              std::size_t output_dim, std::uint64_t seed,
                                              double scale) {
    projection_weights w;
    w.w1 = seeded_matrix(input_dim, hidden_dim, seed, -scale, scale);
    w.w2 = seeded_matrix(hidden_dim, output_dim, seed + 1, -scale, scale);
    const matrix b1m = seeded_matrix(1, hidden_dim, seed + 2, -scale, scale);
    const matrix b2m = seeded_matrix(1, output_dim, seed + 3, -scale, scale);
    w.b1 = b1m.data;
    w.b2 = b2m.data;
    return w;
}

matrix project(const matrix& grouped, const projection_weights& weights, activation act) {
    weights.validate();
    if (grouped.cols != weights.w1.rows) {
        throw shape_error("project: input " + shape_string(grouped) +
                          " incompatible with W1 " + shape_string(weights.w1));
    }
    return project_with_jvp(grouped, weights, act, nullptr, nullptr, nullptr);
}

matrix fused_forward(const matrix& z1, const matrix& z2, const projection_weights& weights,
                     const group_options& options, activation act) {
    return project(group_tokens(concat_rows(z1, z2), options), weights, act);
}

double check_gradient(const projection_weights& weights, const matrix& grouped, double epsilon,
                      activation act, std::uint64_t seed) {
    if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
        throw domain_error("check_gradient: epsilon " + std::to_string(epsilon) +
                           " outside (0, 1e-2]");
    }
    weights.validate();
    if (grouped.cols != weights.w1.rows) {
        throw shape_error("check_gradient: input " + shape_string(grouped) +
                          " incompatible with W1 " + shape_string(weights.w1));
    }

    // Random direction across all inputs and parameters.
    const matrix dq = seeded_matrix(grouped.rows, grouped.cols, seed ^ 0x9e3779b97f4a7c15ULL,
                                    -1.0, 1.0);
    projection_weights dw;
    dw.w1 = seeded_matrix(weights.w1.rows, weights.w1.cols, seed + 11, -1.0, 1.0);
    dw.w2 = seeded_matrix(weights.w2.rows, weights.w2.cols, seed + 13, -1.0, 1.0);
    dw.b1 = seeded_matrix(1, weights.b1.size(), seed + 17, -1.0, 1.0).data;
    dw.b2 = seeded_matrix(1, weights.b2.size(), seed + 19, -1.0, 1.0).data;

    matrix analytic;
    project_with_jvp(grouped, weights, act, &dq, &dw, &analytic);

    auto shifted = [&](double t) {
        matrix q = grouped;
        for (std::size_t i = 0; i < q.data.size(); ++i) q.data[i] += t * dq.data[i];
        projection_weights w = weights;
        for (std::size_t i = 0; i < w.w1.data.size(); ++i) w.w1.data[i] += t * dw.w1.data[i];
        for (std::size_t i = 0; i < w.w2.data.size(); ++i) w.w2.data[i] += t * dw.w2.data[i];
        for (std::size_t i = 0; i < w.b1.size(); ++i) w.b1[i] += t * dw.b1[i];
        for (std::size_t i = 0; i < w.b2.size(); ++i) w.b2[i] += t * dw.b2[i];
        return project_with_jvp(q, w, act, nullptr, nullptr, nullptr);
    };
    const matrix plus = shifted(epsilon);
    const matrix minus = shifted(-epsilon);

    double max_rel = 0.0;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        const double numeric = (plus.data[i] - minus.data[i]) / (2.0 * epsilon);
        const double a = analytic.data[i];
        const double rel =
            std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

void save_matrix(const std::filesystem::path& path, const matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    const std::int64_t header[2] = {static_cast<std::int64_t>(m.rows),
                                    static_cast<std::int64_t>(m.cols)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!out) throw data_error("short write to " + path.string());
}

matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::int64_t header[2] = {0, 0};
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || header[0] < 0 || header[1] < 0) {
        throw corrupt_error("matrix file " + path.string() + ": bad shape header");
    }
    matrix m(static_cast<std::size_t>(header[0]), static_cast<std::size_t>(header[1]));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) {
        throw corrupt_error("matrix file " + path.string() + ": truncated payload");
    }
    return m;
}

double uniform_from_bits(std::uint64_t bits, double lo, double hi) {
    // Top 53 bits -> [0,1) with full double precision.
    const double unit = static_cast<double>(bits >> 11) * 0x1.0p-53;
    return lo + unit * (hi - lo);
}

matrix seeded_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo,
                     double hi) {
    std::mt19937_64 rng(seed);
    matrix out(rows, cols);
    for (double& v : out.data) v = uniform_from_bits(rng(), lo, hi);
    return out;
}

}  // namespace cxrkit
