#ifndef MSRM_SOBOL_HPP
#define MSRM_SOBOL_HPP

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "msrm/errors.hpp"

namespace msrm {

/// One row of a Joe--Kuo direction-number table: dimension index d >= 2,
/// primitive polynomial degree s, polynomial code a, and s initial values m_i.
struct DirectionRow {
    int d = 0;
    int s = 0;
    std::uint32_t a = 0;
    std::vector<std::uint32_t> m;
};

/// Parses the standard Joe--Kuo text layout (columns: d s a m_i ...).
/// A leading header line ("d s a m_i") is skipped if present.
inline std::vector<DirectionRow> parse_direction_table(std::istream& in) {
    std::vector<DirectionRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        DirectionRow row;
        if (!(ls >> row.d)) continue;  // header or blank line
        if (!(ls >> row.s >> row.a))
            throw DimensionUnsupported("malformed direction-number row: " + line);
        std::uint32_t mi;
        while (ls >> mi) row.m.push_back(mi);
        if (static_cast<int>(row.m.size()) != row.s)
            throw DimensionUnsupported("direction-number row has wrong m count: " + line);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<DirectionRow> parse_direction_table(const std::string& text) {
    std::istringstream in(text);
    return parse_direction_table(in);
}

inline std::vector<DirectionRow> load_direction_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DimensionUnsupported("cannot open direction-number file: " + path);
    return parse_direction_table(in);
}

/// First 21 dimensions of the new-joe-kuo-6 table (dimension 1 is the plain
/// van der Corput sequence and carries no row).  Covers every net dimension
/// this library needs; larger tables in the same layout can be loaded from
/// disk via load_direction_table().
inline const char* embedded_joe_kuo_table() {
    return "d       s       a       m_i\n"
           "2       1       0       1\n"
           "3       2       1       1 3\n"
           "4       3       1       1 3 1\n"
           "5       3       2       1 1 1\n"
           "6       4       1       1 1 3 3\n"
           "7       4       4       1 3 5 13\n"
           "8       5       2       1 1 5 5 17\n"
           "9       5       4       1 1 5 5 5\n"
           "10      5       7       1 1 7 11 19\n"
           "11      5       11      1 1 5 1 1\n"
           "12      5       13      1 1 1 3 11\n"
           "13      5       14      1 3 5 5 31\n"
           "14      6       1       1 3 3 9 7 49\n"
           "15      6       13      1 1 1 15 21 21\n"
           "16      6       16      1 3 1 13 27 49\n"
           "17      6       19      1 1 1 15 7 5\n"
           "18      6       22      1 3 1 15 13 25\n"
           "19      6       25      1 1 5 5 19 61\n"
           "20      7       1       1 3 7 11 23 15 103\n"
           "21      7       4       1 3 7 13 13 15 69\n";
}

/// Base-2 Sobol digital net with 52 fractional bits, Gray-code point order.
/// The unshifted net is deterministic per dimension; randomization happens
/// via digital (bitwise XOR) shifts applied on the integer lattice.
class SobolNet {
  public:
    static constexpr int kBits = 52;

    SobolNet(int dim, std::uint64_t n_points,
             const std::vector<DirectionRow>& table)
        : dim_(dim), n_(n_points) {
        if (dim < 1) throw DimensionUnsupported("Sobol dimension must be >= 1");
        if (n_points == 0 || (n_points & (n_points - 1)) != 0)
            throw DimensionUnsupported("Sobol point count must be a power of two");
        int max_d = table.empty() ? 1 : table.back().d;
        if (dim > max_d)
            throw DimensionUnsupported("direction-number table covers dimensions up to " +
                                       std::to_string(max_d) + ", requested " +
                                       std::to_string(dim));
        build_directions(table);
        generate_points();
    }

    SobolNet(int dim, std::uint64_t n_points)
        : SobolNet(dim, n_points, default_table()) {}

    int dim() const { return dim_; }
    std::uint64_t size() const { return n_; }

    /// Integer lattice point, coordinate j of point n (52-bit fraction).
    std::uint64_t lattice(std::uint64_t n, int j) const { return pts_[n * dim_ + j]; }

    double point(std::uint64_t n, int j) const {
        return static_cast<double>(pts_[n * dim_ + j]) * kScale;
    }

    /// Writes point n shifted by delta (one 52-bit word per coordinate) into out[0..dim).
    void shifted_point(std::uint64_t n, const std::uint64_t* delta, double* out) const {
        const std::uint64_t* row = &pts_[n * dim_];
        for (int j = 0; j < dim_; ++j)
            out[j] = static_cast<double>(row[j] ^ delta[j]) * kScale;
    }

    static const std::vector<DirectionRow>& default_table() {
        static const std::vector<DirectionRow> table =
            parse_direction_table(std::string(embedded_joe_kuo_table()));
        return table;
    }

  private:
    static constexpr double kScale = 1.0 / 4503599627370496.0;  // 2^-52

    void build_directions(const std::vector<DirectionRow>& table) {
        v_.assign(static_cast<std::size_t>(dim_) * kBits, 0);
        // dimension 1: van der Corput, m_i = 1
        for (int i = 0; i < kBits; ++i)
            v_[i] = 1ULL << (kBits - 1 - i);
        for (int j = 1; j < dim_; ++j) {
            const DirectionRow& row = table[static_cast<std::size_t>(j) - 1];
            if (row.d != j + 1)
                throw DimensionUnsupported("direction-number table rows out of order");
            const int s = row.s;
            std::uint64_t* vj = &v_[static_cast<std::size_t>(j) * kBits];
            for (int i = 0; i < s && i < kBits; ++i)
                vj[i] = static_cast<std::uint64_t>(row.m[i]) << (kBits - 1 - i);
            for (int i = s; i < kBits; ++i) {
                vj[i] = vj[i - s] ^ (vj[i - s] >> s);
                for (int t = 1; t < s; ++t)
                    if ((row.a >> (s - 1 - t)) & 1u) vj[i] ^= vj[i - t];
            }
        }
    }

    void generate_points() {
        pts_.assign(static_cast<std::size_t>(n_) * dim_, 0);
        // Gray-code recursion x_n = x_{n-1} xor v_{c(n-1)}, including n = 0.
        std::vector<std::uint64_t> x(dim_, 0);
        for (std::uint64_t n = 1; n < n_; ++n) {
            std::uint64_t i = n - 1;
            int c = 0;
            while (i & 1) { i >>= 1; ++c; }
            for (int j = 0; j < dim_; ++j) {
                x[j] ^= v_[static_cast<std::size_t>(j) * kBits + c];
                pts_[n * dim_ + j] = x[j];
            }
        }
    }

    int dim_;
    std::uint64_t n_;
    std::vector<std::uint64_t> v_;
    std::vector<std::uint64_t> pts_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Digital-shift source: i.i.d. uniform 52-bit shift words per
/// (seed, level, dimension-group, shift index), independent across levels
/// and across dimension groups.
class ShiftSource {
  public:
    ShiftSource(std::uint64_t seed, int level, int dim_group)
        : rng_(splitmix64(splitmix64(splitmix64(seed) ^ (0x517cc1b727220a95ULL * static_cast<std::uint64_t>(level + 1))) ^
                          (0x2545f4914f6cdd1dULL * static_cast<std::uint64_t>(dim_group + 1)))) {}

    /// One shift vector: dim words of 52 random bits each.
    std::vector<std::uint64_t> draw(int dim) {
        std::vector<std::uint64_t> delta(dim);
        for (int j = 0; j < dim; ++j) delta[j] = rng_() >> 12;  // keep 52 bits
        return delta;
    }

  private:
    std::mt19937_64 rng_;
};

} // namespace msrm

#endif
